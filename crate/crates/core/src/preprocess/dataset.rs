//! Versioned container of preprocessed sequences plus the statistics used to
//! produce them.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::events::{EventStream, FeatureDictionary, LabelRecord};
use super::sequence::{compute_time_deltas, standardize, GroupedSequence, StandardizationStats};
use super::split::{assign_split, SplitFractions, SplitPart};
use super::window::{window_events, WindowConfig};
use crate::error::{Error, Result};

pub const DATASET_FORMAT: &str = "fglstm-dataset/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TaskKind {
    Binary,
    MultiClass { classes: usize },
}

impl TaskKind {
    pub fn outputs(&self) -> usize {
        match self {
            TaskKind::Binary => 1,
            TaskKind::MultiClass { classes } => *classes,
        }
    }

    /// Converts a raw label into output-form targets.
    pub fn targets(&self, label: f64) -> Result<Vec<f64>> {
        match self {
            TaskKind::Binary if label == 0.0 || label == 1.0 => Ok(vec![label]),
            TaskKind::Binary => Err(Error::Label(format!("binary label must be 0 or 1, got {label}"))),
            TaskKind::MultiClass { classes } => {
                if label.fract() != 0.0 || label < 0.0 || label >= *classes as f64 {
                    return Err(Error::Label(format!("class label {label} outside 0..{classes}")));
                }
                let mut t = vec![0.0; *classes];
                t[label as usize] = 1.0;
                Ok(t)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub split: SplitPart,
    pub sequence: GroupedSequence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub format: String,
    pub task_name: String,
    pub task: TaskKind,
    pub feature_names: Vec<String>,
    pub window: WindowConfig,
    pub split_seed: u64,
    pub stats: StandardizationStats,
    pub records: Vec<DatasetRecord>,
}

#[derive(Debug, Clone, Copy)]
pub struct BuildOptions {
    pub window: WindowConfig,
    pub fractions: SplitFractions,
    pub split_seed: u64,
    pub clip_limit: f64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            window: WindowConfig::default(),
            fractions: SplitFractions::default(),
            split_seed: 0,
            clip_limit: super::sequence::DEFAULT_CLIP_LIMIT,
        }
    }
}

impl Dataset {
    /// Windows every entity, splits by entity id, fits standardization on the
    /// training part only, then standardizes all parts and computes time deltas.
    pub fn build(
        stream: &EventStream,
        dictionary: &FeatureDictionary,
        labels: &[LabelRecord],
        task_name: &str,
        task: TaskKind,
        options: BuildOptions,
    ) -> Result<Self> {
        options.fractions.validate()?;
        if dictionary.len() != stream.p() {
            return Err(Error::dim("Dataset::build", dictionary.len(), stream.p()));
        }
        let label_of: HashMap<&str, f64> = labels
            .iter()
            .filter(|l| l.task == task_name)
            .map(|l| (l.entity_id.as_str(), l.label))
            .collect();
        let windowed = window_events(stream, options.window)?;
        let parts: Vec<SplitPart> = windowed
            .iter()
            .map(|w| assign_split(&w.entity_id, options.fractions, options.split_seed))
            .collect();
        let stats = StandardizationStats::fit(
            windowed
                .iter()
                .zip(&parts)
                .filter(|(_, part)| **part == SplitPart::Train)
                .map(|(w, _)| w),
            stream.p(),
            options.clip_limit,
        )?;
        let mut records = Vec::with_capacity(windowed.len());
        for (w, part) in windowed.iter().zip(parts) {
            let label = label_of
                .get(w.entity_id.as_str())
                .ok_or_else(|| Error::Label(format!("entity {} has no `{task_name}` label", w.entity_id)))?;
            let seq = compute_time_deltas(standardize(w, &stats, task.targets(*label)?)?)?;
            records.push(DatasetRecord { split: part, sequence: seq });
        }
        Ok(Self {
            format: DATASET_FORMAT.into(),
            task_name: task_name.into(),
            task,
            feature_names: dictionary.names().to_vec(),
            window: options.window,
            split_seed: options.split_seed,
            stats,
            records,
        })
    }

    pub fn p(&self) -> usize {
        self.feature_names.len()
    }

    pub fn part(&self, split: SplitPart) -> Vec<&GroupedSequence> {
        self.records
            .iter()
            .filter(|r| r.split == split)
            .map(|r| &r.sequence)
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = BufWriter::new(File::create(path)?);
        serde_json::to_writer(f, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ds: Dataset = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if ds.format != DATASET_FORMAT {
            return Err(Error::Format(format!(
                "{}: dataset format `{}` is not supported (expected `{DATASET_FORMAT}`)",
                path.display(),
                ds.format
            )));
        }
        for r in &ds.records {
            r.sequence.validate()?;
        }
        Ok(ds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::events::Event;

    #[test]
    fn targets_from_labels() {
        assert_eq!(TaskKind::Binary.targets(1.0).unwrap(), vec![1.0]);
        assert!(TaskKind::Binary.targets(0.5).is_err());
        let mc = TaskKind::MultiClass { classes: 3 };
        assert_eq!(mc.targets(2.0).unwrap(), vec![0.0, 0.0, 1.0]);
        assert!(mc.targets(3.0).is_err());
    }

    #[test]
    fn build_and_round_trip() {
        let mut stream = EventStream::new(2);
        let mut labels = Vec::new();
        for e in 0..40 {
            let id = format!("p{e}");
            for i in 0..5 {
                stream
                    .push(Event {
                        entity_id: id.clone(),
                        time_seconds: 600.0 + 3000.0 * i as f64,
                        feature: i % 2,
                        value: (e * 7 + i) as f64 % 11.0,
                    })
                    .unwrap();
            }
            labels.push(LabelRecord {
                entity_id: id,
                task: "mortality".into(),
                label: f64::from(u8::from(e % 3 == 0)),
            });
        }
        let ds = Dataset::build(
            &stream,
            &FeatureDictionary::anonymous(2),
            &labels,
            "mortality",
            TaskKind::Binary,
            BuildOptions::default(),
        )
        .unwrap();
        assert_eq!(ds.records.len(), 40);
        assert!(!ds.part(SplitPart::Train).is_empty());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.json");
        ds.save(&path).unwrap();
        assert_eq!(Dataset::load(&path).unwrap(), ds);

        let missing = &labels[1..];
        assert!(matches!(
            Dataset::build(
                &stream,
                &FeatureDictionary::anonymous(2),
                missing,
                "mortality",
                TaskKind::Binary,
                BuildOptions::default()
            ),
            Err(Error::Label(_))
        ));
    }
}
