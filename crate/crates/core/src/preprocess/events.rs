//! Raw observation events and their on-disk formats.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One measurement: `value` of `feature` for `entity_id` at `time_seconds`
/// after admission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub entity_id: String,
    pub time_seconds: f64,
    pub feature: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EventStream {
    p: usize,
    events: Vec<Event>,
}

impl EventStream {
    pub fn new(p: usize) -> Self {
        Self { p, events: Vec::new() }
    }

    pub fn from_events(p: usize, events: Vec<Event>) -> Result<Self> {
        let mut stream = Self::new(p);
        for e in events {
            stream.push(e)?;
        }
        Ok(stream)
    }

    pub fn push(&mut self, event: Event) -> Result<()> {
        if event.feature >= self.p {
            return Err(Error::InvalidArgument(format!(
                "feature index {} out of range for p = {}",
                event.feature, self.p
            )));
        }
        if !(event.time_seconds >= 0.0 && event.time_seconds.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "event time {} for entity {} must be finite and non-negative",
                event.time_seconds, event.entity_id
            )));
        }
        if !event.value.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "non-finite value for entity {} feature {}",
                event.entity_id, event.feature
            )));
        }
        self.events.push(event);
        Ok(())
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Events grouped by entity, in entity-id order.
    pub fn by_entity(&self) -> BTreeMap<&str, Vec<&Event>> {
        let mut map: BTreeMap<&str, Vec<&Event>> = BTreeMap::new();
        for e in &self.events {
            map.entry(e.entity_id.as_str()).or_default().push(e);
        }
        map
    }

    /// Writes `entity_id,time_seconds,feature,value` with integer feature indices.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["entity_id", "time_seconds", "feature", "value"])
            .map_err(csv_err)?;
        for e in &self.events {
            w.write_record([
                e.entity_id.clone(),
                format_float(e.time_seconds),
                e.feature.to_string(),
                format_float(e.value),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads an event CSV or JSON-lines file (chosen by the `.jsonl` / `.json`
    /// extension). The `feature` column may be an index or a dictionary name.
    pub fn read(path: &Path, dictionary: &FeatureDictionary) -> Result<Self> {
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        if ext == "jsonl" || ext == "json" {
            Self::read_jsonl(path, dictionary)
        } else {
            Self::read_csv(path, dictionary)
        }
    }

    fn read_csv(path: &Path, dictionary: &FeatureDictionary) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
        let headers = r.headers().map_err(csv_err)?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::Format(format!("{}: missing column `{name}`", path.display())))
        };
        let (ci, ct, cf, cv) = (col("entity_id")?, col("time_seconds")?, col("feature")?, col("value")?);
        let mut stream = EventStream::new(dictionary.len());
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let field = |c: usize| rec.get(c).unwrap_or("").trim();
            let parse = |c: usize| {
                field(c).parse::<f64>().map_err(|_| {
                    Error::Format(format!(
                        "{}:{}: cannot parse `{}` as a number",
                        path.display(),
                        line + 2,
                        field(c)
                    ))
                })
            };
            stream.push(Event {
                entity_id: field(ci).to_string(),
                time_seconds: parse(ct)?,
                feature: dictionary.resolve(field(cf))?,
                value: parse(cv)?,
            })?;
        }
        Ok(stream)
    }

    fn read_jsonl(path: &Path, dictionary: &FeatureDictionary) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            entity_id: String,
            time_seconds: f64,
            feature: serde_json::Value,
            value: f64,
        }
        let reader = BufReader::new(File::open(path)?);
        let mut stream = EventStream::new(dictionary.len());
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: Row = serde_json::from_str(&line)?;
            let feature = match &row.feature {
                serde_json::Value::String(s) => dictionary.resolve(s)?,
                serde_json::Value::Number(n) => dictionary.resolve(&n.to_string())?,
                other => return Err(Error::Format(format!("bad feature field {other}"))),
            };
            stream.push(Event {
                entity_id: row.entity_id,
                time_seconds: row.time_seconds,
                feature,
                value: row.value,
            })?;
        }
        Ok(stream)
    }
}

/// Maps feature names to indices `0..p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDictionary {
    names: Vec<String>,
}

impl FeatureDictionary {
    pub fn new(names: Vec<String>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(Error::Format(format!("duplicate feature name `{n}`")));
            }
        }
        Ok(Self { names })
    }

    /// `feature_0 .. feature_{p-1}`.
    pub fn anonymous(p: usize) -> Self {
        Self {
            names: (0..p).map(|k| format!("feature_{k}")).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    /// Accepts either a known name or a numeric index.
    pub fn resolve(&self, field: &str) -> Result<usize> {
        if let Some(k) = self.names.iter().position(|n| n == field) {
            return Ok(k);
        }
        match field.parse::<usize>() {
            Ok(k) if k < self.names.len() => Ok(k),
            _ => Err(Error::Format(format!("unknown feature `{field}`"))),
        }
    }

    /// CSV with header `index,name`; indices must cover `0..p` exactly once.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
        let mut rows: Vec<(usize, String)> = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            let index = rec
                .get(0)
                .and_then(|s| s.trim().parse::<usize>().ok())
                .ok_or_else(|| Error::Format(format!("{}: bad index column", path.display())))?;
            rows.push((index, rec.get(1).unwrap_or("").trim().to_string()));
        }
        rows.sort_by_key(|(i, _)| *i);
        for (expected, (i, _)) in rows.iter().enumerate() {
            if *i != expected {
                return Err(Error::Format(format!(
                    "{}: feature indices must be 0..p without gaps (found {i}, expected {expected})",
                    path.display()
                )));
            }
        }
        Self::new(rows.into_iter().map(|(_, n)| n).collect())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["index", "name"]).map_err(csv_err)?;
        for (i, n) in self.names.iter().enumerate() {
            w.write_record([i.to_string(), n.clone()]).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// A per-entity label row from `entity_id,task,label`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub entity_id: String,
    pub task: String,
    pub label: f64,
}

pub fn read_labels_csv(path: &Path) -> Result<Vec<LabelRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut out = Vec::new();
    for rec in r.deserialize() {
        out.push(rec.map_err(csv_err)?);
    }
    Ok(out)
}

pub fn write_labels_csv(path: &Path, labels: &[LabelRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for l in labels {
        w.serialize(l).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

/// Shortest round-tripping decimal form.
pub(crate) fn format_float(v: f64) -> String {
    format!("{v:?}")
}
