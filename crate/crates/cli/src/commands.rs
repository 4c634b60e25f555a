//! Command bodies. Each takes its resolved configuration and writes into
//! `out_dir`; the caller records the manifest.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use fglstm_bench::{parameter_table_grid, run_bench, BenchGeometry, BenchReport};
use fglstm_core::attribution::{export_attributions, export_divergence, integrated_gradients, top_divergent_features};
use fglstm_core::cells::Model;
use fglstm_core::experiment::{encode_part, model_label, run_experiment, ModelSpec, ABLATION_ROWS};
use fglstm_core::metrics::{aggregate_runs, significance_table, stars, write_stats_csv, RunMetrics, RunReport};
use fglstm_core::preprocess::{read_labels_csv, Dataset, EventStream, FeatureDictionary, SplitPart};
use fglstm_core::synth::{generate_cohort, SynthConfig};
use fglstm_core::training::{predict_all, score_predictions, EpochRecord};
use fglstm_core::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::manifest::RUN_LOG_FORMAT;

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// JSON-lines run log; wall times are the only non-reproducible fields.
pub struct RunLog {
    out: BufWriter<File>,
}

impl RunLog {
    pub fn create(path: &Path) -> Result<Self> {
        let mut log = Self {
            out: BufWriter::new(File::create(path)?),
        };
        log.write(&json!({ "event": "open", "format": RUN_LOG_FORMAT }))?;
        Ok(log)
    }

    pub fn write(&mut self, record: &serde_json::Value) -> Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }

    fn epoch(&mut self, tag: &serde_json::Value, r: &EpochRecord) -> Result<()> {
        self.write(&json!({
            "event": "epoch",
            "run": tag,
            "epoch": r.epoch,
            "train_loss": r.train_loss,
            "valid_au_roc": r.valid_au_roc,
            "valid_au_prc": r.valid_au_prc,
            "improved": r.improved,
            "wall_seconds": r.wall_seconds,
        }))
    }
}

fn progress(r: &EpochRecord, label: &str) {
    eprintln!(
        "{label} epoch {:>3}  loss {:.5}  valid au_roc {:.4}  au_prc {:.4}{}",
        r.epoch,
        r.train_loss,
        r.valid_au_roc,
        r.valid_au_prc,
        if r.improved { "  *" } else { "" }
    );
}

// ---------------------------------------------------------------------------

pub fn synth(cfg: &SynthConfig, out_dir: &Path) -> Result<Vec<String>> {
    let cohort = generate_cohort(cfg)?;
    cohort.write(out_dir)?;
    write_json(
        &out_dir.join("cohort.json"),
        &json!({
            "entities": cfg.n_entities,
            "events": cohort.events.len(),
            "prevalence": cohort.prevalence(),
            "intercept": cohort.intercept,
        }),
    )?;
    eprintln!(
        "synth: {} entities, {} events, prevalence {:.4}",
        cfg.n_entities,
        cohort.events.len(),
        cohort.prevalence()
    );
    Ok(["events.csv", "labels.csv", "features.csv", "cohort.json"].map(String::from).to_vec())
}

pub fn preprocess(
    cfg: &ExperimentConfig,
    events: &Path,
    labels: &Path,
    features: &Path,
    out_dir: &Path,
) -> Result<Vec<String>> {
    let dictionary = FeatureDictionary::read_csv(features)?;
    let stream = EventStream::read(events, &dictionary)?;
    let labels = read_labels_csv(labels)?;
    let dataset = Dataset::build(&stream, &dictionary, &labels, &cfg.task, cfg.task_kind(), cfg.build_options())?;
    dataset.save(&out_dir.join("dataset.json"))?;
    let count = |part| dataset.records.iter().filter(|r| r.split == part).count();
    let (train, valid, test) = (count(SplitPart::Train), count(SplitPart::Validation), count(SplitPart::Test));
    write_json(
        &out_dir.join("dataset_summary.json"),
        &json!({ "task": cfg.task, "p": dataset.p(), "train": train, "validation": valid, "test": test }),
    )?;
    eprintln!("preprocess: {train} train / {valid} validation / {test} test sequences, p = {}", dataset.p());
    Ok(vec!["dataset.json".into(), "dataset_summary.json".into()])
}

pub fn train(cfg: &ExperimentConfig, dataset_path: &Path, out_dir: &Path) -> Result<Vec<String>> {
    let dataset = Dataset::load(dataset_path)?;
    let spec = cfg.model_spec();
    let train_cfg = cfg.train_config(cfg.seed);
    let checkpoints = out_dir.join("checkpoints");
    std::fs::create_dir_all(&checkpoints)?;
    let mut log = RunLog::create(&out_dir.join("run_log.jsonl"))?;
    let tag = json!({ "model": cfg.model.name(), "seed": cfg.seed });
    log.write(&json!({ "event": "start", "run": tag, "train": train_cfg }))?;
    let mut outputs = vec!["run_log.jsonl".to_string()];
    let mut saved = Vec::new();
    let run = run_experiment(&dataset, &spec, &train_cfg, |r, model| {
        progress(r, cfg.model.name());
        log.epoch(&tag, r)?;
        let name = format!("epoch-{:03}.json", r.epoch);
        model.save(&checkpoints.join(&name))?;
        saved.push(format!("checkpoints/{name}"));
        Ok(())
    })?;
    outputs.extend(saved);
    run.outcome.model.save(&out_dir.join("model.json"))?;
    let report = aggregate_runs(&dataset.task_name, cfg.model.name(), &[run.test])?;
    write_json(&out_dir.join("report.json"), &report)?;
    log.write(&json!({
        "event": "end",
        "run": tag,
        "best_epoch": run.outcome.best_epoch,
        "test_au_roc": run.test.au_roc,
        "test_au_prc": run.test.au_prc,
    }))?;
    eprintln!("train: test au_roc {:.4} au_prc {:.4}", run.test.au_roc, run.test.au_prc);
    outputs.extend(["model.json", "report.json"].map(String::from));
    Ok(outputs)
}

/// One row of a score file: targets then probabilities, in output order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub entity_id: String,
    pub targets: Vec<f64>,
    pub scores: Vec<f64>,
}

pub fn write_scores(path: &Path, rows: &[ScoreRow]) -> Result<()> {
    let outputs = rows.first().map_or(0, |r| r.scores.len());
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = vec!["entity_id".to_string()];
    header.extend((0..outputs).map(|j| format!("target_{j}")));
    header.extend((0..outputs).map(|j| format!("score_{j}")));
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        let mut rec = vec![r.entity_id.clone()];
        // `{}` prints the shortest decimal that parses back to the same f64.
        rec.extend(r.targets.iter().chain(&r.scores).map(|v| format!("{v}")));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let width = r.headers().map_err(csv_err)?.len();
    if width < 3 || (width - 1) % 2 != 0 {
        return Err(Error::Format(format!("score file {} has {width} columns", path.display())));
    }
    let outputs = (width - 1) / 2;
    r.records()
        .map(|rec| {
            let rec = rec.map_err(csv_err)?;
            let nums: Vec<f64> = rec
                .iter()
                .skip(1)
                .map(|v| v.parse::<f64>().map_err(|e| Error::Format(format!("bad score `{v}`: {e}"))))
                .collect::<Result<_>>()?;
            Ok(ScoreRow {
                entity_id: rec[0].to_string(),
                targets: nums[..outputs].to_vec(),
                scores: nums[outputs..].to_vec(),
            })
        })
        .collect()
}

pub fn metrics_of(rows: &[ScoreRow]) -> Result<RunMetrics> {
    let probs: Vec<Vec<f64>> = rows.iter().map(|r| r.scores.clone()).collect();
    let targets: Vec<Vec<f64>> = rows.iter().map(|r| r.targets.clone()).collect();
    score_predictions(&probs, &targets)
}

pub fn eval(
    model_path: &Path,
    dataset_path: &Path,
    split: SplitPart,
    name: Option<&str>,
    out_dir: &Path,
) -> Result<Vec<String>> {
    let model = Model::load(model_path)?;
    let dataset = Dataset::load(dataset_path)?;
    let encoded = encode_part(&model, &dataset, split)?;
    let probs = predict_all(&model, &encoded)?;
    let rows: Vec<ScoreRow> = encoded
        .iter()
        .zip(probs)
        .map(|(e, p)| ScoreRow {
            entity_id: e.entity_id.clone(),
            targets: e.targets.clone(),
            scores: p,
        })
        .collect();
    let metrics = metrics_of(&rows)?;
    write_scores(&out_dir.join("scores.csv"), &rows)?;
    let label = name.unwrap_or(model_label(&model.config));
    let report = aggregate_runs(&dataset.task_name, label, &[metrics])?;
    write_json(&out_dir.join("report.json"), &report)?;
    println!("{label} {split:?}: au_roc {:.6} au_prc {:.6}", metrics.au_roc, metrics.au_prc);
    Ok(vec!["scores.csv".into(), "report.json".into()])
}

pub fn eval_scores(scores: &Path, task: &str, name: &str, out_dir: &Path) -> Result<Vec<String>> {
    let metrics = metrics_of(&read_scores(scores)?)?;
    write_json(&out_dir.join("report.json"), &aggregate_runs(task, name, &[metrics])?)?;
    println!("{name}: au_roc {:.6} au_prc {:.6}", metrics.au_roc, metrics.au_prc);
    Ok(vec!["report.json".into()])
}

pub fn attribute(
    cfg: &ExperimentConfig,
    model_path: &Path,
    dataset_path: &Path,
    entity: &str,
    compare: Option<&Path>,
    top: usize,
    out_dir: &Path,
) -> Result<Vec<String>> {
    let model = Model::load(model_path)?;
    let dataset = Dataset::load(dataset_path)?;
    let seq = &dataset
        .records
        .iter()
        .find(|r| r.sequence.entity_id == entity)
        .ok_or_else(|| Error::InvalidArgument(format!("entity `{entity}` is not in {}", dataset_path.display())))?
        .sequence;
    let names = &dataset.feature_names;
    let map = integrated_gradients(&model, seq, cfg.attribution_steps)?;
    export_attributions(&map, names, &out_dir.join("attributions.csv"))?;
    let mut summary = json!({
        "entity_id": entity,
        "steps": cfg.attribution_steps,
        "prediction": map.prediction,
        "baseline_prediction": map.baseline_prediction,
        "attribution_sum": map.total(),
    });
    let mut outputs = vec!["attributions.csv".to_string()];
    if let Some(other) = compare {
        let other = Model::load(other)?;
        let other_map = integrated_gradients(&other, seq, cfg.attribution_steps)?;
        export_attributions(&other_map, names, &out_dir.join("attributions_compare.csv"))?;
        let ranked = top_divergent_features(&map, &other_map, top)?;
        export_divergence(&ranked, names, &out_dir.join("divergence.csv"))?;
        summary["compare_prediction"] = json!(other_map.prediction);
        outputs.extend(["attributions_compare.csv", "divergence.csv"].map(String::from));
    }
    write_json(&out_dir.join("attribution_summary.json"), &summary)?;
    println!(
        "{entity}: F(x) = {:.6}, F(baseline) = {:.6}, sum of attributions = {:.6}",
        map.prediction,
        map.baseline_prediction,
        map.total()
    );
    outputs.push("attribution_summary.json".into());
    Ok(outputs)
}

/// Parses `p,k,c` into a geometry with the configured batch and length.
pub fn parse_geometry(text: &str, cfg: &ExperimentConfig) -> Result<BenchGeometry> {
    let parts: Vec<usize> = text
        .split(',')
        .map(|v| v.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::config("geometry", format!("`{text}`: {e}")))?;
    let [p, k, c] = parts[..] else {
        return Err(Error::config("geometry", format!("`{text}` is not p,k,c")));
    };
    let g = BenchGeometry {
        p,
        k,
        c,
        batch: cfg.bench_batch,
        steps: cfg.bench_steps,
    };
    g.validate()?;
    Ok(g)
}

pub fn bench(cfg: &ExperimentConfig, geometries: &[String], out_dir: &Path) -> Result<(Vec<String>, Vec<BenchReport>)> {
    let grid = if geometries.is_empty() {
        parameter_table_grid(cfg.bench_batch, cfg.bench_steps)
    } else {
        geometries.iter().map(|g| parse_geometry(g, cfg)).collect::<Result<_>>()?
    };
    let mut reports = Vec::new();
    let mut w = csv::Writer::from_path(out_dir.join("bench.csv")).map_err(csv_err)?;
    w.write_record([
        "p",
        "k",
        "c",
        "hidden",
        "input",
        "batch",
        "steps",
        "threads",
        "repetitions",
        "masked_seq_per_s",
        "small_cells_seq_per_s",
        "speedup",
        "max_divergence",
    ])
    .map_err(csv_err)?;
    println!("{:>5} {:>3} {:>3} {:>6} {:>14} {:>14} {:>8} {:>10}", "p", "k", "c", "H", "masked/s", "small/s", "ratio", "max |d|");
    for g in grid {
        let r = run_bench(g, cfg.bench_repetitions, cfg.seed)?;
        let ratio = r.masked_throughput / r.small_cells_throughput;
        println!(
            "{:>5} {:>3} {:>3} {:>6} {:>14.1} {:>14.1} {:>8.2} {:>10.1e}",
            g.p, g.k, g.c, r.hidden, r.masked_throughput, r.small_cells_throughput, ratio, r.max_divergence
        );
        w.write_record(
            [
                g.p, g.k, g.c, r.hidden, r.input, g.batch, g.steps, r.threads, r.repetitions,
            ]
            .map(|v| v.to_string())
            .into_iter()
            .chain([r.masked_throughput, r.small_cells_throughput, ratio, r.max_divergence].map(|v| format!("{v}"))),
        )
        .map_err(csv_err)?;
        reports.push(r);
    }
    w.flush()?;
    write_json(&out_dir.join("bench.json"), &reports)?;
    Ok((vec!["bench.csv".into(), "bench.json".into()], reports))
}

/// Reports of the same task and model are pooled into one.
pub fn pool_reports(reports: Vec<RunReport>) -> Result<Vec<RunReport>> {
    let mut pooled: Vec<RunReport> = Vec::new();
    for r in reports {
        match pooled.iter_mut().find(|p| p.task == r.task && p.model == r.model) {
            Some(p) => {
                let runs: Vec<RunMetrics> = p
                    .au_roc
                    .iter()
                    .chain(&r.au_roc)
                    .zip(p.au_prc.iter().chain(&r.au_prc))
                    .map(|(&au_roc, &au_prc)| RunMetrics { au_roc, au_prc })
                    .collect();
                *p = aggregate_runs(&p.task, &p.model, &runs)?;
            }
            None => pooled.push(r),
        }
    }
    Ok(pooled)
}

pub fn stats(report_paths: &[PathBuf], reference: &str, out_dir: &Path) -> Result<Vec<String>> {
    if report_paths.is_empty() {
        return Err(Error::InvalidArgument("stats needs at least one report".into()));
    }
    let reports = pool_reports(report_paths.iter().map(|p| read_json(p)).collect::<Result<_>>()?)?;
    if !reports.iter().any(|r| r.model == reference) {
        return Err(Error::InvalidArgument(format!("no report for reference model `{reference}`")));
    }
    let rows = significance_table(&reports, reference)?;
    write_stats_csv(&out_dir.join("stats.csv"), &rows)?;
    for r in &rows {
        let p = r.p_value.map_or("-".to_string(), |p| format!("{p:.4}"));
        println!("{:<40} {:<10} {:.4} ± {:.4}  p = {p} {}", r.model, r.metric, r.mean, r.std, r.stars);
    }
    Ok(vec!["stats.csv".into()])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub au_roc_mean: f64,
    pub au_roc_std: f64,
    pub au_prc_mean: f64,
    pub au_prc_std: f64,
    /// Welch p-value of AU-ROC against the full model.
    pub p_value: Option<f64>,
    pub au_roc: Vec<f64>,
}

/// Trains the four FG-LSTM ablation variants over the configured seeds.
pub fn ablation_table(cfg: &ExperimentConfig, dataset: &Dataset, mut log: Option<&mut RunLog>) -> Result<Vec<AblationRow>> {
    let mut reports = Vec::new();
    for row in ABLATION_ROWS {
        let spec: ModelSpec = cfg.model_spec().ablation(row)?;
        let mut runs = Vec::new();
        for seed in cfg.run_seeds() {
            let tag = json!({ "variant": row, "seed": seed });
            let run = run_experiment(dataset, &spec, &cfg.train_config(seed), |r, _| {
                progress(r, &format!("{row} [seed {seed}]"));
                match log.as_deref_mut() {
                    Some(l) => l.epoch(&tag, r),
                    None => Ok(()),
                }
            })?;
            eprintln!("{row} [seed {seed}]: test au_roc {:.4}", run.test.au_roc);
            runs.push(run.test);
        }
        reports.push(aggregate_runs(&dataset.task_name, row, &runs)?);
    }
    let table = significance_table(&reports, ABLATION_ROWS[0])?;
    Ok(reports
        .iter()
        .map(|r| AblationRow {
            variant: r.model.clone(),
            au_roc_mean: r.au_roc_mean,
            au_roc_std: r.au_roc_std,
            au_prc_mean: r.au_prc_mean,
            au_prc_std: r.au_prc_std,
            p_value: table
                .iter()
                .find(|s| s.model == r.model && s.metric == "au_roc")
                .and_then(|s| s.p_value),
            au_roc: r.au_roc.clone(),
        })
        .collect())
}

pub fn ablate(cfg: &ExperimentConfig, dataset_path: &Path, out_dir: &Path) -> Result<(Vec<String>, Vec<AblationRow>)> {
    let dataset = Dataset::load(dataset_path)?;
    let mut log = RunLog::create(&out_dir.join("run_log.jsonl"))?;
    let rows = ablation_table(cfg, &dataset, Some(&mut log))?;
    let mut w = csv::Writer::from_path(out_dir.join("ablation.csv")).map_err(csv_err)?;
    w.write_record(["variant", "au_roc_mean", "au_roc_std", "au_prc_mean", "au_prc_std", "p_value_vs_full", "stars"])
        .map_err(csv_err)?;
    println!("{:<40} {:>16} {:>16} {:>10}", "variant", "AU-ROC", "AU-PRC", "p");
    for r in &rows {
        let p = r.p_value.map(|p| format!("{p}")).unwrap_or_default();
        w.write_record([
            r.variant.clone(),
            format!("{}", r.au_roc_mean),
            format!("{}", r.au_roc_std),
            format!("{}", r.au_prc_mean),
            format!("{}", r.au_prc_std),
            p,
            r.p_value.map_or("", stars).to_string(),
        ])
        .map_err(csv_err)?;
        println!(
            "{:<40} {:.4} ± {:.4}  {:.4} ± {:.4} {:>10}",
            r.variant,
            r.au_roc_mean,
            r.au_roc_std,
            r.au_prc_mean,
            r.au_prc_std,
            r.p_value.map_or("-".into(), |p| format!("{p:.2e}{}", stars(p)))
        );
    }
    w.flush()?;
    write_json(&out_dir.join("ablation.json"), &rows)?;
    Ok((vec!["run_log.jsonl".into(), "ablation.csv".into(), "ablation.json".into()], rows))
}
