//! The `fglstm` command line.
//!
//! Every command writes its outputs and a `manifest.json` into `--out-dir`.
//! The manifest stores the resolved configuration, the seed, input file
//! hashes and the command's own arguments, so `fglstm replay` can repeat the
//! run bit-identically elsewhere.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 data error,
//! 4 numerical failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use fglstm_core::preprocess::SplitPart;
use fglstm_core::synth::SynthConfig;
use fglstm_core::{Error, ErrorClass, Result};

pub mod commands;
pub mod config;
pub mod manifest;

use config::{parse_toml, read_toml, to_toml, ExperimentConfig};
use manifest::Manifest;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "fglstm", version, about = "Feature-grouped LSTM toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Flat TOML configuration (generator settings for `synth`).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured root seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort: events.csv, labels.csv, features.csv.
    Synth,
    /// Window, split and standardize an event file into dataset.json.
    Preprocess {
        events: PathBuf,
        labels: PathBuf,
        features: PathBuf,
    },
    /// Train one model; writes checkpoints, a run log and the best model.
    Train { dataset: PathBuf },
    /// Score a split with a trained model, or recompute metrics from a score file.
    Eval {
        model: Option<PathBuf>,
        dataset: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        /// Existing score file to evaluate instead of a model.
        #[arg(long, conflicts_with_all = ["model", "dataset"])]
        scores: Option<PathBuf>,
        /// Model name used in the report.
        #[arg(long)]
        name: Option<String>,
    },
    /// Integrated-gradients attributions for one entity.
    Attribute {
        model: PathBuf,
        dataset: PathBuf,
        entity: String,
        /// Second model; adds a per-feature divergence ranking.
        #[arg(long)]
        compare: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        top: usize,
    },
    /// Masked single-matmul versus p small cells. Geometries are `p,k,c`.
    Bench {
        #[arg(long = "geometry")]
        geometries: Vec<String>,
    },
    /// Pool run reports and test each model against a reference.
    Stats {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        reference: String,
    },
    /// The four-variant FG-LSTM ablation with Welch p-values against the full model.
    Ablate { dataset: PathBuf },
    /// Repeat the run recorded in a manifest into --out-dir.
    Replay { manifest: PathBuf },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Preprocess { .. } => "preprocess",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Attribute { .. } => "attribute",
            Command::Bench { .. } => "bench",
            Command::Stats { .. } => "stats",
            Command::Ablate { .. } => "ablate",
            Command::Replay { .. } => "replay",
        }
    }

    fn inputs(&self) -> Vec<&Path> {
        match self {
            Command::Synth | Command::Bench { .. } | Command::Replay { .. } => vec![],
            Command::Preprocess { events, labels, features } => vec![events, labels, features],
            Command::Train { dataset } | Command::Ablate { dataset } => vec![dataset],
            Command::Eval { model, dataset, scores, .. } => {
                model.iter().chain(dataset).chain(scores).map(PathBuf::as_path).collect()
            }
            Command::Attribute { model, dataset, compare, .. } => {
                [model, dataset].into_iter().chain(compare).map(PathBuf::as_path).collect()
            }
            Command::Stats { reports, .. } => reports.iter().map(PathBuf::as_path).collect(),
        }
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err.class() {
        ErrorClass::Config => EXIT_CONFIG,
        ErrorClass::Data => EXIT_DATA,
        ErrorClass::Numerical => EXIT_NUMERICAL,
    }
}

/// Arguments that belong to the command itself; global options are dropped.
fn command_args(raw: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    let mut it = raw.iter().skip(1);
    while let Some(a) = it.next() {
        let global = ["--config", "--seed", "--out-dir", "--threads"];
        if global.contains(&a.as_str()) {
            it.next();
        } else if !global.iter().any(|g| a.starts_with(&format!("{g}="))) {
            out.push(a.clone());
        }
    }
    out
}

/// Resolved configuration text and seed for `command`.
fn resolve_config(command: &Command, text: Option<&str>, path: Option<&Path>, seed: Option<u64>) -> Result<(String, u64)> {
    fn load<T: serde::de::DeserializeOwned + Default>(text: Option<&str>, path: Option<&Path>) -> Result<T> {
        match text {
            Some(t) => parse_toml(t, "manifest config"),
            None => read_toml(path),
        }
    }
    if let Command::Synth = command {
        let mut cfg: SynthConfig = load(text, path)?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok((to_toml(&cfg)?, cfg.seed))
    } else {
        let mut cfg: ExperimentConfig = load(text, path)?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok((to_toml(&cfg)?, cfg.seed))
    }
}

fn execute(command: &Command, config_toml: &str, out_dir: &Path) -> Result<Vec<String>> {
    let experiment = || parse_toml::<ExperimentConfig>(config_toml, "config");
    match command {
        Command::Synth => commands::synth(&parse_toml(config_toml, "config")?, out_dir),
        Command::Preprocess { events, labels, features } => {
            commands::preprocess(&experiment()?, events, labels, features, out_dir)
        }
        Command::Train { dataset } => commands::train(&experiment()?, dataset, out_dir),
        Command::Eval { model, dataset, split, scores, name } => {
            let cfg = experiment()?;
            match (scores, model, dataset) {
                (Some(s), _, _) => commands::eval_scores(s, &cfg.task, name.as_deref().unwrap_or("scores"), out_dir),
                (None, Some(m), Some(d)) => commands::eval(m, d, split.parse::<SplitPart>()?, name.as_deref(), out_dir),
                _ => Err(Error::config("eval", "give a model and a dataset, or --scores")),
            }
        }
        Command::Attribute { model, dataset, entity, compare, top } => {
            commands::attribute(&experiment()?, model, dataset, entity, compare.as_deref(), *top, out_dir)
        }
        Command::Bench { geometries } => Ok(commands::bench(&experiment()?, geometries, out_dir)?.0),
        Command::Stats { reports, reference } => commands::stats(reports, reference, out_dir),
        Command::Ablate { dataset } => Ok(commands::ablate(&experiment()?, dataset, out_dir)?.0),
        Command::Replay { .. } => unreachable!("replay is dispatched before execution"),
    }
}

/// Runs one command with its manifest.
fn run_recorded(
    command: &Command,
    args: Vec<String>,
    config_text: Option<&str>,
    global: &GlobalArgs,
) -> Result<()> {
    let (config_toml, seed) = resolve_config(command, config_text, global.config.as_deref(), global.seed)?;
    std::fs::create_dir_all(&global.out_dir)?;
    let mut manifest = Manifest::new(command.name(), args, config_toml, seed);
    for input in command.inputs() {
        manifest.add_input(input)?;
    }
    manifest.outputs = execute(command, &manifest.config_toml, &global.out_dir)?;
    manifest.write(&global.out_dir)
}

fn dispatch(cli: Cli, raw: &[String]) -> Result<()> {
    if let Command::Replay { manifest } = &cli.command {
        let recorded = Manifest::read(manifest)?;
        recorded.check_inputs()?;
        let argv = std::iter::once("fglstm".to_string()).chain(recorded.args.iter().cloned());
        let replayed = Cli::try_parse_from(argv).map_err(|e| Error::Format(format!("manifest arguments: {e}")))?;
        if matches!(replayed.command, Command::Replay { .. }) {
            return Err(Error::Format("a manifest cannot replay a replay".into()));
        }
        let global = GlobalArgs {
            config: None,
            seed: None,
            ..cli.global
        };
        return run_recorded(&replayed.command, recorded.args.clone(), Some(&recorded.config_toml), &global);
    }
    run_recorded(&cli.command, command_args(raw), None, &cli.global)
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let raw: Vec<String> = args
        .into_iter()
        .map(|a| a.into().to_string_lossy().into_owned())
        .collect();
    let cli = match Cli::try_parse_from(&raw) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.global.threads {
        pool = pool.num_threads(n);
    }
    let result = match pool.build() {
        Ok(pool) => pool.install(|| dispatch(cli, &raw)),
        Err(e) => Err(Error::config("threads", e.to_string())),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
