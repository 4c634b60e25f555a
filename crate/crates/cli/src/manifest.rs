//! Run manifests: everything needed to repeat a command bit-identically.

use std::collections::BTreeMap;
use std::path::Path;

use fglstm_core::cells::MODEL_FORMAT;
use fglstm_core::preprocess::DATASET_FORMAT;
use fglstm_core::rng::RNG_ALGORITHM;
use fglstm_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::sha256_hex;

pub const MANIFEST_FORMAT: &str = "fglstm-manifest/1";
pub const RUN_LOG_FORMAT: &str = "fglstm-runlog/1";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub tool_version: String,
    pub command: String,
    /// Subcommand and its own arguments; the global options are folded into
    /// `config_toml` or do not affect outputs.
    pub args: Vec<String>,
    /// Resolved configuration, with the command-line seed applied.
    pub config_toml: String,
    pub config_sha256: String,
    pub seed: u64,
    pub rng: String,
    pub formats: BTreeMap<String, String>,
    pub inputs: Vec<InputFile>,
    pub outputs: Vec<String>,
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

impl Manifest {
    pub fn new(command: &str, args: Vec<String>, config_toml: String, seed: u64) -> Self {
        let formats = [
            ("manifest", MANIFEST_FORMAT),
            ("model", MODEL_FORMAT),
            ("dataset", DATASET_FORMAT),
            ("run_log", RUN_LOG_FORMAT),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        Self {
            format: MANIFEST_FORMAT.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            args,
            config_sha256: sha256_hex(config_toml.as_bytes()),
            config_toml,
            seed,
            rng: RNG_ALGORITHM.into(),
            formats,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(InputFile {
            path: path.display().to_string(),
            sha256: file_sha256(path)?,
        });
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(dir.join(MANIFEST_FILE), text)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let m: Manifest = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::Format(format!("unsupported manifest format `{}`", m.format)));
        }
        if sha256_hex(m.config_toml.as_bytes()) != m.config_sha256 {
            return Err(Error::Format("manifest config does not match its hash".into()));
        }
        Ok(m)
    }

    /// Fails if any recorded input changed since the manifest was written.
    pub fn check_inputs(&self) -> Result<()> {
        for input in &self.inputs {
            let now = file_sha256(Path::new(&input.path))?;
            if now != input.sha256 {
                return Err(Error::Format(format!("input {} changed since the recorded run", input.path)));
            }
        }
        Ok(())
    }
}
