//! Run manifests. Every run that writes files also writes a manifest next
//! to its outputs: the subcommand, the fully resolved configuration, the
//! seed, all input/output paths, the tool version, and the wall-clock
//! time. Re-running the recorded subcommand with the recorded config
//! reproduces the outputs byte for byte (wall-clock aside).

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::error::CliError;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    pub jobs: usize,
    /// Every setting after flag/config-file/environment resolution.
    pub config: serde_json::Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub wall_clock_seconds: f64,
    /// Run-specific statistics (class counts, skip lists, metrics...).
    pub extra: serde_json::Value,
}

impl RunManifest {
    pub fn new(subcommand: &str, seed: Option<u64>, jobs: usize) -> Self {
        RunManifest {
            subcommand: subcommand.to_owned(),
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            seed,
            jobs,
            config: serde_json::Value::Null,
            inputs: Vec::new(),
            outputs: Vec::new(),
            wall_clock_seconds: 0.0,
            extra: serde_json::Value::Null,
        }
    }

    pub fn input(mut self, path: &Path) -> Self {
        self.inputs.push(path.display().to_string());
        self
    }

    pub fn output(mut self, path: &Path) -> Self {
        self.outputs.push(path.display().to_string());
        self
    }

    pub fn config(mut self, value: serde_json::Value) -> Self {
        self.config = value;
        self
    }

    pub fn extra(mut self, value: serde_json::Value) -> Self {
        self.extra = value;
        self
    }

    /// Writes the manifest next to `primary_output`: into the directory
    /// itself when the output is a directory, otherwise as a sibling
    /// `<file name>.manifest.json`.
    pub fn write(mut self, primary_output: &Path, started: Instant) -> Result<PathBuf, CliError> {
        self.wall_clock_seconds = started.elapsed().as_secs_f64();
        let path = manifest_path(primary_output);
        let json = serde_json::to_string_pretty(&self)?;
        std::fs::write(&path, json + "\n")
            .map_err(|e| CliError::data(format!("writing {}: {e}", path.display())))?;
        Ok(path)
    }
}

pub fn manifest_path(primary_output: &Path) -> PathBuf {
    if primary_output.is_dir() {
        primary_output.join("run_manifest.json")
    } else {
        let name = primary_output
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "output".to_owned());
        primary_output.with_file_name(format!("{name}.manifest.json"))
    }
}
