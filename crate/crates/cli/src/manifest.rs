use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use serde_json::Value;

/// Record of one CLI run, written next to its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub tool_version: &'static str,
    pub threads: usize,
    pub config_path: Option<PathBuf>,
    pub config_sha256: Option<String>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub algorithm: Option<String>,
    pub parameters: Value,
    /// Algorithm time only, excluding file I/O.
    pub wall_time_s: Option<f64>,
    pub metrics: Value,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            command: command.into(),
            argv: std::env::args().collect(),
            tool_version: env!("CARGO_PKG_VERSION"),
            threads: rayon::current_num_threads(),
            config_path: None,
            config_sha256: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            algorithm: None,
            parameters: Value::Null,
            wall_time_s: None,
            metrics: Value::Null,
        }
    }

    pub fn with_config(mut self, path: &Path, text: &str) -> Self {
        self.config_path = Some(path.to_path_buf());
        self.config_sha256 = Some(mimosar::dataio::sha256_hex(text.as_bytes()));
        self
    }

    /// Writes the manifest to `path`, which is also listed among the outputs.
    pub fn write(mut self, path: &Path) -> anyhow::Result<()> {
        self.outputs.push(path.to_path_buf());
        let text = serde_json::to_string_pretty(&self)?;
        std::fs::write(path, text + "\n").with_context(|| format!("writing manifest {}", path.display()))
    }
}

/// `<file>.manifest.json` next to `output`.
pub fn path_for(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    output.with_file_name(name)
}
