use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;

use crate::error::CliError;

/// Reproducibility record written next to every command's output.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: &'static str,
    pub argv: Vec<String>,
    pub config: Value,
    pub inputs: BTreeMap<String, PathBuf>,
    pub outputs: BTreeMap<String, PathBuf>,
    pub results: Value,
    pub duration_secs: f64,
}

impl RunManifest {
    pub fn new(command: &str, config: &impl Serialize) -> Self {
        RunManifest {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION"),
            argv: std::env::args().collect(),
            config: serde_json::to_value(config).unwrap_or(Value::Null),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            results: Value::Null,
            duration_secs: 0.0,
        }
    }

    pub fn input(mut self, name: &str, path: &Path) -> Self {
        self.inputs.insert(name.to_string(), path.to_path_buf());
        self
    }

    pub fn output(&mut self, name: &str, path: &Path) {
        self.outputs.insert(name.to_string(), path.to_path_buf());
    }

    pub fn write(mut self, path: &Path, started: Instant) -> Result<(), CliError> {
        self.duration_secs = started.elapsed().as_secs_f64();
        let text = serde_json::to_string_pretty(&self).map_err(|e| CliError::Io(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
    }
}

/// `<path>.manifest.json`
pub fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}
