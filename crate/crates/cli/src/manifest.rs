use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;

/// Provenance written next to every artifact a command produces.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
}

pub fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        Self {
            command: command.to_owned(),
            args: std::env::args().skip(1).collect(),
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            seed: None,
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            started_unix_ms: now_ms(),
            finished_unix_ms: 0,
        }
    }

    pub fn input(&mut self, p: impl AsRef<Path>) -> &mut Self {
        self.inputs.push(p.as_ref().to_path_buf());
        self
    }

    pub fn output(&mut self, p: impl AsRef<Path>) -> &mut Self {
        self.outputs.push(p.as_ref().to_path_buf());
        self
    }

    /// `<out>.manifest.json` for a file, `run_manifest.json` inside a directory.
    pub fn path_for(out: &Path) -> PathBuf {
        if out.is_dir() {
            return out.join("run_manifest.json");
        }
        let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".manifest.json");
        out.with_file_name(name)
    }

    pub fn write_next_to(mut self, out: &Path) -> Result<()> {
        self.finished_unix_ms = now_ms();
        let path = Self::path_for(out);
        let text = serde_json::to_string_pretty(&self)?;
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}
