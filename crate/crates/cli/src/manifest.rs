use anyhow::Context;
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

/// Record of one command invocation, written next to its output as
/// `<output>.run.json`.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub tool_version: String,
    pub started_unix_secs: u64,
    pub wall_clock_secs: f64,
}

pub struct Run {
    command: &'static str,
    config: serde_json::Value,
    seed: Option<u64>,
    inputs: Vec<String>,
    started: SystemTime,
    clock: Instant,
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_else(|| "output".into());
    name.push(".run.json");
    output.with_file_name(name)
}

impl Run {
    pub fn start(command: &'static str, config: &impl Serialize, seed: Option<u64>, inputs: &[&Path]) -> Self {
        Run {
            command,
            config: serde_json::to_value(config).unwrap_or(serde_json::Value::Null),
            seed,
            inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
            started: SystemTime::now(),
            clock: Instant::now(),
        }
    }

    /// Writes the manifest beside `output` and returns its path.
    pub fn finish(self, output: &Path, outputs: &[&Path]) -> anyhow::Result<PathBuf> {
        let manifest = RunManifest {
            command: self.command.to_string(),
            config: self.config,
            seed: self.seed,
            inputs: self.inputs,
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix_secs: self
                .started
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            wall_clock_secs: self.clock.elapsed().as_secs_f64(),
        };
        let path = manifest_path(output);
        let text = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
