use std::path::{Path, PathBuf};

use adace_core::SettingConfig;
use anyhow::Context;
use serde::{Deserialize, Serialize};

use crate::Command;

/// Record of one run. `arguments` and `config` are enough to reproduce the
/// output tables byte for byte.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub arguments: Command,
    /// Resolved data-generating configuration, when the command uses one.
    pub config: Option<SettingConfig>,
    pub seed: u64,
    #[serde(rename = "M")]
    pub m: Option<usize>,
    #[serde(rename = "B")]
    pub b: Option<usize>,
    #[serde(rename = "R")]
    pub r: Option<usize>,
    pub inputs: Vec<PathBuf>,
    pub out_dir: PathBuf,
    pub outputs: Vec<PathBuf>,
    pub threads: usize,
    pub started_unix: u64,
    pub wall_clock_seconds: f64,
    /// Replications excluded from a study.
    pub failures: Option<usize>,
}

impl RunManifest {
    pub fn new(arguments: Command, seed: u64, out_dir: &Path) -> Self {
        let command = match &arguments {
            Command::Estimate(_) => "estimate",
            Command::Simulate(_) => "simulate",
            Command::Oracle(_) => "oracle",
        };
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            arguments,
            config: None,
            seed,
            m: None,
            b: None,
            r: None,
            inputs: Vec::new(),
            out_dir: out_dir.to_path_buf(),
            outputs: Vec::new(),
            threads: rayon::current_num_threads(),
            started_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            wall_clock_seconds: 0.0,
            failures: None,
        }
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("{}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("{}: not a run manifest", path.display()))
    }

    pub fn save(&self, path: &Path) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).with_context(|| format!("{}", path.display()))
    }
}
