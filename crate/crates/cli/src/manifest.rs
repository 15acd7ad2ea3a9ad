use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use vtreid_core::data::GRID_VERSION;
use vtreid_core::encoder::CHECKPOINT_VERSION;
use vtreid_core::eval::EMBEDDING_VERSION;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Provenance record written before any other output of a command.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_file: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    /// Seconds since the Unix epoch; `SOURCE_DATE_EPOCH` overrides the clock.
    pub timestamp: u64,
    pub artifact_versions: BTreeMap<String, String>,
    pub args: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, out_dir: &Path, config_file: Option<&Path>, seed: Option<u64>) -> Self {
        let versions = [
            ("vtreid", env!("CARGO_PKG_VERSION").to_string()),
            ("checkpoint", CHECKPOINT_VERSION.to_string()),
            ("embeddings", EMBEDDING_VERSION.to_string()),
            ("grid", GRID_VERSION.to_string()),
        ];
        Self {
            command: command.to_string(),
            config_file: config_file.map(Path::to_path_buf),
            seed,
            out_dir: out_dir.to_path_buf(),
            timestamp: timestamp(),
            artifact_versions: versions.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            args: std::env::args().skip(1).collect(),
        }
    }

    /// Creates `out_dir` if needed and writes the manifest into it.
    pub fn write(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out_dir)
            .with_context(|| format!("creating output directory {}", self.out_dir.display()))?;
        write_json(&self.out_dir.join(MANIFEST_FILE), self)
    }
}

fn timestamp() -> u64 {
    if let Some(t) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.parse().ok()) {
        return t;
    }
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
