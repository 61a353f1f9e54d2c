use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::Context;
use nextpoi_core::config::{sha256_hex, PipelineConfig};
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

pub fn digest(path: &Path) -> anyhow::Result<FileDigest> {
    let data = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(FileDigest { path: path.display().to_string(), sha256: sha256_hex(&data), bytes: data.len() as u64 })
}

/// Run record written next to a stage's outputs.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub stage: &'static str,
    pub tool_version: &'static str,
    pub config_hash: String,
    pub config: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub started_unix: u64,
    pub elapsed_ms: u128,
    pub summary: serde_json::Value,
}

pub struct StageRun {
    stage: &'static str,
    started: Instant,
    started_unix: u64,
    inputs: Vec<PathBuf>,
}

impl StageRun {
    pub fn start(stage: &'static str) -> Self {
        let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        tracing::info!(stage, "stage started");
        StageRun { stage, started: Instant::now(), started_unix, inputs: Vec::new() }
    }

    pub fn input(&mut self, p: impl Into<PathBuf>) {
        self.inputs.push(p.into());
    }

    /// Writes `<manifest_path>` describing the run.
    pub fn finish(self, cfg: &PipelineConfig, outputs: &[&Path], manifest_path: &Path, summary: serde_json::Value) -> anyhow::Result<()> {
        let manifest = Manifest {
            stage: self.stage,
            tool_version: env!("CARGO_PKG_VERSION"),
            config_hash: cfg.hash(),
            config: cfg.render(),
            inputs: self.inputs.iter().filter(|p| p.is_file()).map(|p| digest(p)).collect::<anyhow::Result<_>>()?,
            outputs: outputs.iter().filter(|p| p.is_file()).map(|p| digest(p)).collect::<anyhow::Result<_>>()?,
            started_unix: self.started_unix,
            elapsed_ms: self.started.elapsed().as_millis(),
            summary,
        };
        nextpoi_core::jsonl::write_json(manifest_path, &manifest)?;
        tracing::info!(stage = self.stage, elapsed_ms = manifest.elapsed_ms as u64, manifest = %manifest_path.display(), "stage finished");
        Ok(())
    }
}

/// `<dir>/<stage>.manifest.json` for directory outputs, `<file>.manifest.json` otherwise.
pub fn manifest_path_for(out: &Path, stage: &str, is_dir: bool) -> PathBuf {
    if is_dir {
        out.join(format!("{stage}.manifest.json"))
    } else {
        let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".manifest.json");
        out.with_file_name(name)
    }
}
