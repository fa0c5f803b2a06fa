//! Provenance record written next to every command's outputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Succeeded,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    /// Fully resolved configuration; rerunning with it reproduces the outputs.
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub tool_version: String,
    pub seed: Option<u64>,
    pub started_at: String,
    pub finished_at: Option<String>,
    pub status: RunStatus,
    pub error: Option<String>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn digest(path: &Path) -> Result<FileDigest, CliError> {
    Ok(FileDigest {
        path: path.to_path_buf(),
        sha256: sha256_file(path)?,
    })
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// A manifest on disk, rewritten when the run finishes.
pub struct ManifestWriter {
    path: PathBuf,
    manifest: RunManifest,
}

impl ManifestWriter {
    pub fn begin(
        path: PathBuf,
        command: &str,
        config: serde_json::Value,
        inputs: &[PathBuf],
        seed: Option<u64>,
    ) -> Result<Self, CliError> {
        let inputs = inputs.iter().map(|p| digest(p)).collect::<Result<Vec<_>, _>>()?;
        let manifest = RunManifest {
            command: command.to_string(),
            argv: std::env::args().collect(),
            config,
            inputs,
            outputs: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            started_at: now(),
            finished_at: None,
            status: RunStatus::Running,
            error: None,
        };
        let writer = Self { path, manifest };
        writer.write()?;
        Ok(writer)
    }

    fn write(&self) -> Result<(), CliError> {
        if let Some(parent) = self.path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| CliError::input(format!("{}: {e}", parent.display())))?;
        }
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        std::fs::write(&self.path, text).map_err(|e| CliError::input(format!("{}: {e}", self.path.display())))
    }

    pub fn succeed(mut self, outputs: &[PathBuf]) -> Result<(), CliError> {
        self.manifest.outputs = outputs.iter().map(|p| digest(p)).collect::<Result<Vec<_>, _>>()?;
        self.manifest.status = RunStatus::Succeeded;
        self.manifest.finished_at = Some(now());
        self.write()
    }

    pub fn fail(mut self, err: &CliError) {
        self.manifest.status = RunStatus::Failed;
        self.manifest.error = Some(err.message.clone());
        self.manifest.finished_at = Some(now());
        // The original error is what the caller reports.
        let _ = self.write();
    }
}

/// `data/run.json` -> `data/run.manifest.json`.
pub fn sibling_manifest(output: &Path) -> PathBuf {
    let stem = output.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    output.with_file_name(format!("{stem}.manifest.json"))
}
