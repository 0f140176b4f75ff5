//! Run directories and manifests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Failure, Outcome};

pub const RUNS_DIR_ENV: &str = "PDFORGE_RUNS_DIR";

/// `--out`, then `PDFORGE_RUNS_DIR`, then the config's `output_dir`, then
/// `./runs`.
pub fn run_root(cli_out: Option<&Path>, config_dir: Option<&Path>) -> PathBuf {
    if let Some(dir) = cli_out {
        return dir.to_path_buf();
    }
    if let Some(dir) = std::env::var_os(RUNS_DIR_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(dir);
    }
    config_dir.map_or_else(|| PathBuf::from("runs"), Path::to_path_buf)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    pub deterministic: bool,
    /// Exact contents of `config.snapshot`.
    pub config_snapshot: String,
    pub config_sha256: String,
    /// File name to SHA-256 of every artifact written so far.
    pub artifacts: BTreeMap<String, String>,
    pub started_at: String,
    pub finished_at: Option<String>,
    /// `running`, `success` or `failed`.
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

/// An open run directory. Files are only ever added.
pub struct Run {
    pub dir: PathBuf,
    pub manifest: RunManifest,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

impl Run {
    /// Creates `<root>/<command>-<timestamp>-<config hash>` (with a numeric
    /// suffix if taken) and writes the config snapshot and manifest.
    pub fn create(
        root: &Path,
        command: &str,
        snapshot: String,
        seed: u64,
        deterministic: bool,
    ) -> Outcome<Self> {
        std::fs::create_dir_all(root).map_err(|e| Failure::io("create", root, e))?;
        let config_sha256 = sha256_hex(snapshot.as_bytes());
        let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S");
        let base = format!("{command}-{stamp}-{}", &config_sha256[..8]);
        let mut suffix = 0;
        let (run_id, dir) = loop {
            let id = if suffix == 0 { base.clone() } else { format!("{base}-{suffix}") };
            let dir = root.join(&id);
            match std::fs::create_dir(&dir) {
                Ok(()) => break (id, dir),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => suffix += 1,
                Err(e) => return Err(Failure::io("create", &dir, e)),
            }
        };
        let mut run = Run {
            dir,
            manifest: RunManifest {
                run_id,
                command: command.to_string(),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                seed,
                deterministic,
                config_snapshot: snapshot.clone(),
                config_sha256,
                artifacts: BTreeMap::new(),
                started_at: now(),
                finished_at: None,
                status: "running".into(),
                message: None,
            },
        };
        run.write("config.snapshot", snapshot.as_bytes())?;
        run.save_manifest()?;
        Ok(run)
    }

    /// Writes an artifact and records its checksum.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Outcome<PathBuf> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Failure::io("create", parent, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| Failure::io("write", &path, e))?;
        self.manifest.artifacts.insert(name.to_string(), sha256_hex(bytes));
        Ok(path)
    }

    fn save_manifest(&self) -> Outcome<()> {
        let value = serde_json::to_value(&self.manifest).map_err(|e| Failure::internal(e.to_string()))?;
        let mut text = serde_json::to_string_pretty(&value).map_err(|e| Failure::internal(e.to_string()))?;
        text.push('\n');
        let path = self.dir.join("manifest.json");
        std::fs::write(&path, text).map_err(|e| Failure::io("write", &path, e))
    }

    /// Records the outcome in the manifest.
    pub fn finish<T>(mut self, result: &Outcome<T>) -> Outcome<()> {
        self.manifest.finished_at = Some(now());
        match result {
            Ok(_) => self.manifest.status = "success".into(),
            Err(f) => {
                self.manifest.status = "failed".into();
                self.manifest.message = Some(f.message.clone());
            }
        }
        self.save_manifest()
    }
}
