//! Output directory bookkeeping: every emitted file is hashed and listed in a manifest that is
//! written after all other files.

use anyhow::{Context, Result};
use pcrtbp_eco::flow::format_float;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

/// One emitted file.
#[derive(Debug, Clone, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Run manifest, the last file written into the output directory.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest<C: Serialize> {
    pub artifact: String,
    pub version: String,
    pub command: String,
    pub threads: usize,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub config: C,
    pub files: Vec<FileEntry>,
}

/// Output directory of a single command run.
pub struct RunDir {
    root: PathBuf,
    files: Vec<FileEntry>,
    started: f64,
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self { root: root.to_path_buf(), files: Vec::new(), started: unix_now() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Writes `bytes` to `name` inside the directory and records its checksum.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.files.retain(|f| f.path != name);
        self.files.push(FileEntry { path: name.to_string(), sha256: hex::encode(Sha256::digest(bytes)), bytes: bytes.len() });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Writes a CSV with the given header and rows of floats at full precision.
    pub fn write_csv(&mut self, name: &str, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
        let mut text = header.join(",");
        text.push('\n');
        for row in rows {
            let cells: Vec<String> = row.iter().map(|&x| format_float(x)).collect();
            text.push_str(&cells.join(","));
            text.push('\n');
        }
        self.write(name, text.as_bytes())
    }

    /// Writes the manifest listing every file written so far.
    pub fn finish<C: Serialize>(self, command: &str, config: C) -> Result<PathBuf> {
        let manifest = RunManifest {
            artifact: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            threads: rayon::current_num_threads(),
            started_unix: self.started,
            finished_unix: unix_now(),
            config,
            files: self.files,
        };
        let path = self.root.join("manifest.json");
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
