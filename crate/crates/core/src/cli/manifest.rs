//! Inventory of run outputs with checksums.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    /// Paths relative to the run directory, `/`-separated.
    pub files: BTreeMap<String, FileEntry>,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

/// Regular files below `dir`, sorted.
pub fn list_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        if !d.exists() {
            continue;
        }
        for entry in std::fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let path = entry.map_err(|e| Error::io(&d, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn relative(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect::<Vec<_>>().join("/")
}

impl RunManifest {
    /// The manifest in `run_dir`, or a fresh one when missing or written
    /// under another config.
    pub fn load_or_new(run_dir: &Path, config_hash: &str) -> Result<Self> {
        let path = run_dir.join(MANIFEST_FILE);
        if path.exists() {
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            if let Ok(m) = serde_json::from_str::<RunManifest>(&text) {
                if m.config_hash == config_hash {
                    return Ok(m);
                }
            }
        }
        Ok(RunManifest { config_hash: config_hash.to_string(), ..Default::default() })
    }

    /// Replaces all entries under `stage_dir` with its current contents.
    pub fn record_dir(&mut self, run_dir: &Path, stage_dir: &str) -> Result<()> {
        let prefix = format!("{stage_dir}/");
        self.files.retain(|k, _| !k.starts_with(&prefix));
        for path in list_files(&run_dir.join(stage_dir))? {
            let bytes = std::fs::metadata(&path).map_err(|e| Error::io(&path, e))?.len();
            self.files.insert(relative(run_dir, &path), FileEntry { sha256: sha256_file(&path)?, bytes });
        }
        Ok(())
    }

    pub fn record_file(&mut self, run_dir: &Path, rel: &str) -> Result<()> {
        let path = run_dir.join(rel);
        let bytes = std::fs::metadata(&path).map_err(|e| Error::io(&path, e))?.len();
        self.files.insert(rel.to_string(), FileEntry { sha256: sha256_file(&path)?, bytes });
        Ok(())
    }

    pub fn save(&self, run_dir: &Path) -> Result<()> {
        let path = run_dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Files that are missing or whose checksum changed.
    pub fn verify(&self, run_dir: &Path) -> Result<Vec<String>> {
        let mut bad = Vec::new();
        for (rel, entry) in &self.files {
            let path = run_dir.join(rel);
            if !path.exists() || sha256_file(&path)? != entry.sha256 {
                bad.push(rel.clone());
            }
        }
        Ok(bad)
    }

    /// Checksums of the files under `prefix`.
    pub fn checksums_under(&self, prefix: &str) -> BTreeMap<String, String> {
        self.files.iter().filter(|(k, _)| k.starts_with(prefix)).map(|(k, v)| (k.clone(), v.sha256.clone())).collect()
    }
}
