//! Output directories: every artifact goes through one writer that hashes
//! it, and a manifest records the hashes plus run provenance.
//!
//! A `.incomplete` marker sits in the directory from the first write until
//! the manifest is in place, so an interrupted run is recognisable.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.json";
pub const INCOMPLETE: &str = ".incomplete";
pub const FORMAT_VERSION: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub format_version: u32,
    pub mode: String,
    pub seed: u64,
    pub threads: usize,
    pub config_sha256: String,
    /// The resolved config, defaults included.
    pub config: String,
    pub wall_time_s: f64,
    pub files: Vec<FileEntry>,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path,
            line: e.line(),
            message: e.to_string(),
        })
    }
}

/// Provenance passed to [`OutputDir::finish`].
pub struct RunInfo<'a> {
    pub mode: &'a str,
    pub seed: u64,
    pub threads: usize,
    pub config: &'a str,
}

/// The single writer of one output directory.
pub struct OutputDir {
    dir: PathBuf,
    files: BTreeMap<String, FileEntry>,
    started: Instant,
}

impl OutputDir {
    /// Creates `dir` if needed, drops any old manifest, and marks the
    /// directory incomplete.
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let old = dir.join(MANIFEST);
        if old.exists() {
            fs::remove_file(&old).map_err(|e| Error::io(&old, e))?;
        }
        let marker = dir.join(INCOMPLETE);
        fs::write(&marker, b"").map_err(|e| Error::io(&marker, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: BTreeMap::new(),
            started: Instant::now(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Writes `bytes` to the relative path `rel` (subdirectories allowed).
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        if rel == MANIFEST || rel == INCOMPLETE || Path::new(rel).is_absolute() || rel.split('/').any(|c| c == "..") {
            return Err(Error::invalid(format!("'{rel}' is not a valid artifact path")));
        }
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.files.insert(
            rel.to_string(),
            FileEntry {
                path: rel.to_string(),
                sha256: sha256_hex(bytes),
                bytes: bytes.len() as u64,
            },
        );
        Ok(())
    }

    pub fn write_str(&mut self, rel: &str, text: &str) -> Result<()> {
        self.write(rel, text.as_bytes())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::invalid(e.to_string()))?;
        text.push('\n');
        self.write_str(rel, &text)
    }

    /// Writes the manifest and removes the incomplete marker.
    pub fn finish(self, info: RunInfo<'_>) -> Result<Manifest> {
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            format_version: FORMAT_VERSION,
            mode: info.mode.to_string(),
            seed: info.seed,
            threads: info.threads,
            config_sha256: sha256_hex(info.config.as_bytes()),
            config: info.config.to_string(),
            wall_time_s: self.started.elapsed().as_secs_f64(),
            files: self.files.into_values().collect(),
        };
        let path = self.dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::invalid(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        let marker = self.dir.join(INCOMPLETE);
        fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
        Ok(manifest)
    }
}

/// Checks every listed artifact against its recorded hash. Returns one
/// message per problem; empty means the directory is intact.
pub fn verify(dir: &Path) -> Result<Vec<String>> {
    let manifest = Manifest::read(dir)?;
    let mut problems = Vec::new();
    if dir.join(INCOMPLETE).exists() {
        problems.push("directory is marked incomplete".to_string());
    }
    for f in &manifest.files {
        match fs::read(dir.join(&f.path)) {
            Err(_) => problems.push(format!("{}: missing", f.path)),
            Ok(bytes) if sha256_hex(&bytes) != f.sha256 => problems.push(format!("{}: hash mismatch", f.path)),
            Ok(_) => {}
        }
    }
    Ok(problems)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn info() -> RunInfo<'static> {
        RunInfo {
            mode: "fit",
            seed: 1,
            threads: 1,
            config: "mode = \"fit\"\n",
        }
    }

    #[test]
    fn manifest_lists_files_and_detects_tampering() {
        let tmp = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(tmp.path()).unwrap();
        assert!(tmp.path().join(INCOMPLETE).exists());
        out.write_str("a.csv", "x\n1\n").unwrap();
        out.write_str("sub/b.csv", "y\n").unwrap();
        let m = out.finish(info()).unwrap();
        assert!(!tmp.path().join(INCOMPLETE).exists());
        let names: Vec<&str> = m.files.iter().map(|f| f.path.as_str()).collect();
        assert_eq!(names, ["a.csv", "sub/b.csv"]);
        assert!(verify(tmp.path()).unwrap().is_empty());
        fs::write(tmp.path().join("a.csv"), "x\n2\n").unwrap();
        assert_eq!(verify(tmp.path()).unwrap(), ["a.csv: hash mismatch"]);
    }

    #[test]
    fn unfinished_run_keeps_the_marker() {
        let tmp = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(tmp.path()).unwrap();
        out.write_str("a.csv", "1\n").unwrap();
        drop(out);
        assert!(tmp.path().join(INCOMPLETE).exists());
        assert!(Manifest::read(tmp.path()).is_err());
    }

    #[test]
    fn escaping_paths_are_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(tmp.path()).unwrap();
        assert!(out.write_str("../x", "").is_err());
        assert!(out.write_str(MANIFEST, "").is_err());
    }
}
