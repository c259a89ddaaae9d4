//! `manifest.json` records one entry per finished stage: the hash of the
//! config it ran with, the hash of its upstream artifacts and the hash of its
//! own artifact files.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{PipelineError, Result};
use crate::digest::sha256_hex;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOCK_FILE: &str = ".lock";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub config_hash: String,
    pub upstream_hash: String,
    pub artifact_hash: String,
    /// Artifact files relative to the stage directory.
    pub files: Vec<String>,
    /// False when the stage finished with recorded failures.
    pub complete: bool,
    #[serde(default)]
    pub summary: serde_json::Value,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: BTreeMap<String, StageRecord>,
}

impl Manifest {
    pub fn load(workdir: &Path) -> Result<Self> {
        let path = workdir.join(MANIFEST_FILE);
        match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text)
                .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Manifest::default()),
            Err(e) => Err(PipelineError::io(&path, e)),
        }
    }

    /// Writes through a temporary file so a crash never leaves half a manifest.
    pub fn save(&self, workdir: &Path) -> Result<()> {
        let path = workdir.join(MANIFEST_FILE);
        let tmp = workdir.join(format!("{MANIFEST_FILE}.tmp"));
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&tmp, text).map_err(|e| PipelineError::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| PipelineError::io(&path, e))
    }
}

/// Digest over the names and contents of `files` inside `dir`.
pub fn artifact_hash(dir: &Path, files: &[String]) -> Result<String> {
    let mut names = files.to_vec();
    names.sort();
    let mut acc = Vec::new();
    for name in &names {
        let path = dir.join(name);
        let bytes = fs::read(&path).map_err(|e| PipelineError::io(&path, e))?;
        acc.extend_from_slice(name.as_bytes());
        acc.push(0);
        acc.extend_from_slice(sha256_hex(&bytes).as_bytes());
        acc.push(b'\n');
    }
    Ok(sha256_hex(acc))
}

/// Exclusive hold on a workdir, released on drop.
#[derive(Debug)]
pub struct WorkdirLock {
    path: PathBuf,
}

impl WorkdirLock {
    pub fn acquire(workdir: &Path) -> Result<Self> {
        let path = workdir.join(LOCK_FILE);
        let mut file = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::AlreadyExists => PipelineError::Locked(path.clone()),
                _ => PipelineError::io(&path, e),
            })?;
        let _ = writeln!(file, "{}", std::process::id());
        Ok(WorkdirLock { path })
    }
}

impl Drop for WorkdirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let lock = WorkdirLock::acquire(dir.path()).unwrap();
        assert!(matches!(WorkdirLock::acquire(dir.path()), Err(PipelineError::Locked(_))));
        drop(lock);
        WorkdirLock::acquire(dir.path()).unwrap();
    }

    #[test]
    fn hash_tracks_content_not_order() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a"), "1").unwrap();
        fs::write(dir.path().join("b"), "2").unwrap();
        let h = artifact_hash(dir.path(), &["a".into(), "b".into()]).unwrap();
        assert_eq!(h, artifact_hash(dir.path(), &["b".into(), "a".into()]).unwrap());
        fs::write(dir.path().join("b"), "3").unwrap();
        assert_ne!(h, artifact_hash(dir.path(), &["a".into(), "b".into()]).unwrap());
        assert!(artifact_hash(dir.path(), &["missing".into()]).is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(Manifest::load(dir.path()).unwrap(), Manifest::default());
        let mut m = Manifest::default();
        m.stages.insert(
            "prepare".into(),
            StageRecord {
                config_hash: "c".into(),
                upstream_hash: "u".into(),
                artifact_hash: "a".into(),
                files: vec!["x".into()],
                complete: true,
                summary: serde_json::json!({"n": 1}),
            },
        );
        m.save(dir.path()).unwrap();
        assert_eq!(Manifest::load(dir.path()).unwrap(), m);
    }
}
