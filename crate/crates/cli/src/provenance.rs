//! Content-hashed stage stamps.
//!
//! Every stage directory holds `stamp.toml` listing the SHA-256 of each
//! input it consumed and each output it wrote, plus the hash of the
//! resolved config. A downstream stage refuses to run when an upstream
//! output no longer matches its stamp.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const STAMP_NAME: &str = "stamp.toml";
/// Bumped whenever an on-disk artifact layout changes.
pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stamp {
    pub stage: String,
    pub artifact_version: u32,
    pub seed: u64,
    pub config_sha256: String,
    /// Paths relative to the run root (absolute for external inputs).
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(sha256_bytes(&bytes))
}

/// Key under which `path` is recorded: relative to `root` when inside it.
pub fn key(root: &Path, path: &Path) -> String {
    path.strip_prefix(root)
        .unwrap_or(path)
        .to_string_lossy()
        .replace('\\', "/")
}

fn locate(root: &Path, key: &str) -> PathBuf {
    let p = Path::new(key);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        root.join(p)
    }
}

pub fn hash_all(root: &Path, paths: &[PathBuf]) -> Result<BTreeMap<String, String>> {
    paths.iter().map(|p| Ok((key(root, p), sha256_file(p)?))).collect()
}

impl Stamp {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let p = dir.join(STAMP_NAME);
        std::fs::write(&p, toml::to_string(self)?).with_context(|| format!("writing {}", p.display()))
    }

    pub fn read(dir: &Path) -> Result<Option<Self>> {
        let p = dir.join(STAMP_NAME);
        if !p.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
        Ok(Some(
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?,
        ))
    }
}

/// Loads the stamp of `stage` from `dir` and re-hashes everything it
/// produced. Fails with the stage to re-run on any missing or changed file.
pub fn verify_stage(root: &Path, dir: &Path, stage: &str) -> Result<Stamp> {
    let Some(stamp) = Stamp::read(dir)? else {
        bail!(
            "missing output of stage `{stage}` in {}: run `cslr {stage}` first",
            dir.display()
        );
    };
    if stamp.stage != stage {
        bail!(
            "{} belongs to stage `{}`, expected `{stage}`",
            dir.join(STAMP_NAME).display(),
            stamp.stage
        );
    }
    if stamp.artifact_version != ARTIFACT_VERSION {
        bail!(
            "stage `{stage}` was written by artifact version {} (current {ARTIFACT_VERSION}): re-run `cslr {stage}`",
            stamp.artifact_version
        );
    }
    for (k, want) in &stamp.outputs {
        let p = locate(root, k);
        if !p.exists() {
            bail!("output {k} of stage `{stage}` is missing: re-run `cslr {stage}`");
        }
        if &sha256_file(&p)? != want {
            bail!("output {k} of stage `{stage}` does not match its recorded hash: re-run `cslr {stage}`");
        }
    }
    for (k, want) in &stamp.inputs {
        let p = locate(root, k);
        let now = if p.exists() { Some(sha256_file(&p)?) } else { None };
        if now.as_ref() != Some(want) {
            bail!("input {k} changed since stage `{stage}` ran: re-run `cslr {stage}`");
        }
    }
    Ok(stamp)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stamp_with(root: &Path, files: &[PathBuf]) -> Stamp {
        Stamp {
            stage: "synth".into(),
            artifact_version: ARTIFACT_VERSION,
            seed: 0,
            config_sha256: sha256_bytes(b""),
            inputs: BTreeMap::new(),
            outputs: hash_all(root, files).unwrap(),
        }
    }

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_bytes(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn detects_tampering_and_names_the_stage() {
        let root = tempfile::tempdir().unwrap();
        let f = root.path().join("a.bin");
        std::fs::write(&f, b"one").unwrap();
        stamp_with(root.path(), &[f.clone()]).write(root.path()).unwrap();
        verify_stage(root.path(), root.path(), "synth").unwrap();
        std::fs::write(&f, b"two").unwrap();
        let err = verify_stage(root.path(), root.path(), "synth").unwrap_err().to_string();
        assert!(err.contains("`synth`") && err.contains("a.bin"), "{err}");
    }

    #[test]
    fn missing_stamp_points_at_the_stage() {
        let root = tempfile::tempdir().unwrap();
        let err = verify_stage(root.path(), root.path(), "mask").unwrap_err().to_string();
        assert!(err.contains("cslr mask"), "{err}");
    }
}
