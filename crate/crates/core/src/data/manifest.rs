use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::container::{read_keypoint_file, KeypointFrames};
use super::KeypointSequence;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::validation(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    pub sample_id: String,
    pub split: Split,
    pub signer_id: String,
    /// Path as written in the manifest, relative to the manifest directory
    /// unless absolute.
    pub path: PathBuf,
    pub glosses: Vec<String>,
}

/// Tab-separated record list: `sample_id  split  signer_id  path  glosses`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
    base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(records: Vec<ManifestRecord>, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let m = Self {
            records,
            base_dir: base_dir.into(),
        };
        m.check_unique()?;
        Ok(m)
    }

    fn check_unique(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert(r.sample_id.as_str()) {
                return Err(Error::validation(format!("duplicate sample_id {:?}", r.sample_id)));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut records = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 5 {
                return Err(Error::validation(format!(
                    "manifest line {}: expected 5 tab-separated fields, got {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            if fields[0].is_empty() {
                return Err(Error::validation(format!(
                    "manifest line {}: empty sample_id",
                    lineno + 1
                )));
            }
            records.push(ManifestRecord {
                sample_id: fields[0].to_string(),
                split: fields[1].parse()?,
                signer_id: fields[2].to_string(),
                path: PathBuf::from(fields[3]),
                glosses: fields[4].split_whitespace().map(str::to_string).collect(),
            });
        }
        Self::new(records, base_dir)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# sample_id\tsplit\tsigner_id\tpath\tglosses\n");
        for r in &self.records {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                r.sample_id,
                r.split,
                r.signer_id,
                r.path.display(),
                r.glosses.join(" ")
            ));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn resolve(&self, record: &ManifestRecord) -> PathBuf {
        if record.path.is_absolute() {
            record.path.clone()
        } else {
            self.base_dir.join(&record.path)
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn get(&self, sample_id: &str) -> Option<&ManifestRecord> {
        self.records.iter().find(|r| r.sample_id == sample_id)
    }

    pub fn load_frames(&self, record: &ManifestRecord) -> Result<KeypointFrames> {
        read_keypoint_file(&self.resolve(record))
    }

    pub fn load_sequence(&self, record: &ManifestRecord) -> Result<KeypointSequence> {
        Ok(KeypointSequence {
            sample_id: record.sample_id.clone(),
            signer_id: record.signer_id.clone(),
            frames: self.load_frames(record)?,
            glosses: record.glosses.clone(),
        })
    }

    /// Checks that every referenced keypoint file exists and parses.
    pub fn validate_files(&self) -> Result<()> {
        for r in &self.records {
            self.load_frames(r)?;
        }
        Ok(())
    }

    pub fn signers_by_split(&self) -> BTreeMap<Split, BTreeSet<String>> {
        let mut out: BTreeMap<Split, BTreeSet<String>> = BTreeMap::new();
        for r in &self.records {
            out.entry(r.split).or_default().insert(r.signer_id.clone());
        }
        out
    }

    pub fn is_signer_disjoint(&self) -> bool {
        let by = self.signers_by_split();
        let sets: Vec<_> = by.values().collect();
        sets.iter()
            .enumerate()
            .all(|(i, a)| sets[i + 1..].iter().all(|b| a.is_disjoint(b)))
    }
}
