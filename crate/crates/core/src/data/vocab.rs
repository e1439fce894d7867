use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use super::manifest::{DatasetManifest, Split};
use crate::error::{Error, Result};

/// CTC blank id. Vocabulary tokens use ids 1..=V.
pub const BLANK: usize = 0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlossVocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl GlossVocabulary {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.contains(char::is_whitespace) {
                return Err(Error::validation(format!("invalid gloss token {t:?}")));
            }
            if index.insert(t.clone(), i + 1).is_some() {
                return Err(Error::validation(format!("duplicate gloss token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Number of gloss tokens V (the blank is not counted).
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        if id == BLANK {
            return None;
        }
        self.tokens.get(id - 1).map(String::as_str)
    }

    pub fn encode(&self, glosses: &[String]) -> Result<Vec<usize>> {
        glosses
            .iter()
            .map(|g| {
                self.id(g)
                    .ok_or_else(|| Error::validation(format!("gloss {g:?} not in vocabulary")))
            })
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().filter_map(|&i| self.token(i).map(str::to_string)).collect()
    }

    /// FNV-1a digest of the token list, stored in checkpoints to detect a
    /// mismatched vocabulary.
    pub fn digest(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in &self.tokens {
            for b in t.bytes().chain(std::iter::once(b'\n')) {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        format!("{h:016x}")
    }

    pub fn to_text(&self) -> String {
        self.tokens.iter().map(|t| format!("{t}\n")).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }
}

/// Sorted unique gloss tokens of the chosen splits.
pub fn build_vocabulary(manifest: &DatasetManifest, splits: &[Split]) -> Result<GlossVocabulary> {
    let mut set = BTreeSet::new();
    let mut n = 0;
    for r in manifest.records.iter().filter(|r| splits.contains(&r.split)) {
        if r.glosses.is_empty() {
            return Err(Error::validation(format!(
                "sample {} has an empty gloss string",
                r.sample_id
            )));
        }
        set.extend(r.glosses.iter().cloned());
        n += 1;
    }
    if n == 0 {
        return Err(Error::validation(format!("no records in splits {splits:?}")));
    }
    GlossVocabulary::from_tokens(set.into_iter().collect())
}
