//! Word error rate with substitution/deletion/insertion breakdown, and
//! out-of-vocabulary counts.

use std::collections::BTreeMap;

use crate::data::GlossVocabulary;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WerBreakdown {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    /// Reference length.
    pub ref_len: usize,
    pub wer: f64,
    /// Set when the reference is empty but the hypothesis is not; the rate
    /// is then reported against a denominator of 1.
    pub degenerate: bool,
}

impl WerBreakdown {
    pub fn from_counts(substitutions: usize, deletions: usize, insertions: usize, ref_len: usize) -> Self {
        let errors = substitutions + deletions + insertions;
        let degenerate = ref_len == 0 && errors > 0;
        let wer = if ref_len == 0 {
            errors as f64
        } else {
            errors as f64 / ref_len as f64
        };
        Self {
            substitutions,
            deletions,
            insertions,
            ref_len,
            wer,
            degenerate,
        }
    }

    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Step {
    Match,
    Sub,
    Del,
    Ins,
}

/// Unit-cost edit distance between `reference` and `hypothesis`.
///
/// Among minimal-cost alignments the one with the fewest insertions plus
/// deletions is used, which fixes the substitution count and makes the
/// breakdown symmetric: swapping the arguments exchanges D and I. Remaining
/// ties are broken in the backtrace from the end by preferring match, then
/// substitution, then deletion, then insertion.
pub fn wer<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> WerBreakdown {
    let (n, m) = (reference.len(), hypothesis.len());
    let w = m + 1;
    // (edit distance, insertions + deletions), compared lexicographically.
    let mut d = vec![(0usize, 0usize); (n + 1) * w];
    for i in 0..=n {
        d[i * w] = (i, i);
    }
    for j in 0..=m {
        d[j] = (j, j);
    }
    for i in 1..=n {
        for j in 1..=m {
            let (dc, dk) = d[(i - 1) * w + j - 1];
            let diag = (dc + usize::from(reference[i - 1] != hypothesis[j - 1]), dk);
            let up = d[(i - 1) * w + j];
            let left = d[i * w + j - 1];
            d[i * w + j] = diag.min((up.0 + 1, up.1 + 1)).min((left.0 + 1, left.1 + 1));
        }
    }
    let (mut s, mut del, mut ins) = (0, 0, 0);
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let (c, k) = d[i * w + j];
        let diag = (i > 0 && j > 0).then(|| d[(i - 1) * w + j - 1]);
        let step = if diag == Some((c, k)) && reference[i - 1] == hypothesis[j - 1] {
            Step::Match
        } else if c > 0 && diag == Some((c - 1, k)) {
            Step::Sub
        } else if i > 0 && c > 0 && k > 0 && d[(i - 1) * w + j] == (c - 1, k - 1) {
            Step::Del
        } else {
            Step::Ins
        };
        match step {
            Step::Match => {
                i -= 1;
                j -= 1;
            }
            Step::Sub => {
                s += 1;
                i -= 1;
                j -= 1;
            }
            Step::Del => {
                del += 1;
                i -= 1;
            }
            Step::Ins => {
                ins += 1;
                j -= 1;
            }
        }
    }
    WerBreakdown::from_counts(s, del, ins, n)
}

/// Sums counts over all pairs; the rate is total errors over total
/// reference length, not a mean of per-pair rates.
pub fn corpus_wer<T: PartialEq>(pairs: &[(Vec<T>, Vec<T>)]) -> Result<WerBreakdown> {
    if pairs.is_empty() {
        return Err(Error::validation("corpus WER needs at least one pair"));
    }
    Ok(sum_breakdowns(pairs.iter().map(|(r, h)| wer(r, h))))
}

pub fn sum_breakdowns(parts: impl IntoIterator<Item = WerBreakdown>) -> WerBreakdown {
    let (mut s, mut d, mut i, mut n) = (0, 0, 0, 0);
    for b in parts {
        s += b.substitutions;
        d += b.deletions;
        i += b.insertions;
        n += b.ref_len;
    }
    WerBreakdown::from_counts(s, d, i, n)
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct OovReport {
    /// Each unknown token with its number of occurrences.
    pub tokens: BTreeMap<String, usize>,
    pub count: usize,
}

pub fn oov_report<S: AsRef<str>>(vocab: &GlossVocabulary, refs: &[Vec<S>]) -> OovReport {
    let mut report = OovReport::default();
    for tok in refs.iter().flatten() {
        let tok = tok.as_ref();
        if vocab.id(tok).is_none() {
            *report.tokens.entry(tok.to_string()).or_insert(0) += 1;
            report.count += 1;
        }
    }
    report
}
