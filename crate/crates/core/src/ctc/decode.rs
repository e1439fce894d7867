use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::loss::sequence_log_prob;
use crate::data::BLANK;
use crate::error::{Error, Result};
use crate::kernels::log_sum_exp;
use crate::real::Real;
use crate::tensor::Tensor;

/// Removes repeats, then blanks.
pub fn collapse(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &c in path {
        if Some(c) != prev && c != BLANK {
            out.push(c);
        }
        prev = Some(c);
    }
    out
}

/// Per-frame argmax (ties → lowest id), then [`collapse`].
pub fn greedy_decode<T: Real>(log_probs: &Tensor<T>) -> Vec<usize> {
    let (t_len, _) = log_probs.dims2();
    let path: Vec<usize> = (0..t_len)
        .map(|t| {
            let row = log_probs.row(t);
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect();
    collapse(&path)
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    /// Log-mass of paths ending in blank / in the prefix's last label.
    blank: f64,
    label: f64,
    /// Best single-path log score under the same split.
    best_blank: f64,
    best_label: f64,
}

impl Entry {
    const EMPTY: Entry = Entry {
        blank: f64::NEG_INFINITY,
        label: f64::NEG_INFINITY,
        best_blank: f64::NEG_INFINITY,
        best_label: f64::NEG_INFINITY,
    };

    fn total(&self) -> f64 {
        log_sum_exp(&[self.blank, self.label])
    }

    fn best(&self) -> f64 {
        self.best_blank.max(self.best_label)
    }
}

fn add(acc: &mut f64, v: f64) {
    *acc = log_sum_exp(&[*acc, v]);
}

/// Prefix beam search without a language model.
///
/// Every prefix carries the log-mass of its blank-ending and label-ending
/// paths. Pruning ranks prefixes by their best single path, then by mass,
/// then lexicographically, so width 1 follows the per-frame argmax path.
///
/// The final beams of every width `1..=beam_width` are pooled and rescored
/// with the exact sequence probability; the most probable one wins (ties →
/// lexicographically smallest). Pooling makes the returned sequence's
/// probability non-decreasing in the width, and once the width covers
/// every prefix the answer is the exact most probable label sequence.
pub fn beam_search_decode<T: Real>(log_probs: &Tensor<T>, beam_width: usize) -> Result<Vec<usize>> {
    if beam_width == 0 {
        return Err(Error::config("beam width must be ≥ 1"));
    }
    let lp: Tensor<f64> = log_probs.cast();
    let mut pool: BTreeSet<Vec<usize>> = BTreeSet::new();
    for w in 1..=beam_width {
        let (finals, saturated) = prefix_beams(&lp, w);
        pool.extend(finals);
        if saturated {
            // Nothing was pruned, so wider beams return the same set.
            break;
        }
    }
    let scored = pool.into_iter().map(|y| (sequence_log_prob(&lp, &y), y));
    let best = scored
        .reduce(|a, b| if b.0 > a.0 { b } else { a })
        .expect("width ≥ 1 yields a candidate");
    Ok(best.1)
}

/// One beam search at a fixed width; returns the final prefixes and
/// whether no pruning ever happened.
fn prefix_beams(log_probs: &Tensor<f64>, beam_width: usize) -> (Vec<Vec<usize>>, bool) {
    let mut saturated = true;
    let t_len = log_probs.rows();
    let mut beams: Vec<(Vec<usize>, Entry)> = vec![(
        Vec::new(),
        Entry {
            blank: 0.0,
            best_blank: 0.0,
            ..Entry::EMPTY
        },
    )];
    for t in 0..t_len {
        let row = log_probs.row(t);
        let mut next: BTreeMap<Vec<usize>, Entry> = BTreeMap::new();
        for (prefix, e) in &beams {
            let total = e.total();
            let best = e.best();
            let stay = next.entry(prefix.clone()).or_insert(Entry::EMPTY);
            add(&mut stay.blank, total + row[BLANK]);
            stay.best_blank = stay.best_blank.max(best + row[BLANK]);
            let last = prefix.last().copied();
            for (c, &lp) in row.iter().enumerate().skip(1) {
                if last == Some(c) {
                    // Repeat without a blank folds into the same prefix.
                    let stay = next.get_mut(prefix).expect("inserted above");
                    add(&mut stay.label, e.label + lp);
                    stay.best_label = stay.best_label.max(e.best_label + lp);
                    let mut ext = prefix.clone();
                    ext.push(c);
                    let grow = next.entry(ext).or_insert(Entry::EMPTY);
                    add(&mut grow.label, e.blank + lp);
                    grow.best_label = grow.best_label.max(e.best_blank + lp);
                } else {
                    let mut ext = prefix.clone();
                    ext.push(c);
                    let grow = next.entry(ext).or_insert(Entry::EMPTY);
                    add(&mut grow.label, total + lp);
                    grow.best_label = grow.best_label.max(best + lp);
                }
            }
        }
        let mut ranked: Vec<(Vec<usize>, Entry)> = next.into_iter().collect();
        ranked.sort_by(|a, b| {
            b.1.best()
                .total_cmp(&a.1.best())
                .then(b.1.total().total_cmp(&a.1.total()))
                .then_with(|| a.0.cmp(&b.0))
        });
        if ranked.len() > beam_width {
            saturated = false;
            ranked.truncate(beam_width);
        }
        beams = ranked;
    }
    (beams.into_iter().map(|(p, _)| p).collect(), saturated)
}

/// A decoding strategy selectable by name.
pub trait Decoder: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn decode(&self, log_probs: &Tensor<f64>) -> Result<Vec<usize>>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Greedy;

impl Decoder for Greedy {
    fn name(&self) -> &str {
        "greedy"
    }

    fn decode(&self, log_probs: &Tensor<f64>) -> Result<Vec<usize>> {
        Ok(greedy_decode(log_probs))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BeamSearch {
    pub width: usize,
}

impl Decoder for BeamSearch {
    fn name(&self) -> &str {
        "beam"
    }

    fn decode(&self, log_probs: &Tensor<f64>) -> Result<Vec<usize>> {
        beam_search_decode(log_probs, self.width)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderOptions {
    pub beam_width: usize,
}

impl Default for DecoderOptions {
    fn default() -> Self {
        Self { beam_width: 20 }
    }
}

type Factory = Box<dyn Fn(&DecoderOptions) -> Result<Box<dyn Decoder>> + Send + Sync>;

/// Name → decoder constructor.
pub struct DecoderRegistry {
    factories: BTreeMap<String, Factory>,
}

impl fmt::Debug for DecoderRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DecoderRegistry").field("names", &self.names()).finish()
    }
}

impl Default for DecoderRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register("greedy", |_| Ok(Box::new(Greedy)));
        r.register("beam", |o| {
            if o.beam_width == 0 {
                return Err(Error::config("beam width must be ≥ 1"));
            }
            Ok(Box::new(BeamSearch { width: o.beam_width }))
        });
        r
    }
}

impl DecoderRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    /// Adds or replaces the constructor registered under `name`.
    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn(&DecoderOptions) -> Result<Box<dyn Decoder>> + Send + Sync + 'static,
    {
        self.factories.insert(name.to_string(), Box::new(factory));
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn create(&self, name: &str, opts: &DecoderOptions) -> Result<Box<dyn Decoder>> {
        let f = self.factories.get(name).ok_or_else(|| {
            Error::config(format!(
                "unknown decoder {name:?}; available: {}",
                self.names().join(", ")
            ))
        })?;
        f(opts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_probs(path: &[usize], classes: usize) -> Tensor<f64> {
        let rows: Vec<Vec<f64>> = path
            .iter()
            .map(|&c| {
                (0..classes)
                    .map(|k| {
                        if k == c {
                            0.7f64.ln()
                        } else {
                            (0.3 / (classes - 1) as f64).ln()
                        }
                    })
                    .collect()
            })
            .collect();
        Tensor::from_rows(&rows).unwrap()
    }

    #[test]
    fn greedy_collapse_rules() {
        assert_eq!(greedy_decode(&path_probs(&[0, 1, 1, 0, 2], 3)), vec![1, 2]);
        assert_eq!(greedy_decode(&path_probs(&[1, 1, 0, 1], 3)), vec![1, 1]);
        assert!(greedy_decode(&path_probs(&[0, 0, 0], 3)).is_empty());
        let tie = Tensor::from_rows(&[vec![-1.0, -1.0, -2.0]]).unwrap();
        assert!(greedy_decode(&tie).is_empty());
    }

    #[test]
    fn beam_prefers_merged_mass() {
        // Greedy path is [a, b]; prefix [a] has more total mass.
        let p = |v: [f64; 3]| v.iter().map(|x| x.ln()).collect::<Vec<_>>();
        let x = Tensor::from_rows(&[p([0.3, 0.5, 0.2]), p([0.25, 0.35, 0.4])]).unwrap();
        assert_eq!(greedy_decode(&x), vec![1, 2]);
        assert_eq!(beam_search_decode(&x, 1).unwrap(), vec![1, 2]);
        assert_eq!(beam_search_decode(&x, 9).unwrap(), vec![1]);
        assert!(beam_search_decode(&x, 0).is_err());
    }

    #[test]
    fn registry_lookup() {
        let r = DecoderRegistry::default();
        assert_eq!(r.names(), vec!["beam", "greedy"]);
        let d = r.create("beam", &DecoderOptions { beam_width: 4 }).unwrap();
        assert_eq!(d.name(), "beam");
        assert!(r.create("viterbi", &DecoderOptions::default()).is_err());
        assert!(r.create("beam", &DecoderOptions { beam_width: 0 }).is_err());
    }
}
