//! Synthetic keypoint "sign language".
//!
//! Each gloss is a smooth prototype trajectory of two hand groups of
//! keypoints. A sample concatenates the trajectories of its glosses with a
//! short linear blend at every boundary (co-articulation), then applies a
//! per-signer affine camera distortion and Gaussian jitter. A configurable
//! set of "noisy" keypoints sits off-body with heavy-tailed jitter and
//! frequent dropouts, which is what the master mask is expected to remove.
//! Splits are signer-disjoint and the training split covers every gloss.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Cauchy, Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::container::{write_keypoint_file, KeypointFrames};
use super::manifest::{DatasetManifest, ManifestRecord, Split};
use super::KeypointSequence;
use crate::error::{Error, Result};
use crate::rng::{self, SeededRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub vocab_size: usize,
    pub n_signers: usize,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub n_keypoints: usize,
    /// Keypoints driven by gloss trajectories.
    pub n_active: usize,
    /// Off-body keypoints with heavy-tailed jitter.
    pub n_noisy: usize,
    pub gloss_len: (usize, usize),
    pub frames_per_gloss: (usize, usize),
    pub noise_sigma: f64,
    pub noisy_scale: f64,
    /// Per-frame probability that a noisy keypoint is not detected.
    pub noisy_dropout: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            vocab_size: 12,
            n_signers: 5,
            n_train: 20,
            n_dev: 6,
            n_test: 6,
            n_keypoints: 86,
            n_active: 20,
            n_noisy: 4,
            gloss_len: (2, 4),
            frames_per_gloss: (8, 12),
            noise_sigma: 0.002,
            noisy_scale: 0.004,
            noisy_dropout: 0.3,
            seed: 0,
        }
    }
}

const NOISY_ANCHORS: [[f64; 2]; 8] = [
    [0.03, 0.03],
    [0.97, 0.03],
    [0.03, 0.97],
    [0.97, 0.97],
    [0.5, 0.03],
    [0.5, 0.97],
    [0.03, 0.5],
    [0.97, 0.5],
];

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::config(m));
        if self.vocab_size < 2 {
            return err(format!("vocab_size must be ≥ 2, got {}", self.vocab_size));
        }
        if self.n_keypoints < 6 {
            return err(format!("n_keypoints must be ≥ 6, got {}", self.n_keypoints));
        }
        if self.n_active == 0 || self.n_active + self.n_noisy >= self.n_keypoints {
            return err(format!(
                "need 1 ≤ n_active and n_active + n_noisy < n_keypoints ({} + {} vs {})",
                self.n_active, self.n_noisy, self.n_keypoints
            ));
        }
        if self.n_noisy > NOISY_ANCHORS.len() {
            return err(format!("at most {} noisy keypoints supported", NOISY_ANCHORS.len()));
        }
        let (lmin, lmax) = self.gloss_len;
        let (fmin, fmax) = self.frames_per_gloss;
        if lmin == 0 || lmin > lmax || fmin == 0 || fmin > fmax {
            return err("gloss_len and frames_per_gloss must be non-empty ranges starting at ≥ 1".into());
        }
        // The shortest sample for each label count must still fit the label
        // sequence (with worst-case repeats) after 4× subsampling.
        for l in lmin..=lmax {
            let frames = (l * fmin).div_ceil(4);
            if frames < 2 * l - 1 {
                return err(format!(
                    "infeasible: {l} glosses × {fmin} frames subsample to {frames} frames, CTC may need {}",
                    2 * l - 1
                ));
            }
        }
        if self.n_train == 0 {
            return err("n_train must be ≥ 1".into());
        }
        if self.n_signers == 0 {
            return err("n_signers must be ≥ 1".into());
        }
        if self.n_dev + self.n_test > 0 && self.n_signers < 3 {
            return err("signer-disjoint dev/test splits need n_signers ≥ 3".into());
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0)
            || !(self.noisy_scale.is_finite() && self.noisy_scale >= 0.0)
        {
            return err("noise scales must be finite and ≥ 0".into());
        }
        if !(0.0..1.0).contains(&self.noisy_dropout) {
            return err("noisy_dropout must be in [0, 1)".into());
        }
        Ok(())
    }

    pub fn gloss_token(&self, i: usize) -> String {
        let width = (self.vocab_size - 1).to_string().len();
        format!("g{i:0width$}")
    }

    fn signers(&self, split: Split) -> Vec<usize> {
        let n = self.n_signers;
        if n < 3 {
            return match split {
                Split::Train => (0..n).collect(),
                _ => vec![],
            };
        }
        match split {
            Split::Train => (0..n - 2).collect(),
            Split::Dev => vec![n - 2],
            Split::Test => vec![n - 1],
        }
    }

    fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.n_train,
            Split::Dev => self.n_dev,
            Split::Test => self.n_test,
        }
    }
}

/// Which raw keypoint indices the generator made active and noisy.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticGroundTruth {
    pub active: Vec<usize>,
    pub noisy: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub manifest: DatasetManifest,
    pub truth: SyntheticGroundTruth,
    pub sequences: Vec<(Split, KeypointSequence)>,
}

struct HandMotion {
    offset: [f64; 2],
    cos_coef: [[f64; 2]; 2],
    sin_coef: [[f64; 2]; 2],
    twist: f64,
    phase: f64,
}

impl HandMotion {
    fn random(r: &mut SeededRng) -> Self {
        let mut v = |s: f64| [r.random_range(-s..s), r.random_range(-s..s)];
        Self {
            offset: v(0.06),
            cos_coef: [v(0.06), v(0.03)],
            sin_coef: [v(0.06), v(0.03)],
            twist: r.random_range(-0.6..0.6),
            phase: r.random_range(0.0..2.0 * PI),
        }
    }

    fn at(&self, tau: f64, rel: [f64; 2]) -> [f64; 2] {
        let mut p = self.offset;
        for m in 0..2 {
            let w = 2.0 * PI * (m + 1) as f64 * tau;
            for d in 0..2 {
                p[d] += self.cos_coef[m][d] * (w.cos() - 1.0) + self.sin_coef[m][d] * w.sin();
            }
        }
        let th = self.twist * (2.0 * PI * tau + self.phase).sin();
        let (s, c) = th.sin_cos();
        [p[0] + c * rel[0] - s * rel[1], p[1] + s * rel[0] + c * rel[1]]
    }
}

struct Layout {
    base: Vec<[f64; 2]>,
    /// For active keypoints: (hand index, offset from the hand centre).
    hand_of: Vec<Option<(usize, [f64; 2])>>,
    hand_centre: [[f64; 2]; 2],
    noisy: Vec<bool>,
    truth: SyntheticGroundTruth,
}

fn layout(cfg: &SynthConfig) -> Layout {
    let mut r = rng::stream(cfg.seed, &[1]);
    let k = cfg.n_keypoints;
    let mut order: Vec<usize> = (0..k).collect();
    order.shuffle(&mut r);
    let mut noisy_idx = order[..cfg.n_noisy].to_vec();
    let mut active_idx = order[cfg.n_noisy..cfg.n_noisy + cfg.n_active].to_vec();

    let hand_centre = [
        [r.random_range(0.38..0.48), r.random_range(0.35..0.65)],
        [r.random_range(0.52..0.62), r.random_range(0.35..0.65)],
    ];
    let mut base = vec![[0.0; 2]; k];
    let mut hand_of = vec![None; k];
    let mut noisy = vec![false; k];
    for i in 0..k {
        base[i] = [r.random_range(0.32..0.68), r.random_range(0.25..0.75)];
    }
    for (j, &i) in noisy_idx.iter().enumerate() {
        base[i] = NOISY_ANCHORS[j];
        noisy[i] = true;
    }
    for (j, &i) in active_idx.iter().enumerate() {
        let h = j % 2;
        let ang = r.random_range(0.0..2.0 * PI);
        let rad = r.random_range(0.005..0.03);
        hand_of[i] = Some((h, [rad * ang.cos(), rad * ang.sin()]));
    }
    noisy_idx.sort_unstable();
    active_idx.sort_unstable();
    Layout {
        base,
        hand_of,
        hand_centre,
        noisy,
        truth: SyntheticGroundTruth {
            active: active_idx,
            noisy: noisy_idx,
        },
    }
}

struct Signer {
    scale: f64,
    rot: f64,
    shift: [f64; 2],
}

impl Signer {
    fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.rot.sin_cos();
        let (x, y) = (p[0] - 0.5, p[1] - 0.5);
        [
            0.5 + self.scale * (c * x - s * y) + self.shift[0],
            0.5 + self.scale * (s * x + c * y) + self.shift[1],
        ]
    }
}

fn gloss_sequences(cfg: &SynthConfig, split: Split, r: &mut SeededRng) -> Vec<Vec<usize>> {
    let n = cfg.count(split);
    let lengths: Vec<usize> = (0..n)
        .map(|_| r.random_range(cfg.gloss_len.0..=cfg.gloss_len.1))
        .collect();
    if split != Split::Train {
        return lengths
            .iter()
            .map(|&l| (0..l).map(|_| r.random_range(0..cfg.vocab_size)).collect())
            .collect();
    }
    // Training tokens come from back-to-back shuffled passes over the
    // vocabulary so that every gloss is seen whenever there is room.
    let total: usize = lengths.iter().sum();
    let mut stream = Vec::with_capacity(total + cfg.vocab_size);
    while stream.len() < total {
        let mut perm: Vec<usize> = (0..cfg.vocab_size).collect();
        perm.shuffle(r);
        stream.extend(perm);
    }
    let mut at = 0;
    lengths
        .iter()
        .map(|&l| {
            let s = stream[at..at + l].to_vec();
            at += l;
            s
        })
        .collect()
}

fn render(
    cfg: &SynthConfig,
    lay: &Layout,
    motions: &[[HandMotion; 2]],
    signer: &Signer,
    glosses: &[usize],
    r: &mut SeededRng,
) -> Result<KeypointFrames> {
    let k = cfg.n_keypoints;
    let mut canon: Vec<Vec<[f64; 2]>> = Vec::new();
    for (gi, &g) in glosses.iter().enumerate() {
        let nf = r.random_range(cfg.frames_per_gloss.0..=cfg.frames_per_gloss.1);
        let prev_last = canon.last().cloned();
        let blend = if gi == 0 { 0 } else { (nf / 3).min(3) };
        for f in 0..nf {
            let tau = if nf == 1 { 0.5 } else { f as f64 / (nf - 1) as f64 };
            let mut frame = lay.base.clone();
            for i in 0..k {
                if let Some((h, rel)) = lay.hand_of[i] {
                    let d = motions[g][h].at(tau, rel);
                    frame[i] = [lay.hand_centre[h][0] + d[0], lay.hand_centre[h][1] + d[1]];
                }
            }
            if f < blend {
                let w = (f + 1) as f64 / (blend + 1) as f64;
                let prev = prev_last.as_ref().expect("blend only after the first gloss");
                for i in 0..k {
                    for d in 0..2 {
                        frame[i][d] = (1.0 - w) * prev[i][d] + w * frame[i][d];
                    }
                }
            }
            canon.push(frame);
        }
    }

    let jitter = Normal::new(0.0, cfg.noise_sigma.max(f64::MIN_POSITIVE)).map_err(|e| Error::config(e.to_string()))?;
    let heavy = Cauchy::new(0.0, cfg.noisy_scale.max(f64::MIN_POSITIVE)).map_err(|e| Error::config(e.to_string()))?;
    let clip = 25.0 * cfg.noisy_scale;
    let mut data = Vec::with_capacity(canon.len() * k * 3);
    for frame in &canon {
        for i in 0..k {
            let mut p = signer.apply(frame[i]);
            if lay.noisy[i] {
                if r.random::<f64>() < cfg.noisy_dropout {
                    data.extend_from_slice(&[0.0, 0.0, 0.0]);
                    continue;
                }
                for v in &mut p {
                    *v += heavy.sample(r).clamp(-clip, clip);
                }
                let conf = r.random_range(0.2..0.9);
                data.extend_from_slice(&[p[0] as f32, p[1] as f32, conf as f32]);
            } else {
                if cfg.noise_sigma > 0.0 {
                    for v in &mut p {
                        *v += jitter.sample(r);
                    }
                }
                data.extend_from_slice(&[p[0] as f32, p[1] as f32, 1.0]);
            }
        }
    }
    KeypointFrames::new(canon.len(), k, data)
}

/// Generates the dataset in memory.
pub fn generate_sequences(cfg: &SynthConfig) -> Result<(Vec<(Split, KeypointSequence)>, SyntheticGroundTruth)> {
    cfg.validate()?;
    let lay = layout(cfg);
    let mut pr = rng::stream(cfg.seed, &[2]);
    let motions: Vec<[HandMotion; 2]> = (0..cfg.vocab_size)
        .map(|_| [HandMotion::random(&mut pr), HandMotion::random(&mut pr)])
        .collect();
    let mut sr = rng::stream(cfg.seed, &[3]);
    let signers: Vec<Signer> = (0..cfg.n_signers)
        .map(|_| Signer {
            scale: sr.random_range(0.85..1.15),
            rot: sr.random_range(-0.08..0.08),
            shift: [sr.random_range(-0.05..0.05), sr.random_range(-0.05..0.05)],
        })
        .collect();

    let mut out = Vec::new();
    for (si, split) in Split::ALL.into_iter().enumerate() {
        let mut gr = rng::stream(cfg.seed, &[4, si as u64]);
        let seqs = gloss_sequences(cfg, split, &mut gr);
        let split_signers = cfg.signers(split);
        for (i, glosses) in seqs.iter().enumerate() {
            let signer = split_signers[i % split_signers.len()];
            let mut r = rng::stream(cfg.seed, &[5, si as u64, i as u64]);
            let frames = render(cfg, &lay, &motions, &signers[signer], glosses, &mut r)?;
            out.push((
                split,
                KeypointSequence {
                    sample_id: format!("{split}_{i:04}"),
                    signer_id: format!("signer{signer:02}"),
                    frames,
                    glosses: glosses.iter().map(|&g| cfg.gloss_token(g)).collect(),
                },
            ));
        }
    }
    Ok((out, lay.truth))
}

/// Generates the dataset and writes `manifest.tsv` plus one keypoint file
/// per sample under `out_dir/keypoints/`.
pub fn generate_synthetic_dataset(cfg: &SynthConfig, out_dir: &Path) -> Result<SynthOutput> {
    let (sequences, truth) = generate_sequences(cfg)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut records = Vec::with_capacity(sequences.len());
    for (split, seq) in &sequences {
        let rel = PathBuf::from("keypoints").join(format!("{}.kpsq", seq.sample_id));
        write_keypoint_file(&seq.frames, &out_dir.join(&rel))?;
        records.push(ManifestRecord {
            sample_id: seq.sample_id.clone(),
            split: *split,
            signer_id: seq.signer_id.clone(),
            path: rel,
            glosses: seq.glosses.clone(),
        });
    }
    let manifest = DatasetManifest::new(records, out_dir)?;
    manifest.save(&out_dir.join("manifest.tsv"))?;
    Ok(SynthOutput {
        manifest,
        truth,
        sequences,
    })
}
