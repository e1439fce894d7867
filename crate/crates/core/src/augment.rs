//! Time and channel band masking for training-time robustness.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Probability that each time-mask draw is applied.
    pub p_time: f64,
    /// Probability that each channel-mask draw is applied.
    pub p_feat: f64,
    pub n_time_masks: usize,
    pub n_feat_masks: usize,
    /// Widest time band; `None` means ⌈0.05·T⌉ of the sequence being masked.
    pub max_time_width: Option<usize>,
    pub max_feat_width: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            p_time: 0.08,
            p_feat: 0.2,
            n_time_masks: 2,
            n_feat_masks: 2,
            max_time_width: None,
            max_feat_width: 32,
        }
    }
}

impl AugmentConfig {
    /// No masking at all.
    pub fn disabled() -> Self {
        Self {
            p_time: 0.0,
            p_feat: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_time", self.p_time), ("p_feat", self.p_feat)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("augment.{name} must lie in [0, 1], got {p}")));
            }
        }
        if self.max_time_width == Some(0) || self.max_feat_width == 0 {
            return Err(Error::config("augment mask widths must be ≥ 1"));
        }
        Ok(())
    }

    pub fn time_width_for(&self, t_len: usize) -> usize {
        self.max_time_width
            .unwrap_or_else(|| (0.05 * t_len as f64).ceil() as usize)
            .max(1)
    }

    pub fn is_identity(&self) -> bool {
        (self.p_time == 0.0 || self.n_time_masks == 0) && (self.p_feat == 0.0 || self.n_feat_masks == 0)
    }
}

/// A contiguous band chosen by one mask draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Band {
    pub start: usize,
    pub width: usize,
}

fn draw_band(extent: usize, max_width: usize, p: f64, rng: &mut impl Rng) -> Option<Band> {
    // The coin is always flipped so the stream consumption does not depend on `extent`.
    let apply = rng.random::<f64>() < p;
    if !apply || extent == 0 {
        return None;
    }
    let width = rng.random_range(1..=max_width.min(extent));
    let start = rng.random_range(0..=extent - width);
    Some(Band { start, width })
}

/// Masks chosen for a `t_valid × channels` region: (time bands, channel bands).
pub fn draw_masks(cfg: &AugmentConfig, t_valid: usize, channels: usize, rng: &mut impl Rng) -> (Vec<Band>, Vec<Band>) {
    let tw = cfg.time_width_for(t_valid);
    let time = (0..cfg.n_time_masks)
        .filter_map(|_| draw_band(t_valid, tw, cfg.p_time, rng))
        .collect();
    let feat = (0..cfg.n_feat_masks)
        .filter_map(|_| draw_band(channels, cfg.max_feat_width, cfg.p_feat, rng))
        .collect();
    (time, feat)
}

/// Zeroes random time and channel bands of a row-major `rows × channels`
/// buffer in place. Only the first `t_valid` rows are eligible for time
/// masks, so padding never absorbs a draw. Returns the bands applied.
pub fn spec_augment_in_place<T: Real>(
    data: &mut [T],
    channels: usize,
    t_valid: usize,
    cfg: &AugmentConfig,
    rng: &mut impl Rng,
) -> Result<(Vec<Band>, Vec<Band>)> {
    cfg.validate()?;
    if channels == 0 || data.len() % channels != 0 || t_valid > data.len() / channels {
        return Err(Error::shape(format!(
            "cannot mask {} values as {t_valid} valid rows of {channels}",
            data.len()
        )));
    }
    let (time, feat) = draw_masks(cfg, t_valid, channels, rng);
    for b in &time {
        data[b.start * channels..(b.start + b.width) * channels]
            .iter_mut()
            .for_each(|v| *v = T::zero());
    }
    for b in &feat {
        for row in data[..t_valid * channels].chunks_mut(channels) {
            row[b.start..b.start + b.width].iter_mut().for_each(|v| *v = T::zero());
        }
    }
    Ok((time, feat))
}

/// Returns a masked copy of a `T × F` feature sequence.
pub fn spec_augment(
    x: &crate::preprocess::FeatureSequence,
    cfg: &AugmentConfig,
    rng: &mut impl Rng,
) -> Result<crate::preprocess::FeatureSequence> {
    let mut out = x.clone();
    spec_augment_in_place(&mut out.data, x.n_features, x.n_frames, cfg, rng)?;
    Ok(out)
}
