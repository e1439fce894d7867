use super::mask::MasterMask;
use super::normalize::normalize_frame;
use crate::data::KeypointFrames;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// T×F per-frame features: normalised positions, velocities and
/// accelerations of the kept keypoints, F = 3 · 2 · k_kept.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub n_frames: usize,
    pub n_features: usize,
    pub data: Vec<f32>,
}

impl FeatureSequence {
    pub fn new(n_frames: usize, n_features: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != n_frames * n_features {
            return Err(Error::shape(format!(
                "{n_frames}×{n_features} features, got {} values",
                data.len()
            )));
        }
        Ok(Self {
            n_frames,
            n_features,
            data,
        })
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.n_features..(t + 1) * self.n_features]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureOptions {
    /// Smooth positions with a 5-frame moving average before differencing
    /// velocities.
    pub smooth_velocity: bool,
}

/// Central difference along time with replicate padding:
/// `out(t) = (x(t+1) − x(t−1)) / 2`, `x(−1) := x(0)`, `x(T) := x(T−1)`.
pub fn central_difference(x: &[f64], n_frames: usize, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; n_frames * dim];
    for t in 0..n_frames {
        let prev = t.saturating_sub(1);
        let next = (t + 1).min(n_frames - 1);
        for d in 0..dim {
            out[t * dim + d] = (x[next * dim + d] - x[prev * dim + d]) / 2.0;
        }
    }
    out
}

/// Length-5 centred moving average with replicate padding.
pub fn moving_average(x: &[f64], n_frames: usize, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; n_frames * dim];
    for t in 0..n_frames {
        for d in 0..dim {
            let mut s = 0.0;
            for o in -2i64..=2 {
                let src = (t as i64 + o).clamp(0, n_frames as i64 - 1) as usize;
                s += x[src * dim + d];
            }
            out[t * dim + d] = s / 5.0;
        }
    }
    out
}

pub fn compute_velocity(positions: &[f64], n_frames: usize, dim: usize, smooth: bool) -> Vec<f64> {
    if smooth {
        central_difference(&moving_average(positions, n_frames, dim), n_frames, dim)
    } else {
        central_difference(positions, n_frames, dim)
    }
}

pub fn compute_acceleration(velocities: &[f64], n_frames: usize, dim: usize) -> Vec<f64> {
    central_difference(velocities, n_frames, dim)
}

/// Mask → per-frame normalisation → [position ‖ velocity ‖ acceleration].
pub fn assemble_features(frames: &KeypointFrames, mask: &MasterMask, opts: FeatureOptions) -> Result<FeatureSequence> {
    let kept = mask.apply(frames)?;
    let (t_len, k) = (kept.n_frames(), kept.n_keypoints());
    let dim = 2 * k;
    let mut pos = Vec::with_capacity(t_len * dim);
    for t in 0..t_len {
        let p: Vec<[f64; 2]> = (0..k).map(|i| kept.position(t, i)).collect();
        let v: Vec<bool> = (0..k).map(|i| kept.is_valid(t, i)).collect();
        for q in normalize_frame(&p, &v) {
            pos.extend_from_slice(&q);
        }
    }
    let vel = compute_velocity(&pos, t_len, dim, opts.smooth_velocity);
    let acc = compute_acceleration(&vel, t_len, dim);
    let f = 3 * dim;
    let mut data = Vec::with_capacity(t_len * f);
    for t in 0..t_len {
        for block in [&pos, &vel, &acc] {
            data.extend(block[t * dim..(t + 1) * dim].iter().map(|&v| v as f32));
        }
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("assembled features".into()));
    }
    FeatureSequence::new(t_len, f, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::DbscanParams;

    #[test]
    fn velocity_cases() {
        assert_eq!(compute_velocity(&[3.0; 4], 4, 1, false), vec![0.0; 4]);
        let v = compute_velocity(&[0.0, 1.0, 2.0, 3.0, 4.0], 5, 1, false);
        assert_eq!(&v[1..4], &[1.0, 1.0, 1.0]);
        assert_eq!(compute_velocity(&[0.0, 1.0, 2.0], 3, 1, false)[0], 0.5);
        assert_eq!(compute_velocity(&[7.0], 1, 1, false), vec![0.0]);
    }

    #[test]
    fn acceleration_cases() {
        let p: Vec<f64> = (0..8).map(|t| (t * t) as f64).collect();
        let v = compute_velocity(&p, 8, 1, false);
        for t in 1..7 {
            assert_eq!(v[t], 2.0 * t as f64);
        }
        let a = compute_acceleration(&v, 8, 1);
        for t in 2..6 {
            assert_eq!(a[t], 2.0);
        }
        let lin: Vec<f64> = (0..6).map(|t| 3.0 * t as f64).collect();
        let a = compute_acceleration(&compute_velocity(&lin, 6, 1, false), 6, 1);
        assert_eq!(&a[2..4], &[0.0, 0.0]);
        assert_eq!(compute_acceleration(&[2.0; 5], 5, 1), vec![0.0; 5]);
    }

    #[test]
    fn smoothing_preserves_linear_interior() {
        let lin: Vec<f64> = (0..10).map(|t| t as f64).collect();
        let v = compute_velocity(&lin, 10, 1, true);
        for t in 3..7 {
            assert!((v[t] - 1.0).abs() < 1e-12);
        }
        let noisy: Vec<f64> = (0..10).map(|t| if t % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let raw = compute_velocity(&noisy, 10, 1, false);
        let smooth = compute_velocity(&noisy, 10, 1, true);
        assert!(smooth.iter().map(|v| v.abs()).sum::<f64>() < raw.iter().map(|v| v.abs()).sum::<f64>() + 1e-12);
    }

    fn mask(keep: Vec<bool>) -> MasterMask {
        MasterMask {
            keep,
            reference_id: "r".into(),
            params: DbscanParams::default(),
        }
    }

    #[test]
    fn feature_width_and_degenerate_sample() {
        let t = 4;
        let data: Vec<f32> = (0..t * 5).flat_map(|i| [i as f32, (i * 3 % 7) as f32, 1.0]).collect();
        let frames = KeypointFrames::new(t, 5, data).unwrap();
        let f = assemble_features(
            &frames,
            &mask(vec![true, true, false, true, false]),
            FeatureOptions::default(),
        )
        .unwrap();
        assert_eq!((f.n_frames, f.n_features), (4, 18));

        let zeros = KeypointFrames::new(t, 5, vec![0.0; t * 15]).unwrap();
        let f = assemble_features(&zeros, &mask(vec![true; 5]), FeatureOptions::default()).unwrap();
        assert!(f.data.iter().all(|&v| v == 0.0));
        assert!(assemble_features(&zeros, &mask(vec![true; 4]), FeatureOptions::default()).is_err());
    }
}
