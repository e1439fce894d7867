//! Keypoint activity analysis: total frame-to-frame displacement per
//! keypoint, aggregated over samples and ranked.

use rayon::prelude::*;

use crate::data::{DatasetManifest, KeypointFrames, Split};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KeypointActivity {
    pub index: usize,
    pub displacement: f64,
    /// 1 = most active.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementReport {
    /// One entry per keypoint, in keypoint-index order.
    pub per_keypoint: Vec<KeypointActivity>,
    pub n_samples_analyzed: usize,
}

fn displacement_with(frames: &KeypointFrames, pos: impl Fn(usize, usize) -> [f64; 2]) -> Result<Vec<f64>> {
    let t_len = frames.n_frames();
    if t_len < 2 {
        return Err(Error::validation(format!("displacement needs T ≥ 2, got {t_len}")));
    }
    let k = frames.n_keypoints();
    let mut d = vec![0.0; k];
    for t in 0..t_len - 1 {
        for (i, di) in d.iter_mut().enumerate() {
            if !(frames.is_valid(t, i) && frames.is_valid(t + 1, i)) {
                continue;
            }
            let (a, b) = (pos(t, i), pos(t + 1, i));
            *di += (b[0] - a[0]).hypot(b[1] - a[1]);
        }
    }
    Ok(d)
}

/// Total displacement per keypoint in raw coordinates; pairs with an invalid
/// endpoint contribute nothing.
pub fn compute_displacement(frames: &KeypointFrames) -> Result<Vec<f64>> {
    displacement_with(frames, |t, i| frames.position(t, i))
}

/// Bounding box over all valid detections of a sample: `(min, scale)` with
/// `scale = max(width, height)`, or `None` when there are no valid points.
pub fn sample_bbox(frames: &KeypointFrames) -> Option<([f64; 2], f64)> {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for t in 0..frames.n_frames() {
        for i in 0..frames.n_keypoints() {
            if frames.is_valid(t, i) {
                let p = frames.position(t, i);
                for d in 0..2 {
                    lo[d] = lo[d].min(p[d]);
                    hi[d] = hi[d].max(p[d]);
                }
            }
        }
    }
    if lo[0].is_infinite() {
        return None;
    }
    Some((lo, (hi[0] - lo[0]).max(hi[1] - lo[1])))
}

/// Displacement after mapping the sample into its own bounding box.
pub fn normalized_displacement(frames: &KeypointFrames) -> Result<Vec<f64>> {
    match sample_bbox(frames) {
        Some((lo, scale)) if scale > 0.0 => displacement_with(frames, |t, i| {
            let p = frames.position(t, i);
            [(p[0] - lo[0]) / scale, (p[1] - lo[1]) / scale]
        }),
        _ => displacement_with(frames, |_, _| [0.0, 0.0]),
    }
}

/// Ranks keypoints by descending displacement, ties by ascending index.
pub fn rank(displacement: &[f64], n_samples: usize) -> DisplacementReport {
    let mut order: Vec<usize> = (0..displacement.len()).collect();
    order.sort_by(|&a, &b| displacement[b].total_cmp(&displacement[a]).then(a.cmp(&b)));
    let mut per_keypoint: Vec<KeypointActivity> = displacement
        .iter()
        .enumerate()
        .map(|(index, &displacement)| KeypointActivity {
            index,
            displacement,
            rank: 0,
        })
        .collect();
    for (r, &i) in order.iter().enumerate() {
        per_keypoint[i].rank = r + 1;
    }
    DisplacementReport {
        per_keypoint,
        n_samples_analyzed: n_samples,
    }
}

/// Sums normalised displacements over samples in the given order. The
/// per-sample work runs in parallel; the reduction order is fixed.
pub fn aggregate_frames(samples: &[KeypointFrames]) -> Result<DisplacementReport> {
    let first = samples
        .first()
        .ok_or_else(|| Error::validation("no samples to analyse"))?;
    let k = first.n_keypoints();
    if samples.iter().any(|s| s.n_keypoints() != k) {
        return Err(Error::validation("samples disagree on keypoint count"));
    }
    let per_sample: Vec<Vec<f64>> = samples.par_iter().map(normalized_displacement).collect::<Result<_>>()?;
    let mut total = vec![0.0; k];
    for d in &per_sample {
        total.iter_mut().zip(d).for_each(|(t, v)| *t += v);
    }
    Ok(rank(&total, samples.len()))
}

/// Aggregates over the first `n_samples` records of `split` in manifest order.
pub fn aggregate_displacement(
    manifest: &DatasetManifest,
    split: Split,
    n_samples: usize,
) -> Result<DisplacementReport> {
    if n_samples == 0 {
        return Err(Error::validation("n_samples must be ≥ 1"));
    }
    let records: Vec<_> = manifest.split(split).take(n_samples).collect();
    if records.is_empty() {
        return Err(Error::validation(format!("split {split} is empty")));
    }
    let frames: Vec<KeypointFrames> = records
        .par_iter()
        .map(|r| manifest.load_frames(r))
        .collect::<Result<_>>()?;
    aggregate_frames(&frames)
}

pub fn top_k(report: &DisplacementReport, k: usize) -> Result<Vec<usize>> {
    let n = report.per_keypoint.len();
    if k == 0 || k > n {
        return Err(Error::validation(format!("k = {k} outside 1..={n}")));
    }
    let mut by_rank: Vec<&KeypointActivity> = report.per_keypoint.iter().collect();
    by_rank.sort_by_key(|a| a.rank);
    Ok(by_rank[..k].iter().map(|a| a.index).collect())
}

impl DisplacementReport {
    /// `index,displacement,rank`, one row per keypoint.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,displacement,rank\n");
        for a in &self.per_keypoint {
            out.push_str(&format!("{},{:.9},{}\n", a.index, a.displacement, a.rank));
        }
        out
    }

    /// `rank,index,displacement` for the `k` most active keypoints.
    pub fn top_k_csv(&self, k: usize) -> Result<String> {
        let mut out = String::from("rank,index,displacement\n");
        for (r, i) in top_k(self, k)?.into_iter().enumerate() {
            out.push_str(&format!("{},{},{:.9}\n", r + 1, i, self.per_keypoint[i].displacement));
        }
        Ok(out)
    }
}
