use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;

use super::dbscan::{dbscan, DbscanParams, Label};
use crate::data::{DatasetManifest, KeypointFrames, KeypointSequence, Split};
use crate::eda::sample_bbox;
use crate::error::{Error, Result};

/// Dataset-wide keep/drop decision over raw keypoints.
#[derive(Debug, Clone, PartialEq)]
pub struct MasterMask {
    pub keep: Vec<bool>,
    pub reference_id: String,
    pub params: DbscanParams,
}

impl MasterMask {
    pub fn k_raw(&self) -> usize {
        self.keep.len()
    }

    pub fn k_kept(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    pub fn kept_indices(&self) -> Vec<usize> {
        self.keep
            .iter()
            .enumerate()
            .filter(|(_, &k)| k)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn dropped_indices(&self) -> Vec<usize> {
        self.keep
            .iter()
            .enumerate()
            .filter(|(_, &k)| !k)
            .map(|(i, _)| i)
            .collect()
    }

    /// Restricts a sample to the kept keypoints.
    pub fn apply(&self, frames: &KeypointFrames) -> Result<KeypointFrames> {
        if frames.n_keypoints() != self.k_raw() {
            return Err(Error::validation(format!(
                "mask covers {} keypoints, sample has {}",
                self.k_raw(),
                frames.n_keypoints()
            )));
        }
        let kept = self.kept_indices();
        let mut data = Vec::with_capacity(frames.n_frames() * kept.len() * 3);
        for t in 0..frames.n_frames() {
            for &i in &kept {
                data.extend_from_slice(&frames.get(t, i));
            }
        }
        KeypointFrames::new(frames.n_frames(), kept.len(), data)
    }

    /// Three lines: `K_raw k_kept`, the 0/1 flags, then
    /// `reference_id eps min_pts`.
    pub fn to_text(&self) -> String {
        let flags: Vec<&str> = self.keep.iter().map(|&k| if k { "1" } else { "0" }).collect();
        format!(
            "{} {}\n{}\n{} {} {}\n",
            self.k_raw(),
            self.k_kept(),
            flags.join(" "),
            self.reference_id,
            self.params.eps,
            self.params.min_pts
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::validation(format!("mask file: {m}"));
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < 3 {
            return Err(bad("expected 3 lines"));
        }
        let head: Vec<usize> = lines[0]
            .split_whitespace()
            .map(|v| v.parse().map_err(|_| bad("bad header")))
            .collect::<Result<_>>()?;
        let keep: Vec<bool> = lines[1]
            .split_whitespace()
            .map(|v| match v {
                "1" => Ok(true),
                "0" => Ok(false),
                _ => Err(bad("flags must be 0 or 1")),
            })
            .collect::<Result<_>>()?;
        let prov: Vec<&str> = lines[2].split_whitespace().collect();
        if head.len() != 2 || prov.len() != 3 {
            return Err(bad("malformed header or provenance line"));
        }
        let mask = MasterMask {
            keep,
            reference_id: prov[0].to_string(),
            params: DbscanParams {
                eps: prov[1].parse().map_err(|_| bad("bad eps"))?,
                min_pts: prov[2].parse().map_err(|_| bad("bad min_pts"))?,
            },
        };
        if mask.k_raw() != head[0] || mask.k_kept() != head[1] || head[1] == 0 {
            return Err(bad("header counts disagree with flags"));
        }
        Ok(mask)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Mean valid position of every keypoint after mapping the sample into its
/// bounding box; `None` for keypoints never detected.
pub fn mean_valid_positions(frames: &KeypointFrames) -> Vec<Option<[f64; 2]>> {
    let (lo, scale) = match sample_bbox(frames) {
        Some((lo, s)) if s > 0.0 => (lo, s),
        Some((lo, _)) => (lo, 1.0),
        None => return vec![None; frames.n_keypoints()],
    };
    (0..frames.n_keypoints())
        .map(|i| {
            let mut sum = [0.0; 2];
            let mut n = 0usize;
            for t in 0..frames.n_frames() {
                if frames.is_valid(t, i) {
                    let p = frames.position(t, i);
                    sum[0] += (p[0] - lo[0]) / scale;
                    sum[1] += (p[1] - lo[1]) / scale;
                    n += 1;
                }
            }
            (n > 0).then(|| [sum[0] / n as f64, sum[1] / n as f64])
        })
        .collect()
}

/// Clusters the reference sample's mean keypoint positions and keeps the
/// largest cluster (ties: the cluster holding the lowest index).
pub fn build_master_mask(reference: &KeypointSequence, params: &DbscanParams) -> Result<MasterMask> {
    params.validate()?;
    if reference.frames.n_frames() < 2 {
        return Err(Error::validation("reference sample needs T ≥ 2"));
    }
    let means = mean_valid_positions(&reference.frames);
    let present: Vec<usize> = (0..means.len()).filter(|&i| means[i].is_some()).collect();
    if present.is_empty() {
        return Err(Error::MaskConstruction(
            "reference sample has no valid detections".into(),
        ));
    }
    let points: Vec<[f64; 2]> = present.iter().map(|&i| means[i].unwrap()).collect();
    let labels = dbscan(&points, params)?;
    // cluster -> (size, lowest keypoint index)
    let mut sizes: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (j, l) in labels.iter().enumerate() {
        if let Label::Cluster(c) = l {
            let e = sizes.entry(*c).or_insert((0, present[j]));
            e.0 += 1;
            e.1 = e.1.min(present[j]);
        }
    }
    let best = sizes
        .iter()
        .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)))
        .map(|(&c, _)| c)
        .ok_or_else(|| {
            Error::MaskConstruction(format!(
                "every keypoint is noise with eps = {}, min_pts = {}",
                params.eps, params.min_pts
            ))
        })?;
    let mut keep = vec![false; means.len()];
    for (j, l) in labels.iter().enumerate() {
        if *l == Label::Cluster(best) {
            keep[present[j]] = true;
        }
    }
    Ok(MasterMask {
        keep,
        reference_id: reference.sample_id.clone(),
        params: *params,
    })
}

/// The sample of `split` with the highest fraction of valid detections
/// (ties: smallest sample_id), unless `override_id` names one explicitly.
pub fn select_reference_sample(manifest: &DatasetManifest, split: Split, override_id: Option<&str>) -> Result<String> {
    if let Some(id) = override_id {
        return manifest
            .get(id)
            .map(|r| r.sample_id.clone())
            .ok_or_else(|| Error::validation(format!("reference sample {id:?} not in manifest")));
    }
    let records: Vec<_> = manifest.split(split).collect();
    if records.is_empty() {
        return Err(Error::validation(format!("split {split} is empty")));
    }
    let scored: Vec<(f64, &str)> = records
        .par_iter()
        .map(|r| Ok((manifest.load_frames(r)?.valid_fraction(), r.sample_id.as_str())))
        .collect::<Result<_>>()?;
    let best = scored
        .iter()
        .max_by(|a, b| a.0.total_cmp(&b.0).then_with(|| b.1.cmp(a.1)))
        .expect("non-empty");
    Ok(best.1.to_string())
}
