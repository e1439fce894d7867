//! Binary array container shared by keypoint and feature files.
//!
//! Header: magic `KPSQ`, then little-endian u32 version, T, K, C, followed by
//! T·K·C little-endian f32 values, frame-major, then keypoint, then channel.
//! Keypoint files use version 1 with C = 3 (x, y, confidence). Feature files
//! set [`FEATURE_FLAG`] in the version word and store K = 1, C = F.

use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"KPSQ";
pub const VERSION: u32 = 1;
pub const FEATURE_FLAG: u32 = 1 << 16;
const HEADER_LEN: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArrayKind {
    Keypoints,
    Features,
}

/// T frames × K keypoints × (x, y, confidence).
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointFrames {
    n_frames: usize,
    n_keypoints: usize,
    data: Vec<f32>,
}

impl KeypointFrames {
    pub fn new(n_frames: usize, n_keypoints: usize, data: Vec<f32>) -> Result<Self> {
        if n_frames == 0 || n_keypoints == 0 {
            return Err(Error::validation("keypoint sequences need T ≥ 1 and K ≥ 1"));
        }
        if data.len() != n_frames * n_keypoints * 3 {
            return Err(Error::shape(format!(
                "{n_frames}×{n_keypoints}×3 frames need {} values, got {}",
                n_frames * n_keypoints * 3,
                data.len()
            )));
        }
        let frames = Self {
            n_frames,
            n_keypoints,
            data,
        };
        frames.validate()?;
        Ok(frames)
    }

    fn validate(&self) -> Result<()> {
        for (i, v) in self.data.chunks_exact(3).enumerate() {
            let (t, k) = (i / self.n_keypoints, i % self.n_keypoints);
            if !(0.0..=1.0).contains(&v[2]) {
                return Err(Error::validation(format!(
                    "confidence {} at frame {t} keypoint {k} outside [0, 1]",
                    v[2]
                )));
            }
            if v[2] > 0.0 && !(v[0].is_finite() && v[1].is_finite()) {
                return Err(Error::validation(format!(
                    "non-finite position at frame {t} keypoint {k}"
                )));
            }
        }
        Ok(())
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_keypoints(&self) -> usize {
        self.n_keypoints
    }

    pub fn raw(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, t: usize, k: usize) -> [f32; 3] {
        let o = (t * self.n_keypoints + k) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    #[inline]
    pub fn position(&self, t: usize, k: usize) -> [f64; 2] {
        let v = self.get(t, k);
        [v[0] as f64, v[1] as f64]
    }

    #[inline]
    pub fn is_valid(&self, t: usize, k: usize) -> bool {
        self.get(t, k)[2] > 0.0
    }

    /// Fraction of (frame, keypoint) detections with confidence > 0.
    pub fn valid_fraction(&self) -> f64 {
        let valid = self.data.chunks_exact(3).filter(|v| v[2] > 0.0).count();
        valid as f64 / (self.n_frames * self.n_keypoints) as f64
    }
}

fn encode(kind: ArrayKind, t: usize, k: usize, c: usize, data: &[f32]) -> Vec<u8> {
    let version = match kind {
        ArrayKind::Keypoints => VERSION,
        ArrayKind::Features => VERSION | FEATURE_FLAG,
    };
    let mut out = Vec::with_capacity(HEADER_LEN + data.len() * 4);
    out.extend_from_slice(MAGIC);
    for v in [version, t as u32, k as u32, c as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Decoded {
    kind: ArrayKind,
    t: usize,
    k: usize,
    c: usize,
    data: Vec<f32>,
}

fn decode(bytes: &[u8], origin: &str) -> Result<Decoded> {
    let perr = |offset: usize, message: String| Error::Parse {
        path: origin.to_string(),
        offset: offset as u64,
        message,
    };
    if bytes.len() < HEADER_LEN {
        return Err(perr(
            bytes.len(),
            format!("header needs {HEADER_LEN} bytes, file has {}", bytes.len()),
        ));
    }
    if &bytes[..4] != MAGIC {
        return Err(perr(0, "bad magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes([bytes[4 + 4 * i], bytes[5 + 4 * i], bytes[6 + 4 * i], bytes[7 + 4 * i]]);
    let version = word(0);
    let kind = match version {
        v if v == VERSION => ArrayKind::Keypoints,
        v if v == VERSION | FEATURE_FLAG => ArrayKind::Features,
        v => return Err(perr(4, format!("unsupported version word {v:#x}"))),
    };
    let (t, k, c) = (word(1) as usize, word(2) as usize, word(3) as usize);
    let expected = t
        .checked_mul(k)
        .and_then(|n| n.checked_mul(c))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| perr(8, "dimensions overflow".into()))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() < expected {
        return Err(perr(
            bytes.len(),
            format!(
                "payload truncated: header declares {t}×{k}×{c} ({expected} bytes), found {}",
                payload.len()
            ),
        ));
    }
    if payload.len() > expected {
        return Err(perr(
            HEADER_LEN + expected,
            format!("{} trailing bytes after payload", payload.len() - expected),
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok(Decoded { kind, t, k, c, data })
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn keypoints_from_bytes(bytes: &[u8], origin: &str) -> Result<KeypointFrames> {
    let d = decode(bytes, origin)?;
    if d.kind != ArrayKind::Keypoints {
        return Err(Error::Parse {
            path: origin.into(),
            offset: 4,
            message: "file holds features, not keypoints".into(),
        });
    }
    if d.c != 3 {
        return Err(Error::Parse {
            path: origin.into(),
            offset: 16,
            message: format!("keypoint files need C = 3, header has {}", d.c),
        });
    }
    KeypointFrames::new(d.t, d.k, d.data)
}

pub fn keypoints_to_bytes(frames: &KeypointFrames) -> Vec<u8> {
    encode(
        ArrayKind::Keypoints,
        frames.n_frames,
        frames.n_keypoints,
        3,
        &frames.data,
    )
}

pub fn read_keypoint_file(path: &Path) -> Result<KeypointFrames> {
    keypoints_from_bytes(&read_bytes(path)?, &path.display().to_string())
}

pub fn write_keypoint_file(frames: &KeypointFrames, path: &Path) -> Result<()> {
    write_bytes(path, &keypoints_to_bytes(frames))
}

/// Writes a T×F feature matrix.
pub fn write_feature_file(path: &Path, n_frames: usize, n_features: usize, data: &[f32]) -> Result<()> {
    if data.len() != n_frames * n_features {
        return Err(Error::shape("feature matrix size mismatch"));
    }
    write_bytes(path, &encode(ArrayKind::Features, n_frames, 1, n_features, data))
}

/// Reads a feature file, returning `(T, F, values)`.
pub fn read_feature_file(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let origin = path.display().to_string();
    let d = decode(&read_bytes(path)?, &origin)?;
    if d.kind != ArrayKind::Features || d.k != 1 {
        return Err(Error::Parse {
            path: origin,
            offset: 4,
            message: "not a feature file".into(),
        });
    }
    if d.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation(format!("{origin}: non-finite feature value")));
    }
    Ok((d.t, d.c, d.data))
}
