/// Scale/translation normalisation of one frame.
///
/// Over the valid keypoints: subtract the bounding-box minimum, divide by
/// `max(width, height)`, then subtract the mean of the scaled valid points.
/// Invalid keypoints map to the origin, as does every keypoint when the
/// frame has no valid point or a zero-size box.
pub fn normalize_frame(positions: &[[f64; 2]], valid: &[bool]) -> Vec<[f64; 2]> {
    debug_assert_eq!(positions.len(), valid.len());
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    let mut n = 0usize;
    for (p, _) in positions.iter().zip(valid).filter(|(_, &v)| v) {
        for d in 0..2 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
        n += 1;
    }
    let mut out = vec![[0.0; 2]; positions.len()];
    if n == 0 {
        return out;
    }
    let scale = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    if !(scale > 0.0) {
        return out;
    }
    let mut centre = [0.0; 2];
    for (i, p) in positions.iter().enumerate() {
        if valid[i] {
            out[i] = [(p[0] - lo[0]) / scale, (p[1] - lo[1]) / scale];
            centre[0] += out[i][0];
            centre[1] += out[i][1];
        }
    }
    centre[0] /= n as f64;
    centre[1] /= n as f64;
    for (o, &v) in out.iter_mut().zip(valid) {
        if v {
            o[0] -= centre[0];
            o[1] -= centre[1];
        }
    }
    out
}
