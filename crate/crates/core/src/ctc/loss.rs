use crate::data::BLANK;
use crate::error::{Error, Result};
use crate::kernels::log_sum_exp;
use crate::real::Real;
use crate::tensor::Tensor;

/// A gloss-id label sequence and its blank-interleaved expansion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CtcTarget {
    ids: Vec<usize>,
    expanded: Vec<usize>,
}

impl CtcTarget {
    pub fn new(ids: Vec<usize>) -> Result<Self> {
        if ids.contains(&BLANK) {
            return Err(Error::validation("CTC target contains the blank id"));
        }
        let mut expanded = Vec::with_capacity(2 * ids.len() + 1);
        expanded.push(BLANK);
        for &y in &ids {
            expanded.push(y);
            expanded.push(BLANK);
        }
        Ok(Self { ids, expanded })
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn expanded(&self) -> &[usize] {
        &self.expanded
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Fewest frames that can emit `ids`: one per label plus a separating blank
/// between each pair of equal neighbours.
pub fn required_frames(ids: &[usize]) -> usize {
    ids.len() + ids.windows(2).filter(|w| w[0] == w[1]).count()
}

fn can_skip(l: &[usize], s: usize) -> bool {
    s >= 2 && l[s] != BLANK && l[s] != l[s - 2]
}

/// Log-space α table over the expanded label sequence `l`.
fn forward(lp: &[f64], t_len: usize, classes: usize, l: &[usize]) -> Vec<f64> {
    let s_len = l.len();
    let ninf = f64::NEG_INFINITY;
    let mut alpha = vec![ninf; t_len * s_len];
    alpha[0] = lp[l[0]];
    if s_len > 1 {
        alpha[1] = lp[l[1]];
    }
    for t in 1..t_len {
        let (prev, cur) = alpha.split_at_mut(t * s_len);
        let prev = &prev[(t - 1) * s_len..];
        for s in 0..s_len {
            let mut terms = [prev[s], ninf, ninf];
            if s >= 1 {
                terms[1] = prev[s - 1];
            }
            if can_skip(l, s) {
                terms[2] = prev[s - 2];
            }
            let m = log_sum_exp(&terms);
            cur[s] = if m == ninf { ninf } else { m + lp[t * classes + l[s]] };
        }
    }
    alpha
}

fn final_mass(alpha: &[f64], t_len: usize, s_len: usize) -> f64 {
    let tail = &alpha[(t_len - 1) * s_len..];
    if s_len > 1 {
        log_sum_exp(&[tail[s_len - 1], tail[s_len - 2]])
    } else {
        tail[0]
    }
}

/// log p(ids | X) by the forward recursion alone; −∞ when no path emits
/// `ids` in the available frames.
pub fn sequence_log_prob<T: Real>(log_probs: &Tensor<T>, ids: &[usize]) -> f64 {
    let (t_len, classes) = log_probs.dims2();
    if t_len == 0 || required_frames(ids) > t_len || ids.iter().any(|&y| y == BLANK || y >= classes) {
        return f64::NEG_INFINITY;
    }
    let lp: Vec<f64> = log_probs.data().iter().map(|v| v.as_f64()).collect();
    let target = CtcTarget::new(ids.to_vec()).expect("blank excluded above");
    let alpha = forward(&lp, t_len, classes, target.expanded());
    final_mass(&alpha, t_len, target.expanded().len())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtcResult<T> {
    /// −log p(Y | X).
    pub neg_log_likelihood: T,
    /// ∂ loss / ∂ log_probs, same shape as the input.
    pub grad_log_probs: Tensor<T>,
}

/// Forward-backward in log space. The gradient treats every entry of
/// `log_probs` as an independent input, so it equals minus the posterior
/// occupancy of each (frame, class) cell; chaining through a log-softmax
/// is left to the caller. Internally evaluated in f64.
pub fn ctc_loss<T: Real>(log_probs: &Tensor<T>, target: &CtcTarget) -> Result<CtcResult<T>> {
    let (t_len, classes) = log_probs.dims2();
    if let Some(&bad) = target.ids().iter().find(|&&y| y >= classes) {
        return Err(Error::validation(format!("gloss id {bad} outside {classes} classes")));
    }
    let required = required_frames(target.ids());
    if t_len == 0 || required > t_len {
        return Err(Error::InfeasibleTarget {
            label_len: target.len(),
            required,
            frames: t_len,
        });
    }
    let lp: Vec<f64> = log_probs.data().iter().map(|v| v.as_f64()).collect();
    if lp.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::NonFinite("CTC input log-probabilities".into()));
    }
    let l = target.expanded();
    let s_len = l.len();
    let at = |t: usize, s: usize| lp[t * classes + l[s]];
    let ninf = f64::NEG_INFINITY;
    let alpha = forward(&lp, t_len, classes, l);
    let mut beta = vec![ninf; t_len * s_len];
    let last = (t_len - 1) * s_len;
    beta[last + s_len - 1] = at(t_len - 1, s_len - 1);
    if s_len > 1 {
        beta[last + s_len - 2] = at(t_len - 1, s_len - 2);
    }
    for t in (0..t_len - 1).rev() {
        let (cur, next) = beta.split_at_mut((t + 1) * s_len);
        let cur = &mut cur[t * s_len..];
        for s in 0..s_len {
            let mut terms = [next[s], ninf, ninf];
            if s + 1 < s_len {
                terms[1] = next[s + 1];
            }
            if s + 2 < s_len && can_skip(l, s + 2) {
                terms[2] = next[s + 2];
            }
            let m = log_sum_exp(&terms);
            cur[s] = if m == ninf { ninf } else { m + at(t, s) };
        }
    }
    let log_z = final_mass(&alpha, t_len, s_len);
    if !log_z.is_finite() {
        return Err(Error::NonFinite("CTC likelihood is zero".into()));
    }
    // α and β both include the emission at (t, s); remove one copy.
    let mut grad = vec![0.0f64; t_len * classes];
    for t in 0..t_len {
        for s in 0..s_len {
            let a = alpha[t * s_len + s];
            let b = beta[t * s_len + s];
            if a == ninf || b == ninf {
                continue;
            }
            grad[t * classes + l[s]] -= (a + b - at(t, s) - log_z).exp();
        }
    }
    Ok(CtcResult {
        neg_log_likelihood: T::of(-log_z),
        grad_log_probs: Tensor::new(vec![t_len, classes], grad.into_iter().map(T::of).collect())?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lp(rows: &[Vec<f64>]) -> Tensor<f64> {
        Tensor::from_rows(
            &rows
                .iter()
                .map(|r| r.iter().map(|p| p.ln()).collect())
                .collect::<Vec<_>>(),
        )
        .unwrap()
    }

    #[test]
    fn single_frame() {
        let x = lp(&[vec![0.2, 0.5, 0.3]]);
        let r = ctc_loss(&x, &CtcTarget::new(vec![1]).unwrap()).unwrap();
        assert!((r.neg_log_likelihood + 0.5f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn two_frames_three_paths() {
        let x = lp(&[vec![0.2, 0.5, 0.3], vec![0.6, 0.1, 0.3]]);
        let r = ctc_loss(&x, &CtcTarget::new(vec![1]).unwrap()).unwrap();
        let p = 0.5 * 0.1 + 0.5 * 0.6 + 0.2 * 0.1;
        assert!((r.neg_log_likelihood + f64::ln(p)).abs() < 1e-14);
    }

    #[test]
    fn infeasible_and_invalid_targets() {
        let x = lp(&[vec![0.5, 0.5], vec![0.5, 0.5]]);
        let err = ctc_loss(&x, &CtcTarget::new(vec![1, 1]).unwrap()).unwrap_err();
        assert!(matches!(
            err,
            Error::InfeasibleTarget {
                label_len: 2,
                required: 3,
                frames: 2
            }
        ));
        assert!(ctc_loss(&x, &CtcTarget::new(vec![2]).unwrap()).is_err());
        assert!(CtcTarget::new(vec![0]).is_err());
        assert_eq!(CtcTarget::new(vec![3, 1]).unwrap().expanded(), &[0, 3, 0, 1, 0]);
    }

    #[test]
    fn empty_target_is_all_blank() {
        let x = lp(&[vec![0.7, 0.3], vec![0.4, 0.6]]);
        let r = ctc_loss(&x, &CtcTarget::new(vec![]).unwrap()).unwrap();
        assert!((r.neg_log_likelihood + f64::ln(0.28)).abs() < 1e-14);
        assert!((r.grad_log_probs.at(0, 0) + 1.0).abs() < 1e-14);
    }
}
