use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::config("AdamW betas must lie in [0, 1)"));
        }
        if !(self.eps > 0.0 && self.weight_decay >= 0.0) {
            return Err(Error::config("AdamW needs eps > 0 and weight_decay ≥ 0"));
        }
        Ok(())
    }
}

/// Step count and first/second moments, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(config: AdamWConfig, params: &[Tensor<T>]) -> Self {
        Self {
            config,
            step: 0,
            m: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
        }
    }
}

/// One AdamW update with decoupled weight decay:
/// `p ← p·(1 − lr·wd) − lr·m̂ / (√v̂ + eps)`.
/// A non-finite gradient rejects the whole step and leaves everything untouched.
pub fn adamw_step<T: Real>(
    params: &mut [Tensor<T>],
    grads: &[Vec<T>],
    state: &mut OptimizerState<T>,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape("parameter, gradient and moment counts differ"));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || state.m[i].len() != g.len() {
            return Err(Error::shape(format!(
                "gradient {i} has {} values for {}",
                g.len(),
                p.len()
            )));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of parameter {i}")));
        }
    }
    let c = state.config;
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
    let bc1 = T::of(1.0 - c.beta1.powi(t));
    let bc2 = T::of(1.0 - c.beta2.powi(t));
    let decay = T::of(1.0 - lr * c.weight_decay);
    let (lr, eps) = (T::of(lr), T::of(c.eps));
    for (i, p) in params.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            let gj = grads[i][j];
            m[j] = b1 * m[j] + (T::one() - b1) * gj;
            v[j] = b2 * v[j] + (T::one() - b2) * gj * gj;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *w = *w * decay - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`; returns the norm before clipping.
pub fn clip_grad_norm<T: Real>(grads: &mut [Vec<T>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flatten()
        .map(|g| g.as_f64() * g.as_f64())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = T::of(max_norm / norm);
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_pure_decay() {
        let mut p = vec![Tensor::new(vec![3], vec![1.5f64, -2.0, 0.25]).unwrap()];
        let before = p[0].clone();
        let mut st = OptimizerState::new(AdamWConfig::default(), &p);
        adamw_step(&mut p, &[vec![0.0; 3]], &mut st, 3e-4).unwrap();
        for (a, b) in p[0].data().iter().zip(before.data()) {
            assert_eq!(*a, b * (1.0 - 3e-4 * 1e-2));
        }
    }

    #[test]
    fn scalar_step_by_hand() {
        let mut p = vec![Tensor::scalar(0.5f64)];
        let mut st = OptimizerState::new(AdamWConfig::default(), &p);
        let (lr, g) = (1e-3, 0.2);
        adamw_step(&mut p, &[vec![g]], &mut st, lr).unwrap();
        let m = 0.1 * g;
        let v = 0.001 * g * g;
        let m_hat = m / (1.0 - 0.9);
        let v_hat = v / (1.0 - 0.999);
        let want = 0.5 * (1.0 - lr * 1e-2) - lr * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((p[0].data()[0] - want).abs() <= 1e-12);
    }

    #[test]
    fn without_decay_it_is_adam() {
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        let mut p = vec![Tensor::scalar(1.0f64)];
        let mut st = OptimizerState::new(cfg, &p);
        let (mut m, mut v, mut x) = (0.0f64, 0.0f64, 1.0f64);
        for t in 1..=5 {
            let g = 0.3 * t as f64 - 0.7;
            adamw_step(&mut p, &[vec![g]], &mut st, 0.01).unwrap();
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            x -= 0.01 * (m / (1.0 - 0.9f64.powi(t))) / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
            assert!((p[0].data()[0] - x).abs() < 1e-14);
        }
        // Constant gradient, first step: bias correction makes the move ≈ lr.
        let mut q = vec![Tensor::scalar(0.0f64)];
        let mut st = OptimizerState::new(cfg, &q);
        adamw_step(&mut q, &[vec![4.0]], &mut st, 0.01).unwrap();
        assert!((q[0].data()[0] + 0.01).abs() < 1e-10);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut p = vec![Tensor::scalar(1.0f64)];
        let mut st = OptimizerState::new(AdamWConfig::default(), &p);
        assert!(matches!(
            adamw_step(&mut p, &[vec![f64::NAN]], &mut st, 0.1),
            Err(Error::NonFinite(_))
        ));
        assert_eq!((p[0].data()[0], st.step), (1.0, 0));
    }

    #[test]
    fn clipping() {
        let mut g = vec![vec![3.0f64], vec![4.0]];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[0][0] - 0.6).abs() < 1e-15 && (g[1][0] - 0.8).abs() < 1e-15);
    }
}
