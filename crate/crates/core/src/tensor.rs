//! Dense row-major tensors and the non-differentiable forms of the
//! primitive operations. Differentiable counterparts live in
//! [`crate::graph`].

use rand::Rng;

use crate::error::{Error, Result};
use crate::kernels;
use crate::real::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} holds {} values, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        let mut t = Self::zeros(shape);
        t.data.iter_mut().for_each(|x| *x = v);
        t
    }

    pub fn scalar(v: T) -> Self {
        Self {
            shape: vec![],
            data: vec![v],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("ragged rows"));
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    /// Entries drawn uniformly from `[-bound, bound]`.
    pub fn uniform(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Self {
        let mut t = Self::zeros(shape);
        for v in &mut t.data {
            *v = T::of(rng.random_range(-bound..=bound));
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Interprets the tensor as a matrix: leading axes are flattened into rows.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.len() {
            0 => (1, 1),
            1 => (1, self.shape[0]),
            _ => {
                let c = *self.shape.last().unwrap();
                (self.data.len() / c.max(1), c)
            }
        }
    }

    pub fn rows(&self) -> usize {
        self.dims2().0
    }

    pub fn cols(&self) -> usize {
        self.dims2().1
    }

    pub fn at(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols() + j]
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape(format!("cannot reshape {:?} to {:?}", self.shape, shape)));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
        if !on {
            self.grad = None;
        }
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    /// Adds `g` into the gradient buffer. Gradients accumulate across calls
    /// until [`Tensor::zero_grad`].
    pub fn accumulate_grad(&mut self, g: &[T]) -> Result<()> {
        if g.len() != self.data.len() {
            return Err(Error::shape(format!(
                "gradient of length {} for tensor {:?}",
                g.len(),
                self.shape
            )));
        }
        match &mut self.grad {
            Some(buf) => buf.iter_mut().zip(g).for_each(|(b, &v)| *b += v),
            None => self.grad = Some(g.to_vec()),
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
            requires_grad: self.requires_grad,
            grad: self
                .grad
                .as_ref()
                .map(|g| g.iter().map(|v| U::of(v.as_f64())).collect()),
        }
    }

    fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            requires_grad: false,
            grad: None,
        }
    }
}

fn require_matrix<T: Real>(t: &Tensor<T>, what: &str) -> Result<(usize, usize)> {
    if t.shape.len() != 2 {
        return Err(Error::shape(format!("{what} must be 2-D, got {:?}", t.shape)));
    }
    Ok((t.shape[0], t.shape[1]))
}

pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = require_matrix(a, "matmul lhs")?;
    let (k2, n) = require_matrix(b, "matmul rhs")?;
    if k != k2 {
        return Err(Error::shape(format!("matmul inner dimensions {k} vs {k2}")));
    }
    Tensor::new(vec![m, n], kernels::matmul(&a.data, &b.data, m, k, n))
}

pub fn conv1d_depthwise<T: Real>(x: &Tensor<T>, kernel: &Tensor<T>) -> Result<Tensor<T>> {
    let (t_len, c) = require_matrix(x, "conv input")?;
    let (kc, width) = require_matrix(kernel, "conv kernel")?;
    if width % 2 == 0 {
        return Err(Error::config(format!(
            "depthwise kernel width must be odd, got {width}"
        )));
    }
    if kc != c {
        return Err(Error::shape(format!("kernel has {kc} channels, input has {c}")));
    }
    Tensor::new(
        vec![t_len, c],
        kernels::conv1d_depthwise(&x.data, &kernel.data, t_len, c, width),
    )
}

pub fn layer_norm<T: Real>(x: &Tensor<T>, gain: &Tensor<T>, bias: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
    let (rows, c) = x.dims2();
    if gain.len() != c || bias.len() != c {
        return Err(Error::shape(format!("layer norm affine params must have length {c}")));
    }
    if eps <= T::zero() {
        return Err(Error::config("layer norm eps must be positive"));
    }
    let (out, _, _) = kernels::layer_norm(&x.data, &gain.data, &bias.data, rows, c, eps);
    Tensor::new(x.shape.clone(), out)
}

pub fn softmax_lastaxis<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let (rows, c) = x.dims2();
    Tensor {
        shape: x.shape.clone(),
        data: kernels::softmax_rows(&x.data, rows, c, c),
        requires_grad: false,
        grad: None,
    }
}

pub fn log_softmax_lastaxis<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let (rows, c) = x.dims2();
    Tensor {
        shape: x.shape.clone(),
        data: kernels::log_softmax_rows(&x.data, rows, c),
        requires_grad: false,
        grad: None,
    }
}

pub fn swish<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(kernels::swish)
}

pub fn glu<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (rows, c2) = x.dims2();
    if c2 % 2 != 0 {
        return Err(Error::shape(format!("glu needs an even last axis, got {c2}")));
    }
    let mut shape = x.shape.clone();
    *shape.last_mut().unwrap() = c2 / 2;
    Tensor::new(shape, kernels::glu(&x.data, rows, c2))
}

/// Inverted-dropout keep mask: zeros with probability `p`, `1/(1-p)` otherwise.
pub fn dropout_mask<T: Real>(n: usize, p: f64, rng: &mut impl Rng) -> Result<Vec<T>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::config(format!("dropout probability {p} outside [0, 1)")));
    }
    let keep = T::of(1.0 / (1.0 - p));
    Ok((0..n)
        .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
        .collect())
}

pub fn dropout<T: Real>(x: &Tensor<T>, p: f64, training: bool, rng: &mut impl Rng) -> Result<Tensor<T>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::config(format!("dropout probability {p} outside [0, 1)")));
    }
    if !training || p == 0.0 {
        return Ok(x.map(|v| v));
    }
    let mask = dropout_mask::<T>(x.len(), p, rng)?;
    let mut out = x.map(|v| v);
    out.data.iter_mut().zip(&mask).for_each(|(v, &m)| *v *= m);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn identity_matmul() {
        let a = Tensor::<f64>::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(matmul(&Tensor::eye(2), &a).unwrap(), a);
    }

    #[test]
    fn hand_matmul() {
        let a = Tensor::<f64>::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Tensor::<f64>::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        assert!(matches!(matmul(&a, &a), Err(Error::Shape(_))));
    }

    #[test]
    fn impulse_kernel_is_identity() {
        let mut r = rng::from_seed(1);
        let x = Tensor::<f64>::uniform(&[9, 4], 1.0, &mut r);
        let mut k = Tensor::<f64>::zeros(&[4, 5]);
        for c in 0..4 {
            k.data_mut()[c * 5 + 2] = 1.0;
        }
        assert_eq!(conv1d_depthwise(&x, &k).unwrap(), x);
    }

    #[test]
    fn constant_input_interior() {
        let x = Tensor::<f64>::full(&[10, 3], 2.0);
        let k = Tensor::<f64>::full(&[3, 3], 0.5);
        let y = conv1d_depthwise(&x, &k).unwrap();
        for t in 1..9 {
            for c in 0..3 {
                assert!((y.at(t, c) - 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn depthwise_matches_direct_sum() {
        let mut r = rng::from_seed(2);
        let (t_len, c, w) = (11, 3, 5);
        let x = Tensor::<f64>::uniform(&[t_len, c], 1.0, &mut r);
        let k = Tensor::<f64>::uniform(&[c, w], 1.0, &mut r);
        let y = conv1d_depthwise(&x, &k).unwrap();
        for t in 0..t_len {
            for ch in 0..c {
                let mut s = 0.0;
                for j in 0..w {
                    let src = t as i64 + j as i64 - 2;
                    if (0..t_len as i64).contains(&src) {
                        s += k.at(ch, j) * x.at(src as usize, ch);
                    }
                }
                assert!((y.at(t, ch) - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn even_kernel_rejected() {
        let x = Tensor::<f64>::zeros(&[4, 2]);
        let k = Tensor::<f64>::zeros(&[2, 4]);
        assert!(matches!(conv1d_depthwise(&x, &k), Err(Error::Config(_))));
    }

    #[test]
    fn layer_norm_cases() {
        let g = Tensor::<f64>::full(&[2], 1.0);
        let b = Tensor::<f64>::zeros(&[2]);
        let c = Tensor::<f64>::full(&[1, 2], 3.0);
        assert_eq!(layer_norm(&c, &g, &b, 1e-5).unwrap().data(), &[0.0, 0.0]);
        let x = Tensor::<f64>::from_rows(&[vec![1.0, -1.0]]).unwrap();
        let y = layer_norm(&x, &g, &b, 1e-12).unwrap();
        assert!((y.data()[0] - 1.0).abs() < 1e-9 && (y.data()[1] + 1.0).abs() < 1e-9);

        let mut r = rng::from_seed(3);
        let x = Tensor::<f64>::uniform(&[5, 6], 3.0, &mut r);
        let g = Tensor::<f64>::uniform(&[6], 1.0, &mut r);
        let b = Tensor::<f64>::uniform(&[6], 1.0, &mut r);
        let bias_mean = b.data().iter().sum::<f64>() / 6.0;
        let y = layer_norm(&x, &Tensor::full(&[6], 1.0), &b, 1e-5).unwrap();
        for i in 0..5 {
            let m = y.row(i).iter().sum::<f64>() / 6.0;
            assert!((m - bias_mean).abs() < 1e-9);
        }
        let _ = g;
    }

    #[test]
    fn activations() {
        let s = softmax_lastaxis(&Tensor::<f64>::zeros(&[1, 2]));
        assert_eq!(s.data(), &[0.5, 0.5]);
        let x = Tensor::<f64>::from_rows(&[vec![0.0, 2.0, 1.0, -3.0]]).unwrap();
        let sw = swish(&x);
        assert!((sw.data()[1] - 2.0 / (1.0 + (-2.0f64).exp())).abs() < 1e-15);
        let g = glu(&x).unwrap();
        assert_eq!(g.shape(), &[1, 2]);
        assert!((g.data()[1] - 2.0 * kernels::sigmoid(-3.0)).abs() < 1e-15);
    }

    #[test]
    fn dropout_identity_and_range() {
        let mut r = rng::from_seed(4);
        let x = Tensor::<f64>::uniform(&[3, 3], 1.0, &mut r);
        assert_eq!(dropout(&x, 0.0, true, &mut r).unwrap(), x);
        assert_eq!(dropout(&x, 0.5, false, &mut r).unwrap(), x);
        assert!(dropout(&x, 1.0, true, &mut r).is_err());
        assert!(dropout(&x, -0.1, true, &mut r).is_err());
    }

    #[test]
    fn dropout_survivor_fraction() {
        let n = 1_000_000;
        let p = 0.3;
        let mut r = rng::from_seed(5);
        let x = Tensor::<f64>::full(&[n], 1.0);
        let y = dropout(&x, p, true, &mut r).unwrap();
        let survivors = y.data().iter().filter(|&&v| v != 0.0).count() as f64;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((survivors - n as f64 * (1.0 - p)).abs() < 3.0 * sigma);
        assert!(y.data().iter().all(|&v| v == 0.0 || (v - 1.0 / 0.7).abs() < 1e-12));
    }

    #[test]
    fn grad_accumulates() {
        let mut t = Tensor::<f64>::zeros(&[2]);
        t.set_requires_grad(true);
        t.accumulate_grad(&[1.0, 2.0]).unwrap();
        t.accumulate_grad(&[1.0, 2.0]).unwrap();
        assert_eq!(t.grad().unwrap(), &[2.0, 4.0]);
        t.zero_grad();
        assert!(t.grad().is_none());
        assert!(t.accumulate_grad(&[1.0]).is_err());
    }
}
