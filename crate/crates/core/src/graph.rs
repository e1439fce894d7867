//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Calling
//! [`Graph::backward`] on a scalar node walks the tape in reverse and
//! returns the gradient of that scalar with respect to every node that
//! depends on a gradient-requiring leaf. The graph is not consumed, so
//! `backward` may be called more than once; each call returns fresh
//! gradients, and accumulation into parameter buffers is explicit via
//! [`Tensor::accumulate_grad`].

use crate::error::{Error, Result};
use crate::kernels;
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    MulConst(Var, Vec<T>),
    MaskRows(Var, usize),
    Swish(Var),
    Glu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        mean: Vec<T>,
        rstd: Vec<T>,
    },
    Softmax(Var, usize),
    LogSoftmax(Var),
    DepthwiseConv(Var, Var),
    Window {
        x: Var,
        width: usize,
        stride: usize,
        pad: usize,
    },
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    Sum(Var),
    /// Scalar output whose gradient w.r.t. `x` is fixed at construction.
    Fixed(Var, Vec<T>),
}

struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn rc(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        0 => (1, 1),
        1 => (1, shape[0]),
        _ => {
            let c = *shape.last().unwrap();
            (shape[..shape.len() - 1].iter().product(), c)
        }
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Leaf copying `t`; differentiable iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.requires_grad())
    }

    /// Differentiable leaf regardless of the tensor's flag.
    pub fn variable(&mut self, t: &Tensor<T>) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, true)
    }

    pub fn constant(&mut self, t: &Tensor<T>) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        rc(&self.nodes[v.0].shape)
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node shape is consistent")
    }

    fn matrix(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(Error::shape(format!("{what} expects a matrix, got {s:?}")));
        }
        Ok((s[0], s[1]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix(a, "matmul")?;
        let (k2, n) = self.matrix(b, "matmul")?;
        if k != k2 {
            return Err(Error::shape(format!("matmul inner dimensions {k} vs {k2}")));
        }
        let out = kernels::matmul(self.value(a), self.value(b), m, k, n);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), ng))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.matrix(a, "transpose")?;
        let out = kernels::transpose(self.value(a), m, n);
        let ng = self.ng(a);
        Ok(self.push(vec![n, m], out, Op::Transpose(a), ng))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add(a, b), ng))
    }

    /// Adds a length-C vector to every row of an R×C matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, c) = self.dims(x);
        if self.value(bias).len() != c {
            return Err(Error::shape(format!(
                "row bias of length {} for {c} columns",
                self.value(bias).len()
            )));
        }
        let b = self.value(bias);
        let out = self.value(x).iter().enumerate().map(|(i, &v)| v + b[i % c]).collect();
        let ng = self.ng(x) || self.ng(bias);
        Ok(self.push(self.shape(x).to_vec(), out, Op::AddRow(x, bias), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).iter().map(|&x| x * s).collect();
        let ng = self.ng(a);
        self.push(self.shape(a).to_vec(), out, Op::Scale(a, s), ng)
    }

    /// Elementwise product with a constant (dropout and masking).
    pub fn mul_const(&mut self, a: Var, c: Vec<T>) -> Result<Var> {
        if c.len() != self.value(a).len() {
            return Err(Error::shape("constant multiplier length mismatch"));
        }
        let out = self.value(a).iter().zip(&c).map(|(&x, &y)| x * y).collect();
        let ng = self.ng(a);
        Ok(self.push(self.shape(a).to_vec(), out, Op::MulConst(a, c), ng))
    }

    /// Zeroes every row at index ≥ `valid`.
    pub fn mask_rows(&mut self, a: Var, valid: usize) -> Var {
        let (r, c) = self.dims(a);
        if valid >= r {
            return a;
        }
        let mut out = self.value(a).to_vec();
        out[valid * c..].iter_mut().for_each(|v| *v = T::zero());
        let ng = self.ng(a);
        self.push(self.shape(a).to_vec(), out, Op::MaskRows(a, valid), ng)
    }

    pub fn swish(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| kernels::swish(x)).collect();
        let ng = self.ng(a);
        self.push(self.shape(a).to_vec(), out, Op::Swish(a), ng)
    }

    pub fn glu(&mut self, a: Var) -> Result<Var> {
        let (r, c2) = self.dims(a);
        if c2 % 2 != 0 {
            return Err(Error::shape(format!("glu needs an even last axis, got {c2}")));
        }
        let out = kernels::glu(self.value(a), r, c2);
        let mut shape = self.shape(a).to_vec();
        *shape.last_mut().unwrap() = c2 / 2;
        let ng = self.ng(a);
        Ok(self.push(shape, out, Op::Glu(a), ng))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let (r, c) = self.dims(x);
        if self.value(gain).len() != c || self.value(bias).len() != c {
            return Err(Error::shape(format!("layer norm affine params must have length {c}")));
        }
        let (out, mean, rstd) = kernels::layer_norm(self.value(x), self.value(gain), self.value(bias), r, c, eps);
        let ng = self.ng(x) || self.ng(gain) || self.ng(bias);
        Ok(self.push(
            self.shape(x).to_vec(),
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                mean,
                rstd,
            },
            ng,
        ))
    }

    /// Row softmax over the first `valid` columns; later columns get zero mass.
    pub fn softmax(&mut self, x: Var, valid: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        if valid == 0 || valid > c {
            return Err(Error::shape(format!("softmax over {valid} of {c} columns")));
        }
        let out = kernels::softmax_rows(self.value(x), r, c, valid);
        let ng = self.ng(x);
        Ok(self.push(self.shape(x).to_vec(), out, Op::Softmax(x, valid), ng))
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let out = kernels::log_softmax_rows(self.value(x), r, c);
        let ng = self.ng(x);
        self.push(self.shape(x).to_vec(), out, Op::LogSoftmax(x), ng)
    }

    pub fn conv1d_depthwise(&mut self, x: Var, kernel: Var) -> Result<Var> {
        let (t_len, c) = self.matrix(x, "depthwise conv")?;
        let (kc, w) = self.matrix(kernel, "depthwise kernel")?;
        if w % 2 == 0 {
            return Err(Error::config(format!("depthwise kernel width must be odd, got {w}")));
        }
        if kc != c {
            return Err(Error::shape(format!("kernel has {kc} channels, input has {c}")));
        }
        let out = kernels::conv1d_depthwise(self.value(x), self.value(kernel), t_len, c, w);
        let ng = self.ng(x) || self.ng(kernel);
        Ok(self.push(vec![t_len, c], out, Op::DepthwiseConv(x, kernel), ng))
    }

    /// Gathers strided temporal windows: output row `j` concatenates input
    /// rows `j·stride − pad .. j·stride − pad + width`, zero outside the input.
    pub fn window(&mut self, x: Var, width: usize, stride: usize, pad: usize) -> Result<Var> {
        let (t_in, c) = self.matrix(x, "window")?;
        if stride == 0 || width == 0 || t_in + 2 * pad < width {
            return Err(Error::shape(format!(
                "window width {width} stride {stride} pad {pad} over {t_in} rows"
            )));
        }
        let t_out = (t_in + 2 * pad - width) / stride + 1;
        let src = self.value(x);
        let mut out = vec![T::zero(); t_out * width * c];
        for j in 0..t_out {
            for k in 0..width {
                let s = (j * stride + k) as isize - pad as isize;
                if s < 0 || s >= t_in as isize {
                    continue;
                }
                let s = s as usize;
                out[(j * width + k) * c..(j * width + k + 1) * c].copy_from_slice(&src[s * c..(s + 1) * c]);
            }
        }
        let ng = self.ng(x);
        Ok(self.push(vec![t_out, width * c], out, Op::Window { x, width, stride, pad }, ng))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.matrix(x, "slice_cols")?;
        if start + len > c {
            return Err(Error::shape(format!("columns {start}..{} out of {c}", start + len)));
        }
        let src = self.value(x);
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&src[i * c + start..i * c + start + len]);
        }
        let ng = self.ng(x);
        Ok(self.push(vec![r, len], out, Op::SliceCols(x, start), ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::shape("concat of nothing"))?;
        let (r, _) = self.matrix(first, "concat_cols")?;
        let mut total = 0;
        for &p in parts {
            let (pr, pc) = self.matrix(p, "concat_cols")?;
            if pr != r {
                return Err(Error::shape(format!("concat rows {pr} vs {r}")));
            }
            total += pc;
        }
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                let pc = self.shape(p)[1];
                out.extend_from_slice(&self.value(p)[i * pc..(i + 1) * pc]);
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(vec![r, total], out, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().copied().sum();
        let ng = self.ng(x);
        self.push(vec![], vec![s], Op::Sum(x), ng)
    }

    /// Scalar node with value `value` and a precomputed gradient w.r.t. `x`.
    /// Used for losses whose derivative is evaluated analytically (CTC).
    pub fn fixed_grad_scalar(&mut self, x: Var, value: T, grad: Vec<T>) -> Result<Var> {
        if grad.len() != self.value(x).len() {
            return Err(Error::shape("fixed gradient length mismatch"));
        }
        let ng = self.ng(x);
        Ok(self.push(vec![], vec![value], Op::Fixed(x, grad), ng))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let node = &self.nodes[loss.0];
        if node.value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                node.shape
            )));
        }
        if !node.value[0].is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.backprop_node(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, id: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[id];
        let mut acc = |v: Var, delta: Vec<T>| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(buf) => buf.iter_mut().zip(delta).for_each(|(b, d)| *b += d),
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).1;
                if self.ng(*a) {
                    acc(*a, kernels::matmul_nt(g, self.value(*b), m, n, k));
                }
                if self.ng(*b) {
                    acc(*b, kernels::matmul_tn(self.value(*a), g, m, k, n));
                }
            }
            Op::Transpose(a) => {
                let (m, n) = self.dims(*a);
                acc(*a, kernels::transpose(g, n, m));
            }
            Op::Add(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.to_vec());
            }
            Op::AddRow(x, b) => {
                acc(*x, g.to_vec());
                if self.ng(*b) {
                    let c = self.value(*b).len();
                    let mut db = vec![T::zero(); c];
                    for (i, &v) in g.iter().enumerate() {
                        db[i % c] += v;
                    }
                    acc(*b, db);
                }
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    acc(*a, g.iter().zip(self.value(*b)).map(|(&x, &y)| x * y).collect());
                }
                if self.ng(*b) {
                    acc(*b, g.iter().zip(self.value(*a)).map(|(&x, &y)| x * y).collect());
                }
            }
            Op::Scale(a, s) => acc(*a, g.iter().map(|&x| x * *s).collect()),
            Op::MulConst(a, c) => acc(*a, g.iter().zip(c).map(|(&x, &y)| x * y).collect()),
            Op::MaskRows(a, valid) => {
                let c = self.dims(*a).1;
                let mut d = g.to_vec();
                d[valid * c..].iter_mut().for_each(|v| *v = T::zero());
                acc(*a, d);
            }
            Op::Swish(a) => {
                let d = g
                    .iter()
                    .zip(self.value(*a))
                    .map(|(&gv, &x)| {
                        let s = kernels::sigmoid(x);
                        gv * s * (T::one() + x * (T::one() - s))
                    })
                    .collect();
                acc(*a, d);
            }
            Op::Glu(a) => {
                let (r, c2) = self.dims(*a);
                let c = c2 / 2;
                let x = self.value(*a);
                let mut d = vec![T::zero(); r * c2];
                for i in 0..r {
                    for j in 0..c {
                        let lhs = x[i * c2 + j];
                        let s = kernels::sigmoid(x[i * c2 + c + j]);
                        let gv = g[i * c + j];
                        d[i * c2 + j] = gv * s;
                        d[i * c2 + c + j] = gv * lhs * s * (T::one() - s);
                    }
                }
                acc(*a, d);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                mean,
                rstd,
            } => {
                let (r, c) = self.dims(*x);
                let xv = self.value(*x);
                let gn = self.value(*gain);
                let n = T::of(c as f64);
                let mut dx = vec![T::zero(); r * c];
                let mut dg = vec![T::zero(); c];
                let mut dbias = vec![T::zero(); c];
                let mut xhat = vec![T::zero(); c];
                let mut dxhat = vec![T::zero(); c];
                for i in 0..r {
                    let mut s1 = T::zero();
                    let mut s2 = T::zero();
                    for j in 0..c {
                        xhat[j] = (xv[i * c + j] - mean[i]) * rstd[i];
                        let gv = g[i * c + j];
                        dg[j] += gv * xhat[j];
                        dbias[j] += gv;
                        dxhat[j] = gv * gn[j];
                        s1 += dxhat[j];
                        s2 += dxhat[j] * xhat[j];
                    }
                    for j in 0..c {
                        dx[i * c + j] = rstd[i] / n * (n * dxhat[j] - s1 - xhat[j] * s2);
                    }
                }
                acc(*x, dx);
                acc(*gain, dg);
                acc(*bias, dbias);
            }
            Op::Softmax(x, valid) => {
                let (r, c) = self.dims(*x);
                let y = &node.value;
                let mut d = vec![T::zero(); r * c];
                for i in 0..r {
                    let dot: T = (0..*valid).map(|j| g[i * c + j] * y[i * c + j]).sum();
                    for j in 0..*valid {
                        d[i * c + j] = y[i * c + j] * (g[i * c + j] - dot);
                    }
                }
                acc(*x, d);
            }
            Op::LogSoftmax(x) => {
                let (r, c) = self.dims(*x);
                let y = &node.value;
                let mut d = vec![T::zero(); r * c];
                for i in 0..r {
                    let gs: T = g[i * c..(i + 1) * c].iter().copied().sum();
                    for j in 0..c {
                        d[i * c + j] = g[i * c + j] - y[i * c + j].exp() * gs;
                    }
                }
                acc(*x, d);
            }
            Op::DepthwiseConv(x, k) => {
                let (t_len, c) = self.dims(*x);
                let w = self.dims(*k).1;
                let half = (w / 2) as isize;
                let xv = self.value(*x);
                let kv = self.value(*k);
                let mut dx = vec![T::zero(); t_len * c];
                let mut dk = vec![T::zero(); c * w];
                for t in 0..t_len {
                    for j in 0..w {
                        let s = t as isize + j as isize - half;
                        if s < 0 || s >= t_len as isize {
                            continue;
                        }
                        let s = s as usize;
                        for ch in 0..c {
                            let gv = g[t * c + ch];
                            dx[s * c + ch] += gv * kv[ch * w + j];
                            dk[ch * w + j] += gv * xv[s * c + ch];
                        }
                    }
                }
                acc(*x, dx);
                acc(*k, dk);
            }
            Op::Window { x, width, stride, pad } => {
                let (t_in, c) = self.dims(*x);
                let t_out = node.shape[0];
                let mut dx = vec![T::zero(); t_in * c];
                for j in 0..t_out {
                    for k in 0..*width {
                        let s = (j * stride + k) as isize - *pad as isize;
                        if s < 0 || s >= t_in as isize {
                            continue;
                        }
                        let s = s as usize;
                        let src = &g[(j * width + k) * c..(j * width + k + 1) * c];
                        for (d, &v) in dx[s * c..(s + 1) * c].iter_mut().zip(src) {
                            *d += v;
                        }
                    }
                }
                acc(*x, dx);
            }
            Op::SliceCols(x, start) => {
                let (r, c) = self.dims(*x);
                let len = node.shape[1];
                let mut dx = vec![T::zero(); r * c];
                for i in 0..r {
                    dx[i * c + start..i * c + start + len].copy_from_slice(&g[i * len..(i + 1) * len]);
                }
                acc(*x, dx);
            }
            Op::ConcatCols(parts) => {
                let (r, total) = (node.shape[0], node.shape[1]);
                let mut off = 0;
                for &p in parts {
                    let pc = self.shape(p)[1];
                    if self.ng(p) {
                        let mut d = Vec::with_capacity(r * pc);
                        for i in 0..r {
                            d.extend_from_slice(&g[i * total + off..i * total + off + pc]);
                        }
                        acc(p, d);
                    }
                    off += pc;
                }
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                acc(*x, vec![g[0]; n]);
            }
            Op::Fixed(x, local) => acc(*x, local.iter().map(|&v| v * g[0]).collect()),
        }
    }
}

pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss w.r.t. `v`, or `None` when `v` does not
    /// influence the loss through any differentiable path.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn param(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut t = Tensor::uniform(shape, 1.0, &mut rng::from_seed(seed));
        t.set_requires_grad(true);
        t
    }

    /// Central finite differences of `f` around `x`.
    fn numeric_grad(x: &Tensor<f64>, f: &dyn Fn(&Tensor<f64>) -> f64) -> Vec<f64> {
        let h = 1e-5;
        (0..x.len())
            .map(|i| {
                let mut p = x.clone();
                p.data_mut()[i] += h;
                let mut m = x.clone();
                m.data_mut()[i] -= h;
                (f(&p) - f(&m)) / (2.0 * h)
            })
            .collect()
    }

    fn assert_close(analytic: &[f64], numeric: &[f64], tol: f64) {
        for (a, n) in analytic.iter().zip(numeric) {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
            assert!(rel <= tol, "analytic {a} numeric {n} rel {rel}");
        }
    }

    /// Checks d(sum(w ⊙ f(x)))/dx for a unary graph builder `f`.
    fn check_unary(x: Tensor<f64>, build: impl Fn(&mut Graph<f64>, Var) -> Var) {
        let w = Tensor::<f64>::uniform(&[4 * x.len()], 1.0, &mut rng::from_seed(99));
        let eval = |xt: &Tensor<f64>| -> (f64, Option<Vec<f64>>) {
            let mut g = Graph::new();
            let xv = g.leaf(xt);
            let y = build(&mut g, xv);
            let wv = g.constant(&Tensor::new(g.shape(y).to_vec(), w.data()[..g.value(y).len()].to_vec()).unwrap());
            let p = g.mul(y, wv).unwrap();
            let l = g.sum(p);
            let grads = g.backward(l).unwrap();
            (g.value(l)[0], grads.get(xv).map(|s| s.to_vec()))
        };
        let (_, analytic) = eval(&x);
        let numeric = numeric_grad(&x, &|t| eval(t).0);
        assert_close(&analytic.unwrap(), &numeric, 1e-4);
    }

    #[test]
    fn sum_and_square() {
        let x = param(&[3, 2], 1);
        let mut g = Graph::new();
        let xv = g.leaf(&x);
        let s = g.sum(xv);
        assert_eq!(g.backward(s).unwrap().get(xv).unwrap(), &[1.0; 6]);

        let sq = g.mul(xv, xv).unwrap();
        let l = g.sum(sq);
        let grad = g.backward(l).unwrap();
        for (gv, xv) in grad.get(xv).unwrap().iter().zip(x.data()) {
            assert_eq!(*gv, 2.0 * xv);
        }
    }

    #[test]
    fn matmul_grad_is_ones_bt() {
        let a = param(&[5, 4], 2);
        let b = param(&[4, 3], 3);
        let mut g = Graph::new();
        let (av, bv) = (g.leaf(&a), g.leaf(&b));
        let c = g.matmul(av, bv).unwrap();
        let l = g.sum(c);
        let grads = g.backward(l).unwrap();
        let expected = crate::tensor::matmul(
            &Tensor::full(&[5, 3], 1.0),
            &Tensor::new(vec![3, 4], kernels::transpose(b.data(), 4, 3)).unwrap(),
        )
        .unwrap();
        assert_close(grads.get(av).unwrap(), expected.data(), 1e-12);
        let numeric = numeric_grad(&a, &|t| crate::tensor::matmul(t, &b).unwrap().data().iter().sum());
        assert_close(grads.get(av).unwrap(), &numeric, 1e-4);
    }

    #[test]
    fn non_scalar_loss_is_usage_error() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(&param(&[2, 2], 4));
        assert!(matches!(g.backward(x), Err(Error::Usage(_))));
    }

    #[test]
    fn unary_ops_match_finite_differences() {
        check_unary(param(&[3, 4], 5), |g, x| g.swish(x));
        check_unary(param(&[3, 4], 6), |g, x| g.glu(x).unwrap());
        check_unary(param(&[3, 4], 7), |g, x| g.softmax(x, 3).unwrap());
        check_unary(param(&[3, 4], 8), |g, x| g.log_softmax(x));
        check_unary(param(&[3, 4], 9), |g, x| g.transpose(x).unwrap());
        check_unary(param(&[5, 2], 10), |g, x| g.window(x, 3, 2, 1).unwrap());
        check_unary(param(&[3, 4], 11), |g, x| g.slice_cols(x, 1, 2).unwrap());
        check_unary(param(&[4, 3], 12), |g, x| g.mask_rows(x, 2));
        check_unary(param(&[3, 4], 13), |g, x| {
            let a = g.slice_cols(x, 0, 2).unwrap();
            let b = g.slice_cols(x, 1, 3).unwrap();
            g.concat_cols(&[b, a]).unwrap()
        });
    }

    #[test]
    fn layer_norm_and_conv_parameter_grads() {
        let x = param(&[4, 5], 14);
        let gain = param(&[5], 15);
        let bias = param(&[5], 16);
        let kernel = param(&[5, 3], 17);
        let build = |xt: &Tensor<f64>, gt: &Tensor<f64>, bt: &Tensor<f64>, kt: &Tensor<f64>| {
            let mut g = Graph::new();
            let (xv, gv, bv, kv) = (g.leaf(xt), g.leaf(gt), g.leaf(bt), g.leaf(kt));
            let n = g.layer_norm(xv, gv, bv, 1e-5).unwrap();
            let c = g.conv1d_depthwise(n, kv).unwrap();
            let s = g.swish(c);
            let l = g.sum(s);
            (g, [xv, gv, bv, kv], l)
        };
        let (g, vars, l) = build(&x, &gain, &bias, &kernel);
        let grads = g.backward(l).unwrap();
        let num_x = numeric_grad(&x, &|t| {
            let (g, _, l) = build(t, &gain, &bias, &kernel);
            g.value(l)[0]
        });
        let num_g = numeric_grad(&gain, &|t| {
            let (g, _, l) = build(&x, t, &bias, &kernel);
            g.value(l)[0]
        });
        let num_b = numeric_grad(&bias, &|t| {
            let (g, _, l) = build(&x, &gain, t, &kernel);
            g.value(l)[0]
        });
        let num_k = numeric_grad(&kernel, &|t| {
            let (g, _, l) = build(&x, &gain, &bias, t);
            g.value(l)[0]
        });
        assert_close(grads.get(vars[0]).unwrap(), &num_x, 1e-4);
        assert_close(grads.get(vars[1]).unwrap(), &num_g, 1e-4);
        assert_close(grads.get(vars[2]).unwrap(), &num_b, 1e-4);
        assert_close(grads.get(vars[3]).unwrap(), &num_k, 1e-4);
    }

    #[test]
    fn composite_matmul_swish_layer_norm() {
        let a = param(&[4, 3], 20);
        let w = param(&[3, 6], 21);
        let ones = Tensor::<f64>::full(&[6], 1.0);
        let zeros = Tensor::<f64>::zeros(&[6]);
        let f = |wt: &Tensor<f64>| -> (Graph<f64>, Var, Var) {
            let mut g = Graph::new();
            let av = g.leaf(&a);
            let wv = g.leaf(wt);
            let gv = g.constant(&ones);
            let bv = g.constant(&zeros);
            let h = g.matmul(av, wv).unwrap();
            let h = g.swish(h);
            let h = g.layer_norm(h, gv, bv, 1e-5).unwrap();
            let sq = g.mul(h, h).unwrap();
            let h = g.add(sq, h).unwrap();
            let l = g.sum(h);
            (g, wv, l)
        };
        let (g, wv, l) = f(&w);
        let analytic = g.backward(l).unwrap().get(wv).unwrap().to_vec();
        let numeric = numeric_grad(&w, &|t| {
            let (g, _, l) = f(t);
            g.value(l)[0]
        });
        assert_close(&analytic, &numeric, 1e-4);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::<f64>::new();
        let c = g.constant(&Tensor::full(&[2], 1.0));
        let p = g.leaf(&param(&[2], 30));
        let s = g.add(c, p).unwrap();
        let l = g.sum(s);
        let grads = g.backward(l).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(p).unwrap(), &[1.0, 1.0]);
    }
}
