//! Slice-level numeric kernels shared by the tensor API and the autodiff
//! graph. All matrices are row-major.

use crate::real::Real;

/// `a[m×k] · b[k×n]`.
pub fn matmul<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a[m×n] · b[k×n]ᵀ` → m×k.
pub fn matmul_nt<T: Real>(a: &[T], b: &[T], m: usize, n: usize, k: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * k];
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for j in 0..k {
            let brow = &b[j * n..(j + 1) * n];
            let mut s = T::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                s += x * y;
            }
            out[i * k + j] = s;
        }
    }
    out
}

/// `a[m×k]ᵀ · b[m×n]` → k×n.
pub fn matmul_tn<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); k * n];
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let row = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

pub fn transpose<T: Real>(a: &[T], m: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

/// Depthwise "same" convolution: `out[t,c] = Σ_j w[c,j] · x[t + j − W/2, c]`,
/// zero outside `[0, T)`.
pub fn conv1d_depthwise<T: Real>(x: &[T], w: &[T], t_len: usize, c: usize, width: usize) -> Vec<T> {
    let half = (width / 2) as isize;
    let mut out = vec![T::zero(); t_len * c];
    for t in 0..t_len {
        for j in 0..width {
            let src = t as isize + j as isize - half;
            if src < 0 || src >= t_len as isize {
                continue;
            }
            let src = src as usize;
            for ch in 0..c {
                out[t * c + ch] += w[ch * width + j] * x[src * c + ch];
            }
        }
    }
    out
}

/// Row statistics used by layer normalisation: per-row mean and
/// reciprocal standard deviation.
pub fn row_moments<T: Real>(x: &[T], rows: usize, c: usize, eps: T) -> (Vec<T>, Vec<T>) {
    let n = T::of(c as f64);
    let mut mean = Vec::with_capacity(rows);
    let mut rstd = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &x[r * c..(r + 1) * c];
        let mu = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / n;
        mean.push(mu);
        rstd.push(T::one() / (var + eps).sqrt());
    }
    (mean, rstd)
}

pub fn layer_norm<T: Real>(x: &[T], gain: &[T], bias: &[T], rows: usize, c: usize, eps: T) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (mean, rstd) = row_moments(x, rows, c, eps);
    let mut out = vec![T::zero(); rows * c];
    for r in 0..rows {
        for j in 0..c {
            let xhat = (x[r * c + j] - mean[r]) * rstd[r];
            out[r * c + j] = xhat * gain[j] + bias[j];
        }
    }
    (out, mean, rstd)
}

/// Row softmax restricted to the first `valid` columns; the remaining
/// columns get probability exactly zero.
pub fn softmax_rows<T: Real>(x: &[T], rows: usize, c: usize, valid: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * c];
    for r in 0..rows {
        let row = &x[r * c..r * c + valid];
        let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for (j, &v) in row.iter().enumerate() {
            let e = (v - mx).exp();
            out[r * c + j] = e;
            z += e;
        }
        for v in &mut out[r * c..r * c + valid] {
            *v = *v / z;
        }
    }
    out
}

pub fn log_softmax_rows<T: Real>(x: &[T], rows: usize, c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * c];
    for r in 0..rows {
        let row = &x[r * c..(r + 1) * c];
        let lse = log_sum_exp(row);
        for (o, &v) in out[r * c..(r + 1) * c].iter_mut().zip(row) {
            *o = v - lse;
        }
    }
    out
}

pub fn log_sum_exp<T: Real>(xs: &[T]) -> T {
    let mx = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if mx == T::neg_infinity() {
        return mx;
    }
    mx + xs.iter().map(|&v| (v - mx).exp()).sum::<T>().ln()
}

#[inline]
pub fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn swish<T: Real>(v: T) -> T {
    v * sigmoid(v)
}

/// GLU over the last axis: first half gated by the sigmoid of the second.
pub fn glu<T: Real>(x: &[T], rows: usize, c2: usize) -> Vec<T> {
    let c = c2 / 2;
    let mut out = vec![T::zero(); rows * c];
    for r in 0..rows {
        for j in 0..c {
            out[r * c + j] = x[r * c2 + j] * sigmoid(x[r * c2 + c + j]);
        }
    }
    out
}
