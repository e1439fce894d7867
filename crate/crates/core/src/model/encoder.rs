use rand::Rng;

use super::params::{FeedForwardIdx, LinearIdx, ModelParams, NormIdx};
use super::{Layout, ModelConfig};
use crate::augment::{draw_masks, AugmentConfig};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::real::Real;
use crate::rng::SeededRng;
use crate::tensor::{dropout_mask, Tensor};

/// Randomness used only in training mode.
pub struct TrainingNoise<'a> {
    pub rng: &'a mut SeededRng,
    pub augment: AugmentConfig,
}

/// Parameters recorded as leaves of one graph.
pub struct BoundParams {
    vars: Vec<Var>,
    layout: Layout,
    config: ModelConfig,
}

impl BoundParams {
    pub fn bind<T: Real>(g: &mut Graph<T>, params: &ModelParams<T>, trainable: bool) -> Self {
        let vars = params
            .tensors()
            .iter()
            .map(|t| if trainable { g.variable(t) } else { g.constant(t) })
            .collect();
        Self {
            vars,
            layout: params.layout(),
            config: params.config.clone(),
        }
    }

    /// Leaf of every parameter, in [`ModelParams::tensors`] order.
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    fn v(&self, i: usize) -> Var {
        self.vars[i]
    }
}

pub struct Encoded {
    /// `T′_padded × (V+1)` log-probabilities.
    pub log_probs: Var,
    /// Number of rows that correspond to real input frames.
    pub out_len: usize,
}

/// Sinusoidal table: sin at even columns, cos at odd columns.
pub fn positional_encoding<T: Real>(t_len: usize, d_model: usize) -> Result<Tensor<T>> {
    if d_model % 2 != 0 {
        return Err(Error::config(format!(
            "positional encoding needs an even width, got {d_model}"
        )));
    }
    let mut data = vec![T::zero(); t_len * d_model];
    for pos in 0..t_len {
        for i in 0..d_model / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
            data[pos * d_model + 2 * i] = T::of(angle.sin());
            data[pos * d_model + 2 * i + 1] = T::of(angle.cos());
        }
    }
    Tensor::new(vec![t_len, d_model], data)
}

fn linear<T: Real>(g: &mut Graph<T>, p: &BoundParams, x: Var, l: LinearIdx) -> Result<Var> {
    let y = g.matmul(x, p.v(l.weight))?;
    g.add_row(y, p.v(l.bias))
}

fn norm<T: Real>(g: &mut Graph<T>, p: &BoundParams, x: Var, n: NormIdx) -> Result<Var> {
    g.layer_norm(x, p.v(n.gain), p.v(n.bias), T::of(p.config.norm_eps))
}

fn dropout<T: Real>(g: &mut Graph<T>, x: Var, rate: f64, noise: &mut Option<&mut TrainingNoise>) -> Result<Var> {
    match noise {
        Some(n) if rate > 0.0 => {
            let mask = dropout_mask(g.value(x).len(), rate, n.rng)?;
            g.mul_const(x, mask)
        }
        _ => Ok(x),
    }
}

/// Stride-2 kernel-3 convolution with zero padding, then swish; rows past
/// the valid length are zeroed so padding never leaks into later stages.
fn conv_stage<T: Real>(g: &mut Graph<T>, p: &BoundParams, x: Var, l: LinearIdx, valid: usize) -> Result<(Var, usize)> {
    let w = g.window(x, 3, 2, 1)?;
    let y = linear(g, p, w, l)?;
    let y = g.swish(y);
    let valid = valid.div_ceil(2);
    Ok((g.mask_rows(y, valid), valid))
}

fn subsample_graph<T: Real>(g: &mut Graph<T>, p: &BoundParams, x: Var, valid: usize) -> Result<(Var, usize)> {
    let x = g.mask_rows(x, valid);
    let (h, valid) = conv_stage(g, p, x, p.layout.conv1, valid)?;
    let (h, valid) = conv_stage(g, p, h, p.layout.conv2, valid)?;
    let h = linear(g, p, h, p.layout.proj)?;
    Ok((g.mask_rows(h, valid), valid))
}

fn feed_forward<T: Real>(
    g: &mut Graph<T>,
    p: &BoundParams,
    x: Var,
    f: FeedForwardIdx,
    noise: &mut Option<&mut TrainingNoise>,
) -> Result<Var> {
    let h = norm(g, p, x, f.norm)?;
    let h = linear(g, p, h, f.up)?;
    let h = g.swish(h);
    let h = dropout(g, h, p.config.dropout, noise)?;
    let h = linear(g, p, h, f.down)?;
    dropout(g, h, p.config.dropout, noise)
}

fn block_graph<T: Real>(
    g: &mut Graph<T>,
    p: &BoundParams,
    x: Var,
    index: usize,
    valid: usize,
    noise: &mut Option<&mut TrainingNoise>,
) -> Result<Var> {
    let b = p.layout.blocks[index];
    let cfg = &p.config;

    let h = feed_forward(g, p, x, b.ff1, noise)?;
    let h = g.scale(h, T::of(0.5));
    let x = g.add(x, h)?;

    let h = norm(g, p, x, b.attn.norm)?;
    let q = linear(g, p, h, b.attn.q)?;
    let k = linear(g, p, h, b.attn.k)?;
    let v = linear(g, p, h, b.attn.v)?;
    let dk = cfg.head_dim();
    let scale = T::of(1.0 / (dk as f64).sqrt());
    let mut heads = Vec::with_capacity(cfg.n_heads);
    for head in 0..cfg.n_heads {
        let qh = g.slice_cols(q, head * dk, dk)?;
        let kh = g.slice_cols(k, head * dk, dk)?;
        let vh = g.slice_cols(v, head * dk, dk)?;
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let scores = g.scale(scores, scale);
        let attn = g.softmax(scores, valid)?;
        heads.push(g.matmul(attn, vh)?);
    }
    let h = g.concat_cols(&heads)?;
    let h = linear(g, p, h, b.attn.out)?;
    let h = dropout(g, h, cfg.dropout, noise)?;
    let x = g.add(x, h)?;

    let h = norm(g, p, x, b.conv.norm)?;
    let h = linear(g, p, h, b.conv.pointwise_in)?;
    let h = g.glu(h)?;
    let h = g.mask_rows(h, valid);
    let h = g.conv1d_depthwise(h, p.v(b.conv.depthwise.weight))?;
    let h = g.add_row(h, p.v(b.conv.depthwise.bias))?;
    let h = norm(g, p, h, b.conv.inner_norm)?;
    let h = g.swish(h);
    let h = linear(g, p, h, b.conv.pointwise_out)?;
    let h = dropout(g, h, cfg.dropout, noise)?;
    let x = g.add(x, h)?;

    let h = feed_forward(g, p, x, b.ff2, noise)?;
    let h = g.scale(h, T::of(0.5));
    let x = g.add(x, h)?;
    norm(g, p, x, b.norm)
}

/// Full encoder on one (possibly padded) `T × F` input whose first
/// `valid` rows are real frames. Training mode is selected by `noise`.
pub fn encode<T: Real>(
    g: &mut Graph<T>,
    p: &BoundParams,
    x: Var,
    valid: usize,
    mut noise: Option<&mut TrainingNoise>,
) -> Result<Encoded> {
    let cfg = &p.config;
    let (t_len, f) = g.dims(x);
    if f != cfg.input_dim {
        return Err(Error::shape(format!(
            "model expects {} features, got {f}",
            cfg.input_dim
        )));
    }
    if valid == 0 || valid > t_len {
        return Err(Error::shape(format!("valid length {valid} for {t_len} frames")));
    }
    if g.value(x).iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("model input contains non-finite values"));
    }
    let (h, out_len) = subsample_graph(g, p, x, valid)?;
    let (t_out, d) = g.dims(h);
    let pe = g.constant(&positional_encoding(t_out, d)?);
    let mut h = g.add(h, pe)?;
    h = dropout(g, h, cfg.dropout, &mut noise)?;
    if let Some(n) = noise.as_deref_mut() {
        if !n.augment.is_identity() {
            let (time, feat) = draw_masks(&n.augment, out_len, d, n.rng);
            let mut keep = vec![T::one(); t_out * d];
            for band in &time {
                keep[band.start * d..(band.start + band.width) * d].fill(T::zero());
            }
            for band in &feat {
                for row in keep[..out_len * d].chunks_mut(d) {
                    row[band.start..band.start + band.width].fill(T::zero());
                }
            }
            h = g.mul_const(h, keep)?;
        }
    }
    for i in 0..cfg.n_blocks {
        if let Some(n) = noise.as_deref_mut() {
            let skip = n.rng.random::<f64>() < cfg.layer_drop;
            if skip {
                continue;
            }
        }
        h = block_graph(g, p, h, i, out_len, &mut noise)?;
    }
    let logits = linear(g, p, h, p.layout.classifier)?;
    Ok(Encoded {
        log_probs: g.log_softmax(logits),
        out_len,
    })
}

fn eval_graph<T: Real>(params: &ModelParams<T>) -> (Graph<T>, BoundParams) {
    let mut g = Graph::new();
    let p = BoundParams::bind(&mut g, params, false);
    (g, p)
}

/// Subsampler and projection: `T × F` → `⌈T/4⌉ × d_model`.
pub fn subsample<T: Real>(x: &Tensor<T>, params: &ModelParams<T>) -> Result<Tensor<T>> {
    let (mut g, p) = eval_graph(params);
    let xv = g.constant(x);
    let (h, _) = subsample_graph(&mut g, &p, xv, x.rows())?;
    Ok(g.tensor(h))
}

/// One Conformer block in eval mode over `x` whose first `valid` rows are real.
pub fn conformer_block<T: Real>(
    x: &Tensor<T>,
    params: &ModelParams<T>,
    index: usize,
    valid: usize,
) -> Result<Tensor<T>> {
    if index >= params.config.n_blocks {
        return Err(Error::shape(format!("block {index} of {}", params.config.n_blocks)));
    }
    if valid == 0 || valid > x.rows() || x.cols() != params.config.d_model {
        return Err(Error::shape(format!(
            "block input {:?} with {valid} valid rows",
            x.shape()
        )));
    }
    let (mut g, p) = eval_graph(params);
    let xv = g.constant(x);
    let y = block_graph(&mut g, &p, xv, index, valid, &mut None)?;
    Ok(g.tensor(y))
}

/// Per-frame log-probabilities `⌈T/4⌉ × (V+1)`; training mode when `noise` is given.
pub fn forward<T: Real>(
    x: &Tensor<T>,
    params: &ModelParams<T>,
    noise: Option<&mut TrainingNoise>,
) -> Result<Tensor<T>> {
    let (mut g, p) = eval_graph(params);
    let xv = g.constant(x);
    let out = encode(&mut g, &p, xv, x.rows(), noise)?;
    Ok(g.tensor(out.log_probs))
}
