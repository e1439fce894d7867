use std::collections::BTreeMap;
use std::path::Path;

use super::config::ModelConfig;
use crate::checkpoint::Container;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    /// Uniform in ±1/√fan_in.
    FanIn(usize),
    Zeros,
    Ones,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct NormIdx {
    pub gain: usize,
    pub bias: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LinearIdx {
    pub weight: usize,
    pub bias: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct FeedForwardIdx {
    pub norm: NormIdx,
    pub up: LinearIdx,
    pub down: LinearIdx,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct AttentionIdx {
    pub norm: NormIdx,
    pub q: LinearIdx,
    pub k: LinearIdx,
    pub v: LinearIdx,
    pub out: LinearIdx,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvModuleIdx {
    pub norm: NormIdx,
    pub pointwise_in: LinearIdx,
    pub depthwise: LinearIdx,
    pub inner_norm: NormIdx,
    pub pointwise_out: LinearIdx,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BlockIdx {
    pub ff1: FeedForwardIdx,
    pub attn: AttentionIdx,
    pub conv: ConvModuleIdx,
    pub ff2: FeedForwardIdx,
    pub norm: NormIdx,
}

/// Names, shapes and positions of every parameter for one config.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    inits: Vec<Init>,
    pub conv1: LinearIdx,
    pub conv2: LinearIdx,
    pub proj: LinearIdx,
    pub blocks: Vec<BlockIdx>,
    pub classifier: LinearIdx,
}

struct Builder {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    inits: Vec<Init>,
}

impl Builder {
    fn add(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        self.names.push(name);
        self.shapes.push(shape);
        self.inits.push(init);
        self.names.len() - 1
    }

    fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize) -> LinearIdx {
        LinearIdx {
            weight: self.add(format!("{prefix}.weight"), vec![fan_in, fan_out], Init::FanIn(fan_in)),
            bias: self.add(format!("{prefix}.bias"), vec![fan_out], Init::Zeros),
        }
    }

    fn norm(&mut self, prefix: &str, d: usize) -> NormIdx {
        NormIdx {
            gain: self.add(format!("{prefix}.gain"), vec![d], Init::Ones),
            bias: self.add(format!("{prefix}.bias"), vec![d], Init::Zeros),
        }
    }

    fn feed_forward(&mut self, prefix: &str, d: usize, d_ff: usize) -> FeedForwardIdx {
        FeedForwardIdx {
            norm: self.norm(&format!("{prefix}.norm"), d),
            up: self.linear(&format!("{prefix}.up"), d, d_ff),
            down: self.linear(&format!("{prefix}.down"), d_ff, d),
        }
    }
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let mut b = Builder {
            names: Vec::new(),
            shapes: Vec::new(),
            inits: Vec::new(),
        };
        let d = cfg.d_model;
        let conv1 = b.linear("subsample.conv1", 3 * cfg.input_dim, d);
        let conv2 = b.linear("subsample.conv2", 3 * d, d);
        let proj = b.linear("subsample.proj", d, d);
        let blocks = (0..cfg.n_blocks)
            .map(|i| {
                let p = format!("block{i}");
                let ff1 = b.feed_forward(&format!("{p}.ff1"), d, cfg.d_ff);
                let attn = AttentionIdx {
                    norm: b.norm(&format!("{p}.attn.norm"), d),
                    q: b.linear(&format!("{p}.attn.q"), d, d),
                    k: b.linear(&format!("{p}.attn.k"), d, d),
                    v: b.linear(&format!("{p}.attn.v"), d, d),
                    out: b.linear(&format!("{p}.attn.out"), d, d),
                };
                let conv = ConvModuleIdx {
                    norm: b.norm(&format!("{p}.conv.norm"), d),
                    pointwise_in: b.linear(&format!("{p}.conv.pointwise_in"), d, 2 * d),
                    depthwise: LinearIdx {
                        weight: b.add(
                            format!("{p}.conv.depthwise.weight"),
                            vec![d, cfg.conv_kernel],
                            Init::FanIn(cfg.conv_kernel),
                        ),
                        bias: b.add(format!("{p}.conv.depthwise.bias"), vec![d], Init::Zeros),
                    },
                    inner_norm: b.norm(&format!("{p}.conv.inner_norm"), d),
                    pointwise_out: b.linear(&format!("{p}.conv.pointwise_out"), d, d),
                };
                let ff2 = b.feed_forward(&format!("{p}.ff2"), d, cfg.d_ff);
                let norm = b.norm(&format!("{p}.norm"), d);
                BlockIdx {
                    ff1,
                    attn,
                    conv,
                    ff2,
                    norm,
                }
            })
            .collect();
        let classifier = b.linear("classifier", d, cfg.n_classes());
        Self {
            names: b.names,
            shapes: b.shapes,
            inits: b.inits,
            conv1,
            conv2,
            proj,
            blocks,
            classifier,
        }
    }

    /// Output projections of every residual branch.
    pub fn branch_outputs(&self) -> Vec<LinearIdx> {
        self.blocks
            .iter()
            .flat_map(|b| [b.ff1.down, b.attn.out, b.conv.pointwise_out, b.ff2.down])
            .collect()
    }
}

/// Every learnable tensor of the encoder, in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

/// Fan-in scaled uniform matrices, zero biases and unit norm gains; each
/// tensor draws from its own seeded stream.
pub fn init_params<T: Real>(cfg: &ModelConfig, seed: u64) -> Result<ModelParams<T>> {
    cfg.validate()?;
    let layout = Layout::new(cfg);
    let tensors = layout
        .shapes
        .iter()
        .zip(&layout.inits)
        .enumerate()
        .map(|(i, (shape, init))| match init {
            Init::FanIn(fan_in) => {
                let mut r = rng::stream(seed, &[0x1417, i as u64]);
                Tensor::uniform(shape, 1.0 / (*fan_in as f64).sqrt(), &mut r)
            }
            Init::Zeros => Tensor::zeros(shape),
            Init::Ones => Tensor::full(shape, T::one()),
        })
        .collect();
    Ok(ModelParams {
        config: cfg.clone(),
        names: layout.names,
        tensors,
    })
}

impl<T: Real> ModelParams<T> {
    pub(crate) fn layout(&self) -> Layout {
        Layout::new(&self.config)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(move |i| &mut self.tensors[i])
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// Sets every residual-branch output projection to zero, turning each
    /// block into its final normalisation.
    pub fn zero_branch_outputs(&mut self) {
        for l in self.layout().branch_outputs() {
            for i in [l.weight, l.bias] {
                self.tensors[i].data_mut().iter_mut().for_each(|v| *v = T::zero());
            }
        }
    }

    /// Self-describing checkpoint: model config and `extra` as metadata,
    /// then every tensor by name.
    pub fn to_container(&self, extra: &BTreeMap<String, String>) -> Container<T> {
        let mut meta: BTreeMap<String, String> = self
            .config
            .to_pairs()
            .into_iter()
            .map(|(k, v)| (format!("model.{k}"), v))
            .collect();
        meta.extend(extra.iter().map(|(k, v)| (k.clone(), v.clone())));
        Container {
            meta,
            tensors: self.names.iter().cloned().zip(self.tensors.iter().cloned()).collect(),
        }
    }

    pub fn from_container(c: &Container<T>) -> Result<Self> {
        let pairs = c
            .meta
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("model.").map(|k| (k, v.as_str())));
        let config = ModelConfig::from_pairs(pairs)?;
        let layout = Layout::new(&config);
        let mut tensors = Vec::with_capacity(layout.names.len());
        for (name, shape) in layout.names.iter().zip(&layout.shapes) {
            let t = c
                .get(name)
                .ok_or_else(|| Error::validation(format!("checkpoint lacks tensor {name}")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::validation(format!(
                    "checkpoint tensor {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            if !t.is_finite() {
                return Err(Error::NonFinite(format!("checkpoint tensor {name}")));
            }
            tensors.push(t.clone());
        }
        Ok(Self {
            config,
            names: layout.names,
            tensors,
        })
    }

    pub fn save(&self, path: &Path, extra: &BTreeMap<String, String>) -> Result<()> {
        self.to_container(extra).save(path)
    }

    pub fn load(path: &Path) -> Result<(Self, BTreeMap<String, String>)> {
        let c = Container::<T>::load(path)?;
        Ok((Self::from_container(&c)?, c.meta))
    }
}
