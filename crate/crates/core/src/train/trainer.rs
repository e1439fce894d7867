use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::early_stop::{EarlyStopping, StopDecision};
use super::optim::{adamw_step, clip_grad_norm, AdamWConfig, OptimizerState};
use super::schedule::ScheduleConfig;
use super::swa::swa_update;
use crate::augment::AugmentConfig;
use crate::ctc::{ctc_loss, required_frames, CtcTarget, Decoder, DecoderOptions, DecoderRegistry};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::metrics::{sum_breakdowns, wer, WerBreakdown};
use crate::model::{encode, forward, BoundParams, ModelParams, TrainingNoise};
use crate::preprocess::FeatureSequence;
use crate::real::Real;
use crate::rng;
use crate::tensor::Tensor;

const SHUFFLE: u64 = 0x5348;
const BATCHES: u64 = 0x4241;
const NOISE: u64 = 0x4e4f;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub patience: usize,
    /// Global gradient-norm ceiling; off when `None`.
    pub grad_clip: Option<f64>,
    /// Decoder used for the dev pass, by registry name.
    pub decoder: String,
    pub beam_width: usize,
    /// Keep a running average of the weights from `swa_start_epoch` on.
    pub swa: bool,
    /// Defaults to the first post-warmup epoch.
    pub swa_start_epoch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            patience: 30,
            grad_clip: None,
            decoder: "greedy".into(),
            beam_width: 20,
            swa: false,
            swa_start_epoch: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.patience == 0 {
            return Err(Error::config("batch_size and patience must be ≥ 1"));
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::config("grad_clip must be > 0"));
        }
        Ok(())
    }

    pub fn decoder_options(&self) -> DecoderOptions {
        DecoderOptions {
            beam_width: self.beam_width,
        }
    }
}

/// Everything the loop needs besides data.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainPlan {
    pub train: TrainConfig,
    pub schedule: ScheduleConfig,
    pub optimizer: AdamWConfig,
    pub augment: AugmentConfig,
    pub seed: u64,
}

/// One utterance: `T × F` features and gloss ids (1-based).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub id: String,
    pub features: Tensor<T>,
    pub target: Vec<usize>,
}

impl<T: Real> Sample<T> {
    pub fn from_features(id: impl Into<String>, features: &FeatureSequence, target: Vec<usize>) -> Result<Self> {
        let data = features.data.iter().map(|&v| T::of(f64::from(v))).collect();
        Ok(Self {
            id: id.into(),
            features: Tensor::new(vec![features.n_frames, features.n_features], data)?,
            target,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    pub epoch: usize,
    pub train_ctc_loss: f64,
    pub dev_wer: f64,
    pub lr: f64,
}

pub fn curves_csv(rows: &[CurveRow]) -> String {
    let mut s = String::from("epoch,train_ctc_loss,dev_wer,lr\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{}\n", r.epoch, r.train_ctc_loss, r.dev_wer, r.lr));
    }
    s
}

/// Mutable bookkeeping of a run.
#[derive(Debug, Clone)]
pub struct TrainState<T> {
    pub epoch: usize,
    pub stopper: EarlyStopping,
    pub best_epoch: Option<usize>,
    pub seed: u64,
    pub curve: Vec<CurveRow>,
    pub swa: Option<(Vec<Tensor<T>>, usize)>,
}

impl<T> TrainState<T> {
    pub fn best_dev_wer(&self) -> Option<f64> {
        self.stopper.best
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub best: ModelParams<T>,
    pub last: ModelParams<T>,
    pub swa: Option<ModelParams<T>>,
    pub state: TrainState<T>,
    /// Samples whose targets cannot fit their encoder length.
    pub skipped: Vec<String>,
    pub stopped_early: bool,
}

/// Where and what to persist while training.
#[derive(Debug, Clone, Default)]
pub struct Persist {
    pub dir: Option<PathBuf>,
    /// Extra checkpoint metadata (vocabulary digest, precision, ...).
    pub meta: BTreeMap<String, String>,
}

impl Persist {
    fn save<T: Real>(&self, name: &str, params: &ModelParams<T>) -> Result<()> {
        match &self.dir {
            Some(d) => params.save(&d.join(name), &self.meta),
            None => Ok(()),
        }
    }

    fn write_curves(&self, rows: &[CurveRow]) -> Result<()> {
        match &self.dir {
            Some(d) => {
                let p = d.join("curves.csv");
                std::fs::write(&p, curves_csv(rows)).map_err(|e| Error::io(&p, e))
            }
            None => Ok(()),
        }
    }
}

/// Pads `samples` to a common length; returns the `B × T_max × F` rows and valid lengths.
fn pad<T: Real>(samples: &[&Sample<T>]) -> (Vec<Tensor<T>>, Vec<usize>) {
    let t_max = samples.iter().map(|s| s.features.rows()).max().unwrap_or(0);
    let rows = samples
        .iter()
        .map(|s| {
            let f = s.features.cols();
            let mut data = s.features.data().to_vec();
            data.resize(t_max * f, T::zero());
            Tensor::new(vec![t_max, f], data).expect("padded shape")
        })
        .collect();
    (rows, samples.iter().map(|s| s.features.rows()).collect())
}

/// CTC loss and parameter gradients for one padded row.
fn row_loss<T: Real>(
    params: &ModelParams<T>,
    x: &Tensor<T>,
    valid: usize,
    target: &[usize],
    noise: Option<&mut TrainingNoise>,
) -> Result<(f64, Vec<Vec<T>>)> {
    let mut g = Graph::new();
    let bound = BoundParams::bind(&mut g, params, true);
    let xv = g.constant(x);
    let enc = encode(&mut g, &bound, xv, valid, noise)?;
    let lp = g.tensor(enc.log_probs);
    let classes = lp.cols();
    let head = Tensor::new(vec![enc.out_len, classes], lp.data()[..enc.out_len * classes].to_vec())?;
    let res = ctc_loss(&head, &CtcTarget::new(target.to_vec())?)?;
    let mut grad = res.grad_log_probs.into_data();
    grad.resize(lp.len(), T::zero());
    let loss = g.fixed_grad_scalar(enc.log_probs, res.neg_log_likelihood, grad)?;
    let grads = g.backward(loss)?;
    let per_param = bound
        .vars()
        .iter()
        .map(|&v| grads.get(v).map(<[T]>::to_vec).expect("parameter leaf has a gradient"))
        .collect();
    Ok((res.neg_log_likelihood.as_f64(), per_param))
}

/// Mean CTC loss over a padded batch and its gradient. Rows run in
/// parallel but are reduced in batch order, so the result does not depend
/// on the thread count. `noise_path` seeds per-row dropout and masking;
/// `None` evaluates in eval mode.
pub fn batch_loss_and_grads<T: Real>(
    params: &ModelParams<T>,
    batch: &[&Sample<T>],
    augment: &AugmentConfig,
    noise_path: Option<(u64, &[u64])>,
) -> Result<(f64, Vec<Vec<T>>)> {
    if batch.is_empty() {
        return Err(Error::validation("empty batch"));
    }
    let (rows, valid) = pad(batch);
    let results: Vec<Result<(f64, Vec<Vec<T>>)>> = (0..batch.len())
        .into_par_iter()
        .map(|i| {
            let r = match noise_path {
                Some((seed, path)) => {
                    let mut full = path.to_vec();
                    full.push(i as u64);
                    let mut rng = rng::stream(seed, &full);
                    let mut noise = TrainingNoise {
                        rng: &mut rng,
                        augment: *augment,
                    };
                    row_loss(params, &rows[i], valid[i], &batch[i].target, Some(&mut noise))
                }
                None => row_loss(params, &rows[i], valid[i], &batch[i].target, None),
            };
            r.map_err(|e| match e {
                Error::InfeasibleTarget { .. } | Error::NonFinite(_) => {
                    Error::validation(format!("sample {}: {e}", batch[i].id))
                }
                other => other,
            })
        })
        .collect();
    let mut total = 0.0;
    let mut sum: Vec<Vec<T>> = params.tensors().iter().map(|t| vec![T::zero(); t.len()]).collect();
    for r in results {
        let (loss, grads) = r?;
        total += loss;
        for (acc, g) in sum.iter_mut().zip(grads) {
            acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
    }
    let inv = T::of(1.0 / batch.len() as f64);
    sum.iter_mut().flatten().for_each(|g| *g *= inv);
    Ok((total / batch.len() as f64, sum))
}

/// Splits a shuffled order into length-homogeneous batches: pools of
/// `8 · batch_size` samples are sorted by length and cut into batches, and
/// the batch order is shuffled.
pub fn bucket_batches(
    order: &[usize],
    lengths: &[usize],
    batch_size: usize,
    rng: &mut rng::SeededRng,
) -> Vec<Vec<usize>> {
    let mut batches = Vec::new();
    for pool in order.chunks(batch_size * 8) {
        let mut pool = pool.to_vec();
        pool.sort_by_key(|&i| lengths[i]);
        batches.extend(pool.chunks(batch_size).map(<[usize]>::to_vec));
    }
    batches.shuffle(rng);
    batches
}

/// Eval-mode decode of one sample.
pub fn decode_sample<T: Real>(
    params: &ModelParams<T>,
    features: &Tensor<T>,
    decoder: &dyn Decoder,
) -> Result<Vec<usize>> {
    let lp = forward(features, params, None)?;
    decoder.decode(&lp.cast())
}

/// Decodes every sample (in parallel, results in input order) and scores
/// against its target ids.
pub fn evaluate<T: Real>(
    params: &ModelParams<T>,
    samples: &[Sample<T>],
    decoder: &dyn Decoder,
) -> Result<(WerBreakdown, Vec<(Vec<usize>, WerBreakdown)>)> {
    if samples.is_empty() {
        return Err(Error::validation("nothing to evaluate"));
    }
    let per: Vec<(Vec<usize>, WerBreakdown)> = samples
        .par_iter()
        .map(|s| {
            let hyp = decode_sample(params, &s.features, decoder)?;
            let b = wer(&s.target, &hyp);
            Ok((hyp, b))
        })
        .collect::<Result<_>>()?;
    Ok((sum_breakdowns(per.iter().map(|p| p.1)), per))
}

/// Trains `init` on `train`, selecting the checkpoint by WER on `dev`.
pub fn train_loop<T: Real>(
    init: ModelParams<T>,
    train: &[Sample<T>],
    dev: &[Sample<T>],
    plan: &TrainPlan,
    persist: &Persist,
) -> Result<TrainOutcome<T>> {
    plan.train.validate()?;
    plan.schedule.validate()?;
    plan.optimizer.validate()?;
    plan.augment.validate()?;
    let cfg = init.config.clone();
    let decoder = DecoderRegistry::default().create(&plan.train.decoder, &plan.train.decoder_options())?;
    if let Some(d) = &persist.dir {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }

    let mut skipped = Vec::new();
    let mut usable = Vec::new();
    for (i, s) in train.iter().enumerate() {
        let need = required_frames(&s.target);
        let have = cfg.output_len(s.features.rows());
        if need > have {
            log::warn!(
                "skipping {}: {} labels need {need} encoder frames, only {have}",
                s.id,
                s.target.len()
            );
            skipped.push(s.id.clone());
        } else {
            usable.push(i);
        }
    }
    if usable.is_empty() {
        return Err(Error::validation("no training sample has a feasible target"));
    }
    let lengths: Vec<usize> = train.iter().map(|s| s.features.rows()).collect();

    let mut params = init;
    let mut opt = OptimizerState::new(plan.optimizer, params.tensors());
    let mut state = TrainState {
        epoch: 0,
        stopper: EarlyStopping::new(plan.train.patience),
        best_epoch: None,
        seed: plan.seed,
        curve: Vec::new(),
        swa: None,
    };
    let mut best = params.clone();
    let swa_start = plan.train.swa_start_epoch.unwrap_or(plan.schedule.warmup_epochs);
    let mut stopped_early = false;

    for epoch in 0..plan.schedule.total_epochs {
        state.epoch = epoch;
        let mut order = usable.clone();
        order.shuffle(&mut rng::stream(plan.seed, &[SHUFFLE, epoch as u64]));
        let batches = bucket_batches(
            &order,
            &lengths,
            plan.train.batch_size,
            &mut rng::stream(plan.seed, &[BATCHES, epoch as u64]),
        );
        let epoch_lr = plan.schedule.lr_at_progress(epoch as f64);
        let mut loss_sum = 0.0;
        for (step, batch) in batches.iter().enumerate() {
            let lr = if plan.schedule.per_step {
                plan.schedule
                    .lr_at_progress(epoch as f64 + step as f64 / batches.len() as f64)
            } else {
                epoch_lr
            };
            let refs: Vec<&Sample<T>> = batch.iter().map(|&i| &train[i]).collect();
            let path = [NOISE, epoch as u64, step as u64];
            let (loss, mut grads) = batch_loss_and_grads(&params, &refs, &plan.augment, Some((plan.seed, &path)))?;
            if !loss.is_finite() {
                let ids: Vec<&str> = refs.iter().map(|s| s.id.as_str()).collect();
                return Err(Error::NonFinite(format!("loss at epoch {epoch}, batch {ids:?}")));
            }
            if let Some(c) = plan.train.grad_clip {
                clip_grad_norm(&mut grads, c);
            }
            adamw_step(params.tensors_mut(), &grads, &mut opt, lr)?;
            loss_sum += loss * refs.len() as f64;
        }
        let train_loss = loss_sum / usable.len() as f64;
        let dev_wer = evaluate(&params, dev, decoder.as_ref())?.0.wer;
        let decision = state.stopper.observe(dev_wer);
        state.curve.push(CurveRow {
            epoch,
            train_ctc_loss: train_loss,
            dev_wer,
            lr: epoch_lr,
        });
        log::info!("epoch {epoch}: loss {train_loss:.4} dev WER {dev_wer:.4} lr {epoch_lr:.3e}");
        if decision == StopDecision::Improved {
            best = params.clone();
            state.best_epoch = Some(epoch);
            persist.save("best.ckpt", &best)?;
        }
        if plan.train.swa && epoch >= swa_start {
            match &mut state.swa {
                None => state.swa = Some((params.tensors().to_vec(), 1)),
                Some((avg, n)) => {
                    swa_update(avg, params.tensors(), *n)?;
                    *n += 1;
                }
            }
        }
        persist.write_curves(&state.curve)?;
        if decision == StopDecision::Stop {
            stopped_early = true;
            break;
        }
    }
    persist.save("last.ckpt", &params)?;
    let swa = state.swa.as_ref().map(|(avg, _)| {
        let mut p = params.clone();
        p.tensors_mut().clone_from_slice(avg);
        p
    });
    if let Some(s) = &swa {
        persist.save("swa.ckpt", s)?;
    }
    Ok(TrainOutcome {
        best,
        last: params,
        swa,
        state,
        skipped,
        stopped_early,
    })
}

/// Reads `curves.csv` rows back (used to compare runs).
pub fn read_curves(path: &Path) -> Result<Vec<CurveRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .skip(1)
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::Parse {
                path: path.display().to_string(),
                offset: 0,
                message: format!("bad curve row {line:?}"),
            };
            if f.len() != 4 {
                return Err(bad());
            }
            Ok(CurveRow {
                epoch: f[0].parse().map_err(|_| bad())?,
                train_ctc_loss: f[1].parse().map_err(|_| bad())?,
                dev_wer: f[2].parse().map_err(|_| bad())?,
                lr: f[3].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}
