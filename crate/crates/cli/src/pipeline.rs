//! The stages behind each subcommand. Every stage reads its upstream
//! artifacts only after checking them against their stamps, writes into its
//! own directory under the run root, and finishes by writing the resolved
//! config and its own stamp.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cslr_core::checkpoint::peek_dtype;
use cslr_core::ctc::{DecoderOptions, DecoderRegistry};
use cslr_core::data::{
    build_vocabulary, generate_synthetic_dataset, read_feature_file, write_feature_file, DatasetManifest,
    GlossVocabulary, ManifestRecord, Split,
};
use cslr_core::eda::{aggregate_displacement, DisplacementReport};
use cslr_core::metrics::{oov_report, sum_breakdowns, wer, WerBreakdown};
use cslr_core::model::{init_params, ModelParams};
use cslr_core::preprocess::{
    assemble_features, build_master_mask, select_reference_sample, FeatureSequence, MasterMask,
};
use cslr_core::train::{decode_sample, train_loop, Persist, Sample, TrainPlan};
use cslr_core::{DType, Real};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{parse_split, Precision, RunConfig};
use crate::provenance::{hash_all, key, sha256_bytes, verify_stage, Stamp, ARTIFACT_VERSION};

/// Stage directories under the run root.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }
    pub fn eda(&self) -> PathBuf {
        self.root.join("eda")
    }
    pub fn mask(&self) -> PathBuf {
        self.root.join("mask")
    }
    pub fn features(&self) -> PathBuf {
        self.root.join("features")
    }
    pub fn train(&self) -> PathBuf {
        self.root.join("train")
    }
    pub fn eval(&self, split: Split) -> PathBuf {
        self.root.join("eval").join(split.as_str())
    }
    pub fn decode(&self, split: Split) -> PathBuf {
        self.root.join("decode").join(split.as_str())
    }
}

/// Runs `f` on a dedicated pool of `threads` workers (0 = all cores).
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    Ok(pool.install(f))
}

/// Empties a stage directory from an earlier run. Directories without a
/// stamp are left alone unless empty, so foreign files are never deleted.
fn fresh_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        let stamped = dir.join(crate::provenance::STAMP_NAME).exists();
        let empty = std::fs::read_dir(dir)?.next().is_none();
        if !stamped && !empty {
            bail!(
                "refusing to overwrite {}: not a stage directory of this tool",
                dir.display()
            );
        }
        std::fs::remove_dir_all(dir).with_context(|| format!("clearing {}", dir.display()))?;
    }
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn finish(
    cfg: &RunConfig,
    dir: &Path,
    stage: &str,
    inputs: BTreeMap<String, String>,
    outputs: &[PathBuf],
) -> Result<()> {
    let resolved = cfg.write_resolved(dir)?;
    let mut all = outputs.to_vec();
    all.push(resolved);
    Stamp {
        stage: stage.into(),
        artifact_version: ARTIFACT_VERSION,
        seed: cfg.seed,
        config_sha256: sha256_bytes(cfg.to_toml().as_bytes()),
        inputs,
        outputs: hash_all(&cfg.out, &all)?,
    }
    .write(dir)
}

fn write(path: &Path, text: &str) -> Result<PathBuf> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(path.to_path_buf())
}

/// Outputs of a verified upstream stage, minus its config copy.
fn upstream(cfg: &RunConfig, dir: &Path, stage: &str) -> Result<BTreeMap<String, String>> {
    let stamp = verify_stage(&cfg.out, dir, stage)?;
    Ok(stamp
        .outputs
        .into_iter()
        .filter(|(k, _)| !k.ends_with(crate::config::RESOLVED_NAME))
        .collect())
}

/// The dataset manifest: the configured external one, or the synth output.
fn dataset(cfg: &RunConfig) -> Result<(DatasetManifest, BTreeMap<String, String>)> {
    let lay = Layout::new(&cfg.out);
    match &cfg.manifest {
        Some(path) => {
            let m = DatasetManifest::load(path).with_context(|| format!("loading manifest {}", path.display()))?;
            let mut files = vec![path.clone()];
            files.extend(m.records.iter().map(|r| m.resolve(r)));
            let inputs = hash_all(&cfg.out, &files)?;
            Ok((m, inputs))
        }
        None => {
            let inputs = upstream(cfg, &lay.data(), "synth")?;
            Ok((DatasetManifest::load(&lay.data().join("manifest.tsv"))?, inputs))
        }
    }
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = Layout::new(&cfg.out).data();
    cfg.synth.validate().context("synth config")?;
    fresh_dir(&dir)?;
    let out = generate_synthetic_dataset(&cfg.synth, &dir).context("generating synthetic dataset")?;
    let truth = format!(
        "active\t{}\nnoisy\t{}\n",
        join(&out.truth.active),
        join(&out.truth.noisy)
    );
    let mut outputs = vec![dir.join("manifest.tsv"), write(&dir.join("ground_truth.txt"), &truth)?];
    outputs.extend(out.manifest.records.iter().map(|r| out.manifest.resolve(r)));
    finish(cfg, &dir, "synth", BTreeMap::new(), &outputs)?;
    log::info!("synth: {} samples in {}", out.manifest.records.len(), dir.display());
    Ok(dir)
}

fn join(xs: &[usize]) -> String {
    xs.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
}

pub fn cmd_eda(cfg: &RunConfig) -> Result<DisplacementReport> {
    let dir = Layout::new(&cfg.out).eda();
    let (manifest, inputs) = dataset(cfg)?;
    let split = parse_split(&cfg.eda.split)?;
    let n = match cfg.eda.n_samples {
        0 => manifest.split(split).count().max(1),
        n => n,
    };
    let report = aggregate_displacement(&manifest, split, n)?;
    let top = report.top_k_csv(cfg.eda.top_k)?;
    fresh_dir(&dir)?;
    let outputs = vec![
        write(&dir.join("displacement.csv"), &report.to_csv())?,
        write(&dir.join("displacement_topk.csv"), &top)?,
    ];
    finish(cfg, &dir, "eda", inputs, &outputs)?;
    log::info!(
        "eda: {} keypoints over {} samples",
        report.per_keypoint.len(),
        report.n_samples_analyzed
    );
    Ok(report)
}

pub fn cmd_mask(cfg: &RunConfig) -> Result<MasterMask> {
    let dir = Layout::new(&cfg.out).mask();
    let (manifest, inputs) = dataset(cfg)?;
    let split = parse_split(&cfg.mask.split)?;
    let id = select_reference_sample(&manifest, split, cfg.mask.reference.as_deref())?;
    let record = manifest.get(&id).expect("reference comes from the manifest");
    let mask = build_master_mask(&manifest.load_sequence(record)?, &cfg.dbscan)?;
    fresh_dir(&dir)?;
    let path = dir.join("master_mask.txt");
    mask.save(&path)?;
    finish(cfg, &dir, "mask", inputs, &[path])?;
    log::info!(
        "mask: reference {id}, kept {} of {} keypoints, dropped {:?}",
        mask.k_kept(),
        mask.k_raw(),
        mask.dropped_indices()
    );
    Ok(mask)
}

fn feature_file_name(id: &str) -> Result<String> {
    if id.is_empty() || id.contains(['/', '\\']) || id.starts_with('.') {
        bail!("sample id {id:?} cannot be used as a file name");
    }
    Ok(format!("{id}.kpsq"))
}

/// Writes one feature file per manifest record, a feature manifest with the
/// same records, and the train+dev vocabulary.
pub fn cmd_preprocess(cfg: &RunConfig) -> Result<PathBuf> {
    let lay = Layout::new(&cfg.out);
    let dir = lay.features();
    let (manifest, mut inputs) = dataset(cfg)?;
    inputs.extend(upstream(cfg, &lay.mask(), "mask")?);
    let mask = MasterMask::load(&lay.mask().join("master_mask.txt"))?;
    let vocab = build_vocabulary(&manifest, &[Split::Train, Split::Dev])?;
    fresh_dir(&dir)?;
    let records: Vec<ManifestRecord> = manifest
        .records
        .par_iter()
        .map(|r| {
            let frames = manifest.load_frames(r)?;
            let f =
                assemble_features(&frames, &mask, cfg.features).with_context(|| format!("sample {}", r.sample_id))?;
            let name = feature_file_name(&r.sample_id)?;
            write_feature_file(&dir.join(&name), f.n_frames, f.n_features, &f.data)?;
            Ok(ManifestRecord {
                path: PathBuf::from(name),
                ..r.clone()
            })
        })
        .collect::<Result<_>>()?;
    let features = DatasetManifest::new(records, &dir)?;
    features.save(&dir.join("manifest.tsv"))?;
    vocab.save(&dir.join("vocab.txt"))?;
    let mut outputs = vec![dir.join("manifest.tsv"), dir.join("vocab.txt")];
    outputs.extend(features.records.iter().map(|r| features.resolve(r)));
    finish(cfg, &dir, "preprocess", inputs, &outputs)?;
    log::info!(
        "preprocess: {} samples, F = {}, V = {}",
        features.records.len(),
        6 * mask.k_kept(),
        vocab.len()
    );
    Ok(dir)
}

/// Feature cache contents after verification.
struct FeatureCache {
    manifest: DatasetManifest,
    vocab: GlossVocabulary,
    inputs: BTreeMap<String, String>,
}

fn feature_cache(cfg: &RunConfig) -> Result<FeatureCache> {
    let dir = Layout::new(&cfg.out).features();
    let inputs = upstream(cfg, &dir, "preprocess")?;
    Ok(FeatureCache {
        manifest: DatasetManifest::load(&dir.join("manifest.tsv"))?,
        vocab: GlossVocabulary::load(&dir.join("vocab.txt"))?,
        inputs,
    })
}

fn load_features(cache: &FeatureCache, r: &ManifestRecord) -> Result<FeatureSequence> {
    let (t, f, data) = read_feature_file(&cache.manifest.resolve(r))?;
    Ok(FeatureSequence::new(t, f, data)?)
}

fn samples<T: Real>(cache: &FeatureCache, split: Split) -> Result<Vec<Sample<T>>> {
    cache
        .manifest
        .split(split)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|r| {
            let target = cache
                .vocab
                .encode(&r.glosses)
                .with_context(|| format!("sample {} has glosses outside the vocabulary", r.sample_id))?;
            Ok(Sample::from_features(&r.sample_id, &load_features(cache, r)?, target)?)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub best_dev_wer: Option<f64>,
    pub stopped_early: bool,
    pub skipped: Vec<String>,
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    let dir = Layout::new(&cfg.out).train();
    let cache = feature_cache(cfg)?;
    match cfg.precision {
        Precision::F32 => train_typed::<f32>(cfg, &dir, cache),
        Precision::F64 => train_typed::<f64>(cfg, &dir, cache),
    }
}

fn train_typed<T: Real>(cfg: &RunConfig, dir: &Path, cache: FeatureCache) -> Result<TrainSummary> {
    let train = samples::<T>(&cache, Split::Train)?;
    let dev = samples::<T>(&cache, Split::Dev)?;
    if train.is_empty() || dev.is_empty() {
        bail!(
            "training needs non-empty train and dev splits ({} / {})",
            train.len(),
            dev.len()
        );
    }
    let mut model = cfg.model.clone();
    model.input_dim = train[0].features.cols();
    model.vocab_size = cache.vocab.len();
    model.validate().context("model config")?;
    let init = init_params::<T>(&model, cfg.seed)?;
    let plan = TrainPlan {
        train: cfg.train.clone(),
        schedule: cfg.schedule,
        optimizer: cfg.optimizer,
        augment: cfg.augment,
        seed: cfg.seed,
    };
    fresh_dir(dir)?;
    let meta = BTreeMap::from([
        ("vocab.digest".to_string(), cache.vocab.digest()),
        ("run.seed".to_string(), cfg.seed.to_string()),
    ]);
    let persist = Persist {
        dir: Some(dir.to_path_buf()),
        meta,
    };
    let out = train_loop(init, &train, &dev, &plan, &persist)?;
    let summary = TrainSummary {
        epochs_run: out.state.curve.len(),
        best_epoch: out.state.best_epoch,
        best_dev_wer: out.state.best_dev_wer(),
        stopped_early: out.stopped_early,
        skipped: out.skipped,
    };
    let mut outputs = vec![
        dir.join("best.ckpt"),
        dir.join("last.ckpt"),
        dir.join("curves.csv"),
        write(&dir.join("summary.toml"), &toml::to_string(&summary)?)?,
    ];
    if out.swa.is_some() {
        outputs.push(dir.join("swa.ckpt"));
    }
    // The stamp records the model shape actually trained.
    let mut resolved = cfg.clone();
    resolved.model = model;
    finish(&resolved, dir, "train", cache.inputs, &outputs)?;
    log::info!(
        "train: {} epochs, best dev WER {:?} at epoch {:?}",
        summary.epochs_run,
        summary.best_dev_wer,
        summary.best_epoch
    );
    Ok(summary)
}

/// Eval-time choices shared by `evaluate` and `decode`.
fn checkpoint_path(cfg: &RunConfig) -> PathBuf {
    let dir = Layout::new(&cfg.out).train();
    match cfg.eval.checkpoint.as_str() {
        "best" | "last" | "swa" => dir.join(format!("{}.ckpt", cfg.eval.checkpoint)),
        other => PathBuf::from(other),
    }
}

/// Decodes every sample of the eval split into gloss tokens.
fn hypotheses(cfg: &RunConfig) -> Result<(Vec<ManifestRecord>, Vec<Vec<String>>, FeatureCache)> {
    let lay = Layout::new(&cfg.out);
    let mut cache = feature_cache(cfg)?;
    let ckpt = checkpoint_path(cfg);
    if ckpt.starts_with(lay.train()) {
        cache.inputs.extend(upstream(cfg, &lay.train(), "train")?);
        if !ckpt.exists() {
            bail!(
                "{} was not produced by the train stage (enable train.swa for swa.ckpt)",
                ckpt.display()
            );
        }
    } else {
        cache.inputs.extend(hash_all(&cfg.out, std::slice::from_ref(&ckpt))?);
    }
    let split = parse_split(&cfg.eval.split)?;
    let records: Vec<ManifestRecord> = cache.manifest.split(split).cloned().collect();
    if records.is_empty() {
        bail!("split {split} has no samples");
    }
    let decoder = DecoderRegistry::default().create(
        &cfg.eval.decoder,
        &DecoderOptions {
            beam_width: cfg.eval.beam_width,
        },
    )?;
    let bytes = std::fs::read(&ckpt).with_context(|| format!("reading checkpoint {}", ckpt.display()))?;
    let ids = match peek_dtype(&bytes) {
        Some(DType::F64) => decode_all::<f64>(&ckpt, &cache, &records, decoder.as_ref())?,
        _ => decode_all::<f32>(&ckpt, &cache, &records, decoder.as_ref())?,
    };
    let hyps = ids.iter().map(|h| cache.vocab.decode(h)).collect();
    Ok((records, hyps, cache))
}

fn decode_all<T: Real>(
    ckpt: &Path,
    cache: &FeatureCache,
    records: &[ManifestRecord],
    decoder: &dyn cslr_core::ctc::Decoder,
) -> Result<Vec<Vec<usize>>> {
    let (params, meta) = ModelParams::<T>::load(ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    if let Some(d) = meta.get("vocab.digest") {
        if d != &cache.vocab.digest() {
            bail!(
                "checkpoint {} was trained on a different vocabulary: re-run `cslr train`",
                ckpt.display()
            );
        }
    }
    records
        .par_iter()
        .map(|r| {
            let f = load_features(cache, r)?;
            let x = Sample::<T>::from_features(&r.sample_id, &f, Vec::new())?;
            Ok(decode_sample(&params, &x.features, decoder)?)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub split: String,
    pub decoder: String,
    pub beam_width: usize,
    pub checkpoint: String,
    pub n_samples: usize,
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub ref_len: usize,
    pub wer: f64,
    pub oov_count: usize,
    pub oov_tokens: BTreeMap<String, usize>,
}

/// Per-sample and corpus WER on the configured split.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<EvalSummary> {
    let (records, hyps, cache) = hypotheses(cfg)?;
    let split = parse_split(&cfg.eval.split)?;
    let per: Vec<WerBreakdown> = records.iter().zip(&hyps).map(|(r, h)| wer(&r.glosses, h)).collect();
    let total = sum_breakdowns(per.iter().copied());
    let mut csv = String::from("sample_id,substitutions,deletions,insertions,ref_len,wer\n");
    for (r, b) in records.iter().zip(&per) {
        csv.push_str(&row(&r.sample_id, b));
    }
    csv.push_str(&row("TOTAL", &total));
    let refs: Vec<Vec<String>> = records.iter().map(|r| r.glosses.clone()).collect();
    let oov = oov_report(&cache.vocab, &refs);
    let summary = EvalSummary {
        split: split.to_string(),
        decoder: cfg.eval.decoder.clone(),
        beam_width: cfg.eval.beam_width,
        checkpoint: key(&cfg.out, &checkpoint_path(cfg)),
        n_samples: records.len(),
        substitutions: total.substitutions,
        deletions: total.deletions,
        insertions: total.insertions,
        ref_len: total.ref_len,
        wer: total.wer,
        oov_count: oov.count,
        oov_tokens: oov.tokens,
    };
    let dir = Layout::new(&cfg.out).eval(split);
    fresh_dir(&dir)?;
    let outputs = vec![
        write(&dir.join("wer_report.csv"), &csv)?,
        write(&dir.join("summary.toml"), &toml::to_string(&summary)?)?,
    ];
    finish(cfg, &dir, "evaluate", cache.inputs, &outputs)?;
    log::info!(
        "evaluate: {split} WER {:.4} ({} OOV tokens)",
        total.wer,
        summary.oov_count
    );
    Ok(summary)
}

fn row(id: &str, b: &WerBreakdown) -> String {
    format!(
        "{id},{},{},{},{},{:.6}\n",
        b.substitutions, b.deletions, b.insertions, b.ref_len, b.wer
    )
}

/// Writes `sample_id<TAB>hypothesis` for every sample of the split.
pub fn cmd_decode(cfg: &RunConfig) -> Result<PathBuf> {
    let (records, hyps, cache) = hypotheses(cfg)?;
    let split = parse_split(&cfg.eval.split)?;
    let mut text = String::new();
    for (r, h) in records.iter().zip(&hyps) {
        text.push_str(&format!("{}\t{}\n", r.sample_id, h.join(" ")));
    }
    let dir = Layout::new(&cfg.out).decode(split);
    fresh_dir(&dir)?;
    let path = write(&dir.join("hypotheses.tsv"), &text)?;
    finish(cfg, &dir, "decode", cache.inputs, std::slice::from_ref(&path))?;
    Ok(path)
}

/// synth → eda → mask → preprocess → train → evaluate.
pub fn cmd_pipeline(cfg: &RunConfig) -> Result<EvalSummary> {
    if cfg.manifest.is_none() {
        cmd_synth(cfg)?;
    }
    cmd_eda(cfg)?;
    cmd_mask(cfg)?;
    cmd_preprocess(cfg)?;
    cmd_train(cfg)?;
    cmd_evaluate(cfg)
}
