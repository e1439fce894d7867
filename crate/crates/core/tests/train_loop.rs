use cslr_core::augment::AugmentConfig;
use cslr_core::ctc::Greedy;
use cslr_core::data::{generate_sequences, GlossVocabulary, Split, SynthConfig};
use cslr_core::model::{init_params, ModelConfig};
use cslr_core::preprocess::{assemble_features, build_master_mask, DbscanParams, FeatureOptions};
use cslr_core::train::{evaluate, train_loop, Persist, Sample, ScheduleConfig, TrainConfig, TrainPlan};

/// Synthetic splits pushed through mask and feature extraction in memory.
fn synthetic_samples(cfg: &SynthConfig) -> (Vec<Sample<f32>>, Vec<Sample<f32>>, usize, usize) {
    let (seqs, _) = generate_sequences(cfg).unwrap();
    let reference = seqs
        .iter()
        .filter(|(s, _)| *s == Split::Train)
        .max_by(|a, b| a.1.frames.valid_fraction().total_cmp(&b.1.frames.valid_fraction()))
        .unwrap();
    let mask = build_master_mask(&reference.1, &DbscanParams::default()).unwrap();
    let mut tokens: Vec<String> = seqs.iter().flat_map(|(_, s)| s.glosses.clone()).collect();
    tokens.sort();
    tokens.dedup();
    let vocab = GlossVocabulary::from_tokens(tokens).unwrap();
    let mut train = Vec::new();
    let mut dev = Vec::new();
    for (split, seq) in &seqs {
        let f = assemble_features(&seq.frames, &mask, FeatureOptions::default()).unwrap();
        let s = Sample::from_features(&seq.sample_id, &f, vocab.encode(&seq.glosses).unwrap()).unwrap();
        match split {
            Split::Train => train.push(s),
            Split::Dev => dev.push(s),
            Split::Test => {}
        }
    }
    (train, dev, mask.k_kept() * 6, vocab.len())
}

fn overfit_model(input_dim: usize, vocab: usize) -> ModelConfig {
    ModelConfig {
        d_model: 16,
        n_heads: 4,
        d_ff: 32,
        conv_kernel: 5,
        dropout: 0.1,
        ..ModelConfig::toy(input_dim, vocab)
    }
}

fn overfit_plan(seed: u64) -> TrainPlan {
    TrainPlan {
        train: TrainConfig {
            batch_size: 4,
            ..Default::default()
        },
        schedule: ScheduleConfig {
            warmup_epochs: 10,
            total_epochs: 200,
            lr_peak: 3e-3,
            ..Default::default()
        },
        optimizer: Default::default(),
        augment: AugmentConfig::disabled(),
        seed,
    }
}

#[test]
fn toy_model_overfits_its_training_set() {
    let (train, _, f, v) = synthetic_samples(&SynthConfig::default());
    assert_eq!(v, 12);
    assert_eq!(train.len(), 20);
    let init = init_params::<f32>(&overfit_model(f, v), 1).unwrap();
    // Selecting on the training set itself: the run stops once it is memorised.
    let out = train_loop(init, &train, &train, &overfit_plan(1), &Persist::default()).unwrap();
    assert!(out.skipped.is_empty());
    let (wer, _) = evaluate(&out.best, &train, &Greedy).unwrap();
    assert!(wer.wer <= 0.05, "train WER {}", wer.wer);
    let best = out.state.curve.iter().map(|r| r.dev_wer).fold(f64::INFINITY, f64::min);
    assert_eq!(out.state.best_dev_wer(), Some(best));
}

#[test]
fn a_flat_run_stops_after_exactly_the_patience() {
    let (train, dev, f, v) = synthetic_samples(&SynthConfig::default());
    let init = init_params::<f32>(&ModelConfig::toy(f, v), 2).unwrap();
    let mut plan = overfit_plan(2);
    plan.schedule.lr_peak = 0.0;
    plan.optimizer.weight_decay = 0.0;
    let out = train_loop(init, &train[..4], &dev[..2], &plan, &Persist::default()).unwrap();
    assert!(out.stopped_early);
    // Epoch 0 sets the first best; nothing moves after that.
    assert_eq!(out.state.best_epoch, Some(0));
    assert_eq!(out.state.curve.len(), 1 + 30);
    assert!(out.state.curve.windows(2).all(|w| w[0].dev_wer == w[1].dev_wer));
}

#[test]
fn fixed_seed_gives_identical_curves_and_checkpoints() {
    let (train, dev, f, v) = synthetic_samples(&SynthConfig::default());
    let mut plan = overfit_plan(3);
    plan.schedule.total_epochs = 12;
    plan.schedule.warmup_epochs = 3;
    plan.augment = AugmentConfig::default();
    plan.train.swa = true;
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let init = init_params::<f32>(&overfit_model(f, v), 3).unwrap();
        let persist = Persist {
            dir: Some(d.path().to_path_buf()),
            meta: Default::default(),
        };
        let out = train_loop(init, &train, &dev, &plan, &persist).unwrap();
        assert_eq!(out.state.curve.len(), 12);
        assert!(out.swa.is_some());
    }
    for name in ["curves.csv", "best.ckpt", "last.ckpt", "swa.ckpt"] {
        let a = std::fs::read(dirs[0].path().join(name)).unwrap();
        let b = std::fs::read(dirs[1].path().join(name)).unwrap();
        assert!(a == b, "{name} differs between runs");
    }
}
