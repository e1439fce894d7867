use std::path::{Path, PathBuf};
use std::process::Command;

use cslr_cli::{pipeline, Layout, Overrides, RunConfig};
use cslr_core::data::Split;

fn acceptance_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/acceptance.toml")
}

/// The pinned config, shortened to `epochs` and rooted at `out`.
fn short_config(out: &Path, epochs: usize) -> RunConfig {
    let mut cfg = RunConfig::load(&acceptance_config()).unwrap();
    cfg.schedule.total_epochs = epochs;
    cfg.schedule.warmup_epochs = 1;
    cfg.resolve(&Overrides {
        out: Some(out.to_path_buf()),
        ..Default::default()
    })
    .unwrap()
}

fn cslr(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_cslr"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn read(p: PathBuf) -> Vec<u8> {
    std::fs::read(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn full_pipeline_writes_every_declared_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), 4);
    let summary = pipeline::cmd_pipeline(&cfg).unwrap();
    assert_eq!(summary.n_samples, cfg.synth.n_test);
    assert_eq!(summary.oov_count, 0);
    let lay = Layout::new(dir.path());
    for d in [
        lay.data(),
        lay.eda(),
        lay.mask(),
        lay.features(),
        lay.train(),
        lay.eval(Split::Test),
    ] {
        assert!(d.join("stamp.toml").exists(), "{}", d.display());
        let resolved = RunConfig::load(&d.join("config.resolved.toml")).unwrap();
        assert_eq!(resolved.seed, cfg.seed);
    }
    let eda = String::from_utf8(read(lay.eda().join("displacement.csv"))).unwrap();
    assert_eq!(eda.lines().count(), 1 + 86);
    let top = String::from_utf8(read(lay.eda().join("displacement_topk.csv"))).unwrap();
    assert_eq!(top.lines().count(), 1 + 20);
    let report = String::from_utf8(read(lay.eval(Split::Test).join("wer_report.csv"))).unwrap();
    assert_eq!(report.lines().count(), 1 + cfg.synth.n_test + 1);
    assert!(report.lines().last().unwrap().starts_with("TOTAL,"));
    let curves = String::from_utf8(read(lay.train().join("curves.csv"))).unwrap();
    assert_eq!(curves.lines().count(), 1 + 4);

    let path = pipeline::cmd_decode(&cfg).unwrap();
    let hyps = String::from_utf8(read(path)).unwrap();
    assert_eq!(hyps.lines().count(), cfg.synth.n_test);
}

#[test]
fn planted_noisy_keypoints_are_masked() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), 3);
    pipeline::cmd_synth(&cfg).unwrap();
    let mask = pipeline::cmd_mask(&cfg).unwrap();
    let truth = std::fs::read_to_string(Layout::new(dir.path()).data().join("ground_truth.txt")).unwrap();
    let noisy: Vec<usize> = truth
        .lines()
        .find_map(|l| l.strip_prefix("noisy\t"))
        .unwrap()
        .split(' ')
        .map(|s| s.parse().unwrap())
        .collect();
    assert_eq!(mask.dropped_indices(), noisy);
    assert_eq!(mask.k_kept(), 82);
}

#[test]
fn rerunning_from_a_resolved_config_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), 3);
    pipeline::cmd_pipeline(&cfg).unwrap();
    let lay = Layout::new(dir.path());
    let files = [
        lay.eda().join("displacement.csv"),
        lay.mask().join("master_mask.txt"),
        lay.features().join("train_0000.kpsq"),
        lay.train().join("curves.csv"),
        lay.train().join("best.ckpt"),
        lay.eval(Split::Test).join("wer_report.csv"),
    ];
    let before: Vec<Vec<u8>> = files.iter().map(|p| read(p.clone())).collect();
    let resolved = lay.eval(Split::Test).join("config.resolved.toml");
    let copy = dir.path().join("rerun.toml");
    std::fs::copy(&resolved, &copy).unwrap();
    let out = cslr(&["--config", copy.to_str().unwrap(), "pipeline"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for (p, b) in files.iter().zip(&before) {
        assert!(&read(p.clone()) == b, "{} changed on re-run", p.display());
    }
}

#[test]
fn tampered_feature_cache_is_refused_with_the_stage_name() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), 2);
    pipeline::cmd_synth(&cfg).unwrap();
    pipeline::cmd_mask(&cfg).unwrap();
    pipeline::cmd_preprocess(&cfg).unwrap();
    let victim = Layout::new(dir.path()).features().join("train_0002.kpsq");
    let mut bytes = read(victim.clone());
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    std::fs::write(&victim, bytes).unwrap();

    let err = pipeline::cmd_train(&cfg).unwrap_err().to_string();
    assert!(err.contains("`preprocess`") && err.contains("train_0002.kpsq"), "{err}");
    let out = cslr(&[
        "--config",
        acceptance_config().to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "train",
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("cslr preprocess"));
}

#[test]
fn changed_upstream_marks_downstream_stale() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = short_config(dir.path(), 2);
    pipeline::cmd_pipeline(&cfg).unwrap();
    cfg.features.smooth_velocity = true;
    pipeline::cmd_preprocess(&cfg).unwrap();
    let err = pipeline::cmd_evaluate(&cfg).unwrap_err().to_string();
    assert!(err.contains("`train`"), "{err}");
}

#[test]
fn config_errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("v1.toml");
    std::fs::write(&bad, "[synth]\nvocab_size = 1\n").unwrap();
    let out = cslr(&[
        "--config",
        bad.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "synth",
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("vocab_size"));

    let typo = dir.path().join("typo.toml");
    std::fs::write(&typo, "[train]\nbatchsize = 4\n").unwrap();
    let out = cslr(&["--config", typo.to_str().unwrap(), "synth"]);
    assert!(!out.status.success());
}

#[test]
fn synth_creates_missing_output_directories() {
    let dir = tempfile::tempdir().unwrap();
    let nested = dir.path().join("a/b/c");
    let out = cslr(&[
        "--seed",
        "3",
        "--threads",
        "1",
        "--out",
        nested.to_str().unwrap(),
        "synth",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(nested.join("data/manifest.tsv").exists());
}

#[test]
fn foreign_directories_are_not_overwritten() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), 2);
    std::fs::create_dir_all(dir.path().join("data")).unwrap();
    std::fs::write(dir.path().join("data/notes.txt"), "mine").unwrap();
    assert!(pipeline::cmd_synth(&cfg).is_err());
    assert_eq!(
        std::fs::read_to_string(dir.path().join("data/notes.txt")).unwrap(),
        "mine"
    );
}
