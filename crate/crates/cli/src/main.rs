use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use cslr_cli::{pipeline, Overrides, RunConfig};

#[derive(Parser)]
#[command(
    name = "cslr",
    version,
    about = "Keypoint-based continuous sign language recognition pipeline"
)]
struct Cli {
    /// TOML run configuration; defaults apply to every missing key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (1 = bit-exact single-threaded mode, 0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Run root; every stage writes into a subdirectory of it.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Use an existing dataset manifest instead of the synth stage output.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct DecodeFlags {
    /// Decoder name: greedy or beam.
    #[arg(long)]
    decoder: Option<String>,
    #[arg(long)]
    beam: Option<usize>,
}

#[derive(Args, Clone, Default)]
struct EvalFlags {
    #[command(flatten)]
    decode: DecodeFlags,
    #[arg(long)]
    split: Option<String>,
    /// best, last, swa or a checkpoint path.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic keypoint dataset.
    Synth,
    /// Per-keypoint displacement ranking.
    Eda {
        #[arg(long)]
        split: Option<String>,
        #[arg(long)]
        n_samples: Option<usize>,
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Build the master keypoint mask from a reference sample.
    Mask {
        #[arg(long)]
        split: Option<String>,
        #[arg(long)]
        reference: Option<String>,
    },
    /// Write the feature cache and vocabulary.
    Preprocess,
    /// Train the model; the decoder flags pick the dev-selection decoder.
    Train(DecodeFlags),
    /// WER report on a split.
    Evaluate(EvalFlags),
    /// Hypotheses for every sample of a split.
    Decode(EvalFlags),
    /// synth, eda, mask, preprocess, train and evaluate in sequence.
    Pipeline(EvalFlags),
}

fn apply_eval(cfg: &mut RunConfig, f: &EvalFlags) {
    if let Some(d) = &f.decode.decoder {
        cfg.eval.decoder = d.clone();
    }
    if let Some(b) = f.decode.beam {
        cfg.eval.beam_width = b;
    }
    if let Some(s) = &f.split {
        cfg.eval.split = s.clone();
    }
    if let Some(c) = &f.checkpoint {
        cfg.eval.checkpoint = c.display().to_string();
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match &cli.command {
        Command::Eda {
            split,
            n_samples,
            top_k,
        } => {
            if let Some(s) = split {
                cfg.eda.split = s.clone();
            }
            if let Some(n) = n_samples {
                cfg.eda.n_samples = *n;
            }
            if let Some(k) = top_k {
                cfg.eda.top_k = *k;
            }
        }
        Command::Mask { split, reference } => {
            if let Some(s) = split {
                cfg.mask.split = s.clone();
            }
            if reference.is_some() {
                cfg.mask.reference = reference.clone();
            }
        }
        Command::Train(f) => {
            if let Some(d) = &f.decoder {
                cfg.train.decoder = d.clone();
            }
            if let Some(b) = f.beam {
                cfg.train.beam_width = b;
            }
        }
        Command::Evaluate(f) | Command::Decode(f) | Command::Pipeline(f) => apply_eval(&mut cfg, f),
        Command::Synth | Command::Preprocess => {}
    }
    let cfg = cfg.resolve(&Overrides {
        seed: cli.seed,
        threads: cli.threads,
        out: cli.out.clone(),
        manifest: cli.manifest.clone(),
    })?;
    pipeline::with_threads(cfg.threads, || -> Result<()> {
        match cli.command {
            Command::Synth => println!("{}", pipeline::cmd_synth(&cfg)?.display()),
            Command::Eda { .. } => {
                let r = pipeline::cmd_eda(&cfg)?;
                let top = cslr_core::eda::top_k(&r, cfg.eda.top_k)?;
                println!("top {} keypoints: {top:?}", cfg.eda.top_k);
            }
            Command::Mask { .. } => {
                let m = pipeline::cmd_mask(&cfg)?;
                println!(
                    "kept {} of {}; dropped {:?}",
                    m.k_kept(),
                    m.k_raw(),
                    m.dropped_indices()
                );
            }
            Command::Preprocess => println!("{}", pipeline::cmd_preprocess(&cfg)?.display()),
            Command::Train(_) => {
                let s = pipeline::cmd_train(&cfg)?;
                println!(
                    "{} epochs; best dev WER {} at epoch {}",
                    s.epochs_run,
                    s.best_dev_wer.map_or("-".into(), |w| format!("{w:.4}")),
                    s.best_epoch.map_or("-".into(), |e| e.to_string())
                );
            }
            Command::Evaluate(_) | Command::Pipeline(_) => {
                let s = if matches!(cli.command, Command::Pipeline(_)) {
                    pipeline::cmd_pipeline(&cfg)?
                } else {
                    pipeline::cmd_evaluate(&cfg)?
                };
                println!(
                    "{} WER {:.4} (S={} D={} I={} N={}) OOV={}",
                    s.split, s.wer, s.substitutions, s.deletions, s.insertions, s.ref_len, s.oov_count
                );
            }
            Command::Decode(_) => println!("{}", pipeline::cmd_decode(&cfg)?.display()),
        }
        Ok(())
    })?
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
