//! Run configuration: one TOML file with a section per stage. Every key has
//! a default and unknown keys are rejected.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cslr_core::augment::AugmentConfig;
use cslr_core::data::{Split, SynthConfig};
use cslr_core::model::ModelConfig;
use cslr_core::preprocess::{DbscanParams, FeatureOptions};
use cslr_core::train::{AdamWConfig, ScheduleConfig, TrainConfig};
use serde::{Deserialize, Serialize};

pub const RESOLVED_NAME: &str = "config.resolved.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EdaSection {
    pub split: String,
    /// Samples analysed in manifest order; 0 means the whole split.
    pub n_samples: usize,
    pub top_k: usize,
}

impl Default for EdaSection {
    fn default() -> Self {
        Self {
            split: "train".into(),
            n_samples: 0,
            top_k: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskSection {
    /// Split the reference sample is drawn from.
    pub split: String,
    /// Explicit reference sample id; otherwise the most complete sample.
    pub reference: Option<String>,
}

impl Default for MaskSection {
    fn default() -> Self {
        Self {
            split: "train".into(),
            reference: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub split: String,
    pub decoder: String,
    pub beam_width: usize,
    /// `best`, `last`, `swa` or a path to a checkpoint file.
    pub checkpoint: String,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            split: "test".into(),
            decoder: "beam".into(),
            beam_width: 20,
            checkpoint: "best".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Global seed; every stochastic stage derives its streams from it.
    pub seed: u64,
    /// Worker threads; 0 uses every core, 1 is the strict reproducible mode.
    pub threads: usize,
    pub precision: Precision,
    /// Output root. Each stage writes into its own subdirectory.
    pub out: PathBuf,
    /// External dataset manifest; when unset the synth stage output is used.
    pub manifest: Option<PathBuf>,
    pub synth: SynthConfig,
    pub eda: EdaSection,
    pub mask: MaskSection,
    pub dbscan: DbscanParams,
    pub features: FeatureOptions,
    /// `input_dim` and `vocab_size` are overwritten from the feature cache.
    pub model: ModelConfig,
    pub augment: AugmentConfig,
    pub schedule: ScheduleConfig,
    pub optimizer: AdamWConfig,
    pub train: TrainConfig,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: 0,
            precision: Precision::F32,
            out: PathBuf::from("runs/default"),
            manifest: None,
            synth: SynthConfig::default(),
            eda: EdaSection::default(),
            mask: MaskSection::default(),
            dbscan: DbscanParams::default(),
            features: FeatureOptions::default(),
            model: ModelConfig::default(),
            augment: AugmentConfig::default(),
            schedule: ScheduleConfig::default(),
            optimizer: AdamWConfig::default(),
            train: TrainConfig::default(),
            eval: EvalSection::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Applies overrides, makes paths absolute and propagates the global
    /// seed into the generator.
    pub fn resolve(mut self, over: &Overrides) -> Result<Self> {
        if let Some(s) = over.seed {
            self.seed = s;
        }
        if let Some(t) = over.threads {
            self.threads = t;
        }
        if let Some(o) = &over.out {
            self.out = o.clone();
        }
        if let Some(m) = &over.manifest {
            self.manifest = Some(m.clone());
        }
        self.synth.seed = self.seed;
        self.out = absolute(&self.out)?;
        if let Some(m) = &self.manifest {
            self.manifest = Some(absolute(m)?);
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        for (what, s) in [
            ("eda.split", &self.eda.split),
            ("mask.split", &self.mask.split),
            ("eval.split", &self.eval.split),
        ] {
            parse_split(s).with_context(|| format!("config key {what}"))?;
        }
        if self.eda.top_k == 0 {
            bail!("config error: eda.top_k must be ≥ 1");
        }
        self.dbscan.validate()?;
        self.augment.validate()?;
        self.schedule.validate()?;
        self.optimizer.validate()?;
        self.train.validate()?;
        Ok(())
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<PathBuf> {
        let p = dir.join(RESOLVED_NAME);
        std::fs::write(&p, self.to_toml()).with_context(|| format!("writing {}", p.display()))?;
        Ok(p)
    }
}

pub fn parse_split(s: &str) -> Result<Split> {
    Ok(s.parse::<Split>()?)
}

fn absolute(p: &Path) -> Result<PathBuf> {
    Ok(std::path::absolute(p).with_context(|| format!("resolving {}", p.display()))?)
}
