//! Dataset containers: keypoint/feature files, manifests, vocabularies and
//! the synthetic keypoint-language generator.

mod container;
mod manifest;
mod synth;
mod vocab;

pub use container::{
    read_feature_file, read_keypoint_file, write_feature_file, write_keypoint_file, ArrayKind, KeypointFrames,
    FEATURE_FLAG, MAGIC, VERSION,
};
pub use manifest::{DatasetManifest, ManifestRecord, Split};
pub use synth::{generate_sequences, generate_synthetic_dataset, SynthConfig, SynthOutput, SyntheticGroundTruth};
pub use vocab::{build_vocabulary, GlossVocabulary, BLANK};

/// One sample: keypoint frames plus its identifiers and gloss labels.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSequence {
    pub sample_id: String,
    pub signer_id: String,
    pub frames: KeypointFrames,
    pub glosses: Vec<String>,
}
