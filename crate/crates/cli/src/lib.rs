//! Pipeline wiring for the `cslr` binary: run configuration, provenance
//! stamps and one function per subcommand.

pub mod config;
pub mod pipeline;
pub mod provenance;

pub use config::{Overrides, Precision, RunConfig};
pub use pipeline::{
    cmd_decode, cmd_eda, cmd_evaluate, cmd_mask, cmd_pipeline, cmd_preprocess, cmd_synth, cmd_train, with_threads,
    EvalSummary, Layout, TrainSummary,
};
