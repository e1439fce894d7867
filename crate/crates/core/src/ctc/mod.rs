//! Connectionist temporal classification: loss and decoding.
//!
//! Class 0 is the blank; gloss ids are `1..=V`. Log-probabilities are
//! `T′ × (V+1)` row-major matrices.

mod decode;
mod loss;

pub use decode::{
    beam_search_decode, collapse, greedy_decode, BeamSearch, Decoder, DecoderOptions, DecoderRegistry, Greedy,
};
pub use loss::{ctc_loss, required_frames, sequence_log_prob, CtcResult, CtcTarget};
