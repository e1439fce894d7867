//! Continuous sign language recognition from body keypoints.
//!
//! The crate covers the whole pipeline: keypoint containers and a synthetic
//! keypoint-language generator ([`data`]), displacement analysis ([`eda`]),
//! the DBSCAN master mask, frame normalisation and dynamic features
//! ([`preprocess`]), SpecAugment-style masking ([`augment`]), a Conformer
//! encoder with a CTC head ([`model`], [`ctc`]), WER scoring ([`metrics`]) and
//! the training loop ([`train`]). Everything runs on a small dense-tensor
//! autodiff engine ([`tensor`], [`graph`]).

pub mod augment;
pub mod checkpoint;
pub mod ctc;
pub mod data;
pub mod eda;
pub mod error;
pub mod graph;
mod kernels;
pub mod metrics;
pub mod model;
pub mod preprocess;
pub mod real;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use real::{DType, Real};
pub use tensor::Tensor;
