//! Keypoint filtering, frame normalisation and dynamic feature assembly.

mod dbscan;
mod features;
mod mask;
mod normalize;

pub use dbscan::{dbscan, DbscanParams, Label};
pub use features::{
    assemble_features, central_difference, compute_acceleration, compute_velocity, moving_average, FeatureOptions,
    FeatureSequence,
};
pub use mask::{build_master_mask, mean_valid_positions, select_reference_sample, MasterMask};
pub use normalize::normalize_frame;
