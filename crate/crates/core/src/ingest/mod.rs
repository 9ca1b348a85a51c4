//! Dataset sanitation, per-mask color statistics, keypoint correspondences
//! and synthetic scene generation.

mod denoise;
mod histogram;
mod keypoints;
mod synth;

pub use denoise::{denoise_dataset, denoise_masks, DenoiseOutcome, DenoiseParams};
pub use histogram::compute_color_histogram;
pub use keypoints::{
    detect_and_match_keypoints, detect_corners, match_views, resolve_matches, Corner,
    KeypointParams, PairSelection,
};
pub use synth::{generate_synthetic_scene, GroundTruth, SyntheticScene, SyntheticSceneSpec};
