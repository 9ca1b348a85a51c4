use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Thresholds for cross-view mask grouping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchParams {
    /// Minimum keypoint pair count for a correspondence match.
    pub tau_kp: usize,
    /// Hybrid similarity threshold.
    pub theta: f64,
    /// Weight of the color-histogram term in the hybrid similarity.
    pub alpha: f64,
    /// Number of most recent prior views scanned for keypoint
    /// correspondences; `None` scans all of them.
    pub window: Option<usize>,
    /// When false the keypoint branch is skipped entirely.
    pub use_keypoints: bool,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self {
            tau_kp: 4,
            theta: 0.95,
            alpha: 0.3,
            window: None,
            use_keypoints: true,
        }
    }
}

impl MatchParams {
    pub fn validate(&self) -> Result<()> {
        if self.tau_kp < 1 {
            return Err(Error::domain("tau_kp must be >= 1"));
        }
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(Error::domain(format!("theta {} outside (0, 1]", self.theta)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::domain(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if self.window == Some(0) {
            return Err(Error::domain("window must be >= 1"));
        }
        Ok(())
    }
}

/// How a grid cell's stored multi-view embeddings are reduced to one
/// relevancy score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreAggregation {
    #[default]
    Max,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QueryConfig {
    /// Activation distance threshold in the 0-255 feature scale.
    pub tau_ac: f64,
    /// Number of target grid cells whose masks are united.
    pub top_n: usize,
    pub aggregation: ScoreAggregation,
    /// Cells scoring below this are never selected, even within `top_n`.
    pub relevancy_floor: Option<f64>,
    /// Overrides the field's canonical phrase embeddings.
    pub canonical: Option<Vec<Vec<f32>>>,
}

impl Default for QueryConfig {
    fn default() -> Self {
        Self {
            tau_ac: 5.0,
            top_n: 1,
            aggregation: ScoreAggregation::Max,
            relevancy_floor: None,
            canonical: None,
        }
    }
}

impl QueryConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_ac > 0.0 && self.tau_ac.is_finite()) {
            return Err(Error::domain(format!("tau_ac must be positive, got {}", self.tau_ac)));
        }
        if self.top_n < 1 {
            return Err(Error::domain("top_n must be >= 1"));
        }
        if matches!(&self.canonical, Some(c) if c.is_empty()) {
            return Err(Error::domain("canonical phrase set is empty"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Weight of the D-SSIM term.
    pub lambda: f64,
    pub iterations: usize,
    pub step_size: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.2,
            iterations: 2000,
            step_size: 5e-3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::domain(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::domain("step_size must be positive"));
        }
        Ok(())
    }
}
