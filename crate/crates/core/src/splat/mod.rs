//! Feature splatting over fixed Gaussian geometry.
//!
//! Geometry (positions, covariances, opacities) is frozen, so the rendered
//! feature at a pixel is a fixed linear combination of per-Gaussian
//! features. [`ViewWeights`] caches that combination per view; training
//! reuses it for both the forward and backward passes.

mod loss;
mod project;
mod raster;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use loss::{feature_loss, ssim_window, LossOutput, SSIM_C1, SSIM_C2};
pub use project::{project_cloud, project_gaussian, Splat2D};
pub use raster::{
    backward_features, composite_pixel, render_feature_map, CompositeEntry, ViewWeights,
};
pub use train::{train_features, TrainOutcome, TrainingView};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    /// Tile edge in pixels.
    pub tile: usize,
    /// Contributions with smaller alpha are skipped.
    pub alpha_cutoff: f64,
    /// Added to the projected covariance diagonal, in pixels squared.
    pub dilation: f64,
    /// Compositing stops once transmittance falls below this.
    pub transmittance_floor: f64,
    /// Upper clip on per-splat alpha.
    pub max_alpha: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            tile: 16,
            alpha_cutoff: 1.0 / 255.0,
            dilation: 0.3,
            transmittance_floor: 1e-4,
            max_alpha: 0.99,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tile < 1 {
            return Err(Error::domain("tile must be >= 1"));
        }
        if !(self.alpha_cutoff > 0.0 && self.alpha_cutoff < 1.0) {
            return Err(Error::domain(format!(
                "alpha_cutoff {} outside (0, 1)",
                self.alpha_cutoff
            )));
        }
        if !(self.dilation >= 0.0) {
            return Err(Error::domain("dilation must be >= 0"));
        }
        if !(self.max_alpha > 0.0 && self.max_alpha < 1.0) {
            return Err(Error::domain("max_alpha must lie in (0, 1)"));
        }
        Ok(())
    }
}
