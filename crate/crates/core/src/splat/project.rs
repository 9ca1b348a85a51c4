use nalgebra::{Matrix2x3, Vector3};

use super::RenderConfig;
use crate::error::{Error, Result};
use crate::scene::{Camera, Gaussian, GaussianCloud};

/// A Gaussian projected to screen space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat2D {
    pub mean2d: [f64; 2],
    /// Upper triangle `(xx, xy, yy)` of the 2-D covariance, pixels squared.
    pub cov2d: [f64; 3],
    /// Upper triangle of the inverse covariance.
    pub conic: [f64; 3],
    pub depth: f64,
    /// Three standard deviations along the major axis, in pixels.
    pub radius: f64,
    pub opacity: f64,
    pub gaussian_id: usize,
}

impl Splat2D {
    /// `opacity * exp(-0.5 d^T cov^-1 d)` at pixel-space point `p`.
    #[inline]
    pub fn alpha_at(&self, p: [f64; 2]) -> f64 {
        let dx = p[0] - self.mean2d[0];
        let dy = p[1] - self.mean2d[1];
        let power = -0.5 * (self.conic[0] * dx * dx + 2.0 * self.conic[1] * dx * dy + self.conic[2] * dy * dy);
        if power > 0.0 {
            return self.opacity;
        }
        self.opacity * power.exp()
    }
}

/// EWA projection. `Ok(None)` means culled: at or behind the near plane, or
/// more than three standard deviations outside the image.
pub fn project_gaussian(
    g: &Gaussian,
    gaussian_id: usize,
    cam: &Camera,
    cfg: &RenderConfig,
    width: usize,
    height: usize,
) -> Result<Option<Splat2D>> {
    let rot = cam.rotation();
    let c = rot * Vector3::from(g.position) + cam.translation();
    if !(c.x.is_finite() && c.y.is_finite() && c.z.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite camera-space position for gaussian {gaussian_id}"
        )));
    }
    if c.z <= cam.near {
        return Ok(None);
    }
    let (z, z2) = (c.z, c.z * c.z);
    let jac = Matrix2x3::new(
        cam.fx / z,
        0.0,
        -cam.fx * c.x / z2,
        0.0,
        cam.fy / z,
        -cam.fy * c.y / z2,
    );
    let cov_cam = rot * g.covariance() * rot.transpose();
    let cov = jac * cov_cam * jac.transpose();
    let (a, b, d) = (cov[(0, 0)] + cfg.dilation, cov[(0, 1)], cov[(1, 1)] + cfg.dilation);
    let det = a * d - b * b;
    if !(det > 0.0 && det.is_finite()) {
        return Err(Error::Numeric(format!(
            "degenerate projected covariance for gaussian {gaussian_id} (det {det})"
        )));
    }
    let mid = 0.5 * (a + d);
    let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
    let radius = 3.0 * lambda_max.sqrt();
    let mean = [cam.fx * c.x / z + cam.cx, cam.fy * c.y / z + cam.cy];
    if mean[0] < -radius
        || mean[1] < -radius
        || mean[0] > width as f64 + radius
        || mean[1] > height as f64 + radius
    {
        return Ok(None);
    }
    Ok(Some(Splat2D {
        mean2d: mean,
        cov2d: [a, b, d],
        conic: [d / det, -b / det, a / det],
        depth: z,
        radius,
        opacity: g.opacity,
        gaussian_id,
    }))
}

/// Projects every Gaussian and returns the survivors sorted front to back,
/// ties broken by Gaussian index.
pub fn project_cloud(
    cloud: &GaussianCloud,
    cam: &Camera,
    cfg: &RenderConfig,
    width: usize,
    height: usize,
) -> Result<Vec<Splat2D>> {
    cam.check()?;
    let mut splats = Vec::with_capacity(cloud.len());
    for (i, g) in cloud.gaussians.iter().enumerate() {
        if let Some(s) = project_gaussian(g, i, cam, cfg, width, height)? {
            splats.push(s);
        }
    }
    splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.gaussian_id.cmp(&b.gaussian_id)));
    Ok(splats)
}
