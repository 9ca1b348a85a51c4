use std::path::Path;

use nalgebra::{Matrix3, UnitQuaternion, Quaternion, Vector3};

use crate::error::{Error, Result};

/// Floats per record in `gaussians.bin`: position, scale, rotation
/// quaternion (w, x, y, z), opacity, feature.
pub const GAUSSIAN_RECORD_FLOATS: usize = 3 + 3 + 4 + 1 + 3;

#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub position: [f64; 3],
    pub scale: [f64; 3],
    /// Unit quaternion `(w, x, y, z)`.
    pub rotation: [f64; 4],
    pub opacity: f64,
    pub feature: [f64; 3],
}

impl Gaussian {
    pub fn isotropic(position: [f64; 3], sigma: f64, opacity: f64, feature: [f64; 3]) -> Self {
        Self {
            position,
            scale: [sigma; 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity,
            feature,
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let [w, x, y, z] = self.rotation;
        UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z)).to_rotation_matrix().into_inner()
    }

    /// World-space covariance `R diag(s^2) R^T`.
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation_matrix();
        let s = Matrix3::from_diagonal(&Vector3::from(self.scale.map(|v| v * v)));
        r * s * r.transpose()
    }

    fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let finite = self
            .position
            .iter()
            .chain(&self.scale)
            .chain(&self.rotation)
            .chain(&self.feature)
            .chain(std::iter::once(&self.opacity))
            .all(|v| v.is_finite());
        if !finite {
            out.push("non-finite parameter".into());
            return out;
        }
        if self.scale.iter().any(|&s| s <= 0.0) {
            out.push(format!("non-positive scale {:?}", self.scale));
        }
        let norm = self.rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            out.push(format!("quaternion norm {norm} != 1"));
        }
        if !(self.opacity > 0.0 && self.opacity < 1.0) {
            out.push(format!("opacity {} outside (0, 1)", self.opacity));
        }
        if self.feature.iter().any(|&f| !(0.0..=1.0).contains(&f)) {
            out.push(format!("feature {:?} outside [0, 1]", self.feature));
        }
        out
    }
}

/// Fixed Gaussian geometry with trainable per-Gaussian 3-d features.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GaussianCloud {
    pub gaussians: Vec<Gaussian>,
}

impl GaussianCloud {
    pub fn new(gaussians: Vec<Gaussian>) -> Self {
        Self { gaussians }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn features(&self) -> Vec<[f64; 3]> {
        self.gaussians.iter().map(|g| g.feature).collect()
    }

    pub fn set_features(&mut self, features: &[[f64; 3]]) -> Result<()> {
        if features.len() != self.gaussians.len() {
            return Err(Error::contract(format!(
                "{} features for {} gaussians",
                features.len(),
                self.gaussians.len()
            )));
        }
        for (g, f) in self.gaussians.iter_mut().zip(features) {
            g.feature = f.map(|v| v.clamp(0.0, 1.0));
        }
        Ok(())
    }

    /// `(gaussian index, problem)` for every invariant violation.
    pub fn problems(&self) -> Vec<(usize, String)> {
        self.gaussians
            .iter()
            .enumerate()
            .flat_map(|(i, g)| g.problems().into_iter().map(move |p| (i, p)))
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len() * GAUSSIAN_RECORD_FLOATS * 4);
        for g in &self.gaussians {
            let vals = g
                .position
                .iter()
                .chain(&g.scale)
                .chain(&g.rotation)
                .chain(std::iter::once(&g.opacity))
                .chain(&g.feature);
            for &v in vals {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let rec = GAUSSIAN_RECORD_FLOATS * 4;
        if !bytes.len().is_multiple_of(rec) {
            return Err(Error::format(
                path,
                format!("length {} is not a multiple of {rec}", bytes.len()),
            ));
        }
        let gaussians = bytes
            .chunks_exact(rec)
            .map(|chunk| {
                let v: Vec<f64> = chunk
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                    .collect();
                Gaussian {
                    position: [v[0], v[1], v[2]],
                    scale: [v[3], v[4], v[5]],
                    rotation: [v[6], v[7], v[8], v[9]],
                    opacity: v[10],
                    feature: [v[11], v[12], v[13]],
                }
            })
            .collect();
        Ok(Self { gaussians })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covariance_of_rotated_gaussian() {
        // 90 degrees about z swaps the x and y variances.
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let g = Gaussian {
            position: [0.0; 3],
            scale: [2.0, 1.0, 0.5],
            rotation: [h, 0.0, 0.0, h],
            opacity: 0.5,
            feature: [0.5; 3],
        };
        let c = g.covariance();
        assert!((c[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((c[(1, 1)] - 4.0).abs() < 1e-12);
        assert!((c[(2, 2)] - 0.25).abs() < 1e-12);
        assert!(c[(0, 1)].abs() < 1e-12);
    }

    #[test]
    fn binary_round_trip_is_stable() {
        let cloud = GaussianCloud::new(vec![
            Gaussian::isotropic([0.1, -2.0, 3.5], 0.3, 0.7, [0.2, 0.4, 0.6]),
            Gaussian::isotropic([1.0, 1.0, 1.0], 0.01, 0.99, [0.0, 1.0, 0.5]),
        ]);
        let bytes = cloud.to_bytes();
        assert_eq!(bytes.len(), 2 * 56);
        let back = GaussianCloud::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert!(GaussianCloud::from_bytes(&bytes[..55], Path::new("mem")).is_err());
    }

    #[test]
    fn reports_invalid_gaussians() {
        let mut g = Gaussian::isotropic([0.0; 3], 0.1, 1.0, [0.5; 3]);
        g.scale[1] = 0.0;
        let cloud = GaussianCloud::new(vec![g]);
        let probs = cloud.problems();
        assert_eq!(probs.len(), 2);
    }
}
