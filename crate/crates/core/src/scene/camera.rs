use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole camera with a rigid world-to-camera transform.
///
/// Camera space follows the usual vision convention: x right, y down,
/// z forward. Pixel `(x, y)` covers `[x, x+1) x [y, y+1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Row-major 4x4.
    pub world_to_camera: [[f64; 4]; 4],
    pub near: f64,
}

impl Camera {
    pub const ORTHONORMAL_TOLERANCE: f64 = 1e-6;

    /// Camera at `eye` looking at `target`, with `up` giving the world's
    /// upward direction.
    pub fn look_at(
        eye: [f64; 3],
        target: [f64; 3],
        up: [f64; 3],
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
    ) -> Self {
        let eye = Vector3::from(eye);
        let forward = (Vector3::from(target) - eye).normalize();
        let right = forward.cross(&Vector3::from(up)).normalize();
        let down = forward.cross(&right);
        let rot = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let t = -(rot * eye);
        let mut m = [[0.0; 4]; 4];
        for r in 0..3 {
            for c in 0..3 {
                m[r][c] = rot[(r, c)];
            }
            m[r][3] = t[r];
        }
        m[3][3] = 1.0;
        Self {
            fx,
            fy,
            cx,
            cy,
            world_to_camera: m,
            near: 0.01,
        }
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        let m = &self.world_to_camera;
        Matrix3::new(
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        )
    }

    pub fn translation(&self) -> Vector3<f64> {
        let m = &self.world_to_camera;
        Vector3::new(m[0][3], m[1][3], m[2][3])
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * p + self.translation()
    }

    /// Projects a world point to pixel coordinates; `None` at or behind
    /// the near plane.
    pub fn project(&self, p: &Vector3<f64>) -> Option<[f64; 2]> {
        let c = self.to_camera(p);
        if c.z <= self.near {
            return None;
        }
        Some([self.fx * c.x / c.z + self.cx, self.fy * c.y / c.z + self.cy])
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation().transpose() * self.translation())
    }

    /// Every problem with this camera, empty when valid.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let all_finite = self
            .world_to_camera
            .iter()
            .flatten()
            .chain([&self.fx, &self.fy, &self.cx, &self.cy, &self.near])
            .all(|v| v.is_finite());
        if !all_finite {
            out.push("non-finite camera parameter".to_string());
            return out;
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            out.push(format!("focal lengths must be positive (fx={}, fy={})", self.fx, self.fy));
        }
        if !(self.near > 0.0) {
            out.push(format!("near plane must be positive, got {}", self.near));
        }
        let r = self.rotation();
        let gram = r * r.transpose();
        let dev = (gram - Matrix3::identity()).abs().max();
        if dev > Self::ORTHONORMAL_TOLERANCE {
            out.push(format!("rotation not orthonormal (max deviation {dev:e})"));
        } else if (r.determinant() - 1.0).abs() > Self::ORTHONORMAL_TOLERANCE {
            out.push(format!("rotation determinant {} != +1", r.determinant()));
        }
        let last = self.world_to_camera[3];
        if last != [0.0, 0.0, 0.0, 1.0] {
            out.push(format!("bottom row must be [0,0,0,1], got {last:?}"));
        }
        out
    }

    pub fn check(&self) -> Result<()> {
        match self.problems().into_iter().next() {
            None => Ok(()),
            Some(p) => Err(Error::Numeric(p)),
        }
    }
}
