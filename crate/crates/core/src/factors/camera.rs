use nalgebra::{Matrix2, Matrix2x3, Vector2};

use super::FactorError;
use crate::lie::Vec3;

/// Depth below which a point is treated as behind the camera.
pub const MIN_DEPTH: f64 = 1e-6;

/// Undistorted pinhole camera.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PinholeCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl PinholeCamera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, FactorError> {
        let cam = PinholeCamera { fx, fy, cx, cy, width, height };
        if !cam.is_valid() {
            return Err(FactorError::InvalidCamera);
        }
        Ok(cam)
    }

    pub fn is_valid(&self) -> bool {
        self.fx > 0.0
            && self.fy > 0.0
            && (0.0..=self.width as f64).contains(&self.cx)
            && (0.0..=self.height as f64).contains(&self.cy)
    }

    pub fn project(&self, p_c: &Vec3) -> Result<Vector2<f64>, FactorError> {
        if p_c.z <= MIN_DEPTH {
            return Err(FactorError::BehindCamera { z: p_c.z });
        }
        Ok(Vector2::new(self.fx * p_c.x / p_c.z + self.cx, self.fy * p_c.y / p_c.z + self.cy))
    }

    /// `∂π/∂p_C`, a 2×3 matrix.
    pub fn project_jacobian(&self, p_c: &Vec3) -> Result<Matrix2x3<f64>, FactorError> {
        if p_c.z <= MIN_DEPTH {
            return Err(FactorError::BehindCamera { z: p_c.z });
        }
        let iz = 1.0 / p_c.z;
        let iz2 = iz * iz;
        Ok(Matrix2x3::new(
            self.fx * iz, 0.0, -self.fx * p_c.x * iz2,
            0.0, self.fy * iz, -self.fy * p_c.y * iz2,
        ))
    }

    /// Unit bearing through pixel `u`.
    pub fn unproject(&self, u: &Vector2<f64>) -> Vec3 {
        Vec3::new((u.x - self.cx) / self.fx, (u.y - self.cy) / self.fy, 1.0).normalize()
    }

    pub fn in_image(&self, u: &Vector2<f64>) -> bool {
        u.x >= 0.0 && u.y >= 0.0 && u.x < self.width as f64 && u.y < self.height as f64
    }
}

/// A 2-D measurement of a tracked feature.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub u: Vector2<f64>,
    pub sigma: Matrix2<f64>,
    pub feature_id: u64,
    pub frame_id: u64,
    pub score: f64,
}

impl Observation {
    pub fn isotropic(u: Vector2<f64>, sigma_px: f64, feature_id: u64, frame_id: u64) -> Self {
        Observation {
            u,
            sigma: Matrix2::identity() * (sigma_px * sigma_px),
            feature_id,
            frame_id,
            score: 1.0,
        }
    }

    /// Upper-triangular `L` with `LᵀL = Σ⁻¹`, so `L·e` is whitened.
    pub fn sqrt_information(&self) -> Result<Matrix2<f64>, FactorError> {
        let info = self.sigma.try_inverse().ok_or(FactorError::NonPositiveDefinite)?;
        let chol = nalgebra::Cholesky::new(info).ok_or(FactorError::NonPositiveDefinite)?;
        Ok(chol.l().transpose())
    }
}
