//! Residuals, analytic Jacobians, camera model and robust kernel.

mod camera;
pub mod check;
pub mod inertial;
mod prior;
mod reprojection;
mod robust;

use thiserror::Error;

pub use camera::{Observation, PinholeCamera, MIN_DEPTH};
pub use check::{check_jacobians, BlockReport, CheckOptions, CheckReport};
pub use inertial::{inertial_covariance, inertial_information, inertial_jacobians, inertial_residual, Mat15};
pub use prior::{pose_prior_residual, Mat6, PosePriorFactor, Vec6};
pub use reprojection::{point_in_camera, reprojection_jacobian, reprojection_residual, Mat2x6};
pub use robust::{robust_weight, KernelKind, RobustKernel, HUBER_DELTA};

#[derive(Debug, Error, PartialEq)]
pub enum FactorError {
    #[error("point behind camera (z = {z})")]
    BehindCamera { z: f64 },
    #[error("factor duration {factor} s does not match state interval {states} s")]
    DurationMismatch { factor: f64, states: f64 },
    #[error("covariance is not positive definite")]
    NonPositiveDefinite,
    #[error("invalid camera intrinsics")]
    InvalidCamera,
}
