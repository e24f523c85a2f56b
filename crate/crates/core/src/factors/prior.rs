use nalgebra::{SMatrix, SVector};

use crate::lie::{log_so3, right_jacobian_inv, Mat3, Rotation, Vec3};
use crate::state::StateVector;

pub type Vec6 = SVector<f64, 6>;
pub type Mat6 = SMatrix<f64, 6, 6>;

/// Gaussian constraint on one frame's pose `[δφ, δt]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PosePriorFactor {
    /// `R̂_WB`
    pub r_hat: Rotation,
    /// `ᴮt̂_BW`
    pub t_hat: Vec3,
    pub info: Mat6,
    pub frame_id: u64,
}

impl PosePriorFactor {
    pub fn from_state(x: &StateVector, info: Mat6, frame_id: u64) -> Self {
        PosePriorFactor { r_hat: x.rot_wb(), t_hat: x.t, info, frame_id }
    }
}

/// `[log(R̂_WB·R_BW), t − t̂]` and its Jacobian w.r.t. `[δφ, δt]`.
///
/// With the update `R_BW·exp(δφ)` the rotation block is `+J_r⁻¹(e_rot)`.
/// Rotating the *world* pose by `exp(ε)` instead yields `e_rot ≈ −R̂·ε`.
pub fn pose_prior_residual(x: &StateVector, prior: &PosePriorFactor) -> (Vec6, Mat6) {
    let e_rot = log_so3(&(prior.r_hat * x.rot_bw()));
    let mut e = Vec6::zeros();
    e.fixed_rows_mut::<3>(0).copy_from(&e_rot);
    e.fixed_rows_mut::<3>(3).copy_from(&(x.t - prior.t_hat));
    let mut j = Mat6::zeros();
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&right_jacobian_inv(&e_rot));
    j.fixed_view_mut::<3, 3>(3, 3).copy_from(&Mat3::identity());
    (e, j)
}
