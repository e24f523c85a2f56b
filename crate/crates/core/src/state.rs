//! Frame state, manifold update and pose prediction.
//!
//! The stored pose follows the map-to-body convention: `phi` parameterizes
//! `R_BW = exp(phi^)` and `t` is `ᴮt_BW`, so a world point maps into the body
//! frame as `p_B = R_BW·p_W + t`. Everything outside this module should use the
//! world-frame accessors ([`StateVector::rot_wb`], [`StateVector::position`]).

use nalgebra::SVector;
use thiserror::Error;

use crate::imu::{ImuBias, PreintegratedFactor};
use crate::lie::{exp_so3, log_so3, Rotation, Vec3};

pub type Vec15 = SVector<f64, 15>;

#[derive(Debug, Error, PartialEq)]
pub enum StateError {
    #[error("non-monotonic time: factor duration {0} s is not positive")]
    NonMonotonicTime(f64),
    #[error("gravity magnitude {0} m/s² outside [{1}, {2}]")]
    GravityOutOfRange(f64, f64, f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateVector {
    pub phi: Vec3,
    pub t: Vec3,
    pub v: Vec3,
    pub bg: Vec3,
    pub ba: Vec3,
    pub stamp: f64,
}

impl StateVector {
    /// Builds a state from a world-frame pose `(R_WB, ᵂp_B)`.
    pub fn from_world_pose(rot_wb: &Rotation, position: &Vec3, v: Vec3, bias: ImuBias, stamp: f64) -> Self {
        let rot_bw = rot_wb.inverse();
        StateVector {
            phi: log_so3(&rot_bw),
            t: -(rot_bw * position),
            v,
            bg: bias.gyro,
            ba: bias.accel,
            stamp,
        }
    }

    #[inline]
    pub fn rot_bw(&self) -> Rotation {
        exp_so3(&self.phi)
    }

    #[inline]
    pub fn rot_wb(&self) -> Rotation {
        self.rot_bw().inverse()
    }

    /// Body origin in the world frame, `ᵂt_WB = −R_WB·t`.
    #[inline]
    pub fn position(&self) -> Vec3 {
        -(self.rot_wb() * self.t)
    }

    pub fn bias(&self) -> ImuBias {
        ImuBias { gyro: self.bg, accel: self.ba }
    }

    pub fn is_finite(&self) -> bool {
        [self.phi, self.t, self.v, self.bg, self.ba].iter().all(|x| x.iter().all(|c| c.is_finite()))
            && self.stamp.is_finite()
    }

    pub fn boxplus(&self, d: &StateDelta) -> StateVector {
        boxplus(self, d)
    }

    /// Applies only the pose part `[δφ, δt]` of an update.
    pub fn boxplus_pose(&self, d_phi: &Vec3, d_t: &Vec3) -> StateVector {
        StateVector {
            phi: log_so3(&(self.rot_bw() * exp_so3(d_phi))),
            t: self.t + d_t,
            ..*self
        }
    }
}

/// Tangent-space update `[δφ, δt, δv, δb_g, δb_a]`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct StateDelta {
    pub phi: Vec3,
    pub t: Vec3,
    pub v: Vec3,
    pub bg: Vec3,
    pub ba: Vec3,
}

impl StateDelta {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_vector(x: &Vec15) -> Self {
        StateDelta {
            phi: x.fixed_rows::<3>(0).into_owned(),
            t: x.fixed_rows::<3>(3).into_owned(),
            v: x.fixed_rows::<3>(6).into_owned(),
            bg: x.fixed_rows::<3>(9).into_owned(),
            ba: x.fixed_rows::<3>(12).into_owned(),
        }
    }

    pub fn to_vector(&self) -> Vec15 {
        let mut x = Vec15::zeros();
        x.fixed_rows_mut::<3>(0).copy_from(&self.phi);
        x.fixed_rows_mut::<3>(3).copy_from(&self.t);
        x.fixed_rows_mut::<3>(6).copy_from(&self.v);
        x.fixed_rows_mut::<3>(9).copy_from(&self.bg);
        x.fixed_rows_mut::<3>(12).copy_from(&self.ba);
        x
    }
}

/// `R_BW ← R_BW·exp(δφ^)`; every other block is additive.
pub fn boxplus(x: &StateVector, d: &StateDelta) -> StateVector {
    let phi = if d.phi == Vec3::zeros() {
        x.phi
    } else {
        log_so3(&(x.rot_bw() * exp_so3(&d.phi)))
    };
    StateVector {
        phi,
        t: x.t + d.t,
        v: x.v + d.v,
        bg: x.bg + d.bg,
        ba: x.ba + d.ba,
        stamp: x.stamp,
    }
}

/// Camera-IMU extrinsics: `p_C = R_CB·p_B + ᶜt_CB`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Extrinsics {
    pub r_cb: Rotation,
    pub t_cb: Vec3,
}

impl Extrinsics {
    pub fn identity() -> Self {
        Extrinsics { r_cb: Rotation::identity(), t_cb: Vec3::zeros() }
    }

    /// Body x forward / y left / z up mapped to camera z forward / x right / y down.
    pub fn forward_looking() -> Self {
        let m = nalgebra::Matrix3::new(
            0.0, -1.0, 0.0, //
            0.0, 0.0, -1.0, //
            1.0, 0.0, 0.0,
        );
        Extrinsics { r_cb: Rotation::from_matrix_unchecked(m), t_cb: Vec3::zeros() }
    }

    /// World-frame camera pose `(R_WC, ᵂt_WC)` for a body state.
    pub fn camera_pose(&self, x: &StateVector) -> (Rotation, Vec3) {
        let r_wb = x.rot_wb();
        let r_bc = self.r_cb.inverse();
        // p_B = R_BC (p_C − t_CB); camera origin at p_C = 0
        let c_in_body = -(r_bc * self.t_cb);
        (r_wb * r_bc, x.position() + r_wb * c_in_body)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gravity(Vec3);

impl Gravity {
    pub const DEFAULT_RANGE: (f64, f64) = (9.7, 9.9);

    pub fn new(g: Vec3) -> Result<Self, StateError> {
        Self::with_range(g, Self::DEFAULT_RANGE)
    }

    pub fn with_range(g: Vec3, (lo, hi): (f64, f64)) -> Result<Self, StateError> {
        let n = g.norm();
        if !(lo..=hi).contains(&n) {
            return Err(StateError::GravityOutOfRange(n, lo, hi));
        }
        Ok(Gravity(g))
    }

    pub fn standard() -> Self {
        Gravity(Vec3::new(0.0, 0.0, -9.81))
    }

    #[inline]
    pub fn vector(&self) -> &Vec3 {
        &self.0
    }
}

/// Predicted world-frame pose and velocity of the next frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuPrediction {
    pub rot_wb: Rotation,
    pub v: Vec3,
    pub position: Vec3,
}

/// IMU forward prediction with first-order bias correction. The bias offset
/// is taken between `x_k`'s biases and the factor's linearization point.
pub fn predict_with_imu(x_k: &StateVector, f: &PreintegratedFactor, g: &Gravity) -> Result<ImuPrediction, StateError> {
    if f.duration <= 0.0 || !f.duration.is_finite() {
        return Err(StateError::NonMonotonicTime(f.duration));
    }
    let dt = f.duration;
    let (d_rot, d_vel, d_pos) = f.corrected_to(&x_k.bias());
    let r_wb = x_k.rot_wb();
    let g = g.vector();
    let p = x_k.position();
    Ok(ImuPrediction {
        rot_wb: r_wb * d_rot,
        v: x_k.v + g * dt + r_wb * d_vel,
        position: p + x_k.v * dt + 0.5 * g * dt * dt + r_wb * d_pos,
    })
}

/// Constant-velocity extrapolation from the two most recent states.
pub fn predict_constant_velocity(x_k: &StateVector, x_prev: &StateVector) -> (Rotation, Vec3) {
    let r_k = x_k.rot_wb();
    let step = x_prev.rot_bw() * r_k;
    (r_k * step, 2.0 * x_k.position() - x_prev.position())
}

impl StateVector {
    /// Seeds the next frame from an IMU prediction, carrying biases over.
    pub fn from_imu_prediction(prev: &StateVector, pred: &ImuPrediction, stamp: f64) -> Self {
        StateVector::from_world_pose(&pred.rot_wb, &pred.position, pred.v, prev.bias(), stamp)
    }

    /// Seeds the next frame from a constant-velocity prediction. The velocity
    /// is the finite difference over the last interval.
    pub fn from_cv_prediction(x_k: &StateVector, x_prev: &StateVector, stamp: f64) -> Self {
        let (r, p) = predict_constant_velocity(x_k, x_prev);
        let dt = x_k.stamp - x_prev.stamp;
        let v = if dt > 0.0 { (x_k.position() - x_prev.position()) / dt } else { x_k.v };
        StateVector::from_world_pose(&r, &p, v, x_k.bias(), stamp)
    }
}
