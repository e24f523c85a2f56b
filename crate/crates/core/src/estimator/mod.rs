//! Motion-only estimation: instant localization, covariance recovery,
//! marginalization of visual factors, windowed BA and structure refinement.

mod instant;
mod lm;
mod marginal;
mod structure;
mod timing;
mod window;

use nalgebra::{DMatrix, DVector, Matrix2};
use thiserror::Error;

use crate::factors::{
    point_in_camera, reprojection_jacobian, robust_weight, FactorError, Mat6, Observation, PinholeCamera, RobustKernel, Vec6,
};
use crate::lie::{log_so3, right_jacobian_inv, Vec3};
use crate::state::{Extrinsics, StateDelta, StateVector, Vec15};

pub use instant::{solve_instant, InertialLink, InstantInput, InstantSolution, MIN_INSTANT_OBSERVATIONS};
pub use lm::{damped, levenberg_marquardt, solve_dense, LmProblem, LmReport, LmSettings};
pub use marginal::{marginalize_visual, recover_covariance, schur_marginal, MarginalCovariance, MarginalizedPrior, PRIOR_DAMPING};
pub use structure::{refine_landmark, structure_only_ba, StructureLandmark, StructureOutcome};
pub use timing::{mean_std, Stage, StageTimer, TimingRecord};
pub use window::{windowed_motion_ba, VisualBackend, WindowConfig, WindowInput, WindowSolution};

#[derive(Debug, Error, PartialEq)]
pub enum EstimatorError {
    #[error("estimator: {0} reprojection factors, at least {1} needed")]
    InsufficientObservations(usize, usize),
    #[error("estimator: reduced block is singular")]
    SingularReducedBlock,
    #[error("estimator: information matrix is singular")]
    SingularInformation,
    #[error("estimator: no state block with id {0}")]
    UnknownBlock(u64),
    #[error("estimator: window of {0} frames, at least 2 needed")]
    WindowTooSmall(usize),
    #[error("estimator: window needs {expected} entries of {what}, got {got}")]
    WindowShape { what: &'static str, expected: usize, got: usize },
    #[error("estimator: landmark {0} triangulation diverged")]
    TriangulationDiverged(u64),
    #[error("estimator: {0}")]
    Factor(#[from] FactorError),
}

/// Which part of the state a block carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StateDim {
    /// `[δφ, δt]`
    Pose,
    /// `[δφ, δt, δv, δb_g, δb_a]`
    Full,
}

impl StateDim {
    pub fn size(self) -> usize {
        match self {
            StateDim::Pose => 6,
            StateDim::Full => 15,
        }
    }

    pub(crate) fn retract(self, x: &StateVector, dx: &[f64]) -> StateVector {
        match self {
            StateDim::Pose => x.boxplus_pose(&Vec3::from_column_slice(&dx[0..3]), &Vec3::from_column_slice(&dx[3..6])),
            StateDim::Full => x.boxplus(&StateDelta::from_vector(&Vec15::from_column_slice(dx))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StateBlock {
    pub id: u64,
    pub offset: usize,
    pub size: usize,
}

/// `H δx = b` with `b = −Jᵀ W r`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalEquation {
    pub h: DMatrix<f64>,
    pub b: DVector<f64>,
    pub ordering: Vec<StateBlock>,
}

impl NormalEquation {
    pub fn block(&self, id: u64) -> Result<StateBlock, EstimatorError> {
        self.ordering.iter().copied().find(|s| s.id == id).ok_or(EstimatorError::UnknownBlock(id))
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn is_consistent(&self) -> bool {
        let n = self.dim();
        let mut off = 0;
        for s in &self.ordering {
            if s.offset != off {
                return false;
            }
            off += s.size;
        }
        off == n && self.h.nrows() == n && self.h.ncols() == n && (&self.h - self.h.transpose()).amax() <= 1e-10 * self.h.amax().max(1.0)
    }
}

/// Camera model and robust kernel used by every reprojection factor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VisualModel {
    pub cam: PinholeCamera,
    pub extr: Extrinsics,
    pub kernel: RobustKernel,
}

/// A reprojection factor against a fixed world point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VisualFactor {
    pub landmark_id: u64,
    pub p_w: Vec3,
    pub obs: Observation,
    /// `L` with `LᵀL = Σ⁻¹`.
    pub sqrt_info: Matrix2<f64>,
}

impl VisualFactor {
    pub fn new(landmark_id: u64, p_w: Vec3, obs: Observation) -> Result<Self, FactorError> {
        Ok(VisualFactor { landmark_id, p_w, obs, sqrt_info: obs.sqrt_information()? })
    }
}

/// Robust visual cost at `x`; infinite when a point falls behind the camera.
pub(crate) fn visual_cost(x: &StateVector, factors: &[VisualFactor], m: &VisualModel) -> f64 {
    let mut c = 0.0;
    for f in factors {
        match m.cam.project(&point_in_camera(x, &f.p_w, &m.extr)) {
            Ok(u) => c += m.kernel.cost((f.sqrt_info * (u - f.obs.u)).norm_squared()),
            Err(_) => return f64::INFINITY,
        }
    }
    c
}

/// IRLS-weighted `(Σ wJᵀΣ⁻¹J, −Σ wJᵀΣ⁻¹e, cost)` w.r.t. `[δφ, δt]`, in
/// factor order. Factors behind the camera are skipped.
pub(crate) fn visual_normal(x: &StateVector, factors: &[VisualFactor], m: &VisualModel) -> (Mat6, Vec6, f64) {
    let mut h = Mat6::zeros();
    let mut b = Vec6::zeros();
    let mut cost = 0.0;
    for f in factors {
        let p_c = point_in_camera(x, &f.p_w, &m.extr);
        let (Ok(u), Ok((j, _))) = (m.cam.project(&p_c), reprojection_jacobian(x, &f.p_w, &m.extr, &m.cam)) else {
            continue;
        };
        let e = f.sqrt_info * (u - f.obs.u);
        let s = e.norm_squared();
        let w = robust_weight(s, &m.kernel);
        let jw = f.sqrt_info * j;
        h += w * jw.transpose() * jw;
        b -= w * jw.transpose() * e;
        cost += m.kernel.cost(s);
    }
    (h, b, cost)
}

/// Mean pixel reprojection error; points behind the camera are ignored.
pub fn mean_reprojection_error(x: &StateVector, factors: &[VisualFactor], m: &VisualModel) -> f64 {
    let errs: Vec<f64> = factors
        .iter()
        .filter_map(|f| m.cam.project(&point_in_camera(x, &f.p_w, &m.extr)).ok().map(|u| (u - f.obs.u).norm()))
        .collect();
    if errs.is_empty() {
        f64::INFINITY
    } else {
        errs.iter().sum::<f64>() / errs.len() as f64
    }
}

/// Gaussian prior on a whole state block (6 or 15 entries).
#[derive(Clone, Debug, PartialEq)]
pub struct StatePrior {
    pub mean: StateVector,
    pub info: DMatrix<f64>,
    pub dim: StateDim,
}

impl StatePrior {
    /// Diagonal prior from standard deviations of `[φ, t, v, b_g, b_a]`.
    pub fn diagonal(mean: StateVector, dim: StateDim, sigmas: [f64; 5]) -> Self {
        let n = dim.size();
        let mut info = DMatrix::zeros(n, n);
        for i in 0..n {
            let s = sigmas[i / 3];
            info[(i, i)] = 1.0 / (s * s);
        }
        StatePrior { mean, info, dim }
    }

    /// `[log(R̄_BWᵀR_BW), t − t̄, v − v̄, b_g − b̄_g, b_a − b̄_a]` and its Jacobian.
    pub fn residual(&self, x: &StateVector) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.dim.size();
        let e_rot = log_so3(&(self.mean.rot_bw().inverse() * x.rot_bw()));
        let mut e = DVector::zeros(n);
        let parts = [e_rot, x.t - self.mean.t, x.v - self.mean.v, x.bg - self.mean.bg, x.ba - self.mean.ba];
        for (k, p) in parts.iter().take(n / 3).enumerate() {
            e.rows_mut(3 * k, 3).copy_from(p);
        }
        let mut j = DMatrix::identity(n, n);
        j.view_mut((0, 0), (3, 3)).copy_from(&right_jacobian_inv(&e_rot));
        (e, j)
    }

    pub fn cost(&self, x: &StateVector) -> f64 {
        let (e, _) = self.residual(x);
        (e.transpose() * &self.info * &e)[0]
    }

    /// Same information, new linearization point.
    pub fn relinearized(&self, mean: StateVector) -> Self {
        StatePrior { mean, ..self.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imu::ImuBias;
    use crate::lie::Rotation;

    #[test]
    fn prior_residual_vanishes_at_mean_and_is_linear_in_t() {
        let x = StateVector::from_world_pose(&Rotation::exp(&Vec3::new(0.2, 0.1, -0.3)), &Vec3::new(1.0, 2.0, 0.5), Vec3::x(), ImuBias::zero(), 0.0);
        let p = StatePrior::diagonal(x, StateDim::Full, [1.0, 10.0, 1.0, 0.1, 0.1]);
        assert!(p.residual(&x).0.amax() < 1e-15);
        let mut y = x;
        y.t.x += 1.0;
        assert!((p.cost(&y) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn ordering_consistency() {
        let ne = NormalEquation {
            h: DMatrix::identity(21, 21),
            b: DVector::zeros(21),
            ordering: vec![StateBlock { id: 0, offset: 0, size: 6 }, StateBlock { id: 1, offset: 6, size: 15 }],
        };
        assert!(ne.is_consistent());
        assert_eq!(ne.block(1).unwrap().offset, 6);
        assert!(ne.block(4).is_err());
    }
}
