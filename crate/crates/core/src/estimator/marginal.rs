use nalgebra::{DMatrix, DVector};

use super::{visual_normal, EstimatorError, NormalEquation, VisualFactor, VisualModel};
use crate::factors::{Mat6, PosePriorFactor};
use crate::lie::{right_jacobian_inv, Mat3, Rotation, Vec3};
use crate::state::StateVector;

/// Damping added to a rank-deficient prior before use.
pub const PRIOR_DAMPING: f64 = 1e-6;
const MAX_CONDITION: f64 = 1e12;
const REGULARIZATION: f64 = 1e-12;

fn gather(ne: &NormalEquation, keep: u64) -> Result<(Vec<usize>, Vec<usize>), EstimatorError> {
    let blk = ne.block(keep)?;
    let kept: Vec<usize> = (blk.offset..blk.offset + blk.size).collect();
    let rest: Vec<usize> = (0..ne.dim()).filter(|i| !kept.contains(i)).collect();
    Ok((kept, rest))
}

fn select(h: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| h[(rows[i], cols[j])])
}

/// Cholesky of `H_rr`, regularized once when badly conditioned.
fn factor_reduced(h_rr: DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>, EstimatorError> {
    let sym = 0.5 * (&h_rr + h_rr.transpose());
    let eig = sym.clone().symmetric_eigen();
    let (lo, hi) = (eig.eigenvalues.min(), eig.eigenvalues.max());
    let ill = lo <= 0.0 || hi / lo > MAX_CONDITION;
    let m = if ill { &sym + DMatrix::identity(sym.nrows(), sym.nrows()) * REGULARIZATION } else { sym };
    nalgebra::Cholesky::new(m).ok_or(EstimatorError::SingularReducedBlock)
}

/// `H̄_tt = H_tt − H_tr H_rr⁻¹ H_rt` and `b̄_t = b_t − H_tr H_rr⁻¹ b_r`.
pub fn schur_marginal(ne: &NormalEquation, keep: u64) -> Result<(DMatrix<f64>, DVector<f64>), EstimatorError> {
    let (kept, rest) = gather(ne, keep)?;
    let h_tt = select(&ne.h, &kept, &kept);
    let b_t = DVector::from_fn(kept.len(), |i, _| ne.b[kept[i]]);
    if rest.is_empty() {
        return Ok((0.5 * (&h_tt + h_tt.transpose()), b_t));
    }
    let h_tr = select(&ne.h, &kept, &rest);
    let b_r = DVector::from_fn(rest.len(), |i, _| ne.b[rest[i]]);
    let chol = factor_reduced(select(&ne.h, &rest, &rest))?;
    let x = chol.solve(&h_tr.transpose());
    let h_bar = &h_tt - &h_tr * &x;
    let b_bar = b_t - x.transpose() * b_r;
    Ok((0.5 * (&h_bar + h_bar.transpose()), b_bar))
}

/// Marginal covariance of one state block in its tangent coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginalCovariance {
    pub block_id: u64,
    pub sigma: DMatrix<f64>,
    phi: Vec3,
    rot_wb: Rotation,
}

impl MarginalCovariance {
    fn sub(&self, at: usize) -> Mat3 {
        Mat3::from_fn(|i, j| self.sigma[(at + i, at + j)])
    }

    /// Covariance of the rotation vector `φ`: `J_r⁻¹(φ) Σ_φφ J_r⁻ᵀ(φ)`.
    pub fn rotation(&self) -> Mat3 {
        let j = right_jacobian_inv(&self.phi);
        j * self.sub(0) * j.transpose()
    }

    /// Body-frame translation `t`, identity Jacobian.
    pub fn translation(&self) -> Mat3 {
        self.sub(3)
    }

    /// `R_WB Σ_tt R_WBᵀ`.
    pub fn translation_world(&self) -> Mat3 {
        let r = self.rot_wb.matrix();
        r * self.sub(3) * r.transpose()
    }

    /// Velocity and biases when the block carries them.
    pub fn velocity(&self) -> Option<Mat3> {
        (self.sigma.nrows() >= 9).then(|| self.sub(6))
    }

    pub fn gyro_bias(&self) -> Option<Mat3> {
        (self.sigma.nrows() >= 12).then(|| self.sub(9))
    }

    pub fn accel_bias(&self) -> Option<Mat3> {
        (self.sigma.nrows() >= 15).then(|| self.sub(12))
    }
}

/// `Σ = H̄_block⁻¹` for the block `block` evaluated at `state`.
pub fn recover_covariance(ne: &NormalEquation, block: u64, state: &StateVector) -> Result<MarginalCovariance, EstimatorError> {
    let (h_bar, _) = schur_marginal(ne, block)?;
    let chol = nalgebra::Cholesky::new(h_bar).ok_or(EstimatorError::SingularInformation)?;
    let sigma = chol.inverse();
    let sigma = 0.5 * (&sigma + sigma.transpose());
    Ok(MarginalCovariance { block_id: block, sigma, phi: state.phi, rot_wb: state.rot_wb() })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MarginalizedPrior {
    pub prior: PosePriorFactor,
    pub rank: usize,
}

impl MarginalizedPrior {
    pub fn rank_deficient(&self) -> bool {
        self.rank < 6
    }

    /// The prior as used downstream: damped when rank deficient.
    pub fn usable(&self) -> PosePriorFactor {
        let mut p = self.prior.clone();
        if self.rank_deficient() {
            p.info += Mat6::identity() * PRIOR_DAMPING;
        }
        p
    }
}

/// Collapses the reprojection factors of a converged frame into a pose prior
/// at `x_hat` with information `Σ wJᵀΣ⁻¹J` (IRLS weights at `x_hat`).
pub fn marginalize_visual(factors: &[VisualFactor], x_hat: &StateVector, frame_id: u64, model: &VisualModel) -> MarginalizedPrior {
    let (info, _, _) = visual_normal(x_hat, factors, model);
    let info = 0.5 * (info + info.transpose());
    let eig = info.symmetric_eigen();
    let top = eig.eigenvalues.max();
    let rank = if top <= 0.0 { 0 } else { eig.eigenvalues.iter().filter(|&&l| l > top * 1e-9).count() };
    MarginalizedPrior { prior: PosePriorFactor::from_state(x_hat, info, frame_id), rank }
}
