use nalgebra::SymmetricEigen;

use super::GmmError;
use crate::lie::{Mat3, Vec3};

pub const MIN_EIGENVALUE: f64 = 1e-12;
pub const REGULARIZATION: f64 = 1e-9;

/// One Gaussian of the map mixture with its precomputed whitening data.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianComponent {
    pub id: u32,
    pub weight: f64,
    pub mean: Vec3,
    pub cov: Mat3,
    /// `W = S^{-1/2}Rᵀ`, so `‖W(x − μ)‖` is the Mahalanobis distance.
    pub whitener: Mat3,
    /// Eigenvectors as columns, eigenvalues ascending; column 0 is the plane normal.
    pub axes: Mat3,
    pub eigenvalues: Vec3,
    /// Lower Cholesky factor of `cov`.
    pub chol: Mat3,
}

/// Ascending eigen-decomposition of a symmetric 3×3 matrix.
fn sorted_eigen(cov: &Mat3) -> (Vec3, Mat3) {
    let SymmetricEigen { eigenvalues, eigenvectors } = SymmetricEigen::new(0.5 * (cov + cov.transpose()));
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| eigenvalues[a].total_cmp(&eigenvalues[b]));
    let vals = Vec3::new(eigenvalues[idx[0]], eigenvalues[idx[1]], eigenvalues[idx[2]]);
    let mut vecs = Mat3::zeros();
    for (dst, &src) in idx.iter().enumerate() {
        vecs.set_column(dst, &eigenvectors.column(src));
    }
    (vals, vecs)
}

fn checked_cov(cov: &Mat3) -> Result<(Mat3, Vec3, Mat3), GmmError> {
    if cov.iter().any(|x| !x.is_finite()) {
        return Err(GmmError::DegenerateCovariance { min_eigenvalue: f64::NAN });
    }
    let (vals, vecs) = sorted_eigen(cov);
    if vals[0] >= MIN_EIGENVALUE {
        return Ok((*cov, vals, vecs));
    }
    let reg = cov + Mat3::identity() * REGULARIZATION;
    let (rvals, rvecs) = sorted_eigen(&reg);
    if rvals[0] >= MIN_EIGENVALUE {
        return Ok((reg, rvals, rvecs));
    }
    Err(GmmError::DegenerateCovariance { min_eigenvalue: vals[0] })
}

/// Whitener for a covariance. Near-singular input gets `1e-9·I` added once.
pub fn precompute_whitener(cov: &Mat3) -> Result<Mat3, GmmError> {
    let (_, vals, vecs) = checked_cov(cov)?;
    Ok(whitener_from(&vals, &vecs))
}

fn whitener_from(vals: &Vec3, vecs: &Mat3) -> Mat3 {
    let s = Mat3::from_diagonal(&vals.map(|l| 1.0 / l.sqrt()));
    s * vecs.transpose()
}

impl GaussianComponent {
    pub fn new(id: u32, weight: f64, mean: Vec3, cov: Mat3) -> Result<Self, GmmError> {
        let (cov, eigenvalues, axes) = checked_cov(&cov)?;
        let sym = 0.5 * (cov + cov.transpose());
        let chol = nalgebra::Cholesky::new(sym)
            .ok_or(GmmError::DegenerateCovariance { min_eigenvalue: eigenvalues[0] })?
            .l();
        Ok(GaussianComponent {
            id,
            weight,
            mean,
            cov,
            whitener: whitener_from(&eigenvalues, &axes),
            axes,
            eigenvalues,
            chol,
        })
    }

    /// Smallest-variance axis.
    pub fn normal(&self) -> Vec3 {
        self.axes.column(0).into_owned()
    }

    pub fn whiten(&self, p: &Vec3) -> Vec3 {
        self.whitener * (p - self.mean)
    }

    pub fn mahalanobis(&self, p: &Vec3) -> f64 {
        self.whiten(p).norm()
    }

    /// Half-extents of the axis-aligned box around the `k`-sigma ellipsoid.
    pub fn bbox_half_extent(&self, k: f64) -> Vec3 {
        Vec3::new(self.cov[(0, 0)].sqrt(), self.cov[(1, 1)].sqrt(), self.cov[(2, 2)].sqrt()) * k
    }

    /// True when the Cholesky factor is diagonal (axis-aligned covariance).
    pub fn is_axis_aligned(&self) -> bool {
        self.chol[(1, 0)] == 0.0 && self.chol[(2, 0)] == 0.0 && self.chol[(2, 1)] == 0.0
    }
}
