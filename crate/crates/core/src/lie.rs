//! SO(3) primitives: hat/vee, exponential and logarithm maps, and the right
//! Jacobian with its inverse.
//!
//! Rotations are stored as plain 3×3 matrices wrapped in [`Rotation`]; tangent
//! vectors are `Vector3<f64>` in radians.

use std::ops::Mul;

use nalgebra::{Matrix3, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Below this angle the closed forms switch to second-order Taylor series.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Skew-symmetric matrix such that `hat(v) * w == v.cross(&w)`.
#[inline]
pub fn hat(v: &Vec3) -> Mat3 {
    Matrix3::new(
        0.0, -v.z, v.y, //
        v.z, 0.0, -v.x, //
        -v.y, v.x, 0.0,
    )
}

/// Inverse of [`hat`]; reads the antisymmetric part of `m`.
#[inline]
pub fn vee(m: &Mat3) -> Vec3 {
    Vector3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// Element of SO(3).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation(Mat3);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Mat3::identity())
    }

    /// Wraps a matrix without re-orthonormalizing it. Callers are expected to
    /// hand in something that already satisfies `RᵀR = I`, `det R = 1`.
    pub fn from_matrix_unchecked(m: Mat3) -> Self {
        Rotation(m)
    }

    /// Projects an arbitrary matrix onto the closest rotation (polar/SVD).
    pub fn from_matrix_orthonormalized(m: Mat3) -> Self {
        let svd = m.svd(true, true);
        let u = svd.u.expect("svd u");
        let v_t = svd.v_t.expect("svd v_t");
        let mut d = Mat3::identity();
        if (u * v_t).determinant() < 0.0 {
            d[(2, 2)] = -1.0;
        }
        Rotation(u * d * v_t)
    }

    pub fn exp(phi: &Vec3) -> Self {
        exp_so3(phi)
    }

    pub fn log(&self) -> Vec3 {
        log_so3(self)
    }

    pub fn rot_x(angle: f64) -> Self {
        exp_so3(&Vector3::new(angle, 0.0, 0.0))
    }

    pub fn rot_y(angle: f64) -> Self {
        exp_so3(&Vector3::new(0.0, angle, 0.0))
    }

    pub fn rot_z(angle: f64) -> Self {
        exp_so3(&Vector3::new(0.0, 0.0, angle))
    }

    #[inline]
    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    #[inline]
    pub fn inverse(&self) -> Self {
        Rotation(self.0.transpose())
    }

    #[inline]
    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    /// Frobenius distance of `RᵀR` from identity and of `det R` from one.
    pub fn orthonormality_error(&self) -> (f64, f64) {
        let ortho = (self.0.transpose() * self.0 - Mat3::identity()).norm();
        let det = (self.0.determinant() - 1.0).abs();
        (ortho, det)
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        let (o, d) = self.orthonormality_error();
        self.0.iter().all(|x| x.is_finite()) && o <= tol && d <= tol
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Rotation::identity()
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<&Rotation> for &Rotation {
    type Output = Rotation;
    fn mul(self, rhs: &Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<Vec3> for Rotation {
    type Output = Vec3;
    fn mul(self, rhs: Vec3) -> Vec3 {
        self.0 * rhs
    }
}

impl Mul<&Vec3> for Rotation {
    type Output = Vec3;
    fn mul(self, rhs: &Vec3) -> Vec3 {
        self.0 * rhs
    }
}

impl Mul<&Vec3> for &Rotation {
    type Output = Vec3;
    fn mul(self, rhs: &Vec3) -> Vec3 {
        self.0 * rhs
    }
}

/// Rodrigues' formula.
pub fn exp_so3(phi: &Vec3) -> Rotation {
    let theta = phi.norm();
    let k = hat(phi);
    if theta < SMALL_ANGLE {
        return Rotation(Mat3::identity() + k + 0.5 * k * k);
    }
    let half = 0.5 * theta;
    let a = theta.sin() / theta;
    // 1 - cos θ written as 2 sin²(θ/2) to avoid cancellation
    let b = 2.0 * half.sin() * half.sin() / (theta * theta);
    Rotation(Mat3::identity() + a * k + b * k * k)
}

/// Logarithm map with ‖result‖ ≤ π.
///
/// Near θ = π the axis is read from the symmetric part of `R`; at exactly π
/// the sign is fixed so that the first nonzero component is positive.
pub fn log_so3(r: &Rotation) -> Vec3 {
    let m = r.matrix();
    let w = vee(m); // = sin θ · n
    let s = w.norm();
    let c = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = s.atan2(c);

    if theta < SMALL_ANGLE {
        // θ / sin θ ≈ 1 + θ²/6
        return w * (1.0 + theta * theta / 6.0);
    }
    if c > -0.9 {
        return w * (theta / s);
    }

    // Near π: (R + Rᵀ)/2 = cos θ·I + (1 − cos θ)·n nᵀ
    let sym = (m + m.transpose()) * 0.5;
    let nnt = (sym - Mat3::identity() * c) / (1.0 - c);
    let i = (0..3)
        .max_by(|&a, &b| nnt[(a, a)].total_cmp(&nnt[(b, b)]))
        .unwrap_or(0);
    let mut n: Vec3 = nnt.column(i).into_owned() / nnt[(i, i)].max(0.0).sqrt();
    n.normalize_mut();
    if s > 1e-12 {
        if n.dot(&w) < 0.0 {
            n = -n;
        }
    } else if let Some(first) = n.iter().copied().find(|x| x.abs() > 1e-12) {
        if first < 0.0 {
            n = -n;
        }
    }
    n * theta
}

/// Right Jacobian of SO(3): `exp(φ + δ) ≈ exp(φ)·exp(J_r(φ)·δ)`.
pub fn right_jacobian(phi: &Vec3) -> Mat3 {
    let theta = phi.norm();
    let k = hat(phi);
    if theta < SMALL_ANGLE {
        return Mat3::identity() - 0.5 * k + (1.0 / 6.0) * k * k;
    }
    let t2 = theta * theta;
    let half = 0.5 * theta;
    let one_minus_cos = 2.0 * half.sin() * half.sin();
    Mat3::identity() - (one_minus_cos / t2) * k + ((theta - theta.sin()) / (t2 * theta)) * k * k
}

pub fn right_jacobian_inv(phi: &Vec3) -> Mat3 {
    let theta = phi.norm();
    let k = hat(phi);
    if theta < SMALL_ANGLE {
        return Mat3::identity() + 0.5 * k + (1.0 / 12.0) * k * k;
    }
    let t2 = theta * theta;
    let coeff = 1.0 / t2 - (1.0 + theta.cos()) / (2.0 * theta * theta.sin());
    Mat3::identity() + 0.5 * k + coeff * k * k
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn series_exp(phi: &Vec3) -> Mat3 {
        // truncated power series of the matrix exponential, 30 terms
        let k = hat(phi);
        let mut term = Mat3::identity();
        let mut sum = Mat3::identity();
        for n in 1..30 {
            term = term * k / n as f64;
            sum += term;
        }
        sum
    }

    fn random_vec(rng: &mut ChaCha8Rng, scale: f64) -> Vec3 {
        Vector3::new(
            rng.random_range(-scale..scale),
            rng.random_range(-scale..scale),
            rng.random_range(-scale..scale),
        )
    }

    #[test]
    fn hat_examples() {
        assert_eq!(hat(&Vec3::zeros()), Mat3::zeros());
        let z = hat(&Vector3::new(0.0, 0.0, 1.0));
        assert_eq!(z, Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn hat_matches_cross_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let v = random_vec(&mut rng, 3.0);
            let w = random_vec(&mut rng, 3.0);
            // componentwise cross product
            let cross = Vector3::new(
                v.y * w.z - v.z * w.y,
                v.z * w.x - v.x * w.z,
                v.x * w.y - v.y * w.x,
            );
            assert_relative_eq!(hat(&v) * w, cross, epsilon = 1e-12);
            assert_relative_eq!(hat(&v), -hat(&v).transpose());
            assert_relative_eq!(vee(&hat(&v)), v);
        }
    }

    #[test]
    fn exp_examples() {
        assert_eq!(*exp_so3(&Vec3::zeros()).matrix(), Mat3::identity());
        let q = exp_so3(&Vector3::new(PI / 2.0, 0.0, 0.0));
        let expected = Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
        assert_relative_eq!(*q.matrix(), expected, epsilon = 1e-15);
    }

    #[test]
    fn exp_matches_series() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let phi = random_vec(&mut rng, 2.0);
            let r = exp_so3(&phi);
            assert_relative_eq!(*r.matrix(), series_exp(&phi), epsilon = 1e-10);
            assert!(r.is_valid(1e-9));
        }
    }

    #[test]
    fn exp_small_angle_branch_is_continuous() {
        let dir = Vector3::new(0.3, -0.5, 0.8).normalize();
        let below = exp_so3(&(dir * 0.99e-8));
        let above = exp_so3(&(dir * 1.01e-8));
        assert_relative_eq!(*below.matrix(), series_exp(&(dir * 0.99e-8)), epsilon = 1e-15);
        assert_relative_eq!(*above.matrix(), series_exp(&(dir * 1.01e-8)), epsilon = 1e-15);
    }

    #[test]
    fn log_examples() {
        assert_eq!(log_so3(&Rotation::identity()), Vec3::zeros());
        let phi = Vector3::new(0.3, -0.2, 0.1);
        assert_relative_eq!(log_so3(&exp_so3(&phi)), phi, epsilon = 1e-10);
    }

    #[test]
    fn log_at_pi_about_z() {
        // Rodrigues at θ = π: R = 2 n nᵀ − I
        let n = Vector3::new(0.0, 0.0, 1.0);
        let r = Rotation::from_matrix_unchecked(2.0 * n * n.transpose() - Mat3::identity());
        let phi = log_so3(&r);
        assert_relative_eq!(phi.norm(), PI, epsilon = 1e-12);
        assert_relative_eq!(phi, Vector3::new(0.0, 0.0, PI), epsilon = 1e-12);
        assert_relative_eq!(*exp_so3(&phi).matrix(), *r.matrix(), epsilon = 1e-12);
    }

    #[test]
    fn log_near_pi_round_trips() {
        let axis = Vector3::new(1.0, -2.0, 0.5).normalize();
        for eps in [1e-3, 1e-6, 1e-9, 0.0] {
            let r = exp_so3(&(axis * (PI - eps)));
            let back = exp_so3(&log_so3(&r));
            assert_relative_eq!(*back.matrix(), *r.matrix(), epsilon = 1e-8);
            assert!(log_so3(&r).norm() <= PI + 1e-12);
        }
    }

    #[test]
    fn right_jacobian_at_zero() {
        assert_eq!(right_jacobian(&Vec3::zeros()), Mat3::identity());
        assert_eq!(right_jacobian_inv(&Vec3::zeros()), Mat3::identity());
    }

    #[test]
    fn right_jacobian_defining_property() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let phi = random_vec(&mut rng, 1.5);
            let mut delta = random_vec(&mut rng, 1.0);
            delta *= 1e-6 / delta.norm();
            let lhs = exp_so3(&(phi + delta));
            let rhs = exp_so3(&phi) * exp_so3(&(right_jacobian(&phi) * delta));
            assert_relative_eq!(*lhs.matrix(), *rhs.matrix(), epsilon = 1e-9);
            assert_relative_eq!(
                right_jacobian(&phi) * right_jacobian_inv(&phi),
                Mat3::identity(),
                epsilon = 1e-9
            );
        }
    }

    proptest! {
        #[test]
        fn log_inverts_exp(x in -1.8f64..1.8, y in -1.8f64..1.8, z in -1.8f64..1.8) {
            let phi = Vector3::new(x, y, z);
            prop_assume!(phi.norm() < PI - 1e-3);
            let back = log_so3(&exp_so3(&phi));
            prop_assert!((back - phi).norm() < 1e-8);
        }

        #[test]
        fn exp_inverts_log(x in -4.0f64..4.0, y in -4.0f64..4.0, z in -4.0f64..4.0) {
            let r = exp_so3(&Vector3::new(x, y, z));
            let back = exp_so3(&log_so3(&r));
            prop_assert!((back.matrix() - r.matrix()).norm() < 1e-8);
        }
    }
}
