//! Inertial residual between two consecutive frame states.
//!
//! Residual layout is `[rot, vel, pos, bg, ba]` (15 entries) and the
//! Jacobians are taken w.r.t. each state's `[δφ, δt, δv, δb_g, δb_a]`.

use nalgebra::SMatrix;

use super::FactorError;
use crate::imu::PreintegratedFactor;
use crate::lie::{hat, log_so3, right_jacobian, right_jacobian_inv, Mat3, Rotation};
use crate::state::{Gravity, StateVector, Vec15};

pub type Mat15 = SMatrix<f64, 15, 15>;

/// Allowed mismatch between factor duration and state stamps.
pub const DURATION_TOL: f64 = 1e-6;

pub const ROT: usize = 0;
pub const VEL: usize = 3;
pub const POS: usize = 6;
pub const BG: usize = 9;
pub const BA: usize = 12;

/// State column offsets within a 15-wide state block.
pub const S_PHI: usize = 0;
pub const S_T: usize = 3;
pub const S_V: usize = 6;
pub const S_BG: usize = 9;
pub const S_BA: usize = 12;

struct Parts {
    r_wj: Rotation,
    r_wk: Rotation,
    p_j: crate::lie::Vec3,
    p_k: crate::lie::Vec3,
    d_vel_w: crate::lie::Vec3,
    d_pos_w: crate::lie::Vec3,
    d_rot: Rotation,
    d_vel: crate::lie::Vec3,
    d_pos: crate::lie::Vec3,
    dbg: crate::lie::Vec3,
    dt: f64,
}

fn parts(x_j: &StateVector, x_k: &StateVector, f: &PreintegratedFactor, g: &Gravity) -> Result<Parts, FactorError> {
    let dt = x_k.stamp - x_j.stamp;
    if (f.duration - dt).abs() > DURATION_TOL {
        return Err(FactorError::DurationMismatch { factor: f.duration, states: dt });
    }
    // the factor's own duration is used below, not the stamp difference
    let dt = f.duration;
    let g = g.vector();
    let r_wj = x_j.rot_wb();
    let r_wk = x_k.rot_wb();
    let p_j = x_j.position();
    let p_k = x_k.position();
    let dbg = x_j.bg - f.bias_ref.gyro;
    let dba = x_j.ba - f.bias_ref.accel;
    let (d_rot, d_vel, d_pos) = f.correct_for_bias(&dbg, &dba);
    Ok(Parts {
        d_vel_w: x_k.v - x_j.v - g * dt,
        d_pos_w: p_k - p_j - x_j.v * dt - 0.5 * g * dt * dt,
        r_wj,
        r_wk,
        p_j,
        p_k,
        d_rot,
        d_vel,
        d_pos,
        dbg,
        dt,
    })
}

pub fn inertial_residual(
    x_j: &StateVector,
    x_k: &StateVector,
    f: &PreintegratedFactor,
    g: &Gravity,
) -> Result<Vec15, FactorError> {
    let p = parts(x_j, x_k, f, g)?;
    let r_jw = p.r_wj.inverse();
    let mut e = Vec15::zeros();
    let err_rot = p.d_rot.inverse() * r_jw * p.r_wk;
    e.fixed_rows_mut::<3>(ROT).copy_from(&log_so3(&err_rot));
    e.fixed_rows_mut::<3>(VEL).copy_from(&(r_jw * p.d_vel_w - p.d_vel));
    e.fixed_rows_mut::<3>(POS).copy_from(&(r_jw * p.d_pos_w - p.d_pos));
    e.fixed_rows_mut::<3>(BG).copy_from(&(x_j.bg - x_k.bg));
    e.fixed_rows_mut::<3>(BA).copy_from(&(x_j.ba - x_k.ba));
    Ok(e)
}

/// Returns `(∂e/∂x_j, ∂e/∂x_k)`.
///
/// A rotation update `R_BW·exp(δφ)` moves the world attitude to
/// `exp(−δφ)·R_WB` and the world position by `[p]^·δφ`; the body-frame
/// translation state maps to the world position through `−R_WB`. Several
/// blocks differ from the commonly printed world-pose forms because of this.
pub fn inertial_jacobians(
    x_j: &StateVector,
    x_k: &StateVector,
    f: &PreintegratedFactor,
    g: &Gravity,
) -> Result<(Mat15, Mat15), FactorError> {
    let p = parts(x_j, x_k, f, g)?;
    let r_jw = *p.r_wj.inverse().matrix();
    let r_wk = *p.r_wk.matrix();
    let r_kw = r_wk.transpose();
    let err = p.d_rot.inverse() * p.r_wj.inverse() * p.r_wk;
    let e_rot = log_so3(&err);
    let jr_inv = right_jacobian_inv(&e_rot);
    let id = Mat3::identity();

    let mut jj = Mat15::zeros();
    let mut jk = Mat15::zeros();
    let put = |m: &mut Mat15, r: usize, c: usize, b: Mat3| m.fixed_view_mut::<3, 3>(r, c).copy_from(&b);

    // rotation
    put(&mut jj, ROT, S_PHI, jr_inv * r_kw);
    put(&mut jk, ROT, S_PHI, -jr_inv * r_kw);
    let jr_b = right_jacobian(&(f.j_rot_bg * p.dbg));
    put(&mut jj, ROT, S_BG, -jr_inv * err.matrix().transpose() * jr_b * f.j_rot_bg);

    // velocity
    put(&mut jj, VEL, S_PHI, -r_jw * hat(&p.d_vel_w));
    put(&mut jj, VEL, S_V, -r_jw);
    put(&mut jk, VEL, S_V, r_jw);
    put(&mut jj, VEL, S_BG, -f.j_vel_bg);
    put(&mut jj, VEL, S_BA, -f.j_vel_ba);

    // position: the rotation column also carries ∂p_j/∂δφ_j
    put(&mut jj, POS, S_PHI, -r_jw * (hat(&p.d_pos_w) + hat(&p.p_j)));
    put(&mut jj, POS, S_T, id);
    put(&mut jj, POS, S_V, -r_jw * p.dt);
    put(&mut jj, POS, S_BG, -f.j_pos_bg);
    put(&mut jj, POS, S_BA, -f.j_pos_ba);
    put(&mut jk, POS, S_PHI, r_jw * hat(&p.p_k));
    put(&mut jk, POS, S_T, -r_jw * r_wk);

    // bias random walk
    put(&mut jj, BG, S_BG, id);
    put(&mut jk, BG, S_BG, -id);
    put(&mut jj, BA, S_BA, id);
    put(&mut jk, BA, S_BA, -id);
    Ok((jj, jk))
}

/// Covariance of the full residual: preintegration noise plus bias random walk.
pub fn inertial_covariance(f: &PreintegratedFactor) -> Mat15 {
    let mut c = Mat15::zeros();
    c.fixed_view_mut::<9, 9>(0, 0).copy_from(&f.cov);
    let n = &f.noise;
    let vg = n.sigma_bg * n.sigma_bg * f.duration;
    let va = n.sigma_ba * n.sigma_ba * f.duration;
    for i in 0..3 {
        c[(BG + i, BG + i)] = vg;
        c[(BA + i, BA + i)] = va;
    }
    c
}

/// Information of the inertial residual. Tiny covariance eigenvalues are
/// floored so very short intervals stay invertible.
pub fn inertial_information(f: &PreintegratedFactor) -> Mat15 {
    let c = inertial_covariance(f);
    let c = 0.5 * (c + c.transpose());
    let eig = c.symmetric_eigen();
    let floor = 1e-14_f64.max(eig.eigenvalues.max() * 1e-12);
    let inv = eig.eigenvalues.map(|l| 1.0 / l.max(floor));
    eig.eigenvectors * Mat15::from_diagonal(&inv) * eig.eigenvectors.transpose()
}
