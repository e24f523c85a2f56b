//! Central finite-difference check of every analytic Jacobian block.

use nalgebra::{DMatrix, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::inertial::{inertial_jacobians, inertial_residual};
use super::prior::{pose_prior_residual, Mat6, PosePriorFactor};
use super::reprojection::{reprojection_jacobian, reprojection_residual};
use super::{Observation, PinholeCamera};
use crate::imu::{integrate, ImuBias, ImuNoiseParams, ImuSample};
use crate::lie::{exp_so3, Rotation, Vec3};
use crate::state::{predict_with_imu, Extrinsics, Gravity, StateDelta, StateVector, Vec15};

pub const FD_STEP: f64 = 1e-6;
pub const ABS_TOL: f64 = 1e-7;
pub const REL_TOL: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct CheckOptions {
    pub configs: usize,
    pub seed: u64,
    /// Negates the analytic block with this name before comparison.
    pub flip_sign: Option<String>,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions { configs: 100, seed: 0x5eed, flip_sign: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockReport {
    pub name: String,
    pub configs: usize,
    pub max_abs_err: f64,
    /// Largest `err / tol` over all configurations; ≤ 1 passes.
    pub worst_ratio: f64,
}

impl BlockReport {
    pub fn passed(&self) -> bool {
        self.worst_ratio <= 1.0
    }
}

#[derive(Clone, Debug, Default)]
pub struct CheckReport {
    pub blocks: Vec<BlockReport>,
}

impl CheckReport {
    pub fn all_passed(&self) -> bool {
        !self.blocks.is_empty() && self.blocks.iter().all(BlockReport::passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &BlockReport> {
        self.blocks.iter().filter(|b| !b.passed())
    }

    fn record(&mut self, name: &str, analytic: &DMatrix<f64>, numeric: &DMatrix<f64>, flip: &Option<String>) {
        let analytic = if flip.as_deref() == Some(name) { -analytic } else { analytic.clone() };
        let err = (analytic - numeric).amax();
        let tol = ABS_TOL.max(REL_TOL * numeric.amax());
        let ratio = err / tol;
        match self.blocks.iter_mut().find(|b| b.name == name) {
            Some(b) => {
                b.configs += 1;
                b.max_abs_err = b.max_abs_err.max(err);
                b.worst_ratio = b.worst_ratio.max(ratio);
            }
            None => self.blocks.push(BlockReport {
                name: name.to_string(),
                configs: 1,
                max_abs_err: err,
                worst_ratio: ratio,
            }),
        }
    }
}

impl std::fmt::Display for CheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for b in &self.blocks {
            writeln!(
                f,
                "{:<24} {:>4} configs  max_err {:.3e}  {}",
                b.name,
                b.configs,
                b.max_abs_err,
                if b.passed() { "ok" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

/// Central differences of `f` over `n` tangent directions.
fn numeric_jacobian<F>(rows: usize, n: usize, mut f: F) -> DMatrix<f64>
where
    F: FnMut(usize, f64) -> Vec<f64>,
{
    let mut j = DMatrix::zeros(rows, n);
    for c in 0..n {
        let plus = f(c, FD_STEP);
        let minus = f(c, -FD_STEP);
        for r in 0..rows {
            j[(r, c)] = (plus[r] - minus[r]) / (2.0 * FD_STEP);
        }
    }
    j
}

fn rv(rng: &mut ChaCha8Rng, s: f64) -> Vec3 {
    Vec3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s))
}

fn random_state(rng: &mut ChaCha8Rng, stamp: f64) -> StateVector {
    StateVector::from_world_pose(
        &exp_so3(&rv(rng, 2.0)),
        &rv(rng, 4.0),
        rv(rng, 1.0),
        ImuBias::new(rv(rng, 0.02), rv(rng, 0.2)),
        stamp,
    )
}

fn delta_on(block: usize, h: f64) -> StateDelta {
    let mut v = Vec15::zeros();
    v[block] = h;
    StateDelta::from_vector(&v)
}

fn check_reprojection(rng: &mut ChaCha8Rng, report: &mut CheckReport, flip: &Option<String>) {
    let cam = PinholeCamera::new(458.0, 457.0, 367.0, 248.0, 752, 480).expect("valid camera");
    let extr = Extrinsics {
        r_cb: Extrinsics::forward_looking().r_cb * exp_so3(&rv(rng, 0.1)),
        t_cb: rv(rng, 0.1),
    };
    let x = random_state(rng, 0.0);
    let (r_wc, c) = extr.camera_pose(&x);
    let p_c = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-0.7..0.7), rng.random_range(1.0..6.0));
    let p_w = r_wc * p_c + c;
    let obs = Observation::isotropic(Vector2::new(rng.random_range(0.0..752.0), rng.random_range(0.0..480.0)), 1.0, 0, 0);
    let (j_pose, j_point) = reprojection_jacobian(&x, &p_w, &extr, &cam).expect("point in front");
    let res = |x: &StateVector, p: &Vec3| -> Vec<f64> {
        reprojection_residual(x, p, &obs, &extr, &cam).expect("point in front").iter().copied().collect()
    };
    let num_pose = numeric_jacobian(2, 6, |c, h| {
        let d = delta_on(c, h);
        res(&x.boxplus_pose(&d.phi, &d.t), &p_w)
    });
    let num_point = numeric_jacobian(2, 3, |c, h| {
        let mut p = p_w;
        p[c] += h;
        res(&x, &p)
    });
    let a = DMatrix::from_iterator(2, 6, j_pose.iter().copied());
    report.record("reproj.phi", &a.columns(0, 3).into_owned(), &num_pose.columns(0, 3).into_owned(), flip);
    report.record("reproj.t", &a.columns(3, 3).into_owned(), &num_pose.columns(3, 3).into_owned(), flip);
    report.record("reproj.point", &DMatrix::from_iterator(2, 3, j_point.iter().copied()), &num_point, flip);
}

const RES_PARTS: [(&str, usize, usize); 4] = [("rot", 0, 3), ("vel", 3, 3), ("pos", 6, 3), ("bias", 9, 6)];
const STATE_PARTS: [(&str, usize); 5] = [("phi", 0), ("t", 3), ("v", 6), ("bg", 9), ("ba", 12)];

fn check_inertial(rng: &mut ChaCha8Rng, report: &mut CheckReport, flip: &Option<String>) {
    let g = Gravity::standard();
    let n = rng.random_range(5..40);
    let base_w = rv(rng, 1.0);
    let samples: Vec<ImuSample> = (0..n)
        .map(|_| ImuSample {
            gyro: base_w + rv(rng, 0.2),
            accel: Vec3::new(0.0, 0.0, 9.81) + rv(rng, 2.0),
            dt: 0.005,
        })
        .collect();
    let bias_ref = ImuBias::new(rv(rng, 0.01), rv(rng, 0.1));
    let f = integrate(&samples, bias_ref, ImuNoiseParams::default()).expect("valid samples");
    let mut x_j = random_state(rng, 1.0);
    x_j.bg = bias_ref.gyro + rv(rng, 0.005);
    x_j.ba = bias_ref.accel + rv(rng, 0.05);
    let pred = predict_with_imu(&x_j, &f, &g).expect("positive duration");
    let x_k = StateVector::from_world_pose(
        &(pred.rot_wb * exp_so3(&rv(rng, 0.2))),
        &(pred.position + rv(rng, 0.3)),
        pred.v + rv(rng, 0.3),
        ImuBias::new(x_j.bg + rv(rng, 0.01), x_j.ba + rv(rng, 0.1)),
        1.0 + f.duration,
    );
    let (jj, jk) = inertial_jacobians(&x_j, &x_k, &f, &g).expect("matching duration");
    let res = |a: &StateVector, b: &StateVector| -> Vec<f64> {
        inertial_residual(a, b, &f, &g).expect("matching duration").iter().copied().collect()
    };
    let num_j = numeric_jacobian(15, 15, |c, h| res(&x_j.boxplus(&delta_on(c, h)), &x_k));
    let num_k = numeric_jacobian(15, 15, |c, h| res(&x_j, &x_k.boxplus(&delta_on(c, h))));
    for (suffix, analytic, numeric) in [("j", &jj, &num_j), ("k", &jk, &num_k)] {
        let a = DMatrix::from_iterator(15, 15, analytic.iter().copied());
        for (rname, r0, rn) in RES_PARTS {
            for (sname, c0) in STATE_PARTS {
                let name = format!("inertial.{rname}/{sname}_{suffix}");
                report.record(
                    &name,
                    &a.view((r0, c0), (rn, 3)).into_owned(),
                    &numeric.view((r0, c0), (rn, 3)).into_owned(),
                    flip,
                );
            }
        }
    }
}

fn check_prior(rng: &mut ChaCha8Rng, report: &mut CheckReport, flip: &Option<String>) {
    let x = random_state(rng, 0.0);
    let prior = PosePriorFactor {
        r_hat: x.rot_wb() * Rotation::exp(&rv(rng, 0.5)),
        t_hat: x.t + rv(rng, 0.5),
        info: Mat6::identity(),
        frame_id: 0,
    };
    let (_, j) = pose_prior_residual(&x, &prior);
    let num = numeric_jacobian(6, 6, |c, h| {
        let d = delta_on(c, h);
        pose_prior_residual(&x.boxplus_pose(&d.phi, &d.t), &prior).0.iter().copied().collect()
    });
    let a = DMatrix::from_iterator(6, 6, j.iter().copied());
    report.record("prior.phi", &a.columns(0, 3).into_owned(), &num.columns(0, 3).into_owned(), flip);
    report.record("prior.t", &a.columns(3, 3).into_owned(), &num.columns(3, 3).into_owned(), flip);
}

/// Runs every suite over `opts.configs` random configurations.
pub fn check_jacobians(opts: &CheckOptions) -> CheckReport {
    let mut report = CheckReport::default();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for _ in 0..opts.configs {
        check_reprojection(&mut rng, &mut report, &opts.flip_sign);
        check_inertial(&mut rng, &mut report, &opts.flip_sign);
        check_prior(&mut rng, &mut report, &opts.flip_sign);
    }
    report
}

/// Every block name the checker reports.
pub fn block_names() -> Vec<String> {
    check_jacobians(&CheckOptions { configs: 1, ..Default::default() })
        .blocks
        .into_iter()
        .map(|b| b.name)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_blocks_pass() {
        let r = check_jacobians(&CheckOptions { configs: 20, ..Default::default() });
        assert!(r.all_passed(), "{r}");
        assert!(r.blocks.len() >= 12);
    }

    #[test]
    fn flipped_sign_is_caught() {
        let r = check_jacobians(&CheckOptions {
            configs: 3,
            flip_sign: Some("inertial.pos/phi_j".into()),
            ..Default::default()
        });
        let failed: Vec<_> = r.failures().map(|b| b.name.as_str()).collect();
        assert_eq!(failed, vec!["inertial.pos/phi_j"]);
    }
}
