//! On-manifold IMU preintegration.
//!
//! Raw gyro/accelerometer samples between two frames are summarized into the
//! relative deltas (ΔR, Δv, Δp), first-order bias Jacobians and a 9×9
//! covariance ordered `[rot, vel, pos]`. Discretization is forward Euler,
//! every quantity is updated from the values *before* the current sample.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{SMatrix, Vector3};
use thiserror::Error;

use crate::lie::{exp_so3, hat, right_jacobian, Mat3, Rotation, Vec3};

pub type Mat9 = SMatrix<f64, 9, 9>;

#[derive(Debug, Error)]
pub enum ImuError {
    #[error("cannot preintegrate an empty sample set")]
    EmptySampleSet,
    #[error("sample {index} has non-positive dt {dt}")]
    NonPositiveDt { index: usize, dt: f64 },
    #[error("sample {index} contains non-finite values")]
    NonFinite { index: usize },
    #[error("imu csv line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error("imu csv io: {0}")]
    Io(#[from] std::io::Error),
}

/// One gyro + specific-force reading held constant over `dt` seconds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuSample {
    pub gyro: Vec3,
    pub accel: Vec3,
    pub dt: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuBias {
    pub gyro: Vec3,
    pub accel: Vec3,
}

impl ImuBias {
    pub fn zero() -> Self {
        ImuBias { gyro: Vec3::zeros(), accel: Vec3::zeros() }
    }

    pub fn new(gyro: Vec3, accel: Vec3) -> Self {
        ImuBias { gyro, accel }
    }
}

impl Default for ImuBias {
    fn default() -> Self {
        Self::zero()
    }
}

/// Continuous-time noise densities and bias random-walk densities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuNoiseParams {
    /// rad/s/√Hz
    pub sigma_g: f64,
    /// m/s²/√Hz
    pub sigma_a: f64,
    /// rad/s²/√Hz
    pub sigma_bg: f64,
    /// m/s³/√Hz
    pub sigma_ba: f64,
}

impl Default for ImuNoiseParams {
    fn default() -> Self {
        ImuNoiseParams { sigma_g: 1.7e-4, sigma_a: 2.0e-3, sigma_bg: 1.9e-5, sigma_ba: 3.0e-3 }
    }
}

impl ImuNoiseParams {
    pub fn is_valid(&self) -> bool {
        [self.sigma_g, self.sigma_a, self.sigma_bg, self.sigma_ba]
            .iter()
            .all(|s| s.is_finite() && *s > 0.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreintegratedFactor {
    pub d_rot: Rotation,
    pub d_vel: Vec3,
    pub d_pos: Vec3,
    pub j_rot_bg: Mat3,
    pub j_vel_bg: Mat3,
    pub j_vel_ba: Mat3,
    pub j_pos_bg: Mat3,
    pub j_pos_ba: Mat3,
    /// Covariance of `[δrot, δvel, δpos]`.
    pub cov: Mat9,
    pub bias_ref: ImuBias,
    pub duration: f64,
    pub noise: ImuNoiseParams,
}

impl PreintegratedFactor {
    fn empty(bias_ref: ImuBias, noise: ImuNoiseParams) -> Self {
        PreintegratedFactor {
            d_rot: Rotation::identity(),
            d_vel: Vec3::zeros(),
            d_pos: Vec3::zeros(),
            j_rot_bg: Mat3::zeros(),
            j_vel_bg: Mat3::zeros(),
            j_vel_ba: Mat3::zeros(),
            j_pos_bg: Mat3::zeros(),
            j_pos_ba: Mat3::zeros(),
            cov: Mat9::zeros(),
            bias_ref,
            duration: 0.0,
            noise,
        }
    }

    fn absorb(&mut self, s: &ImuSample) {
        let dt = s.dt;
        let dt2 = dt * dt;
        let w = s.gyro - self.bias_ref.gyro;
        let a = s.accel - self.bias_ref.accel;
        let r = *self.d_rot.matrix();
        let a_hat = hat(&a);
        let inc = exp_so3(&(w * dt));
        let jr = right_jacobian(&(w * dt));

        // covariance: A Σ Aᵀ + B Q Bᵀ
        let mut a_mat = Mat9::identity();
        a_mat.fixed_view_mut::<3, 3>(0, 0).copy_from(&inc.matrix().transpose());
        a_mat.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-r * a_hat * dt));
        a_mat.fixed_view_mut::<3, 3>(6, 0).copy_from(&(-0.5 * r * a_hat * dt2));
        a_mat.fixed_view_mut::<3, 3>(6, 3).copy_from(&(Mat3::identity() * dt));
        let mut b_g = SMatrix::<f64, 9, 3>::zeros();
        b_g.fixed_view_mut::<3, 3>(0, 0).copy_from(&(jr * dt));
        let mut b_a = SMatrix::<f64, 9, 3>::zeros();
        b_a.fixed_view_mut::<3, 3>(3, 0).copy_from(&(r * dt));
        b_a.fixed_view_mut::<3, 3>(6, 0).copy_from(&(0.5 * r * dt2));
        let q_g = self.noise.sigma_g * self.noise.sigma_g / dt;
        let q_a = self.noise.sigma_a * self.noise.sigma_a / dt;
        self.cov = a_mat * self.cov * a_mat.transpose()
            + b_g * b_g.transpose() * q_g
            + b_a * b_a.transpose() * q_a;

        // bias Jacobians
        self.j_pos_ba += self.j_vel_ba * dt - 0.5 * r * dt2;
        self.j_pos_bg += self.j_vel_bg * dt - 0.5 * r * a_hat * self.j_rot_bg * dt2;
        self.j_vel_ba -= r * dt;
        self.j_vel_bg -= r * a_hat * self.j_rot_bg * dt;
        self.j_rot_bg = inc.matrix().transpose() * self.j_rot_bg - jr * dt;

        // deltas
        self.d_pos += self.d_vel * dt + 0.5 * r * a * dt2;
        self.d_vel += r * a * dt;
        self.d_rot = Rotation::from_matrix_unchecked(r * inc.matrix());
        self.duration += dt;
    }

    /// First-order bias update of the deltas.
    pub fn correct_for_bias(&self, d_bg: &Vec3, d_ba: &Vec3) -> (Rotation, Vec3, Vec3) {
        let d_rot = self.d_rot * exp_so3(&(self.j_rot_bg * d_bg));
        let d_vel = self.d_vel + self.j_vel_bg * d_bg + self.j_vel_ba * d_ba;
        let d_pos = self.d_pos + self.j_pos_bg * d_bg + self.j_pos_ba * d_ba;
        (d_rot, d_vel, d_pos)
    }

    /// Deltas corrected to an arbitrary bias (relative to `bias_ref`).
    pub fn corrected_to(&self, bias: &ImuBias) -> (Rotation, Vec3, Vec3) {
        self.correct_for_bias(
            &(bias.gyro - self.bias_ref.gyro),
            &(bias.accel - self.bias_ref.accel),
        )
    }
}

/// Preintegrates `samples` around the bias linearization point `bias_ref`.
pub fn integrate(
    samples: &[ImuSample],
    bias_ref: ImuBias,
    noise: ImuNoiseParams,
) -> Result<PreintegratedFactor, ImuError> {
    if samples.is_empty() {
        return Err(ImuError::EmptySampleSet);
    }
    let mut f = PreintegratedFactor::empty(bias_ref, noise);
    for (index, s) in samples.iter().enumerate() {
        if !(s.gyro.iter().chain(s.accel.iter()).all(|x| x.is_finite()) && s.dt.is_finite()) {
            return Err(ImuError::NonFinite { index });
        }
        if s.dt <= 0.0 {
            return Err(ImuError::NonPositiveDt { index, dt: s.dt });
        }
        f.absorb(s);
    }
    Ok(f)
}

/// Same as [`PreintegratedFactor::correct_for_bias`], as a free function.
pub fn correct_for_bias(f: &PreintegratedFactor, d_bg: &Vec3, d_ba: &Vec3) -> (Rotation, Vec3, Vec3) {
    f.correct_for_bias(d_bg, d_ba)
}

/// A timestamped IMU reading as stored on disk.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StampedImu {
    pub t: f64,
    pub gyro: Vec3,
    pub accel: Vec3,
}

/// Converts stamped readings into zero-order-hold samples; each reading is
/// held until the next stamp, so the final row only closes the last interval.
pub fn to_samples(rows: &[StampedImu]) -> Result<Vec<ImuSample>, ImuError> {
    rows.windows(2)
        .enumerate()
        .map(|(index, w)| {
            let dt = w[1].t - w[0].t;
            if dt <= 0.0 {
                return Err(ImuError::NonPositiveDt { index, dt });
            }
            Ok(ImuSample { gyro: w[0].gyro, accel: w[0].accel, dt })
        })
        .collect()
}

/// Parses `t,wx,wy,wz,ax,ay,az` rows. A non-numeric first row is treated as a
/// header; `#` comment lines are skipped.
pub fn read_imu_csv<R: Read>(reader: R) -> Result<Vec<StampedImu>, ImuError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 1;
        let rec = rec.map_err(|e| ImuError::Csv { line, msg: e.to_string() })?;
        if rec.len() != 7 {
            return Err(ImuError::Csv { line, msg: format!("expected 7 fields, got {}", rec.len()) });
        }
        let parsed: Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        let v = match parsed {
            Ok(v) => v,
            Err(_) if i == 0 => continue,
            Err(e) => return Err(ImuError::Csv { line, msg: e.to_string() }),
        };
        out.push(StampedImu {
            t: v[0],
            gyro: Vector3::new(v[1], v[2], v[3]),
            accel: Vector3::new(v[4], v[5], v[6]),
        });
    }
    Ok(out)
}

pub fn read_imu_csv_file(path: &Path) -> Result<Vec<StampedImu>, ImuError> {
    read_imu_csv(std::fs::File::open(path)?)
}

pub fn write_imu_csv<W: Write>(mut w: W, rows: &[StampedImu]) -> Result<(), ImuError> {
    writeln!(w, "t,wx,wy,wz,ax,ay,az")?;
    for r in rows {
        writeln!(
            w,
            "{:.9},{:.12},{:.12},{:.12},{:.12},{:.12},{:.12}",
            r.t, r.gyro.x, r.gyro.y, r.gyro.z, r.accel.x, r.accel.y, r.accel.z
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::log_so3;
    use approx::assert_relative_eq;

    fn constant(gyro: Vec3, accel: Vec3, n: usize, dt: f64) -> Vec<ImuSample> {
        vec![ImuSample { gyro, accel, dt }; n]
    }

    /// A sample stream with time-varying rates, used by the bias tests.
    fn wobbly(n: usize) -> Vec<ImuSample> {
        (0..n)
            .map(|i| {
                let t = i as f64 * 0.005;
                ImuSample {
                    gyro: Vector3::new(0.3 * (2.0 * t).sin(), -0.2 + 0.1 * t, 0.5 * (3.0 * t).cos()),
                    accel: Vector3::new(0.4 * t.cos(), 1.0 - 0.3 * t, 9.6 + 0.2 * (5.0 * t).sin()),
                    dt: 0.005,
                }
            })
            .collect()
    }

    #[test]
    fn null_motion() {
        let f = integrate(&constant(Vec3::zeros(), Vec3::zeros(), 1, 0.005), ImuBias::zero(), Default::default())
            .unwrap();
        assert_eq!(*f.d_rot.matrix(), Mat3::identity());
        assert_eq!(f.d_vel, Vec3::zeros());
        assert_eq!(f.d_pos, Vec3::zeros());
        assert_eq!(f.duration, 0.005);
    }

    #[test]
    fn constant_rate_matches_closed_form() {
        let f = integrate(
            &constant(Vector3::new(0.0, 0.0, 1.0), Vec3::zeros(), 200, 0.005),
            ImuBias::zero(),
            Default::default(),
        )
        .unwrap();
        assert_relative_eq!(*f.d_rot.matrix(), *Rotation::rot_z(1.0).matrix(), epsilon = 1e-6);
        assert_relative_eq!(f.duration, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            integrate(&[], ImuBias::zero(), Default::default()),
            Err(ImuError::EmptySampleSet)
        ));
        let bad = [ImuSample { gyro: Vec3::zeros(), accel: Vec3::zeros(), dt: 0.0 }];
        assert!(matches!(
            integrate(&bad, ImuBias::zero(), Default::default()),
            Err(ImuError::NonPositiveDt { index: 0, .. })
        ));
    }

    #[test]
    fn zero_bias_delta_is_identity() {
        let f = integrate(&wobbly(50), ImuBias::zero(), Default::default()).unwrap();
        let (r, v, p) = f.correct_for_bias(&Vec3::zeros(), &Vec3::zeros());
        assert_eq!(r, f.d_rot);
        assert_eq!(v, f.d_vel);
        assert_eq!(p, f.d_pos);
    }

    #[test]
    fn accel_bias_leaves_rotation_untouched() {
        let f = integrate(&wobbly(50), ImuBias::zero(), Default::default()).unwrap();
        let (r, v, p) = f.correct_for_bias(&Vec3::zeros(), &Vector3::new(0.01, -0.02, 0.03));
        assert_eq!(r, f.d_rot);
        assert!((v - f.d_vel).norm() > 0.0);
        assert!((p - f.d_pos).norm() > 0.0);
    }

    #[test]
    fn gyro_bias_correction_matches_reintegration() {
        let samples = constant(Vector3::new(0.0, 0.0, 1.0), Vector3::new(0.2, 0.0, 9.81), 200, 0.005);
        let f = integrate(&samples, ImuBias::zero(), Default::default()).unwrap();
        let d = Vector3::new(0.0, 0.0, 1e-3);
        let (r, _, _) = f.correct_for_bias(&d, &Vec3::zeros());
        let g = integrate(&samples, ImuBias::new(d, Vec3::zeros()), Default::default()).unwrap();
        assert_relative_eq!(*r.matrix(), *g.d_rot.matrix(), epsilon = 1e-7);
    }

    #[test]
    fn bias_jacobians_are_first_order() {
        // ‖correction − reintegration‖ must shrink with slope 2 in log-log
        let samples = wobbly(100);
        let f = integrate(&samples, ImuBias::zero(), Default::default()).unwrap();
        let dir_g = Vector3::new(0.6, -0.3, 0.74);
        let dir_a = Vector3::new(-0.2, 0.9, 0.4);
        let mut pts = Vec::new();
        for k in 2..=5 {
            let s = 10f64.powi(-k);
            let (dg, da) = (dir_g * s, dir_a * s);
            let (r, v, p) = f.correct_for_bias(&dg, &da);
            let g = integrate(&samples, ImuBias::new(dg, da), Default::default()).unwrap();
            let err = log_so3(&(r.inverse() * g.d_rot)).norm() + (v - g.d_vel).norm() + (p - g.d_pos).norm();
            pts.push((s.ln(), err.ln()));
        }
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
            / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
        assert!((slope - 2.0).abs() < 0.2, "slope {slope}");
    }

    #[test]
    fn covariance_trace_grows() {
        let samples = wobbly(60);
        let mut last = 0.0;
        for n in 1..=samples.len() {
            let f = integrate(&samples[..n], ImuBias::zero(), Default::default()).unwrap();
            let tr = f.cov.trace();
            assert!(tr > last);
            last = tr;
            let sym = (f.cov - f.cov.transpose()).norm();
            assert!(sym < 1e-15);
        }
    }

    #[test]
    fn csv_round_trip() {
        let rows: Vec<StampedImu> = (0..5)
            .map(|i| StampedImu {
                t: i as f64 * 0.005,
                gyro: Vector3::new(0.1, 0.2, i as f64),
                accel: Vector3::new(0.0, 0.0, 9.81),
            })
            .collect();
        let mut buf = Vec::new();
        write_imu_csv(&mut buf, &rows).unwrap();
        let back = read_imu_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 5);
        assert_relative_eq!(back[3].gyro.z, 3.0);
        let samples = to_samples(&back).unwrap();
        assert_eq!(samples.len(), 4);
        assert_relative_eq!(samples[0].dt, 0.005, epsilon = 1e-12);
    }

    #[test]
    fn csv_reports_line() {
        let text = "0,0,0,0,0,0,9.8\n0.005,0,0,0,0,9.8\n";
        match read_imu_csv(text.as_bytes()) {
            Err(ImuError::Csv { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
