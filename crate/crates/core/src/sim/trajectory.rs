use std::f64::consts::TAU;

use crate::imu::{integrate, ImuBias, ImuNoiseParams, ImuSample};
use crate::lie::{Rotation, Vec3};
use crate::state::{predict_with_imu, Gravity, StateVector};

use super::{SimConfig, SimError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TrajectoryKind {
    /// Horizontal circle about the room center, body x pointing outward.
    Circle { radius: f64, period: f64, height: f64 },
    /// `p = center + A⊙sin(Ωt)` with yaw `ψ = ψ_a·sin(ψ_ω t)`.
    Lissajous { center: Vec3, amplitude: Vec3, omega: Vec3, yaw_amplitude: f64, yaw_omega: f64 },
}

impl Default for TrajectoryKind {
    fn default() -> Self {
        TrajectoryKind::Circle { radius: 2.0, period: 10.0, height: 1.5 }
    }
}

/// Closed-form body motion at one instant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Kinematics {
    pub t: f64,
    pub position: Vec3,
    pub velocity: Vec3,
    pub acceleration: Vec3,
    pub rot_wb: Rotation,
    /// Body-frame angular rate.
    pub omega: Vec3,
}

impl Kinematics {
    /// Ideal accelerometer reading `R_BW(a − g)`.
    pub fn specific_force(&self, g: &Gravity) -> Vec3 {
        self.rot_wb.inverse() * (self.acceleration - g.vector())
    }
}

pub fn kinematics(kind: &TrajectoryKind, t: f64) -> Kinematics {
    match *kind {
        TrajectoryKind::Circle { radius, period, height } => {
            let w = TAU / period;
            let th = w * t;
            let (s, c) = th.sin_cos();
            Kinematics {
                t,
                position: Vec3::new(radius * c, radius * s, height),
                velocity: Vec3::new(-radius * w * s, radius * w * c, 0.0),
                acceleration: Vec3::new(-radius * w * w * c, -radius * w * w * s, 0.0),
                rot_wb: Rotation::rot_z(th),
                omega: Vec3::new(0.0, 0.0, w),
            }
        }
        TrajectoryKind::Lissajous { center, amplitude, omega, yaw_amplitude, yaw_omega } => {
            let s = Vec3::from_fn(|i, _| (omega[i] * t).sin());
            let c = Vec3::from_fn(|i, _| (omega[i] * t).cos());
            let yaw = yaw_amplitude * (yaw_omega * t).sin();
            Kinematics {
                t,
                position: center + amplitude.component_mul(&s),
                velocity: amplitude.component_mul(&omega).component_mul(&c),
                acceleration: -amplitude.component_mul(&omega).component_mul(&omega).component_mul(&s),
                rot_wb: Rotation::rot_z(yaw),
                omega: Vec3::new(0.0, 0.0, yaw_amplitude * yaw_omega * (yaw_omega * t).cos()),
            }
        }
    }
}

/// Frame-rate ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    /// Camera-frame states, obtained by integrating the ideal IMU stream
    /// from the analytic initial state, so they agree with preintegration
    /// to rounding.
    pub frames: Vec<StateVector>,
    /// Closed-form kinematics at the frame stamps.
    pub analytic: Vec<Kinematics>,
    /// Ideal bias-free IMU samples; `imu[k]` spans frames `k` to `k + 1`.
    pub imu: Vec<Vec<ImuSample>>,
}

impl GroundTruth {
    pub fn stamps(&self) -> Vec<f64> {
        self.frames.iter().map(|x| x.stamp).collect()
    }
}

/// Analytic trajectory sampled at the camera rate with the ideal IMU between
/// frames. Each IMU sample holds the midpoint rate and specific force.
pub fn generate_trajectory(cfg: &SimConfig) -> Result<GroundTruth, SimError> {
    cfg.validate()?;
    let g = Gravity::standard();
    let sub = cfg.imu_per_frame()?;
    let n_frames = cfg.frame_count();
    let dt_imu = 1.0 / cfg.imu_rate;
    let dt_cam = 1.0 / cfg.cam_rate;
    let k0 = kinematics(&cfg.trajectory, 0.0);
    let mut frames = vec![StateVector::from_world_pose(&k0.rot_wb, &k0.position, k0.velocity, cfg.bias_truth, 0.0)];
    let mut analytic = vec![k0];
    let mut imu = Vec::with_capacity(n_frames);
    let noise = ImuNoiseParams::default();
    for k in 1..n_frames {
        let t0 = (k - 1) as f64 * dt_cam;
        let samples: Vec<ImuSample> = (0..sub)
            .map(|i| {
                let km = kinematics(&cfg.trajectory, t0 + (i as f64 + 0.5) * dt_imu);
                ImuSample { gyro: km.omega, accel: km.specific_force(&g), dt: dt_imu }
            })
            .collect();
        let f = integrate(&samples, ImuBias::zero(), noise).map_err(|e| SimError::Invalid(format!("imu: {e}")))?;
        let prev = frames[k - 1];
        // bias-free factor: predict from a bias-free copy, then restore biases
        let pred = predict_with_imu(&StateVector { bg: Vec3::zeros(), ba: Vec3::zeros(), ..prev }, &f, &g)
            .map_err(|e| SimError::Invalid(format!("imu: {e}")))?;
        frames.push(StateVector::from_imu_prediction(&prev, &pred, k as f64 * dt_cam));
        analytic.push(kinematics(&cfg.trajectory, k as f64 * dt_cam));
        imu.push(samples);
    }
    Ok(GroundTruth { frames, analytic, imu })
}
