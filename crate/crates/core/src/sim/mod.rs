//! Deterministic synthetic world, trajectories, measurements and metrics.
//!
//! Randomness comes from ChaCha8 seeded with `rng_seed`; each subsystem reads
//! its own stream (`set_stream`) so changing one never shifts another:
//! world = 1, pixels = 2, imu = 3, dropout = 4, init = 5.

mod eval;
mod measure;
mod trajectory;
mod world;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::factors::PinholeCamera;
use crate::gmm::Mixture;
use crate::imu::{ImuBias, ImuNoiseParams};
use crate::lie::Vec3;

pub use eval::{evaluate, read_tum, write_tum, Evaluation, FrameEstimate, TumPose};
pub use measure::{synthesize_measurements, FeatureObs, FrameMeasurement, Measurements, MAX_VIEW_RANGE, MIN_VIEW_DEPTH};
pub use trajectory::{generate_trajectory, kinematics, GroundTruth, Kinematics, TrajectoryKind};
pub use world::{generate_world, generate_world_on, surfaces, Landmark, Surface, World, WorldLayout, FLATNESS, ROOM_HALF, ROOM_HEIGHT};

pub const STREAM_WORLD: u64 = 1;
pub const STREAM_PIXELS: u64 = 2;
pub const STREAM_IMU: u64 = 3;
pub const STREAM_DROPOUT: u64 = 4;
pub const STREAM_INIT: u64 = 5;

pub fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("sim: {0}")]
    Invalid(String),
    #[error("sim: estimate and ground truth share no localized timestamps")]
    EmptyOverlap,
    #[error("sim: {0}")]
    Io(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        CameraIntrinsics { fx: 458.0, fy: 458.0, cx: 376.0, cy: 240.0, width: 752, height: 480 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimConfig {
    pub rng_seed: u64,
    pub trajectory: TrajectoryKind,
    pub imu_rate: f64,
    pub cam_rate: f64,
    pub pixel_sigma: f64,
    pub imu_noise: ImuNoiseParams,
    pub bias_truth: ImuBias,
    pub n_components: usize,
    pub n_prior_landmarks: usize,
    pub dropout: f64,
    pub duration: f64,
    pub layout: WorldLayout,
    pub camera: CameraIntrinsics,
    /// Oracle initialization error of the first frame.
    pub init_sigma_t: f64,
    pub init_sigma_phi: f64,
}

impl Default for SimConfig {
    /// The standard noisy sequence.
    fn default() -> Self {
        SimConfig {
            rng_seed: 7,
            trajectory: TrajectoryKind::default(),
            imu_rate: 200.0,
            cam_rate: 20.0,
            pixel_sigma: 1.0,
            imu_noise: ImuNoiseParams::default(),
            bias_truth: ImuBias::new(Vec3::new(5e-4, -3e-4, 2e-4), Vec3::new(0.01, -0.02, 0.015)),
            n_components: 200,
            n_prior_landmarks: 2000,
            dropout: 0.3,
            duration: 10.0,
            layout: WorldLayout::Room,
            camera: CameraIntrinsics::default(),
            init_sigma_t: 0.02,
            init_sigma_phi: 0.01,
        }
    }
}

impl SimConfig {
    /// Standard sequence with every noise source off.
    pub fn noiseless() -> Self {
        SimConfig {
            pixel_sigma: 0.0,
            imu_noise: ImuNoiseParams { sigma_g: 0.0, sigma_a: 0.0, sigma_bg: 0.0, sigma_ba: 0.0 },
            init_sigma_t: 0.0,
            init_sigma_phi: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Invalid(m.to_string()));
        if !(self.imu_rate > 0.0 && self.cam_rate > 0.0) {
            return bad("rates must be positive");
        }
        if !(self.duration > 0.0) {
            return bad("duration must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(self.pixel_sigma >= 0.0 && self.init_sigma_t >= 0.0 && self.init_sigma_phi >= 0.0) {
            return bad("noise levels must be non-negative");
        }
        if self.n_components == 0 {
            return bad("n_components must be positive");
        }
        match self.trajectory {
            TrajectoryKind::Circle { radius, period, .. } if !(radius >= 0.0 && period > 0.0) => bad("circle needs radius ≥ 0 and period > 0"),
            _ => Ok(()),
        }
    }

    pub fn imu_per_frame(&self) -> Result<usize, SimError> {
        let r = self.imu_rate / self.cam_rate;
        if (r - r.round()).abs() > 1e-9 || r < 1.0 {
            return Err(SimError::Invalid(format!("imu_rate / cam_rate = {r} is not a positive integer")));
        }
        Ok(r.round() as usize)
    }

    /// Frames at `k / cam_rate` for `k = 0..=duration·cam_rate`.
    pub fn frame_count(&self) -> usize {
        (self.duration * self.cam_rate).round() as usize + 1
    }

    pub fn camera(&self) -> Result<PinholeCamera, SimError> {
        let c = self.camera;
        PinholeCamera::new(c.fx, c.fy, c.cx, c.cy, c.width, c.height).map_err(|e| SimError::Invalid(format!("camera: {e}")))
    }
}

/// Everything a localization run consumes.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub cfg: SimConfig,
    pub gt: GroundTruth,
    pub world: World,
    pub meas: Measurements,
}

impl Scenario {
    pub fn generate(cfg: &SimConfig) -> Result<Self, SimError> {
        let gt = generate_trajectory(cfg)?;
        let world = generate_world(cfg)?;
        let meas = synthesize_measurements(&gt, &world, cfg)?;
        Ok(Scenario { cfg: *cfg, gt, world, meas })
    }

    /// Same as [`Scenario::generate`] over a given map.
    pub fn generate_on_map(cfg: &SimConfig, mixture: Mixture) -> Result<Self, SimError> {
        let gt = generate_trajectory(cfg)?;
        let world = generate_world_on(mixture, cfg)?;
        let meas = synthesize_measurements(&gt, &world, cfg)?;
        Ok(Scenario { cfg: *cfg, gt, world, meas })
    }
}
