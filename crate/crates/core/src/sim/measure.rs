use nalgebra::Vector2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{stream, GroundTruth, SimConfig, SimError, World, STREAM_IMU, STREAM_PIXELS};
use crate::imu::ImuSample;
use crate::lie::Vec3;
use crate::state::Extrinsics;

/// Points closer than this to the camera are not observed.
pub const MIN_VIEW_DEPTH: f64 = 0.1;
pub const MAX_VIEW_RANGE: f64 = 20.0;

/// One tracked image point. `mapped` tracks carry a prior-map landmark.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureObs {
    pub track_id: u64,
    pub u: Vector2<f64>,
    pub score: f64,
    pub mapped: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameMeasurement {
    pub index: usize,
    pub stamp: f64,
    /// Samples since the previous frame; empty for the first frame.
    pub imu: Vec<ImuSample>,
    pub features: Vec<FeatureObs>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Measurements {
    pub frames: Vec<FrameMeasurement>,
}

/// Pixels of every visible landmark with noise, and the biased noisy IMU.
/// Frames are generated in order from two independent streams.
pub fn synthesize_measurements(gt: &GroundTruth, world: &World, cfg: &SimConfig) -> Result<Measurements, SimError> {
    cfg.validate()?;
    let cam = cfg.camera()?;
    let extr = Extrinsics::forward_looking();
    let mut pix_rng = stream(cfg.rng_seed, STREAM_PIXELS);
    let mut imu_rng = stream(cfg.rng_seed, STREAM_IMU);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let dt = 1.0 / cfg.imu_rate;
    let (sg, sa) = (cfg.imu_noise.sigma_g / dt.sqrt(), cfg.imu_noise.sigma_a / dt.sqrt());
    let mut frames = Vec::with_capacity(gt.frames.len());
    for (k, x) in gt.frames.iter().enumerate() {
        let imu = if k == 0 {
            vec![]
        } else {
            gt.imu[k - 1]
                .iter()
                .map(|s| {
                    let ng = Vec3::from_fn(|_, _| sg * unit.sample(&mut imu_rng));
                    let na = Vec3::from_fn(|_, _| sa * unit.sample(&mut imu_rng));
                    ImuSample { gyro: s.gyro + cfg.bias_truth.gyro + ng, accel: s.accel + cfg.bias_truth.accel + na, dt: s.dt }
                })
                .collect()
        };
        let (r_wc, c) = extr.camera_pose(x);
        let r_cw = r_wc.inverse();
        let mut features = Vec::new();
        for l in &world.landmarks {
            let p_c = r_cw * (l.position - c);
            if p_c.z <= MIN_VIEW_DEPTH || p_c.norm() > MAX_VIEW_RANGE {
                continue;
            }
            let Ok(u) = cam.project(&p_c) else { continue };
            if !cam.in_image(&u) {
                continue;
            }
            let noise = Vector2::new(unit.sample(&mut pix_rng), unit.sample(&mut pix_rng)) * cfg.pixel_sigma;
            let score = pix_rng.random::<f64>();
            features.push(FeatureObs { track_id: l.id, u: u + noise, score, mapped: l.mapped });
        }
        frames.push(FrameMeasurement { index: k, stamp: x.stamp, imu, features });
    }
    Ok(Measurements { frames })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factors::{Observation, point_in_camera, reprojection_residual};
    use crate::sim::{generate_trajectory, generate_world, TrajectoryKind};
    use crate::state::Gravity;

    fn short(cfg: SimConfig) -> SimConfig {
        SimConfig { duration: 1.0, ..cfg }
    }

    #[test]
    fn noiseless_pixels_reproject_exactly() {
        let cfg = short(SimConfig::noiseless());
        let gt = generate_trajectory(&cfg).unwrap();
        let w = generate_world(&cfg).unwrap();
        let m = synthesize_measurements(&gt, &w, &cfg).unwrap();
        let cam = cfg.camera().unwrap();
        let extr = Extrinsics::forward_looking();
        let mut n = 0;
        for (f, x) in m.frames.iter().zip(&gt.frames) {
            for o in &f.features {
                let p = w.landmarks[o.track_id as usize].position;
                let e = reprojection_residual(x, &p, &Observation::isotropic(o.u, 1.0, o.track_id, 0), &extr, &cam).unwrap();
                assert!(e.norm() < 1e-9);
                assert!(point_in_camera(x, &p, &extr).z > MIN_VIEW_DEPTH);
                n += 1;
            }
        }
        assert!(n > 1000, "{n}");
    }

    #[test]
    fn stationary_accelerometer_reads_minus_gravity() {
        let cfg = SimConfig {
            trajectory: TrajectoryKind::Lissajous {
                center: Vec3::new(0.0, 0.0, 1.5),
                amplitude: Vec3::zeros(),
                omega: Vec3::new(1.0, 1.0, 1.0),
                yaw_amplitude: 0.0,
                yaw_omega: 1.0,
            },
            ..short(SimConfig::noiseless())
        };
        let gt = generate_trajectory(&cfg).unwrap();
        let w = generate_world(&cfg).unwrap();
        let m = synthesize_measurements(&gt, &w, &cfg).unwrap();
        let g = Gravity::standard();
        let expected = gt.frames[0].rot_bw() * -g.vector();
        for s in m.frames.iter().flat_map(|f| &f.imu) {
            assert!((s.accel - cfg.bias_truth.accel - expected).norm() < 1e-12);
        }
    }

    #[test]
    fn pixel_noise_has_configured_spread() {
        let cfg = SimConfig { pixel_sigma: 1.5, duration: 3.0, ..SimConfig::default() };
        let gt = generate_trajectory(&cfg).unwrap();
        let w = generate_world(&cfg).unwrap();
        let m = synthesize_measurements(&gt, &w, &cfg).unwrap();
        let cam = cfg.camera().unwrap();
        let extr = Extrinsics::forward_looking();
        let mut errs = Vec::new();
        for (f, x) in m.frames.iter().zip(&gt.frames) {
            for o in &f.features {
                let u = cam.project(&point_in_camera(x, &w.landmarks[o.track_id as usize].position, &extr)).unwrap();
                errs.extend([o.u.x - u.x, o.u.y - u.y]);
            }
        }
        assert!(errs.len() >= 10_000, "{}", errs.len());
        let n = errs.len() as f64;
        let mean = errs.iter().sum::<f64>() / n;
        let sd = (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((sd / 1.5 - 1.0).abs() < 0.05, "{sd}");
    }
}
