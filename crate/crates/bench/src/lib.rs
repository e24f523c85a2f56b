//! Fixtures shared by the criterion benches.

use hmloc::estimator::{marginalize_visual, StateDim, VisualFactor, VisualModel};
use hmloc::gmm::build_voxel_index;
use hmloc::imu::integrate;
use hmloc::lie::Vec3;
use hmloc::sim::{generate_trajectory, generate_world};
use hmloc::{
    CameraPose, Extrinsics, Feature, Gravity, LocalizerConfig, Mixture, Observation, PinholeCamera, PosePriorFactor,
    PreintegratedFactor, Scenario, SimConfig, StateVector, VoxelGrid,
};

pub struct AssocFixture {
    pub cam: PinholeCamera,
    pub mixture: Mixture,
    pub grid: VoxelGrid,
    pub poses: Vec<CameraPose>,
    pub features: Vec<Feature>,
}

/// Room map with `n` components, `frames` ground-truth poses and a fixed
/// 10×10 lattice of features.
pub fn assoc_fixture(n: usize, frames: usize) -> AssocFixture {
    let cfg = SimConfig { n_components: n, ..SimConfig::default() };
    let mixture = generate_world(&cfg).expect("world").mixture;
    let lc = LocalizerConfig::default();
    let grid = build_voxel_index(&mixture, lc.voxel_size, lc.mass_threshold).expect("grid");
    let cam = cfg.camera().expect("camera");
    let gt = generate_trajectory(&cfg).expect("trajectory");
    let extr = Extrinsics::forward_looking();
    let step = (gt.frames.len() / frames).max(1);
    let poses = gt.frames.iter().step_by(step).take(frames).map(|x| CameraPose::from_state(x, &extr)).collect();
    let features = (0..100u64)
        .map(|i| Feature {
            u: nalgebra::Vector2::new((i % 10) as f64 * cam.width as f64 / 10.0 + 16.0, (i / 10) as f64 * cam.height as f64 / 10.0 + 12.0),
            score: 1.0 / (1.0 + i as f64),
            track_id: i,
        })
        .collect();
    AssocFixture { cam, mixture, grid, poses, features }
}

pub struct WindowFixture {
    pub states: Vec<StateVector>,
    pub inertial: Vec<PreintegratedFactor>,
    pub visual: Vec<Vec<VisualFactor>>,
    pub priors: Vec<PosePriorFactor>,
    pub gravity: Gravity,
    pub model: VisualModel,
    pub dim: StateDim,
}

/// The first `size` frames of the standard sequence, every pose shifted by
/// a few centimetres, with the mapped landmarks as visual factors.
pub fn window_fixture(size: usize) -> WindowFixture {
    let cfg = SimConfig::default();
    let scn = Scenario::generate(&cfg).expect("scenario");
    let lc = LocalizerConfig::default();
    let model = VisualModel { cam: cfg.camera().expect("camera"), extr: Extrinsics::forward_looking(), kernel: lc.kernel };
    let gt = &scn.gt.frames[..size];
    let states = gt
        .iter()
        .enumerate()
        .map(|(i, x)| x.boxplus_pose(&Vec3::new(0.002, -0.001, 0.001), &Vec3::new(0.02 * (i as f64).sin(), 0.01, -0.015)))
        .collect();
    let inertial = (1..size).map(|k| integrate(&scn.meas.frames[k].imu, gt[k - 1].bias(), lc.imu_noise).expect("imu")).collect();
    let visual: Vec<Vec<VisualFactor>> = scn.meas.frames[..size]
        .iter()
        .map(|fm| {
            fm.features
                .iter()
                .filter(|o| o.mapped)
                .filter_map(|o| {
                    let obs = Observation::isotropic(o.u, lc.pixel_sigma, o.track_id, fm.index as u64);
                    VisualFactor::new(o.track_id, scn.world.landmarks[o.track_id as usize].position, obs).ok()
                })
                .collect()
        })
        .collect();
    let priors = visual.iter().zip(gt).enumerate().map(|(k, (f, x))| marginalize_visual(f, x, k as u64, &model).usable()).collect();
    WindowFixture { states, inertial, visual, priors, gravity: Gravity::standard(), model, dim: StateDim::Full }
}
