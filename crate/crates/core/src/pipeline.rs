//! Sequence localizer: prediction, instant localization, temporal landmark
//! creation and verification, and windowed optimization, per frame.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand_distr::{Distribution, Normal};

use crate::assoc::{
    associate_projection_baseline, associate_raycast, nearest_surface_hit, seed_update, AssocConfig, CameraPose, Feature, Seed, SeedParams,
};
use crate::estimator::{
    marginalize_visual, schur_marginal, solve_instant, structure_only_ba, windowed_motion_ba, InertialLink, InstantInput,
    LmSettings, Stage, StageTimer, StateDim, StatePrior, StructureLandmark, StructureOutcome, VisualBackend, VisualFactor,
    VisualModel, WindowConfig, WindowInput, PRIOR_DAMPING,
};
use crate::factors::{Mat6, Observation, PosePriorFactor, RobustKernel};
use crate::gmm::{build_voxel_index, VoxelGrid, DEFAULT_MASS_THRESHOLD, DEFAULT_RESOLUTION};
use crate::imu::{integrate, ImuNoiseParams, PreintegratedFactor};
use crate::lie::{exp_so3, Vec3};
use crate::sim::{stream, FrameEstimate, FrameMeasurement, Scenario, STREAM_INIT};
use crate::state::{predict_with_imu, Extrinsics, Gravity, StateVector};
use crate::Error;

/// System variant: vision only, with inertial data, with pose-prior
/// optimization, or with projection-based association.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    V,
    VI,
    VIL,
    VIP,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::V, Mode::VI, Mode::VIL, Mode::VIP];

    pub fn name(self) -> &'static str {
        match self {
            Mode::V => "V",
            Mode::VI => "V+I",
            Mode::VIL => "V+I+L",
            Mode::VIP => "V+I+P",
        }
    }

    pub fn inertial(self) -> bool {
        self != Mode::V
    }

    pub fn pose_priors(self) -> bool {
        self == Mode::VIL
    }

    pub fn projection(self) -> bool {
        self == Mode::VIP
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown mode `{s}`, expected one of V, V+I, V+I+L, V+I+P"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalizerConfig {
    pub mode: Mode,
    pub window: WindowConfig,
    pub assoc: AssocConfig,
    pub seed: SeedParams,
    /// Voxel edge length δ_v, meters.
    pub voxel_size: f64,
    /// Relative registration mass δ_l.
    pub mass_threshold: f64,
    pub kernel: RobustKernel,
    pub instant: LmSettings,
    /// Pixel standard deviation assumed by the reprojection factors.
    pub pixel_sigma: f64,
    /// IMU noise assumed by preintegration.
    pub imu_noise: ImuNoiseParams,
    /// First-frame prior standard deviations of `[φ, t, v, b_g, b_a]`.
    pub first_prior_sigmas: [f64; 5],
    pub temporal_landmarks: bool,
}

impl Default for LocalizerConfig {
    fn default() -> Self {
        LocalizerConfig {
            mode: Mode::VIL,
            window: WindowConfig::default(),
            assoc: AssocConfig::default(),
            seed: SeedParams::default(),
            voxel_size: DEFAULT_RESOLUTION,
            mass_threshold: DEFAULT_MASS_THRESHOLD,
            kernel: RobustKernel::default(),
            instant: LmSettings::with_max_iters(20),
            pixel_sigma: 1.0,
            imu_noise: ImuNoiseParams::default(),
            first_prior_sigmas: [1.0, 10.0, 1.0, 0.01, 0.1],
            temporal_landmarks: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TemporalLandmark {
    pub id: u64,
    pub position: Vec3,
    pub component_id: u32,
    pub observations: Vec<Observation>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunStats {
    pub frames: usize,
    pub localized: usize,
    pub seeds_created: usize,
    pub landmarks_activated: usize,
    pub landmarks_demoted: usize,
    /// Reprojection factors from temporal landmarks, summed over frames.
    pub temporal_factors: usize,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub estimates: Vec<FrameEstimate>,
    pub timer: StageTimer,
    /// Wall time of every windowed optimization, ms.
    pub opt_ms: Vec<f64>,
    pub stats: RunStats,
}

struct Keyframe {
    id: u64,
    state: StateVector,
    tracks: Vec<(u64, bool, Observation)>,
    prior: PosePriorFactor,
    link: Option<PreintegratedFactor>,
}

pub struct Localizer<'a> {
    cfg: LocalizerConfig,
    scn: &'a Scenario,
    model: VisualModel,
    gravity: Gravity,
    grid: Option<VoxelGrid>,
    map: HashMap<u64, Vec3>,
    window: VecDeque<Keyframe>,
    instant_prior: Option<StatePrior>,
    seeds: BTreeMap<u64, Seed>,
    temporal: BTreeMap<u64, TemporalLandmark>,
    timer: StageTimer,
    opt_ms: Vec<f64>,
    stats: RunStats,
}

fn ms_since(t0: Instant) -> f64 {
    t0.elapsed().as_secs_f64() * 1e3
}

impl<'a> Localizer<'a> {
    pub fn new(scn: &'a Scenario, cfg: LocalizerConfig) -> Result<Self, Error> {
        let cam = scn.cfg.camera()?;
        let grid = if cfg.temporal_landmarks && !cfg.mode.projection() {
            Some(build_voxel_index(&scn.world.mixture, cfg.voxel_size, cfg.mass_threshold)?)
        } else {
            None
        };
        Ok(Localizer {
            model: VisualModel { cam, extr: Extrinsics::forward_looking(), kernel: cfg.kernel },
            gravity: Gravity::standard(),
            grid,
            map: scn.world.mapped_landmarks().map(|l| (l.id, l.position)).collect(),
            window: VecDeque::new(),
            instant_prior: None,
            seeds: BTreeMap::new(),
            temporal: BTreeMap::new(),
            timer: StageTimer::new(),
            opt_ms: Vec::new(),
            stats: RunStats::default(),
            cfg,
            scn,
        })
    }

    fn dim(&self) -> StateDim {
        if self.cfg.mode.inertial() {
            StateDim::Full
        } else {
            StateDim::Pose
        }
    }

    /// Oracle initialization: ground truth perturbed by the configured noise.
    pub fn initial_state(&self) -> StateVector {
        let gt = self.scn.gt.frames[0];
        let c = &self.scn.cfg;
        let mut rng = stream(c.rng_seed, STREAM_INIT);
        let n = Normal::new(0.0, 1.0).expect("unit normal");
        let mut draw = |s: f64| Vec3::from_fn(|_, _| s * n.sample(&mut rng));
        let d_phi = draw(c.init_sigma_phi);
        let d_p = draw(c.init_sigma_t);
        StateVector::from_world_pose(&(gt.rot_wb() * exp_so3(&d_phi)), &(gt.position() + d_p), gt.v, gt.bias(), gt.stamp)
    }

    fn observation(&self, track: u64, u: nalgebra::Vector2<f64>, frame: u64) -> Observation {
        Observation::isotropic(u, self.cfg.pixel_sigma, track, frame)
    }

    fn landmark_position(&self, track: u64, mapped: bool) -> Option<Vec3> {
        if mapped {
            self.map.get(&track).copied()
        } else {
            self.temporal.get(&track).map(|l| l.position)
        }
    }

    fn factors_for(&self, tracks: &[(u64, bool, Observation)]) -> Vec<VisualFactor> {
        tracks
            .iter()
            .filter_map(|(id, mapped, obs)| {
                let p = self.landmark_position(*id, *mapped)?;
                VisualFactor::new(*id, p, *obs).ok()
            })
            .collect()
    }

    pub fn process(&mut self, fm: &FrameMeasurement) -> Result<FrameEstimate, Error> {
        let frame_id = fm.index as u64;
        self.stats.frames += 1;

        // Pred
        let t0 = Instant::now();
        let last = self.window.back().map(|k| k.state);
        let (x_pred, link) = match last {
            None => (self.initial_state(), None),
            Some(prev) if self.cfg.mode.inertial() => {
                let f = integrate(&fm.imu, prev.bias(), self.cfg.imu_noise)?;
                let pred = predict_with_imu(&prev, &f, &self.gravity)?;
                (StateVector::from_imu_prediction(&prev, &pred, fm.stamp), Some(f))
            }
            Some(prev) => {
                let before = self.window.iter().rev().nth(1).map(|k| k.state).unwrap_or(prev);
                (StateVector::from_cv_prediction(&prev, &before, fm.stamp), None)
            }
        };
        self.timer.record(Stage::Pred, ms_since(t0));

        // Track
        let t0 = Instant::now();
        let mut tracks = Vec::new();
        let mut unmatched = Vec::new();
        let mut seed_obs = Vec::new();
        for o in &fm.features {
            let known = o.mapped || self.temporal.contains_key(&o.track_id);
            if known {
                tracks.push((o.track_id, o.mapped, self.observation(o.track_id, o.u, frame_id)));
            } else if self.seeds.contains_key(&o.track_id) {
                seed_obs.push((o.track_id, o.u));
            } else if !o.mapped {
                unmatched.push(Feature { u: o.u, score: o.score, track_id: o.track_id });
            }
        }
        let factors = self.factors_for(&tracks);
        self.stats.temporal_factors += factors.iter().filter(|f| !self.map.contains_key(&f.landmark_id)).count();
        let first_prior;
        let prior = match last {
            None => {
                first_prior = StatePrior::diagonal(x_pred, self.dim(), self.cfg.first_prior_sigmas);
                Some(&first_prior)
            }
            Some(_) => self.instant_prior.as_ref(),
        };
        let inertial = match (self.window.back(), link.as_ref()) {
            (Some(k), Some(f)) => Some(InertialLink { prev_frame_id: k.id, x_prev: k.state, factor: f, gravity: self.gravity }),
            _ => None,
        };
        let input = InstantInput { frame_id, x_k: x_pred, factors: &factors, inertial, prior, dim: self.dim() };
        let solved = solve_instant(&input, &self.model, &self.cfg.instant).ok().filter(|s| s.localized());
        let (state, localized, pose_prior) = match &solved {
            Some(s) => {
                if let (Some(xp), Some(k)) = (s.x_prev, self.window.back_mut()) {
                    k.state = xp;
                }
                if self.cfg.mode.inertial() {
                    let (h, _) = schur_marginal(&s.ne, frame_id)?;
                    self.instant_prior = Some(StatePrior { mean: s.x_k, info: h, dim: StateDim::Full });
                }
                let prior = if self.cfg.mode.pose_priors() {
                    self.visual_prior(s.x_k, &s.factors_used, frame_id)
                } else {
                    PosePriorFactor::from_state(&s.x_k, Mat6::zeros(), frame_id)
                };
                (s.x_k, true, prior)
            }
            None => {
                if let Some(p) = self.instant_prior.take() {
                    self.instant_prior = Some(p.relinearized(x_pred));
                }
                (x_pred, false, PosePriorFactor::from_state(&x_pred, Mat6::identity() * PRIOR_DAMPING, frame_id))
            }
        };
        self.timer.record(Stage::Track, ms_since(t0));
        if localized {
            self.stats.localized += 1;
        }

        self.window.push_back(Keyframe { id: frame_id, state, tracks, prior: pose_prior, link });
        while self.window.len() > self.cfg.window.size {
            self.window.pop_front();
        }
        let window_ids: Vec<u64> = self.window.iter().map(|k| k.id).collect();
        let pose = CameraPose::from_state(&state, &self.model.extr);

        // Update: seed verification
        let t0 = Instant::now();
        let mut update_ms = 0.0;
        if self.cfg.temporal_landmarks {
            let up = seed_update(&mut self.seeds, frame_id, &pose, &seed_obs, &window_ids, &self.model.cam, &self.cfg.seed);
            for id in up.activated {
                if let Some(s) = self.seeds.remove(&id) {
                    let observations = s.observations.iter().map(|o| self.observation(id, o.u, o.frame_id)).collect();
                    self.temporal.insert(id, TemporalLandmark { id, position: s.position, component_id: s.component_id, observations });
                    self.stats.landmarks_activated += 1;
                }
            }
            for (id, _, obs) in &self.window.back().expect("pushed").tracks {
                if let Some(l) = self.temporal.get_mut(id) {
                    l.observations.push(*obs);
                }
            }
            update_ms += ms_since(t0);
        }

        // Creation
        if self.cfg.temporal_landmarks && localized {
            let t0 = Instant::now();
            let mixture = &self.scn.world.mixture;
            let assoc = match &self.grid {
                Some(g) => associate_raycast(&pose, &unmatched, &self.model.cam, g, mixture, &self.cfg.assoc),
                None => associate_projection_baseline(&pose, &unmatched, &self.model.cam, mixture, &self.cfg.assoc),
            };
            for a in assoc {
                if let Some(f) = unmatched.iter().find(|f| f.track_id == a.feature_id) {
                    let ray = pose.ray(&self.model.cam, f);
                    // a nearer surface crossing occludes the first gated cell
                    let a = match &self.grid {
                        Some(g) => match nearest_surface_hit(&ray, g, mixture, &self.cfg.assoc) {
                            Some(hit) => hit,
                            None => continue,
                        },
                        None => a,
                    };
                    self.seeds.insert(a.feature_id, Seed::from_association(&a, &ray, frame_id, f.u, &pose));
                    self.stats.seeds_created += 1;
                }
            }
            self.timer.record(Stage::Creation, ms_since(t0));
        }

        // Opt
        if self.window.len() >= 2 {
            self.optimize_window()?;
        }

        // structure-only refinement counts toward Update
        if self.cfg.temporal_landmarks {
            let t0 = Instant::now();
            self.refine_structure();
            update_ms += ms_since(t0);
            self.timer.record(Stage::Update, update_ms);
        }

        let state = self.window.back().expect("pushed").state;
        if let Some(p) = self.instant_prior.take() {
            self.instant_prior = Some(p.relinearized(state));
        }
        Ok(FrameEstimate { state, localized })
    }

    /// Visual factors summarized at their own optimum, so the prior carries
    /// no inertial or earlier information.
    fn visual_prior(&self, x_k: StateVector, factors: &[VisualFactor], frame_id: u64) -> PosePriorFactor {
        let input = InstantInput { frame_id, x_k, factors, inertial: None, prior: None, dim: StateDim::Pose };
        let mode = match solve_instant(&input, &self.model, &self.cfg.instant) {
            Ok(v) if v.converged() => v.x_k,
            _ => x_k,
        };
        marginalize_visual(factors, &mode, frame_id, &self.model).usable()
    }

    fn optimize_window(&mut self) -> Result<(), Error> {
        let states: Vec<StateVector> = self.window.iter().map(|k| k.state).collect();
        let inertial: Vec<PreintegratedFactor> = if self.cfg.mode.inertial() {
            self.window.iter().skip(1).map(|k| k.link.clone()).collect::<Option<Vec<_>>>().unwrap_or_default()
        } else {
            vec![]
        };
        // a window with a missing link falls back to a pose-only window
        let dim = if self.cfg.mode.inertial() && inertial.len() + 1 == states.len() { StateDim::Full } else { StateDim::Pose };
        let t0 = Instant::now();
        let sol = if self.cfg.mode.pose_priors() {
            let priors: Vec<PosePriorFactor> = self.window.iter().map(|k| k.prior.clone()).collect();
            let input = WindowInput { states: &states, inertial: &inertial, gravity: self.gravity, backend: VisualBackend::PosePriors(&priors), dim };
            windowed_motion_ba(&input, &self.model, &self.cfg.window)?
        } else {
            let vis: Vec<Vec<VisualFactor>> = self.window.iter().map(|k| self.factors_for(&k.tracks)).collect();
            let input = WindowInput { states: &states, inertial: &inertial, gravity: self.gravity, backend: VisualBackend::Reprojection(&vis), dim };
            windowed_motion_ba(&input, &self.model, &self.cfg.window)?
        };
        let ms = ms_since(t0);
        self.timer.record(Stage::Opt, ms);
        self.opt_ms.push(ms);
        for (k, x) in self.window.iter_mut().zip(sol.states) {
            k.state = x;
        }
        Ok(())
    }

    fn refine_structure(&mut self) {
        let poses: BTreeMap<u64, StateVector> = self.window.iter().map(|k| (k.id, k.state)).collect();
        let lms: Vec<StructureLandmark> = self
            .temporal
            .values()
            .filter(|l| l.observations.iter().any(|o| poses.contains_key(&o.frame_id)))
            .map(|l| StructureLandmark { id: l.id, position: l.position, component_id: l.component_id, observations: l.observations.clone() })
            .collect();
        for out in structure_only_ba(&lms, &poses, &self.scn.world.mixture, &self.model) {
            match out {
                StructureOutcome::Refined { id, position } => {
                    if let Some(l) = self.temporal.get_mut(&id) {
                        l.position = position;
                    }
                }
                StructureOutcome::Diverged { id } => {
                    // the track re-enters association as an unmatched feature
                    self.temporal.remove(&id);
                    self.stats.landmarks_demoted += 1;
                }
                StructureOutcome::Skipped { .. } => {}
            }
        }
    }

    pub fn temporal_landmarks(&self) -> &BTreeMap<u64, TemporalLandmark> {
        &self.temporal
    }

    pub fn finish(self) -> (StageTimer, Vec<f64>, RunStats) {
        (self.timer, self.opt_ms, self.stats)
    }
}

/// Runs the localizer over every frame of a scenario.
pub fn run_localization(scn: &Scenario, cfg: &LocalizerConfig) -> Result<RunOutput, Error> {
    let mut loc = Localizer::new(scn, *cfg)?;
    let mut estimates = Vec::with_capacity(scn.meas.frames.len());
    for fm in &scn.meas.frames {
        estimates.push(loc.process(fm)?);
    }
    let (timer, opt_ms, stats) = loc.finish();
    Ok(RunOutput { estimates, timer, opt_ms, stats })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_names_round_trip() {
        for m in Mode::ALL {
            assert_eq!(m.name().parse::<Mode>().unwrap(), m);
        }
        assert!("VIO".parse::<Mode>().is_err());
    }
}
