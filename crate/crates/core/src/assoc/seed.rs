use std::collections::BTreeMap;

use nalgebra::Vector2;

use super::ray::Ray;
use super::{Association, CameraPose};
use crate::factors::PinholeCamera;
use crate::lie::{Rotation, Vec3};

pub const MIN_SEED_OBSERVATIONS: usize = 4;
pub const MIN_SEED_PARALLAX_PX: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeedParams {
    pub min_obs: usize,
    pub min_parallax_px: f64,
}

impl Default for SeedParams {
    fn default() -> Self {
        SeedParams { min_obs: MIN_SEED_OBSERVATIONS, min_parallax_px: MIN_SEED_PARALLAX_PX }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeedStatus {
    Pending,
    Active,
    Dead,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeedObservation {
    pub frame_id: u64,
    pub u: Vector2<f64>,
    /// Camera attitude `R_WC` of the observing frame.
    pub r_wc: Rotation,
}

/// A point hypothesized on a map component, waiting for enough evidence.
#[derive(Clone, Debug, PartialEq)]
pub struct Seed {
    pub track_id: u64,
    pub position: Vec3,
    pub anchor_ray: Ray,
    pub component_id: u32,
    pub observations: Vec<SeedObservation>,
    pub max_parallax_px: f64,
    pub status: SeedStatus,
}

impl Seed {
    pub fn from_association(a: &Association, ray: &Ray, frame_id: u64, u: Vector2<f64>, pose: &CameraPose) -> Self {
        Seed {
            track_id: a.feature_id,
            position: ray.at(a.depth),
            anchor_ray: *ray,
            component_id: a.component_id,
            observations: vec![SeedObservation { frame_id, u, r_wc: pose.r_wc }],
            max_parallax_px: 0.0,
            status: SeedStatus::Pending,
        }
    }

    /// Adds an observation and refreshes the parallax; one entry per frame.
    pub fn observe(&mut self, obs: SeedObservation, cam: &PinholeCamera) {
        if self.observations.iter().any(|o| o.frame_id == obs.frame_id) {
            return;
        }
        for prev in &self.observations {
            if let Some(p) = rotation_compensated_parallax(prev, &obs, cam) {
                self.max_parallax_px = self.max_parallax_px.max(p);
            }
        }
        self.observations.push(obs);
    }

    pub fn meets_thresholds(&self, min_obs: usize, min_parallax_px: f64) -> bool {
        self.observations.len() >= min_obs && self.max_parallax_px >= min_parallax_px
    }
}

/// Pixel displacement between `b` and the bearing of `a` rotated into `b`'s
/// camera. Pure rotation yields zero.
pub fn rotation_compensated_parallax(a: &SeedObservation, b: &SeedObservation, cam: &PinholeCamera) -> Option<f64> {
    let bearing_a = cam.unproject(&a.u);
    let in_b = b.r_wc.inverse() * (a.r_wc * bearing_a);
    cam.project(&in_b).ok().map(|u| (u - b.u).norm())
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SeedUpdate {
    pub activated: Vec<u64>,
    pub removed: Vec<u64>,
}

/// Appends this frame's matches, promotes seeds that meet both thresholds,
/// and drops seeds not observed by any frame of the window.
pub fn seed_update(
    seeds: &mut BTreeMap<u64, Seed>,
    frame_id: u64,
    frame_pose: &CameraPose,
    matched: &[(u64, Vector2<f64>)],
    window_frames: &[u64],
    cam: &PinholeCamera,
    params: &SeedParams,
) -> SeedUpdate {
    let mut out = SeedUpdate::default();
    for (track, u) in matched {
        if let Some(s) = seeds.get_mut(track) {
            s.observe(SeedObservation { frame_id, u: *u, r_wc: frame_pose.r_wc }, cam);
        }
    }
    for s in seeds.values_mut() {
        if s.status == SeedStatus::Pending && s.meets_thresholds(params.min_obs, params.min_parallax_px) {
            s.status = SeedStatus::Active;
            out.activated.push(s.track_id);
        }
        if !s.observations.iter().any(|o| window_frames.contains(&o.frame_id)) {
            s.status = SeedStatus::Dead;
        }
    }
    seeds.retain(|id, s| {
        let keep = s.status != SeedStatus::Dead;
        if !keep {
            out.removed.push(*id);
        }
        keep
    });
    out.activated.retain(|id| seeds.contains_key(id));
    out
}
