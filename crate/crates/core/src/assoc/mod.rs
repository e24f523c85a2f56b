//! Temporal landmark generation: feature-to-component association by ray
//! casting, the projection baseline, depth recovery and seed bookkeeping.

mod projection;
mod ray;
mod raycast;
mod seed;

use nalgebra::Vector2;
use thiserror::Error;

use crate::factors::PinholeCamera;
use crate::lie::{Rotation, Vec3};
use crate::state::{Extrinsics, StateVector};

pub use projection::{associate_projection_baseline, occlusion_filter, project_components, ProjectedComponent};
pub use ray::{cast_ray, ray_component_distance, recover_depth, CellWalk, Ray, MIN_INCIDENCE};
pub use raycast::{associate_ray, associate_raycast, nearest_surface_hit};
pub use seed::{
    rotation_compensated_parallax, seed_update, Seed, SeedObservation, SeedParams, SeedStatus, SeedUpdate, MIN_SEED_OBSERVATIONS,
    MIN_SEED_PARALLAX_PX,
};

/// Whitened line-to-component gate (≈ √χ²₃ at 95%).
pub const RAY_GATE: f64 = 2.8;
/// 2-D gate of the projection baseline (√χ²₂ at 95%).
pub const PROJECTION_GATE: f64 = 2.447_746_830_680_816;
pub const TOP_K: usize = 100;
pub const MAX_RANGE: f64 = 20.0;

#[derive(Debug, Error, PartialEq)]
pub enum AssocError {
    #[error("whitened ray direction is degenerate")]
    DegenerateDirection,
    #[error("ray is parallel to the component plane")]
    ParallelRay,
    #[error("recovered depth {0} is not positive")]
    NegativeDepth(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AssocConfig {
    pub gate: f64,
    pub max_range: f64,
    pub top_k: usize,
    pub projection_gate: f64,
    /// Depth slack, meters, within which projected components compete by distance.
    pub occlusion_margin: f64,
    pub occlusion_cell_px: f64,
}

impl Default for AssocConfig {
    fn default() -> Self {
        AssocConfig {
            gate: RAY_GATE,
            max_range: MAX_RANGE,
            top_k: TOP_K,
            projection_gate: PROJECTION_GATE,
            occlusion_margin: 0.5,
            occlusion_cell_px: 32.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Association {
    pub feature_id: u64,
    pub component_id: u32,
    pub distance: f64,
    pub depth: f64,
}

/// An image feature that did not match any landmark.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Feature {
    pub u: Vector2<f64>,
    pub score: f64,
    pub track_id: u64,
}

/// World-frame camera attitude and center.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraPose {
    pub r_wc: Rotation,
    pub center: Vec3,
}

impl CameraPose {
    pub fn from_state(x: &StateVector, extr: &Extrinsics) -> Self {
        let (r_wc, center) = extr.camera_pose(x);
        CameraPose { r_wc, center }
    }

    pub fn ray(&self, cam: &PinholeCamera, f: &Feature) -> Ray {
        Ray::new(self.center, self.r_wc * cam.unproject(&f.u), f.track_id)
    }
}

/// Highest-score features first (ties by track id), at most `k`.
pub fn select_features(features: &[Feature], k: usize) -> Vec<Feature> {
    let mut v = features.to_vec();
    v.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.track_id.cmp(&b.track_id)));
    v.truncate(k);
    v
}
