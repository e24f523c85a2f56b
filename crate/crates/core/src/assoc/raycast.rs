use rayon::prelude::*;

use super::ray::{cast_ray, ray_component_distance, recover_depth, Ray};
use super::{select_features, AssocConfig, Association, CameraPose, Feature};
use crate::factors::PinholeCamera;
use crate::gmm::{Mixture, VoxelGrid};
use crate::lie::Vec3;

/// Best gated component of one cell: minimum distance, then smaller depth, then smaller id.
fn best_in_cell(ray: &Ray, ids: &[u32], mixture: &Mixture, gate: f64) -> Option<Association> {
    let mut best: Option<Association> = None;
    for &id in ids {
        let comp = mixture.get(id);
        let Ok(distance) = ray_component_distance(ray, comp) else { continue };
        if distance > gate {
            continue;
        }
        let Ok(depth) = recover_depth(ray, comp) else { continue };
        let cand = Association { feature_id: ray.feature_id, component_id: id, distance, depth };
        best = match best {
            Some(b) if (b.distance, b.depth, b.component_id) <= (cand.distance, cand.depth, cand.component_id) => Some(b),
            _ => Some(cand),
        };
    }
    best
}

/// Walks the grid front to back and stops at the first cell holding a gated component.
pub fn associate_ray(ray: &Ray, grid: &VoxelGrid, mixture: &Mixture, cfg: &AssocConfig) -> Option<Association> {
    cast_ray(grid.resolution, ray, cfg.max_range).find_map(|cell| {
        let ids = grid.get(&cell);
        if ids.is_empty() {
            None
        } else {
            best_in_cell(ray, ids, mixture, cfg.gate)
        }
    })
}

/// Nearest plane crossing along the ray whose crossing point is itself
/// gated by its component. Walks cells until they lie beyond the best hit.
pub fn nearest_surface_hit(ray: &Ray, grid: &VoxelGrid, mixture: &Mixture, cfg: &AssocConfig) -> Option<Association> {
    let slack = grid.resolution * 3f64.sqrt();
    let mut seen = std::collections::BTreeSet::new();
    let mut best: Option<Association> = None;
    for cell in cast_ray(grid.resolution, ray, cfg.max_range) {
        let center = Vec3::new(cell[0] as f64 + 0.5, cell[1] as f64 + 0.5, cell[2] as f64 + 0.5) * grid.resolution;
        if best.is_some_and(|b| (center - ray.origin).dot(&ray.bearing) > b.depth + slack) {
            break;
        }
        for &id in grid.get(&cell) {
            if !seen.insert(id) {
                continue;
            }
            let comp = mixture.get(id);
            let Ok(distance) = ray_component_distance(ray, comp) else { continue };
            if distance > cfg.gate {
                continue;
            }
            let Ok(depth) = recover_depth(ray, comp) else { continue };
            if depth > cfg.max_range || comp.mahalanobis(&ray.at(depth)) > cfg.gate {
                continue;
            }
            let cand = Association { feature_id: ray.feature_id, component_id: id, distance, depth };
            best = match best {
                Some(b) if (b.depth, b.distance, b.component_id) <= (cand.depth, cand.distance, cand.component_id) => Some(b),
                _ => Some(cand),
            };
        }
    }
    best
}

/// Ray-casting association of unmatched features. Output follows the
/// score-sorted feature order.
pub fn associate_raycast(
    pose: &CameraPose,
    features: &[Feature],
    cam: &PinholeCamera,
    grid: &VoxelGrid,
    mixture: &Mixture,
    cfg: &AssocConfig,
) -> Vec<Association> {
    let selected = select_features(features, cfg.top_k);
    selected
        .par_iter()
        .map(|f| associate_ray(&pose.ray(cam, f), grid, mixture, cfg))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}
