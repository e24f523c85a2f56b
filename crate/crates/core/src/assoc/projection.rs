use nalgebra::{Matrix2, Vector2};
use rayon::prelude::*;

use super::ray::recover_depth;
use super::{select_features, AssocConfig, Association, CameraPose, Feature};
use crate::factors::PinholeCamera;
use crate::gmm::Mixture;

/// Components closer than this to the image plane are not projected.
const NEAR_PLANE: f64 = 0.1;

/// A component linearized into the image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectedComponent {
    pub id: u32,
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
    pub info: Matrix2<f64>,
    pub depth: f64,
}

/// Projects every component in front of the camera to a 2-D Gaussian and
/// returns them sorted by depth.
pub fn project_components(pose: &CameraPose, cam: &PinholeCamera, mixture: &Mixture) -> Vec<ProjectedComponent> {
    let r_cw = pose.r_wc.inverse();
    let mut out = Vec::new();
    for comp in mixture.components() {
        let p_c = r_cw * (comp.mean - pose.center);
        if p_c.z <= NEAR_PLANE {
            continue;
        }
        let (Ok(u), Ok(jp)) = (cam.project(&p_c), cam.project_jacobian(&p_c)) else { continue };
        let j = jp * r_cw.matrix();
        let cov = j * comp.cov * j.transpose() + Matrix2::identity() * 1e-6;
        let (sx, sy) = (3.0 * cov[(0, 0)].sqrt(), 3.0 * cov[(1, 1)].sqrt());
        if u.x < -sx || u.y < -sy || u.x > cam.width as f64 + sx || u.y > cam.height as f64 + sy {
            continue;
        }
        let Some(info) = cov.try_inverse() else { continue };
        out.push(ProjectedComponent { id: comp.id, mean: u, cov, info, depth: p_c.z });
    }
    out.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.id.cmp(&b.id)));
    out
}

/// Coarse z-buffer occlusion: a component is dropped when a nearer one
/// (by more than `margin`) already covers the image cell of its mean.
pub fn occlusion_filter(sorted: &[ProjectedComponent], cam: &PinholeCamera, cell_px: f64, margin: f64) -> Vec<ProjectedComponent> {
    let nx = (cam.width as f64 / cell_px).ceil() as usize;
    let ny = (cam.height as f64 / cell_px).ceil() as usize;
    let mut zbuf = vec![f64::INFINITY; nx * ny];
    let idx = |u: f64, v: f64| -> Option<usize> {
        if u < 0.0 || v < 0.0 {
            return None;
        }
        let (i, j) = ((u / cell_px) as usize, (v / cell_px) as usize);
        (i < nx && j < ny).then_some(j * nx + i)
    };
    let mut kept = Vec::with_capacity(sorted.len());
    for pc in sorted {
        if let Some(k) = idx(pc.mean.x, pc.mean.y) {
            if zbuf[k] < pc.depth - margin {
                continue;
            }
        }
        let (sx, sy) = (pc.cov[(0, 0)].sqrt(), pc.cov[(1, 1)].sqrt());
        let i0 = ((pc.mean.x - sx) / cell_px).floor().max(0.0) as usize;
        let j0 = ((pc.mean.y - sy) / cell_px).floor().max(0.0) as usize;
        let i1 = (((pc.mean.x + sx) / cell_px).floor().max(-1.0) as isize).min(nx as isize - 1);
        let j1 = (((pc.mean.y + sy) / cell_px).floor().max(-1.0) as isize).min(ny as isize - 1);
        for j in j0 as isize..=j1 {
            for i in i0 as isize..=i1 {
                let k = j as usize * nx + i as usize;
                zbuf[k] = zbuf[k].min(pc.depth);
            }
        }
        kept.push(*pc);
    }
    kept
}

fn associate_one(
    pose: &CameraPose,
    cam: &PinholeCamera,
    f: &Feature,
    visible: &[ProjectedComponent],
    mixture: &Mixture,
    cfg: &AssocConfig,
) -> Option<Association> {
    let mut first_depth = f64::INFINITY;
    let mut best: Option<(f64, u32)> = None;
    for pc in visible {
        if pc.depth > first_depth + cfg.occlusion_margin {
            break;
        }
        let r = f.u - pc.mean;
        let d = (r.transpose() * pc.info * r)[0].max(0.0).sqrt();
        if d > cfg.projection_gate {
            continue;
        }
        first_depth = first_depth.min(pc.depth);
        if best.is_none_or(|(bd, bid)| (d, pc.id) < (bd, bid)) {
            best = Some((d, pc.id));
        }
    }
    let (distance, component_id) = best?;
    let ray = pose.ray(cam, f);
    let depth = recover_depth(&ray, mixture.get(component_id)).ok()?;
    Some(Association { feature_id: f.track_id, component_id, distance, depth })
}

/// Projection-based association baseline: per feature, a linear scan over
/// the depth-sorted projected components.
pub fn associate_projection_baseline(
    pose: &CameraPose,
    features: &[Feature],
    cam: &PinholeCamera,
    mixture: &Mixture,
    cfg: &AssocConfig,
) -> Vec<Association> {
    let selected = select_features(features, cfg.top_k);
    let projected = project_components(pose, cam, mixture);
    let visible = occlusion_filter(&projected, cam, cfg.occlusion_cell_px, cfg.occlusion_margin);
    selected
        .par_iter()
        .map(|f| associate_one(pose, cam, f, &visible, mixture, cfg))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}
