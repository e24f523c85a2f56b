use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Vector2};

use super::lm::{levenberg_marquardt, solve_dense, LmProblem, LmSettings};
use super::{EstimatorError, VisualModel};
use crate::factors::{point_in_camera, reprojection_jacobian, robust_weight, Observation, MIN_DEPTH};
use crate::gmm::{GaussianComponent, Mixture};
use crate::lie::Vec3;
use crate::state::StateVector;

/// A refinement that moves a point farther than this is treated as divergence.
const MAX_SHIFT_M: f64 = 1.0;
/// Mean whitened reprojection error above which a refinement is rejected.
const MAX_WHITENED_ERROR: f64 = 5.0;

#[derive(Clone, Debug, PartialEq)]
pub struct StructureLandmark {
    pub id: u64,
    pub position: Vec3,
    pub component_id: u32,
    /// Keyed to window frames through `Observation::frame_id`.
    pub observations: Vec<Observation>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StructureOutcome {
    Refined { id: u64, position: Vec3 },
    /// Seen in fewer than two window frames.
    Skipped { id: u64 },
    Diverged { id: u64 },
}

struct Point<'a> {
    obs: Vec<(&'a StateVector, Vector2<f64>, nalgebra::Matrix2<f64>)>,
    comp: &'a GaussianComponent,
    model: &'a VisualModel,
}

impl Point<'_> {
    fn plane(&self, p: &Vec3) -> f64 {
        self.comp.normal().dot(&(p - self.comp.mean)) / self.comp.eigenvalues[0].sqrt()
    }
}

impl LmProblem for Point<'_> {
    type State = Vec3;
    type System = (DMatrix<f64>, DVector<f64>);

    fn cost(&self, p: &Vec3) -> f64 {
        let mut c = self.plane(p).powi(2);
        for (x, u, l) in &self.obs {
            match self.model.cam.project(&point_in_camera(x, p, &self.model.extr)) {
                Ok(pu) => c += self.model.kernel.cost((l * (pu - u)).norm_squared()),
                Err(_) => return f64::INFINITY,
            }
        }
        c
    }

    fn linearize(&self, p: &Vec3) -> Self::System {
        let n = self.comp.normal() / self.comp.eigenvalues[0].sqrt();
        let r = self.plane(p);
        let mut h = n * n.transpose();
        let mut b = -n * r;
        for (x, u, l) in &self.obs {
            let m = self.model;
            let (Ok(pu), Ok((_, jp))) = (m.cam.project(&point_in_camera(x, p, &m.extr)), reprojection_jacobian(x, p, &m.extr, &m.cam)) else {
                continue;
            };
            let e = l * (pu - u);
            let w = robust_weight(e.norm_squared(), &m.kernel);
            let j = l * jp;
            h += w * j.transpose() * j;
            b -= w * j.transpose() * e;
        }
        (DMatrix::from_column_slice(3, 3, h.as_slice()), DVector::from_column_slice(b.as_slice()))
    }

    fn solve(&self, (h, b): &Self::System, lambda: f64) -> Option<DVector<f64>> {
        solve_dense(h, b, lambda)
    }

    fn retract(&self, p: &Vec3, dx: &DVector<f64>) -> Vec3 {
        p + Vec3::new(dx[0], dx[1], dx[2])
    }
}

/// Refines one landmark against fixed poses with its component's
/// point-to-plane penalty `(e₁ᵀ(p − μ))²/λ_min`. `Ok(None)` when the
/// landmark is seen in fewer than two of the given frames.
pub fn refine_landmark(
    lm: &StructureLandmark,
    poses: &BTreeMap<u64, StateVector>,
    comp: &GaussianComponent,
    model: &VisualModel,
) -> Result<Option<Vec3>, EstimatorError> {
    let mut seen = Vec::new();
    let mut obs: Vec<(&StateVector, Vector2<f64>, nalgebra::Matrix2<f64>)> = Vec::new();
    for o in &lm.observations {
        if let Some(x) = poses.get(&o.frame_id) {
            if !seen.contains(&o.frame_id) {
                seen.push(o.frame_id);
                obs.push((x, o.u, o.sqrt_information()?));
            }
        }
    }
    if obs.len() < 2 {
        return Ok(None);
    }
    let problem = Point { obs, comp, model };
    let (p, report) = levenberg_marquardt(&problem, lm.position, &LmSettings { rel_tol: 1e-14, ..LmSettings::with_max_iters(50) });
    let diverged = !p.iter().all(|c| c.is_finite())
        || (p - lm.position).norm() > MAX_SHIFT_M
        || problem.obs.iter().any(|(x, _, _)| point_in_camera(x, &p, &model.extr).z <= MIN_DEPTH)
        || (report.final_cost / problem.obs.len() as f64).sqrt() > MAX_WHITENED_ERROR;
    if diverged {
        return Err(EstimatorError::TriangulationDiverged(lm.id));
    }
    Ok(Some(p))
}

/// Per-landmark refinement with poses held fixed.
pub fn structure_only_ba(
    landmarks: &[StructureLandmark],
    poses: &BTreeMap<u64, StateVector>,
    mixture: &Mixture,
    model: &VisualModel,
) -> Vec<StructureOutcome> {
    landmarks
        .iter()
        .map(|lm| match refine_landmark(lm, poses, mixture.get(lm.component_id), model) {
            Ok(Some(position)) => StructureOutcome::Refined { id: lm.id, position },
            Ok(None) => StructureOutcome::Skipped { id: lm.id },
            Err(_) => StructureOutcome::Diverged { id: lm.id },
        })
        .collect()
}
