use nalgebra::{DMatrix, DVector};

use super::lm::{levenberg_marquardt, solve_dense, LmProblem, LmReport, LmSettings};
use super::{
    mean_reprojection_error, visual_cost, visual_normal, EstimatorError, NormalEquation, StateBlock, StateDim, StatePrior,
    VisualFactor, VisualModel,
};
use crate::factors::{inertial_information, inertial_jacobians, inertial_residual, point_in_camera, Mat6, MIN_DEPTH};
use crate::imu::PreintegratedFactor;
use crate::state::{Gravity, StateVector};

/// Fewer reprojection factors than this leave the pose unobservable.
pub const MIN_INSTANT_OBSERVATIONS: usize = 6;
/// Unconverged solutions above this mean error count as lost.
pub const LOST_REPROJECTION_PX: f64 = 3.0;

/// Preintegrated link from the previous frame to the current one.
#[derive(Clone, Copy, Debug)]
pub struct InertialLink<'a> {
    pub prev_frame_id: u64,
    pub x_prev: StateVector,
    pub factor: &'a PreintegratedFactor,
    pub gravity: Gravity,
}

#[derive(Clone, Copy, Debug)]
pub struct InstantInput<'a> {
    pub frame_id: u64,
    /// Initial guess for the current frame.
    pub x_k: StateVector,
    pub factors: &'a [VisualFactor],
    pub inertial: Option<InertialLink<'a>>,
    /// Acts on the previous state when an inertial link is present, else on the current one.
    pub prior: Option<&'a StatePrior>,
    pub dim: StateDim,
}

#[derive(Clone, Debug)]
pub struct InstantSolution {
    pub x_k: StateVector,
    pub x_prev: Option<StateVector>,
    /// Normal equation at the returned states, `[x_prev, x_k]` or `[x_k]`.
    pub ne: NormalEquation,
    /// Visual part of the pose block of `ne.h`.
    pub visual_info: Mat6,
    pub factors_used: Vec<VisualFactor>,
    pub report: LmReport,
    pub mean_reproj_px: f64,
}

impl InstantSolution {
    pub fn converged(&self) -> bool {
        self.report.converged
    }

    /// Localized unless the solver stalled with a large reprojection error.
    pub fn localized(&self) -> bool {
        self.report.converged || self.mean_reproj_px <= LOST_REPROJECTION_PX
    }
}

type Pair = (Option<StateVector>, StateVector);

struct Instant<'a> {
    factors: &'a [VisualFactor],
    model: &'a VisualModel,
    inertial: Option<(&'a PreintegratedFactor, Gravity)>,
    prior: Option<&'a StatePrior>,
    dim: StateDim,
}

impl Instant<'_> {
    fn offsets(&self) -> (usize, usize) {
        // (offset of x_k, total size)
        if self.inertial.is_some() {
            (15, 30)
        } else {
            (0, self.dim.size())
        }
    }

    fn linear_system(&self, (prev, cur): &Pair) -> (DMatrix<f64>, DVector<f64>) {
        let (ok, n) = self.offsets();
        let mut h = DMatrix::zeros(n, n);
        let mut b = DVector::zeros(n);
        let (hv, bv, _) = visual_normal(cur, self.factors, self.model);
        let mut hp = h.view_mut((ok, ok), (6, 6));
        hp += hv;
        let mut bp = b.rows_mut(ok, 6);
        bp += bv;
        if let (Some((f, g)), Some(prev)) = (self.inertial, prev) {
            if let (Ok(r), Ok((jj, jk))) = (inertial_residual(prev, cur, f, &g), inertial_jacobians(prev, cur, f, &g)) {
                let omega = inertial_information(f);
                let ojj = omega * jj;
                let ojk = omega * jk;
                let or = omega * r;
                let mut v = h.view_mut((0, 0), (15, 15));
                v += jj.transpose() * ojj;
                let mut v = h.view_mut((0, 15), (15, 15));
                v += jj.transpose() * ojk;
                let mut v = h.view_mut((15, 0), (15, 15));
                v += jk.transpose() * ojj;
                let mut v = h.view_mut((15, 15), (15, 15));
                v += jk.transpose() * ojk;
                let mut v = b.rows_mut(0, 15);
                v -= jj.transpose() * or;
                let mut v = b.rows_mut(15, 15);
                v -= jk.transpose() * or;
            }
        }
        if let Some(p) = self.prior {
            let (target, off) = match prev {
                Some(x) if self.inertial.is_some() => (x, 0),
                _ => (cur, ok),
            };
            let (e, j) = p.residual(target);
            let m = p.dim.size();
            let jt_l = j.transpose() * &p.info;
            let mut v = h.view_mut((off, off), (m, m));
            v += &jt_l * &j;
            let mut v = b.rows_mut(off, m);
            v -= &jt_l * &e;
        }
        (0.5 * (&h + h.transpose()), b)
    }
}

impl LmProblem for Instant<'_> {
    type State = Pair;
    type System = (DMatrix<f64>, DVector<f64>);

    fn cost(&self, (prev, cur): &Pair) -> f64 {
        let mut c = visual_cost(cur, self.factors, self.model);
        if let (Some((f, g)), Some(prev)) = (self.inertial, prev) {
            match inertial_residual(prev, cur, f, &g) {
                Ok(r) => c += (r.transpose() * inertial_information(f) * r)[0],
                Err(_) => return f64::INFINITY,
            }
        }
        if let Some(p) = self.prior {
            let target = match prev {
                Some(x) if self.inertial.is_some() => x,
                _ => cur,
            };
            c += p.cost(target);
        }
        c
    }

    fn linearize(&self, x: &Pair) -> Self::System {
        self.linear_system(x)
    }

    fn solve(&self, (h, b): &Self::System, lambda: f64) -> Option<DVector<f64>> {
        solve_dense(h, b, lambda)
    }

    fn retract(&self, (prev, cur): &Pair, dx: &DVector<f64>) -> Pair {
        let (ok, n) = self.offsets();
        let prev = prev.map(|p| if ok > 0 { StateDim::Full.retract(&p, &dx.as_slice()[0..15]) } else { p });
        (prev, self.dim.retract(cur, &dx.as_slice()[ok..n]))
    }
}

/// Motion-only LM over the current (and, with an inertial link, previous)
/// state with landmarks held fixed. Factors whose point lies behind the
/// initial camera are dropped before solving.
pub fn solve_instant(input: &InstantInput, model: &VisualModel, settings: &LmSettings) -> Result<InstantSolution, EstimatorError> {
    let factors: Vec<VisualFactor> = input
        .factors
        .iter()
        .filter(|f| point_in_camera(&input.x_k, &f.p_w, &model.extr).z > MIN_DEPTH)
        .copied()
        .collect();
    if factors.len() < MIN_INSTANT_OBSERVATIONS {
        return Err(EstimatorError::InsufficientObservations(factors.len(), MIN_INSTANT_OBSERVATIONS));
    }
    let dim = if input.inertial.is_some() { StateDim::Full } else { input.dim };
    let problem = Instant {
        factors: &factors,
        model,
        inertial: input.inertial.map(|l| (l.factor, l.gravity)),
        prior: input.prior,
        dim,
    };
    let x0 = (input.inertial.map(|l| l.x_prev), input.x_k);
    let ((x_prev, x_k), report) = levenberg_marquardt(&problem, x0, settings);
    let (h, b) = problem.linear_system(&(x_prev, x_k));
    let mut ordering = Vec::new();
    if let Some(l) = input.inertial {
        ordering.push(StateBlock { id: l.prev_frame_id, offset: 0, size: 15 });
    }
    let (ok, _) = problem.offsets();
    ordering.push(StateBlock { id: input.frame_id, offset: ok, size: dim.size() });
    let (visual_info, _, _) = visual_normal(&x_k, &factors, model);
    let mean_reproj_px = mean_reprojection_error(&x_k, &factors, model);
    Ok(InstantSolution { x_k, x_prev, ne: NormalEquation { h, b, ordering }, visual_info, factors_used: factors, report, mean_reproj_px })
}
