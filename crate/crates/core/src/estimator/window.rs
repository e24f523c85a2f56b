use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::lm::{damped, levenberg_marquardt, LmProblem, LmReport, LmSettings};
use super::{visual_cost, visual_normal, EstimatorError, StateDim, VisualFactor, VisualModel};
use crate::factors::{inertial_information, inertial_jacobians, inertial_residual, pose_prior_residual, Mat15, PosePriorFactor};
use crate::imu::PreintegratedFactor;
use crate::state::{Gravity, StateVector};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowConfig {
    pub size: usize,
    pub max_iters: usize,
    pub convergence_tol: f64,
    pub fix_oldest: bool,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig { size: 15, max_iters: 10, convergence_tol: 1e-8, fix_oldest: true }
    }
}

/// Visual information available to the window.
#[derive(Clone, Copy, Debug)]
pub enum VisualBackend<'a> {
    /// (a) raw reprojection factors, one list per frame
    Reprojection(&'a [Vec<VisualFactor>]),
    /// (b) one marginalized pose prior per frame
    PosePriors(&'a [PosePriorFactor]),
}

#[derive(Clone, Copy, Debug)]
pub struct WindowInput<'a> {
    /// Oldest first.
    pub states: &'a [StateVector],
    /// `inertial[i]` links `states[i]` and `states[i + 1]`; empty in pose-only mode.
    pub inertial: &'a [PreintegratedFactor],
    pub gravity: Gravity,
    pub backend: VisualBackend<'a>,
    pub dim: StateDim,
}

#[derive(Clone, Debug)]
pub struct WindowSolution {
    pub states: Vec<StateVector>,
    pub report: LmReport,
    pub elapsed_ms: f64,
}

/// Block-tridiagonal normal equation over the free frames.
struct Tridiagonal {
    diag: Vec<DMatrix<f64>>,
    /// `upper[i] = H_{i,i+1}`
    upper: Vec<DMatrix<f64>>,
    b: Vec<DVector<f64>>,
}

impl Tridiagonal {
    fn zeros(m: usize, d: usize) -> Self {
        Tridiagonal {
            diag: vec![DMatrix::zeros(d, d); m],
            upper: vec![DMatrix::zeros(d, d); m.saturating_sub(1)],
            b: vec![DVector::zeros(d); m],
        }
    }

    /// Block LDLᵀ forward elimination and back substitution.
    fn solve(&self, lambda: f64) -> Option<DVector<f64>> {
        let m = self.diag.len();
        let d = self.diag[0].nrows();
        let mut chols: Vec<Cholesky<f64, Dyn>> = Vec::with_capacity(m);
        let mut g: Vec<DVector<f64>> = Vec::with_capacity(m);
        for i in 0..m {
            let mut s = damped(&self.diag[i], lambda);
            let mut gi = self.b[i].clone();
            if i > 0 {
                let c = &self.upper[i - 1];
                let prev = &chols[i - 1];
                s -= c.transpose() * prev.solve(c);
                gi -= c.transpose() * prev.solve(&g[i - 1]);
            }
            chols.push(Cholesky::new(s)?);
            g.push(gi);
        }
        let mut x = vec![DVector::zeros(d); m];
        for i in (0..m).rev() {
            let mut r = g[i].clone();
            if i + 1 < m {
                r -= &self.upper[i] * &x[i + 1];
            }
            x[i] = chols[i].solve(&r);
        }
        let out = DVector::from_iterator(m * d, x.iter().flat_map(|v| v.iter().copied()));
        out.iter().all(|v| v.is_finite()).then_some(out)
    }
}

struct Window<'a> {
    input: &'a WindowInput<'a>,
    model: &'a VisualModel,
    info: Vec<Mat15>,
    start: usize,
    /// Inertial windows keep the oldest block but hold its pose.
    pin_pose: bool,
}

impl Window<'_> {
    fn d(&self) -> usize {
        self.input.dim.size()
    }

    fn inertial_on(&self) -> bool {
        self.input.dim == StateDim::Full
    }
}

impl LmProblem for Window<'_> {
    type State = Vec<StateVector>;
    type System = Tridiagonal;

    fn cost(&self, xs: &Vec<StateVector>) -> f64 {
        let mut c = 0.0;
        for (k, x) in xs.iter().enumerate().skip(self.start) {
            c += match self.input.backend {
                VisualBackend::Reprojection(f) => visual_cost(x, &f[k], self.model),
                VisualBackend::PosePriors(p) => {
                    let (e, _) = pose_prior_residual(x, &p[k]);
                    (e.transpose() * p[k].info * e)[0]
                }
            };
        }
        if self.inertial_on() {
            for (k, f) in self.input.inertial.iter().enumerate() {
                match inertial_residual(&xs[k], &xs[k + 1], f, &self.input.gravity) {
                    Ok(r) => c += (r.transpose() * self.info[k] * r)[0],
                    Err(_) => return f64::INFINITY,
                }
            }
        }
        c
    }

    fn linearize(&self, xs: &Vec<StateVector>) -> Tridiagonal {
        let d = self.d();
        let mut sys = Tridiagonal::zeros(xs.len() - self.start, d);
        for (k, x) in xs.iter().enumerate().skip(self.start) {
            let i = k - self.start;
            let (h, b) = match self.input.backend {
                VisualBackend::Reprojection(f) => {
                    let (h, b, _) = visual_normal(x, &f[k], self.model);
                    (h, b)
                }
                VisualBackend::PosePriors(p) => {
                    let (e, j) = pose_prior_residual(x, &p[k]);
                    let jl = j.transpose() * p[k].info;
                    (jl * j, -(jl * e))
                }
            };
            let mut v = sys.diag[i].view_mut((0, 0), (6, 6));
            v += h;
            let mut v = sys.b[i].rows_mut(0, 6);
            v += b;
        }
        if self.inertial_on() {
            for (k, f) in self.input.inertial.iter().enumerate() {
                let g = &self.input.gravity;
                let (Ok(r), Ok((jj, jk))) = (inertial_residual(&xs[k], &xs[k + 1], f, g), inertial_jacobians(&xs[k], &xs[k + 1], f, g)) else {
                    continue;
                };
                let om = &self.info[k];
                let ojk = om * jk;
                let or = om * r;
                let ik = k + 1 - self.start;
                sys.diag[ik] += DMatrix::from_column_slice(15, 15, (jk.transpose() * ojk).as_slice());
                sys.b[ik] -= DVector::from_column_slice((jk.transpose() * or).as_slice());
                if k >= self.start {
                    let ij = k - self.start;
                    let ojj = om * jj;
                    sys.diag[ij] += DMatrix::from_column_slice(15, 15, (jj.transpose() * ojj).as_slice());
                    sys.upper[ij] += DMatrix::from_column_slice(15, 15, (jj.transpose() * ojk).as_slice());
                    sys.b[ij] -= DVector::from_column_slice((jj.transpose() * or).as_slice());
                }
            }
        }
        for m in sys.diag.iter_mut() {
            *m = 0.5 * (&*m + m.transpose());
        }
        if self.pin_pose {
            // oldest pose held: its rows decouple with a zero step
            sys.diag[0].view_mut((0, 0), (6, 15)).fill(0.0);
            sys.diag[0].view_mut((0, 0), (15, 6)).fill(0.0);
            sys.diag[0].view_mut((0, 0), (6, 6)).fill_with_identity();
            sys.b[0].rows_mut(0, 6).fill(0.0);
            if let Some(u) = sys.upper.first_mut() {
                u.view_mut((0, 0), (6, 15)).fill(0.0);
            }
        }
        sys
    }

    fn solve(&self, sys: &Tridiagonal, lambda: f64) -> Option<DVector<f64>> {
        sys.solve(lambda)
    }

    fn retract(&self, xs: &Vec<StateVector>, dx: &DVector<f64>) -> Vec<StateVector> {
        let d = self.d();
        xs.iter()
            .enumerate()
            .map(|(k, x)| if k < self.start { *x } else { self.input.dim.retract(x, &dx.as_slice()[(k - self.start) * d..(k - self.start + 1) * d]) })
            .collect()
    }
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), EstimatorError> {
    if expected == got {
        Ok(())
    } else {
        Err(EstimatorError::WindowShape { what, expected, got })
    }
}

/// Motion-only LM over a window with one of two visual backends. With
/// `fix_oldest` the oldest pose is returned untouched; in the full-state
/// case its velocity and biases remain free.
pub fn windowed_motion_ba(input: &WindowInput, model: &VisualModel, cfg: &WindowConfig) -> Result<WindowSolution, EstimatorError> {
    let t0 = Instant::now();
    let n = input.states.len();
    if n < 2 {
        return Err(EstimatorError::WindowTooSmall(n));
    }
    match input.backend {
        VisualBackend::Reprojection(f) => check_len("reprojection lists", n, f.len())?,
        VisualBackend::PosePriors(p) => check_len("pose priors", n, p.len())?,
    }
    if input.dim == StateDim::Full {
        check_len("inertial factors", n - 1, input.inertial.len())?;
    }
    let problem = Window {
        input,
        model,
        info: if input.dim == StateDim::Full { input.inertial.iter().map(inertial_information).collect() } else { vec![] },
        start: usize::from(cfg.fix_oldest && input.dim == StateDim::Pose),
        pin_pose: cfg.fix_oldest && input.dim == StateDim::Full,
    };
    let settings = LmSettings { max_iters: cfg.max_iters, rel_tol: cfg.convergence_tol, ..Default::default() };
    let (states, report) = levenberg_marquardt(&problem, input.states.to_vec(), &settings);
    Ok(WindowSolution { states, report, elapsed_ms: t0.elapsed().as_secs_f64() * 1e3 })
}
