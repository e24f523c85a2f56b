//! Levenberg-Marquardt driver shared by every solver.

use nalgebra::{DMatrix, DVector};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LmSettings {
    pub max_iters: usize,
    /// Stop once an accepted step lowers the cost by less than this fraction.
    pub rel_tol: f64,
    pub lambda0: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    /// Consecutive rejected steps before the current state is declared stationary.
    pub max_rejects: usize,
}

impl LmSettings {
    pub fn with_max_iters(max_iters: usize) -> Self {
        LmSettings { max_iters, ..Default::default() }
    }
}

impl Default for LmSettings {
    fn default() -> Self {
        LmSettings { max_iters: 20, rel_tol: 1e-8, lambda0: 1e-4, lambda_up: 10.0, lambda_down: 0.5, max_rejects: 12 }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LmReport {
    pub iterations: usize,
    pub converged: bool,
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Cost after every accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
}

/// A nonlinear least-squares problem on a manifold.
pub trait LmProblem {
    type State: Clone;
    type System;

    /// Robust total cost; `f64::INFINITY` marks an invalid state.
    fn cost(&self, x: &Self::State) -> f64;
    fn linearize(&self, x: &Self::State) -> Self::System;
    /// Solves `(H + λ·diag(H)) δx = b`.
    fn solve(&self, sys: &Self::System, lambda: f64) -> Option<DVector<f64>>;
    fn retract(&self, x: &Self::State, dx: &DVector<f64>) -> Self::State;
}

pub fn levenberg_marquardt<P: LmProblem>(p: &P, x0: P::State, s: &LmSettings) -> (P::State, LmReport) {
    let mut x = x0;
    let mut cost = p.cost(&x);
    let mut report = LmReport { initial_cost: cost, final_cost: cost, cost_history: vec![cost], ..Default::default() };
    if cost == 0.0 || !cost.is_finite() {
        report.converged = cost == 0.0;
        return (x, report);
    }
    let mut lambda = s.lambda0;
    while report.iterations < s.max_iters {
        report.iterations += 1;
        let sys = p.linearize(&x);
        let mut accepted = None;
        for _ in 0..s.max_rejects {
            if let Some(dx) = p.solve(&sys, lambda) {
                let cand = p.retract(&x, &dx);
                let c = p.cost(&cand);
                if c < cost {
                    accepted = Some((cand, c));
                    lambda *= s.lambda_down;
                    break;
                }
            }
            lambda *= s.lambda_up;
        }
        let Some((cand, c)) = accepted else {
            // no descent direction left
            report.converged = true;
            break;
        };
        let rel = (cost - c) / cost;
        x = cand;
        cost = c;
        report.cost_history.push(c);
        if rel < s.rel_tol || c == 0.0 {
            report.converged = true;
            break;
        }
    }
    report.final_cost = cost;
    (x, report)
}

/// `H + λ·diag(H)`; zero diagonal entries get a tiny floor.
pub fn damped(h: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let mut a = h.clone();
    for i in 0..a.nrows() {
        a[(i, i)] += lambda * h[(i, i)].max(1e-12);
    }
    a
}

pub fn solve_dense(h: &DMatrix<f64>, b: &DVector<f64>, lambda: f64) -> Option<DVector<f64>> {
    let chol = nalgebra::Cholesky::new(damped(h, lambda))?;
    let dx = chol.solve(b);
    dx.iter().all(|v| v.is_finite()).then_some(dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Rosenbrock as residuals `[10(y − x²), 1 − x]`.
    struct Rosen;

    impl LmProblem for Rosen {
        type State = (f64, f64);
        type System = (DMatrix<f64>, DVector<f64>);

        fn cost(&self, &(x, y): &(f64, f64)) -> f64 {
            (10.0 * (y - x * x)).powi(2) + (1.0 - x).powi(2)
        }

        fn linearize(&self, &(x, y): &(f64, f64)) -> Self::System {
            let r = DVector::from_vec(vec![10.0 * (y - x * x), 1.0 - x]);
            let j = DMatrix::from_row_slice(2, 2, &[-20.0 * x, 10.0, -1.0, 0.0]);
            (j.transpose() * &j, -(j.transpose() * r))
        }

        fn solve(&self, (h, b): &Self::System, lambda: f64) -> Option<DVector<f64>> {
            solve_dense(h, b, lambda)
        }

        fn retract(&self, &(x, y): &(f64, f64), dx: &DVector<f64>) -> (f64, f64) {
            (x + dx[0], y + dx[1])
        }
    }

    #[test]
    fn solves_rosenbrock_with_monotone_cost() {
        let s = LmSettings { max_iters: 200, ..Default::default() };
        let (x, r) = levenberg_marquardt(&Rosen, (-1.2, 1.0), &s);
        assert!((x.0 - 1.0).abs() < 1e-6 && (x.1 - 1.0).abs() < 1e-6, "{x:?}");
        assert!(r.converged);
        assert!(r.cost_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn zero_cost_takes_no_iterations() {
        let (x, r) = levenberg_marquardt(&Rosen, (1.0, 1.0), &LmSettings::default());
        assert_eq!(x, (1.0, 1.0));
        assert_eq!(r.iterations, 0);
        assert!(r.converged);
    }
}
