//! Gaussian probability mass of an axis-aligned box.
//!
//! Separation-of-variables integration in the Cholesky-whitened space
//! (Genz's method) with a fixed Halton point set, so results are
//! deterministic. When the Cholesky factor is diagonal the integrand does
//! not depend on the sample point and a single evaluation is exact.

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;
use std::sync::OnceLock;

use super::GaussianComponent;
use crate::lie::Vec3;

pub const QMC_POINTS: usize = 4096;

fn radical_inverse(mut i: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    let inv = 1.0 / base as f64;
    while i > 0 {
        f *= inv;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// First `QMC_POINTS` Halton points in bases 2 and 3, skipping the origin.
fn halton() -> &'static [(f64, f64)] {
    static PTS: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    PTS.get_or_init(|| (1..=QMC_POINTS).map(|i| (radical_inverse(i, 2), radical_inverse(i, 3))).collect())
}

fn phi(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `Φ(u) − Φ(l)` without cancellation in the tails.
fn interval(l: f64, u: f64) -> f64 {
    if u <= l {
        return 0.0;
    }
    let s = std::f64::consts::SQRT_2;
    if l > 0.0 {
        0.5 * (erfc(l / s) - erfc(u / s))
    } else if u < 0.0 {
        0.5 * (erfc(-u / s) - erfc(-l / s))
    } else {
        1.0 - 0.5 * erfc(-l / s) - 0.5 * erfc(u / s)
    }
    .max(0.0)
}

fn std_normal() -> &'static Normal {
    static N: OnceLock<Normal> = OnceLock::new();
    N.get_or_init(|| Normal::standard())
}

/// Probability mass of `N(μ, Σ)` in `[lo, hi)`.
pub fn box_mass_bounds(comp: &GaussianComponent, lo: &Vec3, hi: &Vec3) -> f64 {
    let l = &comp.chol;
    let a = lo - comp.mean;
    let b = hi - comp.mean;
    if comp.is_axis_aligned() {
        return (0..3).map(|i| interval(a[i] / l[(i, i)], b[i] / l[(i, i)])).product();
    }
    let n = std_normal();
    let mut sum = 0.0;
    for &(w0, w1) in halton() {
        let mut z = [0.0; 3];
        let mut prod = 1.0;
        for i in 0..3 {
            let shift: f64 = (0..i).map(|j| l[(i, j)] * z[j]).sum();
            let lo_i = (a[i] - shift) / l[(i, i)];
            let hi_i = (b[i] - shift) / l[(i, i)];
            let e = interval(lo_i, hi_i);
            prod *= e;
            if prod == 0.0 {
                break;
            }
            if i < 2 {
                let w = if i == 0 { w0 } else { w1 };
                let p = (phi(lo_i) + w * e).clamp(1e-300, 1.0 - 1e-16);
                z[i] = n.inverse_cdf(p);
            }
        }
        sum += prod;
    }
    sum / QMC_POINTS as f64
}

/// Smallest single-axis marginal mass of `[lo, hi)`, an upper bound on the box mass.
pub fn marginal_bound(comp: &GaussianComponent, lo: &Vec3, hi: &Vec3) -> f64 {
    (0..3)
        .map(|i| {
            let s = comp.cov[(i, i)].sqrt();
            interval((lo[i] - comp.mean[i]) / s, (hi[i] - comp.mean[i]) / s)
        })
        .fold(1.0, f64::min)
}

pub fn cell_bounds(cell: [i32; 3], res: f64) -> (Vec3, Vec3) {
    let lo = Vec3::new(cell[0] as f64, cell[1] as f64, cell[2] as f64) * res;
    (lo, lo + Vec3::repeat(res))
}

/// Mass inside voxel `cell` of side `res`: `[i·res, (i+1)·res)` per axis.
pub fn box_mass(comp: &GaussianComponent, cell: [i32; 3], res: f64) -> f64 {
    let (lo, hi) = cell_bounds(cell, res);
    box_mass_bounds(comp, &lo, &hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::{exp_so3, Mat3};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn comp(mean: Vec3, cov: Mat3) -> GaussianComponent {
        GaussianComponent::new(0, 1.0, mean, cov).unwrap()
    }

    #[test]
    fn point_mass_inside_cell() {
        let c = comp(Vec3::new(0.05, 0.05, 0.05), Mat3::identity() * 1e-8);
        assert!(box_mass(&c, [0, 0, 0], 0.1) >= 0.999);
    }

    #[test]
    fn mean_on_face_is_half() {
        let c = comp(Vec3::new(0.1, 0.05, 0.05), Mat3::identity() * 1e-6);
        assert_relative_eq!(box_mass(&c, [0, 0, 0], 0.1), 0.5, epsilon = 0.01);
        assert_relative_eq!(box_mass(&c, [1, 0, 0], 0.1), 0.5, epsilon = 0.01);
    }

    #[test]
    fn rotated_component_matches_monte_carlo() {
        let r = exp_so3(&Vec3::new(0.4, -0.7, 0.3));
        let cov = r.matrix() * Mat3::from_diagonal(&Vec3::new(0.08f64.powi(2), 0.03f64.powi(2), 0.005f64.powi(2))) * r.matrix().transpose();
        let c = comp(Vec3::new(0.12, 0.07, 0.04), cov);
        assert!(!c.is_axis_aligned());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let cells = [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 0, -1]];
        let mut hits = [0usize; 4];
        for _ in 0..n {
            let z = Vec3::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
            let p = c.mean + c.chol * z;
            let idx = [(p.x / 0.1).floor() as i32, (p.y / 0.1).floor() as i32, (p.z / 0.1).floor() as i32];
            if let Some(k) = cells.iter().position(|&q| q == idx) {
                hits[k] += 1;
            }
        }
        for (k, cell) in cells.iter().enumerate() {
            let mc = hits[k] as f64 / n as f64;
            assert_relative_eq!(box_mass(&c, *cell, 0.1), mc, epsilon = 0.01);
        }
    }

    #[test]
    fn diagonal_shortcut_matches_product_of_marginals() {
        let c = comp(Vec3::new(0.03, -0.02, 0.11), Mat3::from_diagonal(&Vec3::new(0.01, 0.0004, 0.09)));
        let m = box_mass(&c, [0, -1, 1], 0.1);
        let marg = |mu: f64, s: f64, lo: f64, hi: f64| phi((hi - mu) / s) - phi((lo - mu) / s);
        let oracle = marg(0.03, 0.1, 0.0, 0.1) * marg(-0.02, 0.02, -0.1, 0.0) * marg(0.11, 0.3, 0.1, 0.2);
        assert_relative_eq!(m, oracle, epsilon = 1e-12);
    }

    #[test]
    fn deterministic() {
        let r = exp_so3(&Vec3::new(0.1, 0.2, 0.3));
        let cov = r.matrix() * Mat3::from_diagonal(&Vec3::new(0.01, 0.002, 0.0001)) * r.matrix().transpose();
        let c = comp(Vec3::new(0.05, 0.05, 0.05), cov);
        assert_eq!(box_mass(&c, [0, 0, 0], 0.1).to_bits(), box_mass(&c, [0, 0, 0], 0.1).to_bits());
    }

    #[test]
    fn tail_intervals_keep_precision() {
        assert!(interval(9.0, 10.0) > 0.0);
        assert!(interval(-10.0, -9.0) > 0.0);
        // statrs erf is accurate to a few 1e-11 here
        assert_relative_eq!(interval(-1.0, 1.0), 0.682689492137086, epsilon = 1e-10);
    }
}
