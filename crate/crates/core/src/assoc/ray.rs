use super::AssocError;
use crate::gmm::{cell_of, CellIndex, GaussianComponent};
use crate::lie::Vec3;

/// Minimum `|e₁ᵀv|` for a ray/plane intersection.
pub const MIN_INCIDENCE: f64 = 1e-6;

/// Viewing ray of a feature in the world frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub bearing: Vec3,
    pub feature_id: u64,
}

impl Ray {
    /// Normalizes `direction`.
    pub fn new(origin: Vec3, direction: Vec3, feature_id: u64) -> Self {
        Ray { origin, bearing: direction.normalize(), feature_id }
    }

    pub fn at(&self, lambda: f64) -> Vec3 {
        self.origin + self.bearing * lambda
    }
}

/// Mahalanobis distance between a line and a component: whiten the line,
/// then take the Euclidean distance from the origin.
pub fn ray_component_distance(ray: &Ray, comp: &GaussianComponent) -> Result<f64, AssocError> {
    line_distance(&ray.origin, &ray.bearing, comp)
}

pub(crate) fn line_distance(origin: &Vec3, dir: &Vec3, comp: &GaussianComponent) -> Result<f64, AssocError> {
    let t = comp.whitener * (origin - comp.mean);
    let v = comp.whitener * dir;
    let n = v.norm();
    if n < 1e-12 {
        return Err(AssocError::DegenerateDirection);
    }
    Ok(t.cross(&v).norm() / n)
}

/// Depth along the ray at which it meets the component's plane.
pub fn recover_depth(ray: &Ray, comp: &GaussianComponent) -> Result<f64, AssocError> {
    let e1 = comp.normal();
    let den = e1.dot(&ray.bearing);
    if den.abs() < MIN_INCIDENCE {
        return Err(AssocError::ParallelRay);
    }
    let lambda = e1.dot(&(comp.mean - ray.origin)) / den;
    if lambda <= 0.0 {
        return Err(AssocError::NegativeDepth(lambda));
    }
    Ok(lambda)
}

/// Front-to-back voxel traversal of a segment.
#[derive(Clone, Debug)]
pub struct CellWalk {
    cell: CellIndex,
    step: [i32; 3],
    t_max: [f64; 3],
    t_delta: [f64; 3],
    max_range: f64,
    done: bool,
}

impl Iterator for CellWalk {
    type Item = CellIndex;

    fn next(&mut self) -> Option<CellIndex> {
        if self.done {
            return None;
        }
        let out = self.cell;
        let axis = if self.t_max[0] < self.t_max[1] {
            if self.t_max[0] < self.t_max[2] { 0 } else { 2 }
        } else if self.t_max[1] < self.t_max[2] {
            1
        } else {
            2
        };
        if self.t_max[axis] < self.max_range {
            self.cell[axis] += self.step[axis];
            self.t_max[axis] += self.t_delta[axis];
        } else {
            self.done = true;
        }
        Some(out)
    }
}

/// Cells pierced by `[origin, origin + max_range·bearing]`, nearest first.
pub fn cast_ray(resolution: f64, ray: &Ray, max_range: f64) -> CellWalk {
    let cell = cell_of(&ray.origin, resolution);
    let mut step = [0i32; 3];
    let mut t_max = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    for i in 0..3 {
        let d = ray.bearing[i];
        if d > 0.0 {
            step[i] = 1;
            t_max[i] = ((cell[i] + 1) as f64 * resolution - ray.origin[i]) / d;
            t_delta[i] = resolution / d;
        } else if d < 0.0 {
            step[i] = -1;
            t_max[i] = (cell[i] as f64 * resolution - ray.origin[i]) / d;
            t_delta[i] = -resolution / d;
        }
    }
    CellWalk { cell, step, t_max, t_delta, max_range: max_range.max(0.0), done: false }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::{exp_so3, Mat3};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn comp(mean: Vec3, cov: Mat3) -> GaussianComponent {
        GaussianComponent::new(0, 1.0, mean, cov).unwrap()
    }

    #[test]
    fn distance_examples() {
        let c = comp(Vec3::new(0.0, 0.0, 1.0), Mat3::identity());
        assert_relative_eq!(ray_component_distance(&Ray::new(Vec3::zeros(), Vec3::z(), 0), &c).unwrap(), 0.0, epsilon = 1e-15);
        let c = comp(Vec3::zeros(), Mat3::identity());
        assert_relative_eq!(ray_component_distance(&Ray::new(Vec3::x(), Vec3::z(), 0), &c).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn distance_matches_sampled_minimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..20 {
            let r = exp_so3(&Vec3::from_fn(|_, _| rng.random_range(-3.0..3.0)));
            let s = Vec3::new(0.05, 0.5, 1.0);
            let cov = r.matrix() * Mat3::from_diagonal(&s.component_mul(&s)) * r.matrix().transpose();
            let c = comp(Vec3::new(1.0, 2.0, 3.0), cov);
            let ray = Ray::new(Vec3::zeros(), c.mean + Vec3::from_fn(|_, _| rng.random_range(-0.5..0.5)), 0);
            let inv = cov.try_inverse().unwrap();
            // densest samples around the closest approach to the mean
            let l0 = ray.bearing.dot(&c.mean);
            let best = (0..10_000)
                .map(|i| {
                    let p = ray.at(l0 - 2.0 + 4.0 * i as f64 / 9_999.0) - c.mean;
                    (p.transpose() * inv * p)[0].sqrt()
                })
                .fold(f64::INFINITY, f64::min);
            assert_relative_eq!(ray_component_distance(&ray, &c).unwrap(), best, epsilon = 1e-3);
        }
    }

    #[test]
    fn distance_is_scale_and_rigid_invariant() {
        let r = exp_so3(&Vec3::new(0.3, 0.2, -0.1));
        let cov = r.matrix() * Mat3::from_diagonal(&Vec3::new(0.01, 0.3, 0.2)) * r.matrix().transpose();
        let c = comp(Vec3::new(0.3, -0.2, 2.0), cov);
        let ray = Ray::new(Vec3::new(0.1, 0.1, 0.0), Vec3::new(0.2, -0.1, 1.0), 0);
        let d = ray_component_distance(&ray, &c).unwrap();
        assert_relative_eq!(line_distance(&ray.origin, &(ray.bearing * 7.5), &c).unwrap(), d, epsilon = 1e-12);
        let g = exp_so3(&Vec3::new(-1.0, 0.5, 2.0));
        let tr = Vec3::new(3.0, -1.0, 0.5);
        let c2 = comp(g * c.mean + tr, g.matrix() * cov * g.matrix().transpose());
        let ray2 = Ray::new(g * ray.origin + tr, g * ray.bearing, 0);
        assert_relative_eq!(ray_component_distance(&ray2, &c2).unwrap(), d, epsilon = 1e-9);
    }

    fn plane_z1() -> GaussianComponent {
        comp(Vec3::new(0.0, 0.0, 1.0), Mat3::from_diagonal(&Vec3::new(1.0, 1.0, 1e-4)))
    }

    #[test]
    fn depth_examples() {
        let c = plane_z1();
        assert_relative_eq!(recover_depth(&Ray::new(Vec3::zeros(), Vec3::z(), 0), &c).unwrap(), 1.0, epsilon = 1e-15);
        let th: f64 = 0.6;
        let ray = Ray::new(Vec3::zeros(), Vec3::new(0.0, th.sin(), th.cos()), 0);
        let l = recover_depth(&ray, &c).unwrap();
        assert_relative_eq!(l, 1.0 / th.cos(), epsilon = 1e-12);
        assert!((c.normal().dot(&(ray.at(l) - c.mean))).abs() < 1e-9);
        assert_eq!(recover_depth(&Ray::new(Vec3::zeros(), Vec3::x(), 0), &c), Err(AssocError::ParallelRay));
        assert!(matches!(recover_depth(&Ray::new(Vec3::zeros(), -Vec3::z(), 0), &c), Err(AssocError::NegativeDepth(_))));
    }

    #[test]
    fn walk_along_x() {
        let ray = Ray::new(Vec3::new(0.05, 0.05, 0.05), Vec3::x(), 0);
        let cells: Vec<_> = cast_ray(0.1, &ray, 0.35).collect();
        assert_eq!(cells, vec![[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]]);
        assert_eq!(cast_ray(0.1, &ray, 0.0).count(), 1);
    }

    /// Slab test of a segment against a closed box.
    fn segment_hits_box(o: &Vec3, d: &Vec3, len: f64, lo: &Vec3, hi: &Vec3) -> bool {
        let (mut t0, mut t1) = (0.0f64, len);
        for i in 0..3 {
            if d[i].abs() < 1e-15 {
                if o[i] < lo[i] || o[i] > hi[i] {
                    return false;
                }
                continue;
            }
            let a = (lo[i] - o[i]) / d[i];
            let b = (hi[i] - o[i]) / d[i];
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
        t0 <= t1
    }

    #[test]
    fn diagonal_walk_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..200 {
            let o = Vec3::from_fn(|_, _| rng.random_range(-0.5..0.5));
            let ray = Ray::new(o, Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0)), 0);
            let len = rng.random_range(0.0..1.5);
            let walk: Vec<_> = cast_ray(0.1, &ray, len).collect();
            let set: HashSet<_> = walk.iter().copied().collect();
            assert_eq!(set.len(), walk.len(), "repeated cell");
            let mut brute = HashSet::new();
            for x in -25..25 {
                for y in -25..25 {
                    for z in -25..25 {
                        let lo = Vec3::new(x as f64, y as f64, z as f64) * 0.1;
                        let hi = lo + Vec3::repeat(0.1);
                        if segment_hits_box(&ray.origin, &ray.bearing, len, &lo, &hi) {
                            brute.insert([x, y, z]);
                        }
                    }
                }
            }
            assert_eq!(set, brute);
            // monotone front-to-back order: entry distances never decrease
            let entry = |c: &[i32; 3]| {
                let lo = Vec3::new(c[0] as f64, c[1] as f64, c[2] as f64) * 0.1;
                let hi = lo + Vec3::repeat(0.1);
                let mut t0 = 0.0f64;
                for i in 0..3 {
                    let a = (lo[i] - o[i]) / ray.bearing[i];
                    let b = (hi[i] - o[i]) / ray.bearing[i];
                    t0 = t0.max(a.min(b));
                }
                t0
            };
            assert!(walk.windows(2).all(|w| entry(&w[0]) <= entry(&w[1]) + 1e-12));
        }
    }
}
