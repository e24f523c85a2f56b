use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{stream, SimConfig, SimError, STREAM_DROPOUT, STREAM_WORLD};
use crate::gmm::Mixture;
use crate::lie::{Mat3, Vec3};

/// Room interior `[−HALF, HALF]² × [0, HEIGHT]`.
pub const ROOM_HALF: f64 = 5.0;
pub const ROOM_HEIGHT: f64 = 4.0;
/// In-plane over normal standard deviation of every component.
pub const FLATNESS: f64 = 15.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum WorldLayout {
    #[default]
    Room,
    /// Only the `x = +HALF` wall.
    SingleWall,
}

/// A planar rectangle `origin + a·u + b·v`, `a ∈ [0, width]`, `b ∈ [0, height]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Surface {
    pub origin: Vec3,
    pub u: Vec3,
    pub v: Vec3,
    pub width: f64,
    pub height: f64,
}

impl Surface {
    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    pub fn normal(&self) -> Vec3 {
        self.u.cross(&self.v)
    }
}

pub fn surfaces(layout: WorldLayout) -> Vec<Surface> {
    let (h, z) = (ROOM_HALF, ROOM_HEIGHT);
    let wall_x = Surface { origin: Vec3::new(h, -h, 0.0), u: Vec3::y(), v: Vec3::z(), width: 2.0 * h, height: z };
    match layout {
        WorldLayout::SingleWall => vec![wall_x],
        WorldLayout::Room => vec![
            wall_x,
            Surface { origin: Vec3::new(-h, -h, 0.0), u: Vec3::y(), v: Vec3::z(), width: 2.0 * h, height: z },
            Surface { origin: Vec3::new(-h, h, 0.0), u: Vec3::x(), v: Vec3::z(), width: 2.0 * h, height: z },
            Surface { origin: Vec3::new(-h, -h, 0.0), u: Vec3::x(), v: Vec3::z(), width: 2.0 * h, height: z },
            Surface { origin: Vec3::new(-h, -h, 0.0), u: Vec3::x(), v: Vec3::y(), width: 2.0 * h, height: 2.0 * h },
            Surface { origin: Vec3::new(-h, -h, z), u: Vec3::x(), v: Vec3::y(), width: 2.0 * h, height: 2.0 * h },
        ],
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Landmark {
    pub id: u64,
    pub position: Vec3,
    pub component_id: u32,
    /// Present in the prior map; otherwise only its track is observed.
    pub mapped: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct World {
    pub mixture: Mixture,
    pub landmarks: Vec<Landmark>,
    pub surfaces: Vec<Surface>,
    /// Surface index of each component.
    pub component_surface: Vec<usize>,
}

impl World {
    pub fn mapped_landmarks(&self) -> impl Iterator<Item = &Landmark> {
        self.landmarks.iter().filter(|l| l.mapped)
    }
}

/// Splits `n` over `weights` by largest remainder.
fn apportion(n: usize, weights: &[f64]) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| n as f64 * w / total).collect();
    let mut out: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())).then(a.cmp(&b)));
    let missing = n - out.iter().sum::<usize>();
    for &i in order.iter().take(missing) {
        out[i] += 1;
    }
    out
}

/// Flat components tiling every surface, `n` in total.
fn tile(n: usize, surfs: &[Surface]) -> Result<(Vec<(f64, Vec3, Mat3)>, Vec<usize>), SimError> {
    let counts = apportion(n, &surfs.iter().map(Surface::area).collect::<Vec<_>>());
    let mut params = Vec::with_capacity(n);
    let mut owner = Vec::with_capacity(n);
    for (si, (s, &m)) in surfs.iter().zip(&counts).enumerate() {
        if m == 0 {
            continue;
        }
        let cols = ((m as f64 * s.width / s.height).sqrt().round() as usize).clamp(1, m);
        let rows = m.div_ceil(cols);
        let (cw, ch) = (s.width / cols as f64, s.height / rows as f64);
        let (su, sv) = (cw / 2.0, ch / 2.0);
        let sn = su.min(sv) / FLATNESS;
        let basis = Mat3::from_columns(&[s.u, s.v, s.normal()]);
        let cov = basis * Mat3::from_diagonal(&Vec3::new(su * su, sv * sv, sn * sn)) * basis.transpose();
        for idx in 0..m {
            let (c, r) = (idx % cols, idx / cols);
            let mean = s.origin + s.u * ((c as f64 + 0.5) * cw) + s.v * ((r as f64 + 0.5) * ch);
            params.push((cw * ch, mean, cov));
            owner.push(si);
        }
    }
    let total: f64 = params.iter().map(|p| p.0).sum();
    if params.is_empty() || total <= 0.0 {
        return Err(SimError::Invalid("world: no components".into()));
    }
    for p in params.iter_mut() {
        p.0 /= total;
    }
    Ok((params, owner))
}

/// Tiled room map and landmarks on the component planes. Landmarks are
/// drawn by component weight, Gaussian in-plane, and kept on their surface.
pub fn generate_world(cfg: &SimConfig) -> Result<World, SimError> {
    cfg.validate()?;
    let surfs = surfaces(cfg.layout);
    let (params, owner) = tile(cfg.n_components, &surfs)?;
    let mixture = Mixture::new(params).map_err(|e| SimError::Invalid(format!("world: {e}")))?;
    let mut rng = stream(cfg.rng_seed, STREAM_WORLD);
    let mut drop_rng = stream(cfg.rng_seed, STREAM_DROPOUT);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let cdf: Vec<f64> = mixture
        .components()
        .iter()
        .scan(0.0, |acc, c| {
            *acc += c.weight;
            Some(*acc)
        })
        .collect();
    let mut landmarks = Vec::with_capacity(cfg.n_prior_landmarks);
    for id in 0..cfg.n_prior_landmarks {
        let r: f64 = rng.random::<f64>() * cdf[cdf.len() - 1];
        let ci = cdf.partition_point(|&c| c < r).min(cdf.len() - 1);
        let comp = mixture.get(ci as u32);
        let s = &surfs[owner[ci]];
        let (su, sv) = (comp.eigenvalues[2].sqrt(), comp.eigenvalues[1].sqrt());
        // in-plane std along the surface axes; the axes are exact here
        let (sig_u, sig_v) = if (comp.cov * s.u).norm() >= (comp.cov * s.v).norm() { (su, sv) } else { (sv, su) };
        let local = comp.mean - s.origin;
        let (a0, b0) = (local.dot(&s.u), local.dot(&s.v));
        let mut pos = comp.mean;
        for _ in 0..32 {
            let a = a0 + sig_u * unit.sample(&mut rng);
            let b = b0 + sig_v * unit.sample(&mut rng);
            if (0.0..=s.width).contains(&a) && (0.0..=s.height).contains(&b) {
                pos = s.origin + s.u * a + s.v * b;
                break;
            }
        }
        let mapped = drop_rng.random::<f64>() >= cfg.dropout;
        landmarks.push(Landmark { id: id as u64, position: pos, component_id: ci as u32, mapped });
    }
    Ok(World { mixture, landmarks, surfaces: surfs, component_surface: owner })
}

/// Landmarks on the planes of an externally supplied mixture. Without
/// surfaces, in-plane samples are not clipped.
pub fn generate_world_on(mixture: Mixture, cfg: &SimConfig) -> Result<World, SimError> {
    cfg.validate()?;
    if mixture.is_empty() {
        return Err(SimError::Invalid("world: empty map".into()));
    }
    let mut rng = stream(cfg.rng_seed, STREAM_WORLD);
    let mut drop_rng = stream(cfg.rng_seed, STREAM_DROPOUT);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let total: f64 = mixture.components().iter().map(|c| c.weight).sum();
    let mut landmarks = Vec::with_capacity(cfg.n_prior_landmarks);
    for id in 0..cfg.n_prior_landmarks {
        let mut r: f64 = rng.random::<f64>() * total;
        let mut ci = mixture.len() - 1;
        for (i, c) in mixture.components().iter().enumerate() {
            if r < c.weight {
                ci = i;
                break;
            }
            r -= c.weight;
        }
        let comp = mixture.get(ci as u32);
        let (a, b) = (unit.sample(&mut rng), unit.sample(&mut rng));
        let position = comp.mean
            + comp.axes.column(1) * (a * comp.eigenvalues[1].sqrt())
            + comp.axes.column(2) * (b * comp.eigenvalues[2].sqrt());
        let mapped = drop_rng.random::<f64>() >= cfg.dropout;
        landmarks.push(Landmark { id: id as u64, position, component_id: ci as u32, mapped });
    }
    Ok(World { mixture, landmarks, surfaces: vec![], component_surface: vec![] })
}
