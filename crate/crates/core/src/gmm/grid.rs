use std::collections::HashMap;

use super::box_mass::{box_mass, cell_bounds, marginal_bound};
use super::{GmmError, Mixture};
use crate::lie::Vec3;

pub type CellIndex = [i32; 3];

/// Default voxel side, meters.
pub const DEFAULT_RESOLUTION: f64 = 0.1;
/// Default relative registration threshold.
pub const DEFAULT_MASS_THRESHOLD: f64 = 0.1;
/// Candidate cells come from the bounding box of this sigma ellipsoid.
pub const CANDIDATE_SIGMA: f64 = 3.0;

/// Voxel hash from cell index to the sorted ids of components registered there.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    pub resolution: f64,
    pub mass_threshold: f64,
    cells: HashMap<CellIndex, Vec<u32>>,
}

impl VoxelGrid {
    pub fn cell_of(&self, p: &Vec3) -> CellIndex {
        cell_of(p, self.resolution)
    }

    pub fn get(&self, cell: &CellIndex) -> &[u32] {
        self.cells.get(cell).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn components_at(&self, p: &Vec3) -> &[u32] {
        self.get(&self.cell_of(p))
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Occupied cells in ascending index order.
    pub fn sorted_cells(&self) -> Vec<(CellIndex, &[u32])> {
        let mut v: Vec<_> = self.cells.iter().map(|(k, ids)| (*k, ids.as_slice())).collect();
        v.sort_unstable_by_key(|(k, _)| *k);
        v
    }
}

pub fn cell_of(p: &Vec3, res: f64) -> CellIndex {
    [(p.x / res).floor() as i32, (p.y / res).floor() as i32, (p.z / res).floor() as i32]
}

/// Cells where component `j` holds at least `threshold` of its best cell's mass.
///
/// Candidates are visited in order of decreasing single-axis marginal mass,
/// which bounds the box mass, and the scan stops once that bound falls below
/// `threshold` times the best mass found so far.
pub fn registered_cells(comp: &super::GaussianComponent, res: f64, threshold: f64) -> Vec<CellIndex> {
    let h = comp.bbox_half_extent(CANDIDATE_SIGMA);
    let lo = cell_of(&(comp.mean - h), res);
    let hi = cell_of(&(comp.mean + h), res);
    let mut cand = Vec::new();
    for x in lo[0]..=hi[0] {
        for y in lo[1]..=hi[1] {
            for z in lo[2]..=hi[2] {
                let (a, b) = cell_bounds([x, y, z], res);
                let bound = marginal_bound(comp, &a, &b);
                if bound > 0.0 {
                    cand.push(([x, y, z], bound));
                }
            }
        }
    }
    cand.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut max = 0.0f64;
    let mut masses = Vec::new();
    for (c, bound) in cand {
        if bound < threshold * max {
            break;
        }
        let m = box_mass(comp, c, res);
        max = max.max(m);
        masses.push((c, m));
    }
    if max <= 0.0 {
        return vec![cell_of(&comp.mean, res)];
    }
    let mut out: Vec<CellIndex> = masses.into_iter().filter(|(_, m)| *m >= threshold * max).map(|(c, _)| c).collect();
    out.sort_unstable();
    out
}

pub fn build_voxel_index(mixture: &Mixture, resolution: f64, mass_threshold: f64) -> Result<VoxelGrid, GmmError> {
    if mixture.is_empty() {
        return Err(GmmError::EmptyMixture);
    }
    if !(resolution > 0.0) || !(0.0..=1.0).contains(&mass_threshold) {
        return Err(GmmError::InvalidGridParams { resolution, mass_threshold });
    }
    let mut cells: HashMap<CellIndex, Vec<u32>> = HashMap::new();
    // components are visited in id order, so each list is already sorted
    for comp in mixture.components() {
        for c in registered_cells(comp, resolution, mass_threshold) {
            cells.entry(c).or_default().push(comp.id);
        }
    }
    Ok(VoxelGrid { resolution, mass_threshold, cells })
}
