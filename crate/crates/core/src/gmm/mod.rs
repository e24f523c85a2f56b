//! Gaussian-mixture map, voxel index and map file I/O.

mod box_mass;
mod component;
mod grid;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lie::{Mat3, Vec3};

pub use box_mass::{box_mass, box_mass_bounds, QMC_POINTS};
pub use component::{precompute_whitener, GaussianComponent, MIN_EIGENVALUE};
pub use grid::{build_voxel_index, cell_of, registered_cells, CellIndex, VoxelGrid, DEFAULT_MASS_THRESHOLD, DEFAULT_RESOLUTION};

pub const WEIGHT_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum GmmError {
    #[error("degenerate covariance (smallest eigenvalue {min_eigenvalue:e})")]
    DegenerateCovariance { min_eigenvalue: f64 },
    #[error("component {record}: covariance is not symmetric positive semidefinite")]
    NonPsdCovariance { record: usize },
    #[error("mixture is empty")]
    EmptyMixture,
    #[error("mixture weights sum to {0}, expected 1")]
    WeightSum(f64),
    #[error("invalid grid parameters: resolution {resolution}, mass threshold {mass_threshold}")]
    InvalidGridParams { resolution: f64, mass_threshold: f64 },
    #[error("map parse error: {0}")]
    ParseError(String),
    #[error("map io: {0}")]
    Io(#[from] std::io::Error),
}

/// Components indexed by id (`components()[i].id == i`).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Mixture {
    components: Vec<GaussianComponent>,
}

impl Mixture {
    /// Builds a mixture from `(weight, mean, cov)` triples.
    pub fn new(params: Vec<(f64, Vec3, Mat3)>) -> Result<Self, GmmError> {
        let components = params
            .into_iter()
            .enumerate()
            .map(|(i, (w, mu, cov))| GaussianComponent::new(i as u32, w, mu, cov))
            .collect::<Result<Vec<_>, _>>()?;
        let m = Mixture { components };
        m.check_weights()?;
        Ok(m)
    }

    fn check_weights(&self) -> Result<(), GmmError> {
        if self.components.is_empty() {
            return Ok(());
        }
        let s: f64 = self.components.iter().map(|c| c.weight).sum();
        if (s - 1.0).abs() > WEIGHT_SUM_TOL || self.components.iter().any(|c| !(c.weight > 0.0 && c.weight <= 1.0)) {
            return Err(GmmError::WeightSum(s));
        }
        Ok(())
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn get(&self, id: u32) -> &GaussianComponent {
        &self.components[id as usize]
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }
}

#[derive(Serialize, Deserialize)]
struct MapFile {
    components: Vec<ComponentRecord>,
}

#[derive(Serialize, Deserialize)]
struct ComponentRecord {
    weight: f64,
    mean: Vec<f64>,
    cov: Vec<f64>,
}

pub fn map_to_json(mixture: &Mixture) -> String {
    let file = MapFile {
        components: mixture
            .components()
            .iter()
            .map(|c| ComponentRecord {
                weight: c.weight,
                mean: c.mean.iter().copied().collect(),
                // row-major
                cov: c.cov.transpose().iter().copied().collect(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("map serializes")
}

pub fn map_from_json(text: &str) -> Result<Mixture, GmmError> {
    let file: MapFile = serde_json::from_str(text).map_err(|e| GmmError::ParseError(e.to_string()))?;
    let mut params = Vec::with_capacity(file.components.len());
    for (i, r) in file.components.iter().enumerate() {
        if r.mean.len() != 3 {
            return Err(GmmError::ParseError(format!("component {i}: field `mean` has {} values, expected 3", r.mean.len())));
        }
        if r.cov.len() != 9 {
            return Err(GmmError::ParseError(format!("component {i}: field `cov` has {} values, expected 9", r.cov.len())));
        }
        let cov = Mat3::from_row_slice(&r.cov);
        if (cov - cov.transpose()).amax() > 1e-9 * cov.amax().max(1e-300) {
            return Err(GmmError::NonPsdCovariance { record: i });
        }
        if cov.symmetric_eigenvalues().min() < -component::REGULARIZATION {
            return Err(GmmError::NonPsdCovariance { record: i });
        }
        params.push((r.weight, Vec3::from_column_slice(&r.mean), cov));
    }
    if params.is_empty() {
        return Err(GmmError::EmptyMixture);
    }
    Mixture::new(params)
}

pub fn save_map(mixture: &Mixture, path: &Path) -> Result<(), GmmError> {
    std::fs::write(path, map_to_json(mixture))?;
    Ok(())
}

pub fn load_map(path: &Path) -> Result<Mixture, GmmError> {
    map_from_json(&std::fs::read_to_string(path)?)
}
