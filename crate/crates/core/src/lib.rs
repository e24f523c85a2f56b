//! Visual-inertial localization in a prior map made of a Gaussian mixture
//! and a sparse set of landmarks, plus the simulation used to evaluate it.

pub mod assoc;
pub mod estimator;
pub mod factors;
pub mod gmm;
pub mod imu;
pub mod lie;
pub mod pipeline;
pub mod sim;
pub mod state;

use thiserror::Error;

pub use assoc::{AssocConfig, AssocError, Association, CameraPose, Feature, Seed, SeedParams};
pub use estimator::{EstimatorError, LmSettings, Stage, StageTimer, TimingRecord, WindowConfig};
pub use factors::{FactorError, Observation, PinholeCamera, PosePriorFactor, RobustKernel};
pub use gmm::{GaussianComponent, GmmError, Mixture, VoxelGrid};
pub use imu::{ImuBias, ImuError, ImuNoiseParams, ImuSample, PreintegratedFactor};
pub use pipeline::{run_localization, Localizer, LocalizerConfig, Mode, RunOutput, RunStats};
pub use sim::{evaluate, Evaluation, FrameEstimate, Scenario, SimConfig, SimError};
pub use state::{Extrinsics, Gravity, StateError, StateVector};

/// Any failure, tagged with the module that raised it.
#[derive(Debug, Error)]
pub enum Error {
    #[error("gmm_voxel_map: {0}")]
    Map(#[from] GmmError),
    #[error("imu_preint: {0}")]
    Imu(#[from] ImuError),
    #[error("state_model: {0}")]
    State(#[from] StateError),
    #[error("factors: {0}")]
    Factor(#[from] FactorError),
    #[error("associator: {0}")]
    Assoc(#[from] AssocError),
    #[error("{0}")]
    Estimator(#[from] EstimatorError),
    #[error("{0}")]
    Sim(#[from] SimError),
}
