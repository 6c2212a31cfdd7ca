//! Frequency-filtered photon statistics of pulsed quantum emitters.

pub mod analysis;
pub mod correlations;
pub mod dynamics;
pub mod error;
pub mod integrator;
pub mod linalg;
pub mod model;
pub mod photostream;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::{Real, C};

/// `f64` instantiations of the generic core.
pub type SystemModel = model::SystemModel<f64>;
pub type GaussianPulse = model::GaussianPulse<f64>;
pub type TwoLevelConfig = model::TwoLevelConfig<f64>;
pub type BiexcitonConfig = model::BiexcitonConfig<f64>;
pub type PolarizationState = model::PolarizationState<f64>;
pub type ObservationVector = model::ObservationVector<f64>;
pub type SensorConfig = model::SensorConfig<f64>;
pub type DensityMatrix = dynamics::DensityMatrix<f64>;
pub type Trajectory = dynamics::Trajectory<f64>;
pub type CorrelationGrid = dynamics::CorrelationGrid<f64>;
pub type FilteredStats = correlations::FilteredStats<f64>;
pub type SweepResult = correlations::SweepResult<f64>;
pub type Matrix = linalg::Matrix<f64>;
pub type SuperGaussianFilter = analysis::SuperGaussianFilter<f64>;
