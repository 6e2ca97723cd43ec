//! Cubature Kalman filtering with mixture-correntropy robust measurement
//! updates, plus the simulation models and Monte-Carlo harness used to
//! evaluate them.

pub mod ckf;
pub mod cli;
pub mod error;
pub mod filter;
pub mod linalg;
pub mod models;
pub mod sim;
pub mod weights;

pub use ckf::{
    ckf_step, cubature_points, kalman_update, measurement_stats, predict, CubatureSet,
    GaussianBelief, MeasurementStats, StateSpaceModel,
};
pub use error::{FilterError, Result};
pub use filter::{robust_step, run_filter, whitened_residual, FilterRun, FilterStepDiagnostics};
pub use linalg::matrix_sqrt;
pub use sim::{run_monte_carlo, run_monte_carlo_with_workers, MetricsReport, ScenarioConfig};
pub use weights::{LossKind, RobustLossConfig, WeightMatrix};
