//! Dual certificates for non-negative Gaussian super-resolution on `[0, 1]`.
//!
//! Sources `sum_i a_i delta(t - t_i)` observed through a Gaussian kernel at
//! `m` samples are recovered by solving a box-constrained exact-penalty dual
//! with a level bundle method, reading the support off the dual certificate
//! and fitting amplitudes by least squares. [`bounds`] evaluates the
//! perturbation radii that control how the recovery reacts to noise.

pub mod bounds;
pub mod certificate;
pub mod config;
pub mod error;
pub mod experiments;
pub mod kernel;
pub mod model;
pub mod numerics;
pub mod recovery;
pub mod solver;

pub use certificate::Certificate;
pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use kernel::Kernel;
pub use model::{MeasurementSet, SampleGrid, SourceModel};
pub use recovery::RecoveryResult;
pub use solver::{BundleState, PenaltyProblem, SolveOptions};
