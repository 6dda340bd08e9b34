//! Importance sampling for exponential path functionals of slow–fast diffusions.
//!
//! The quantity of interest is
//!
//! ```text
//! I = E[ exp(-β ∫_{t0}^{T} h(x_s) ds) | x_{t0} = x0, y_{t0} = y0 ]
//! ```
//!
//! for a system whose fast block `y` relaxes on a time scale `ε`. The crate
//! builds a feedback control from the backward Feynman–Kac equation of the
//! *averaged* slow dynamics (an ε-independent, one-dimensional PDE), then
//! samples the full system under that control and reweights each path with
//! its Girsanov likelihood ratio.
//!
//! Module map:
//!
//! - [`model`]: coefficient callbacks and the bistable double-well example.
//! - [`simulate`]: Euler–Maruyama with log-space Girsanov weight and cost.
//! - [`averaging`]: averaged coefficients, analytic or by ergodic averages.
//! - [`fkpde`]: Rothe/exponential-fitting solver for φ₀ and the 2D oracle φ^ε.
//! - [`control`]: interpolating feedback control fields.
//! - [`estimator`]: log-space reductions into [`estimator::EstimatorReport`].
//! - [`validate`]: empirical checks of averaging and control asymptotics.
//!
//! The crate is `no_std` + `alloc` with the default `std` feature disabled.
//! Parallel drivers, file formats and the CLI live in the companion crate.

#![cfg_attr(not(feature = "std"), no_std)]
// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod averaging;
pub mod control;
pub mod estimator;
pub mod fkpde;
pub mod linalg;
pub(crate) mod math;
pub mod model;
pub mod rng;
pub mod simulate;
pub mod validate;

pub use averaging::{AveragedModel, Provenance};
pub use control::{ControlField, ControlKind};
pub use estimator::{EstimatorReport, TrajectorySummary};
pub use fkpde::{Boundary, PdeConfig, PdeConfig2d, ValueGrid, ValueGrid2d};
pub use model::{BistableExample, Coefficients, ModelParams, ModelSpec, RunningCost};
pub use rng::RngStream;
pub use simulate::{PathState, StepPolicy, StepRule};

/// Crate-wide error, one variant per module error.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Simulation(#[from] simulate::SimError),
    #[error(transparent)]
    Averaging(#[from] averaging::AveragingError),
    #[error(transparent)]
    Pde(#[from] fkpde::PdeError),
    #[error(transparent)]
    Control(#[from] control::ControlError),
    #[error(transparent)]
    Estimate(#[from] estimator::EstimateError),
    #[error(transparent)]
    Validate(#[from] validate::ValidateError),
}
