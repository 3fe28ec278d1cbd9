//! Generalized Gaussian mixture processes (GGMP) for distribution-valued
//! regression.
//!
//! Each training input carries a whole output distribution. A model is
//! built in three stages: a local Gaussian mixture is fitted at every
//! input and its components are aligned across inputs; one Gaussian
//! process is trained per aligned component (per output coordinate); and
//! mixture weights are optimized under the distributional log-likelihood.
//! Predictions are closed-form Gaussian mixtures.

pub mod align;
pub mod dataset;
pub mod error;
pub mod gp;
pub mod hungarian;
pub mod metrics;
pub mod mixture;
pub mod model;
pub mod optim;
pub mod predictive;
pub mod stats;
pub mod synthgen;
pub mod weights;

pub use error::{Error, Result, Stage};
