//! Incremental sparse Bayesian ordinal regression.
//!
//! A threshold ordinal classifier over Gaussian RBF basis functions, trained
//! by greedily adding, deleting or re-estimating one basis function per
//! iteration according to its closed-form marginal-likelihood gain. Weights
//! get a Laplace-approximated Gaussian posterior at the MAP point; the noise
//! level and the category cut points are tuned by type-II maximum likelihood.
//!
//! The main entry points are [`trainer::fit`] for training,
//! [`trainer::ModelState`] for prediction, and [`data`]/[`eval`] for the
//! synthetic-data and cross-validation protocols used by the CLI.

pub mod data;
pub mod error;
pub mod eval;
pub mod hyper;
pub mod kernel;
pub mod likelihood;
pub mod linalg;
pub mod posterior;
pub mod reference;
pub mod selection;
pub mod trainer;

pub use error::{IsborError, Result};
