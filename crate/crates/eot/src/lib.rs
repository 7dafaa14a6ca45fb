//! Multiple extended-object tracking with a Poisson multi-Bernoulli filter
//! under a zero-inflated Poisson measurement model.
//!
//! The crate provides:
//!
//! - [`types`]: the shared domain model (object states with elliptical
//!   extents and per-object measurement rates, particle sets, Bernoulli and
//!   Poisson-intensity components, model parameters);
//! - [`models`]: dynamic and measurement models, including the zero-inflated
//!   Poisson set density and its detection-variable factorization;
//! - [`predict`]: time prediction of the multi-object density;
//! - [`bp`]: the per-scan update engine based on loopy belief propagation
//!   over a factor graph with dual data-association variables, plus pruning,
//!   resampling, and estimate extraction;
//! - [`oracle`]: exact exponential-cost reference implementations on small
//!   discrete supports, used to certify the update engine;
//! - [`metrics`]: the Gaussian-Wasserstein base distance and the GOSPA
//!   metric with its decomposition;
//! - [`sim`]: ground-truth scenario generation and measurement synthesis.

pub mod bp;
pub mod error;
pub mod metrics;
pub mod models;
pub mod numeric;
pub mod oracle;
pub mod predict;
pub mod sim;
pub mod types;

pub use error::{EotError, Result};
