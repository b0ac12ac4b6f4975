//! Quantile regression for conditional location-scale time series.
//!
//! Implements ARMA(P,Q)-AGARCH(p,q) models in the reparameterized form where
//! the volatility intercept is fixed to one and the innovation variance is
//! free, so the innovation quantile `xi` becomes an estimable parameter.
//! The crate provides:
//!
//! - parameter containers, validity checks and the ARCH(inf)/AR(inf)
//!   expansions of the model's rational filters ([`model`]),
//! - innovation families (normal, Fernandez-Steel skewed t) with density,
//!   CDF, quantile and sampling ([`innovations`]),
//! - a stationary-path simulator ([`simulate`]),
//! - the truncated conditional-quantile filter and its analytical gradient
//!   ([`filter`]),
//! - check-loss minimization by constrained Nelder-Mead with a Gaussian-QMLE
//!   warm start ([`estimation`]),
//! - sandwich and theoretical asymptotic covariances ([`inference`]),
//! - a Monte-Carlo study harness and a tau-grid workflow ([`experiments`]).

pub mod error;
pub mod estimation;
pub mod experiments;
pub mod filter;
pub mod inference;
pub mod innovations;
pub mod model;
pub mod numeric;
pub mod simulate;

pub use nalgebra;

pub use error::Error;
pub use estimation::{FitOptions, FitResult, Objective};
pub use filter::FilterState;
pub use inference::{AsymptoticCov, CovarianceEstimate};
pub use innovations::InnovationSpec;
pub use model::{FilterCoeffs, GenerativeParams, ModelOrders, ModelParams, QuantileParams};
pub use simulate::{SimConfig, SimPath};

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
