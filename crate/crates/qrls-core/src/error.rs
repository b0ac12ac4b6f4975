//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by model construction, filtering, estimation and inference.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Parameter vector shape does not match the model orders. Structural,
    /// distinct from a violated parameter constraint.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A parameter constraint is violated; the message names the first
    /// violated constraint ("gamma nonneg", "beta nonneg", "beta sum",
    /// "psi roots", ...).
    #[error("constraint violated: {0}")]
    Constraint(&'static str),

    /// `sum(beta) >= 1`: the scale recursion has no stationary intercept.
    #[error("nonstationary scale: sum(beta) = {0} >= 1")]
    NonstationaryScale(f64),

    /// Operation defined only for specific (P,Q,p,q) combinations.
    #[error("unsupported orders: {0}")]
    UnsupportedOrders(String),

    /// Simulated volatility exceeded the overflow guard; `t` is the first
    /// offending time index.
    #[error("explosive path: h_t^2 overflow at t = {t}")]
    ExplosivePath { t: usize },

    /// Argument outside its mathematical domain (e.g. tau not in (0,1)).
    #[error("domain error: {0}")]
    Domain(String),

    /// Innovation density underflowed to zero at the requested quantile.
    #[error("degenerate density: f_u(F_u^-1(tau)) underflowed to 0")]
    DegenerateDensity,

    /// Malformed input data (NaN observations, empty series, bad file
    /// contents).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The optimizer could not build a usable starting simplex.
    #[error("initialization error: {0}")]
    Initialization(String),

    /// The kernel matrix H of the sandwich estimator is numerically singular.
    #[error("singular H matrix (condition number > 1e12); try a larger bandwidth c_n")]
    SingularH,
}

impl Error {
    /// True for errors caused by bad user input rather than numerical failure.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            Error::DimensionMismatch(_)
                | Error::Constraint(_)
                | Error::Domain(_)
                | Error::InvalidInput(_)
                | Error::UnsupportedOrders(_)
        )
    }
}
