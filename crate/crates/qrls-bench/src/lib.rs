//! Shared fixtures for the pipeline benchmarks.

use qrls_core::innovations::InnovationSpec;
use qrls_core::model::{GenerativeParams, ModelParams, QuantileParams};
use qrls_core::simulate::{simulate_path, SimConfig};

/// The simulation-design generative model with normal innovations.
pub fn design_a() -> GenerativeParams {
    GenerativeParams::new(
        ModelParams {
            phi: vec![0.04, 0.2],
            psi: vec![0.1],
            gamma1: vec![0.5],
            gamma2: vec![1.25],
            beta: vec![0.7],
        },
        InnovationSpec::Normal { omega: 0.2 },
    )
    .expect("valid design")
}

/// True quantile parameters at the given tau.
pub fn theta_at(tau: f64) -> QuantileParams {
    design_a().quantile_params(tau).expect("valid tau")
}

/// A simulated observation series of length `n`.
pub fn series(n: usize, seed: u64) -> Vec<f64> {
    simulate_path(&SimConfig::new(design_a(), n, seed)).expect("stationary draw").y
}
