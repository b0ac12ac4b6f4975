//! Stationary ARMA-AGARCH path simulation for Monte-Carlo studies and
//! oracle tests.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::model::{validate, GenerativeParams, ModelOrders, QuantileParams};
use crate::{Error, Result};

/// Volatility overflow guard; a draw crossing this is reported as explosive.
const H2_OVERFLOW: f64 = 1e30;

/// One simulation request.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub gen: GenerativeParams,
    pub orders: ModelOrders,
    /// Returned sample length.
    pub n: usize,
    /// Discarded prefix length; initialization bias decays geometrically.
    pub burnin: usize,
    pub seed: u64,
}

impl SimConfig {
    /// Config with the default burn-in of 1000.
    pub fn new(gen: GenerativeParams, n: usize, seed: u64) -> Self {
        let orders = gen.model.orders();
        Self { gen, orders, n, burnin: 1000, seed }
    }
}

/// A simulated path: observations, shocks and squared scales, burn-in
/// removed.
#[derive(Debug, Clone, PartialEq)]
pub struct SimPath {
    pub y: Vec<f64>,
    pub eps: Vec<f64>,
    pub h2: Vec<f64>,
}

/// Simulate a path from the generative model.
///
/// Recursion: `h_t^2 = 1 + sum gamma1_i (eps_{t-i}^+)^2 + sum gamma2_i
/// (eps_{t-i}^-)^2 + sum beta_j h_{t-j}^2`, `eps_t = h_t u_t`, then the ARMA
/// recursion for `Y_t`. Initialization at t <= 0 matches the quantile
/// filter's initial values (`eps = 0`, `h^2 = beta(1)^-1`,
/// `Y = phi(1)^-1 phi_0`), so tiny-burn-in runs line up with the filter
/// exactly.
pub fn simulate_path(cfg: &SimConfig) -> Result<SimPath> {
    if cfg.n == 0 {
        return Err(Error::Domain("sample length n must be >= 1".into()));
    }
    let theta = QuantileParams { xi: 0.0, model: cfg.gen.model.clone() };
    validate(&theta, cfg.orders)?;
    let total = cfg.burnin + cfg.n;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let u = cfg.gen.innovation.sample_with_rng(total, &mut rng)?;
    let path = simulate_core(&cfg.gen, &u)?;
    Ok(SimPath {
        y: path.y[cfg.burnin..].to_vec(),
        eps: path.eps[cfg.burnin..].to_vec(),
        h2: path.h2[cfg.burnin..].to_vec(),
    })
}

/// Deterministic recursion given an innovation sequence. Split out so tests
/// can drive it with stub innovations.
pub(crate) fn simulate_core(gen: &GenerativeParams, u: &[f64]) -> Result<SimPath> {
    let m = &gen.model;
    let total = u.len();
    let y_init = m.phi[0] / m.phi_at_one();
    let h2_init = 1.0 / m.beta_at_one();

    let mut y = Vec::with_capacity(total);
    let mut eps = Vec::with_capacity(total);
    let mut h2 = Vec::with_capacity(total);

    for (i, &ut) in u.iter().enumerate() {
        let mut h2_t = 1.0;
        for (k, &g1) in m.gamma1.iter().enumerate() {
            let e = lag(&eps, i, k + 1, 0.0);
            h2_t += g1 * e.max(0.0).powi(2) + m.gamma2[k] * (-e).max(0.0).powi(2);
        }
        for (j, &b) in m.beta.iter().enumerate() {
            h2_t += b * lag(&h2, i, j + 1, h2_init);
        }
        if !(h2_t <= H2_OVERFLOW) {
            return Err(Error::ExplosivePath { t: i + 1 });
        }
        let eps_t = h2_t.sqrt() * ut;
        let mut y_t = m.phi[0] + eps_t;
        for (j, &phi) in m.phi[1..].iter().enumerate() {
            y_t += phi * lag(&y, i, j + 1, y_init);
        }
        for (k, &psi) in m.psi.iter().enumerate() {
            y_t += psi * lag(&eps, i, k + 1, 0.0);
        }
        h2.push(h2_t);
        eps.push(eps_t);
        y.push(y_t);
    }
    Ok(SimPath { y, eps, h2 })
}

/// Value `lag` steps before position `i`, or the presample initial.
#[inline]
fn lag(xs: &[f64], i: usize, lag: usize, init: f64) -> f64 {
    if i >= lag {
        xs[i - lag]
    } else {
        init
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::innovations::InnovationSpec;
    use crate::model::ModelParams;
    use crate::numeric::{batch_means_se, mean};

    fn design_a() -> GenerativeParams {
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
        .unwrap()
    }

    #[test]
    fn degenerate_model_returns_innovations() {
        let gen = GenerativeParams::new(
            ModelParams { phi: vec![0.0], psi: vec![], gamma1: vec![], gamma2: vec![], beta: vec![] },
            InnovationSpec::Normal { omega: 0.2 },
        )
        .unwrap();
        let cfg = SimConfig { burnin: 5, ..SimConfig::new(gen.clone(), 100, 3) };
        let path = simulate_path(&cfg).unwrap();
        let u = gen.innovation.sample(105, 3).unwrap();
        assert_eq!(path.y, &u[5..]);
        assert!(path.h2.iter().all(|&h| h == 1.0));
    }

    #[test]
    fn zero_innovation_stub_sits_at_arma_fixed_point() {
        // phi0 / (1 - phi1) = 0.04 / 0.8 = 0.05; the initials equal the
        // fixed point, so the path never moves.
        let gen = design_a();
        let path = simulate_core(&gen, &vec![0.0; 50]).unwrap();
        for &yt in &path.y {
            assert!((yt - 0.05).abs() < 1e-14);
        }
    }

    #[test]
    fn identical_configs_give_bitwise_identical_paths() {
        let cfg = SimConfig::new(design_a(), 500, 99);
        assert_eq!(simulate_path(&cfg).unwrap(), simulate_path(&cfg).unwrap());
    }

    #[test]
    fn h2_stays_above_one() {
        let cfg = SimConfig::new(design_a(), 20_000, 5);
        let path = simulate_path(&cfg).unwrap();
        assert!(path.h2.iter().all(|&h| h >= 1.0));
    }

    #[test]
    fn second_moment_matches_fixed_point_oracle() {
        // E eps^2 solves x = omega * (c0 + (C1 a + C2 b) x / omega) with
        // a = E(u+)^2, b = E(u-)^2; iterate rather than solve in closed form.
        let gen = design_a();
        let omega = gen.omega();
        let a = omega / 2.0;
        let b = omega / 2.0;
        let theta = QuantileParams { xi: 0.0, model: gen.model.clone() };
        let fc = crate::model::arch_infty_coeffs(&theta, theta.orders(), 2000).unwrap();
        let c1: f64 = fc.c1.iter().sum();
        let c2: f64 = fc.c2.iter().sum();
        let mut e_h2 = fc.c0;
        for _ in 0..500 {
            e_h2 = fc.c0 + (c1 * a + c2 * b) / omega * e_h2 * omega;
        }
        let oracle = omega * e_h2;
        assert!((oracle - 1.6).abs() < 1e-9, "oracle={oracle}");

        let cfg = SimConfig::new(gen, 100_000, 12);
        let path = simulate_path(&cfg).unwrap();
        let e2: Vec<f64> = path.eps.iter().map(|e| e * e).collect();
        let m = mean(&e2);
        let se = batch_means_se(&e2, 100);
        assert!((m - oracle).abs() < 5.0 * se, "m={m} oracle={oracle} se={se}");
    }

    #[test]
    fn halves_of_long_path_agree() {
        let cfg = SimConfig::new(design_a(), 100_000, 8);
        let path = simulate_path(&cfg).unwrap();
        let (a, b) = path.y.split_at(path.y.len() / 2);
        let se = batch_means_se(&path.y, 100);
        assert!((mean(a) - mean(b)).abs() < 5.0 * se * std::f64::consts::SQRT_2);
    }

    #[test]
    fn pure_arma_lag_one_autocorrelation() {
        let gen = GenerativeParams::new(
            ModelParams { phi: vec![0.0, 0.5], psi: vec![0.3], gamma1: vec![], gamma2: vec![], beta: vec![] },
            InnovationSpec::Normal { omega: 1.0 },
        )
        .unwrap();
        let (phi, psi) = (0.5, 0.3);
        let rho1 = (1.0 + phi * psi) * (phi + psi) / (1.0 + psi * psi + 2.0 * phi * psi);

        let cfg = SimConfig::new(gen, 100_000, 21);
        let path = simulate_path(&cfg).unwrap();
        // Per-segment autocorrelations give a model-free standard error.
        let seg = 20;
        let len = path.y.len() / seg;
        let r1s: Vec<f64> = (0..seg)
            .map(|s| {
                let y = &path.y[s * len..(s + 1) * len];
                let m = mean(y);
                let num: f64 = y.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
                let den: f64 = y.iter().map(|v| (v - m) * (v - m)).sum();
                num / den
            })
            .collect();
        let r1 = mean(&r1s);
        let se = crate::numeric::sample_sd(&r1s).unwrap() / (seg as f64).sqrt();
        assert!((r1 - rho1).abs() < 4.0 * se, "r1={r1} rho1={rho1} se={se}");
    }

    #[test]
    fn explosive_draw_reports_first_offending_index() {
        let gen = GenerativeParams::new(
            ModelParams {
                phi: vec![0.0],
                psi: vec![],
                gamma1: vec![500.0],
                gamma2: vec![500.0],
                beta: vec![0.9],
            },
            InnovationSpec::Normal { omega: 10.0 },
        )
        .unwrap();
        let cfg = SimConfig { burnin: 0, ..SimConfig::new(gen, 5000, 4) };
        match simulate_path(&cfg) {
            Err(Error::ExplosivePath { t }) => assert!(t > 0),
            other => panic!("expected explosive path, got {other:?}"),
        }
    }
}
