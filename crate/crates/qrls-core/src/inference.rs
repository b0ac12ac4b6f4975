//! Sandwich covariance for quantile-regression fits, theoretical asymptotic
//! covariance at given parameters, and confidence intervals.
//!
//! The sandwich is `tau (1-tau) H^-1 V H^-1` with `V = n^-1 sum g_t g_t'`,
//! `H = (2 c_n n)^-1 sum 1{|Y_t - q_t| < c_n} g_t g_t'` and `g_t` the filter
//! gradient at theta_hat. The theoretical covariance is
//! `tau (1-tau) / f_u^2(xi(tau)) J^-1 V J^-1` with J and V estimated as
//! ergodic averages along one long simulated path at the true parameters.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::estimation::FitResult;
use crate::filter::{filter_with_gradient, FilterState};
use crate::model::{validate, GenerativeParams, ModelOrders, QuantileParams};
use crate::simulate::{simulate_path, SimConfig};
use crate::{Error, Result};

/// Condition-number ceiling before H is declared singular.
const H_CONDITION_LIMIT: f64 = 1e12;
/// Relative eigenvalue floor used when inverting symmetric PSD matrices.
const EIG_FLOOR: f64 = 1e-12;

/// Plug-in covariance of a quantile-regression fit.
#[derive(Debug, Clone)]
pub struct CovarianceEstimate {
    pub v_hat: DMatrix<f64>,
    pub h_hat: DMatrix<f64>,
    /// `tau (1-tau) H^-1 V H^-1`, the asymptotic covariance of
    /// `sqrt(n) (theta_hat - theta)`.
    pub sandwich: DMatrix<f64>,
    /// Kernel bandwidth c_n actually used.
    pub bandwidth: f64,
    /// Fraction of observations inside the kernel window.
    pub kernel_fraction: f64,
    /// Sample size behind the estimate.
    pub n: usize,
}

impl CovarianceEstimate {
    /// Standard errors `sqrt(diag(sandwich) / n)`.
    pub fn se(&self) -> Vec<f64> {
        (0..self.sandwich.nrows())
            .map(|i| (self.sandwich[(i, i)].max(0.0) / self.n as f64).sqrt())
            .collect()
    }
}

/// Theoretical asymptotic covariance at fixed parameters.
#[derive(Debug, Clone)]
pub struct AsymptoticCov {
    pub j: DMatrix<f64>,
    pub v: DMatrix<f64>,
    /// `tau (1-tau) / f_u^2 J^-1 V J^-1`.
    pub cov: DMatrix<f64>,
    /// Batch-means Monte-Carlo standard error per covariance entry.
    pub mc_se: DMatrix<f64>,
}

impl AsymptoticCov {
    /// Asymptotic standard deviations of the estimator at sample size n:
    /// `sqrt(diag(cov) / n)`.
    pub fn asd(&self, n: usize) -> Vec<f64> {
        (0..self.cov.nrows())
            .map(|i| (self.cov[(i, i)].max(0.0) / n as f64).sqrt())
            .collect()
    }
}

/// Invert a symmetric PSD matrix through its eigendecomposition, flooring
/// eigenvalues at `1e-12 trace` for stability.
pub fn psd_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = 0.5 * (m + m.transpose());
    let eig = SymmetricEigen::new(sym);
    let floor = EIG_FLOOR * eig.eigenvalues.iter().map(|v| v.abs()).sum::<f64>().max(1e-300);
    let inv = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&l| 1.0 / l.max(floor)),
    );
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}

/// Smallest eigenvalue relative to the trace; PSD checks use
/// `min_eigen_ratio >= -1e-10`.
pub fn min_eigen_ratio(m: &DMatrix<f64>) -> f64 {
    let sym = 0.5 * (m + m.transpose());
    let eig = SymmetricEigen::new(sym);
    let trace = eig.eigenvalues.iter().map(|v| v.abs()).sum::<f64>().max(1e-300);
    eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min) / trace
}

/// `V_hat = n^-1 sum g_t g_t'` from a gradient-carrying filter state.
pub fn v_hat(state: &FilterState) -> DMatrix<f64> {
    let g = state.grad_q.as_ref().expect("gradient required");
    let d = g.dim();
    let n = state.len();
    let mut v = DMatrix::<f64>::zeros(d, d);
    for t in 0..n {
        let row = g.row(t);
        for i in 0..d {
            for j in i..d {
                v[(i, j)] += row[i] * row[j];
            }
        }
    }
    v /= n as f64;
    for i in 0..d {
        for j in 0..i {
            v[(i, j)] = v[(j, i)];
        }
    }
    v
}

/// Default kernel bandwidth `sd(Y - q_t(theta)) n^{-1/3}`; shrinks at the
/// rate the consistency argument needs while keeping `sqrt(n) c_n` growing.
pub fn default_bandwidth(
    y: &[f64],
    theta: &QuantileParams,
    tau: f64,
    orders: ModelOrders,
) -> Result<f64> {
    let _ = tau;
    let state = crate::filter::filter(y, theta, orders)?;
    let resid: Vec<f64> = y.iter().zip(&state.q_tilde).map(|(a, b)| a - b).collect();
    let sd = crate::numeric::sample_sd(&resid)
        .ok_or_else(|| Error::InvalidInput("need at least two observations".into()))?;
    Ok(sd * (y.len() as f64).powf(-1.0 / 3.0))
}

/// Sandwich covariance of the quantile-regression estimator at theta_hat.
pub fn sandwich_cov(
    y: &[f64],
    theta_hat: &QuantileParams,
    tau: f64,
    orders: ModelOrders,
    c_n: Option<f64>,
) -> Result<CovarianceEstimate> {
    let free: Vec<usize> = (0..orders.dim()).collect();
    sandwich_cov_subset(y, theta_hat, tau, orders, c_n, &free)
}

/// Sandwich covariance restricted to a subset of free parameters, indexed
/// into the canonical vector. Used when some coordinates are pinned (for
/// instance a location-only fit with xi fixed at zero, whose phi0 standard
/// error is the classical sample-quantile one).
pub fn sandwich_cov_subset(
    y: &[f64],
    theta_hat: &QuantileParams,
    tau: f64,
    orders: ModelOrders,
    c_n: Option<f64>,
    free: &[usize],
) -> Result<CovarianceEstimate> {
    validate(theta_hat, orders)?;
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Domain(format!("tau must lie in (0,1), got {tau}")));
    }
    let d = free.len();
    if d == 0 {
        return Err(Error::InvalidInput("no free parameters".into()));
    }
    let n = y.len();
    if n <= 10 * d {
        return Err(Error::InvalidInput(format!(
            "sandwich needs n > 10 d = {}, got n = {n}",
            10 * d
        )));
    }

    let state = filter_with_gradient(y, theta_hat, orders)?;
    let g = state.grad_q.as_ref().expect("gradient requested");
    let resid: Vec<f64> = y.iter().zip(&state.q_tilde).map(|(a, b)| a - b).collect();

    let bandwidth = match c_n {
        Some(c) if c > 0.0 => c,
        Some(c) => return Err(Error::Domain(format!("bandwidth must be positive, got {c}"))),
        None => {
            let sd = crate::numeric::sample_sd(&resid)
                .ok_or_else(|| Error::InvalidInput("need at least two observations".into()))?;
            sd * (n as f64).powf(-1.0 / 3.0)
        }
    };

    let mut v = DMatrix::<f64>::zeros(d, d);
    let mut h = DMatrix::<f64>::zeros(d, d);
    let mut inside = 0usize;
    for t in 0..n {
        let row = g.row(t);
        let in_window = resid[t].abs() < bandwidth;
        if in_window {
            inside += 1;
        }
        for (a, &ia) in free.iter().enumerate() {
            for (b, &ib) in free.iter().enumerate().skip(a) {
                let prod = row[ia] * row[ib];
                v[(a, b)] += prod;
                if in_window {
                    h[(a, b)] += prod;
                }
            }
        }
    }
    v /= n as f64;
    h /= 2.0 * bandwidth * n as f64;
    for i in 0..d {
        for j in 0..i {
            v[(i, j)] = v[(j, i)];
            h[(i, j)] = h[(j, i)];
        }
    }

    let eig = SymmetricEigen::new(h.clone());
    let lmax = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lmin = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(lmin > 0.0) || lmax / lmin > H_CONDITION_LIMIT {
        return Err(Error::SingularH);
    }

    let h_inv = psd_inverse(&h);
    let sandwich = tau * (1.0 - tau) * &h_inv * &v * &h_inv;
    let sandwich = 0.5 * (&sandwich + sandwich.transpose());
    Ok(CovarianceEstimate {
        v_hat: v,
        h_hat: h,
        sandwich,
        bandwidth,
        kernel_fraction: inside as f64 / n as f64,
        n,
    })
}

/// Theoretical asymptotic covariance of Theorem-style form, estimated from
/// one long simulated path at the supplied parameters.
pub fn theoretical_asd(
    gen: &GenerativeParams,
    theta_star: &QuantileParams,
    tau: f64,
    path_len: usize,
    seed: u64,
) -> Result<AsymptoticCov> {
    let free: Vec<usize> = (0..theta_star.orders().dim()).collect();
    theoretical_asd_subset(gen, theta_star, tau, path_len, seed, &free)
}

/// [`theoretical_asd`] restricted to a subset of free parameters.
pub fn theoretical_asd_subset(
    gen: &GenerativeParams,
    theta_star: &QuantileParams,
    tau: f64,
    path_len: usize,
    seed: u64,
    free: &[usize],
) -> Result<AsymptoticCov> {
    if path_len < 1000 {
        return Err(Error::Domain("path length must be >= 1000".into()));
    }
    let orders = theta_star.orders();
    validate(theta_star, orders)?;
    let d = free.len();

    // Extra presample so the truncated filter sits on the stationary path.
    let presample = 2000.min(path_len / 2);
    let cfg = SimConfig::new(gen.clone(), path_len + presample, seed);
    let path = simulate_path(&cfg)?;
    let state = filter_with_gradient(&path.y, theta_star, orders)?;
    let g = state.grad_q.as_ref().expect("gradient requested");

    let kept = path_len;
    let batches = 50.min(kept / 20).max(2);
    let batch_len = kept / batches;
    let used = batch_len * batches;

    let fu = gen.innovation.density_at_quantile(tau)?;
    let prefactor = tau * (1.0 - tau) / (fu * fu);

    let mut j_total = DMatrix::<f64>::zeros(d, d);
    let mut v_total = DMatrix::<f64>::zeros(d, d);
    let mut batch_covs: Vec<DMatrix<f64>> = Vec::with_capacity(batches);

    for b in 0..batches {
        let mut j_b = DMatrix::<f64>::zeros(d, d);
        let mut v_b = DMatrix::<f64>::zeros(d, d);
        let start = presample + b * batch_len;
        for t in start..start + batch_len {
            let row = g.row(t);
            let inv_h = 1.0 / state.h2_tilde[t].sqrt();
            for (a, &ia) in free.iter().enumerate() {
                for (bb, &ib) in free.iter().enumerate().skip(a) {
                    let prod = row[ia] * row[ib];
                    v_b[(a, bb)] += prod;
                    j_b[(a, bb)] += prod * inv_h;
                }
            }
        }
        mirror(&mut j_b);
        mirror(&mut v_b);
        j_total += &j_b;
        v_total += &v_b;
        let j_m = &j_b / batch_len as f64;
        let v_m = &v_b / batch_len as f64;
        let j_inv = psd_inverse(&j_m);
        batch_covs.push(prefactor * &j_inv * &v_m * &j_inv);
    }
    j_total /= used as f64;
    v_total /= used as f64;

    let j_inv = psd_inverse(&j_total);
    let cov = prefactor * &j_inv * &v_total * &j_inv;
    let cov = 0.5 * (&cov + cov.transpose());

    let mut mc_se = DMatrix::<f64>::zeros(d, d);
    let bmean = batch_covs.iter().sum::<DMatrix<f64>>() / batches as f64;
    for bc in &batch_covs {
        let diff = bc - &bmean;
        for i in 0..d {
            for jj in 0..d {
                mc_se[(i, jj)] += diff[(i, jj)] * diff[(i, jj)];
            }
        }
    }
    for i in 0..d {
        for jj in 0..d {
            mc_se[(i, jj)] = (mc_se[(i, jj)] / (batches as f64 - 1.0)).sqrt()
                / (batches as f64).sqrt();
        }
    }

    Ok(AsymptoticCov { j: j_total, v: v_total, cov, mc_se })
}

fn mirror(m: &mut DMatrix<f64>) {
    for i in 0..m.nrows() {
        for j in 0..i {
            m[(i, j)] = m[(j, i)];
        }
    }
}

/// Normal-theory confidence intervals `theta_i +/- z_{(1+level)/2} se_i`.
pub fn confidence_intervals(
    fit: &FitResult,
    cov: &CovarianceEstimate,
    level: f64,
) -> Result<Vec<(f64, f64)>> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!("level must lie in (0,1), got {level}")));
    }
    let z = Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(0.5 * (1.0 + level));
    let theta = fit.theta_hat.to_vec();
    let se = cov.se();
    if se.len() != theta.len() {
        return Err(Error::DimensionMismatch(format!(
            "covariance is {}-dimensional, parameters are {}-dimensional",
            se.len(),
            theta.len()
        )));
    }
    Ok(theta
        .iter()
        .zip(&se)
        .map(|(&th, &s)| (th - z * s, th + z * s))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::{empirical_quantile, FitOptions};
    use crate::innovations::InnovationSpec;
    use crate::model::ModelParams;

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
    fn normal_quantile_for_ninety_percent_band() {
        let z = Normal::new(0.0, 1.0).unwrap().inverse_cdf(0.95);
        assert!((z - 1.6449).abs() < 1e-4);
    }

    #[test]
    fn location_only_se_matches_classical_quantile_asymptotics() {
        // p = q = P = 0 with xi pinned at zero: the free parameter phi0 is a
        // plain sample quantile, so its SE is sqrt(tau(1-tau)) / (f sqrt(n)).
        let n = 6000;
        let tau = 0.25;
        let spec = InnovationSpec::Normal { omega: 1.0 };
        let y = spec.sample(n, 123).unwrap();
        let orders = ModelOrders::new(0, 0, 0, 0);
        let qhat = empirical_quantile(&y, tau);
        let theta = QuantileParams::new(0.0, vec![qhat], vec![], vec![], vec![], vec![]);
        let cov =
            sandwich_cov_subset(&y, &theta, tau, orders, None, &[orders.idx_phi(0)]).unwrap();
        let se = cov.se()[0];
        let f = spec.density_at_quantile(tau).unwrap();
        let classical = (tau * (1.0 - tau)).sqrt() / (f * (n as f64).sqrt());
        assert!(
            (se - classical).abs() / classical < 0.2,
            "se={se} classical={classical}"
        );
        // tau = 0.5 prefactor is exactly 0.25
        let cov5 = sandwich_cov_subset(&y, &theta, 0.5, orders, None, &[1]).unwrap();
        let expected = 0.25 * cov5.h_hat[(0, 0)].powi(-2) * cov5.v_hat[(0, 0)];
        assert!((cov5.sandwich[(0, 0)] - expected).abs() < 1e-10);
    }

    #[test]
    fn sandwich_is_psd_and_bandwidth_continuous() {
        let gen = design_a();
        let y = simulate_path(&SimConfig::new(gen.clone(), 2000, 2)).unwrap().y;
        let theta = gen.quantile_params(0.05).unwrap();
        let orders = theta.orders();
        let cov = sandwich_cov(&y, &theta, 0.05, orders, None).unwrap();
        assert!(min_eigen_ratio(&cov.sandwich) >= -1e-10);
        assert!(min_eigen_ratio(&cov.v_hat) >= -1e-10);
        assert!(cov.bandwidth > 0.0 && cov.kernel_fraction > 0.0);

        // Doubling c_n moves the SEs continuously, not catastrophically.
        let cov2 =
            sandwich_cov(&y, &theta, 0.05, orders, Some(2.0 * cov.bandwidth)).unwrap();
        for (a, b) in cov.se().iter().zip(cov2.se()) {
            let rel = (a - b).abs() / a.max(1e-12);
            assert!(rel < 0.5, "se jumped from {a} to {b}");
        }
    }

    #[test]
    fn h_hat_points_at_density_scaled_j() {
        // On one long path at the truth, H / f_u approximates the J matrix.
        let gen = design_a();
        let tau = 0.25;
        let theta = gen.quantile_params(tau).unwrap();
        let orders = theta.orders();
        let n = 100_000;
        let y = simulate_path(&SimConfig::new(gen.clone(), n, 31)).unwrap().y;

        let cov = sandwich_cov(&y, &theta, tau, orders, None).unwrap();
        let asy = theoretical_asd(&gen, &theta, tau, n, 32).unwrap();
        let fu = gen.innovation.density_at_quantile(tau).unwrap();

        let scaled = &cov.h_hat / fu;
        let num: f64 = (&scaled - &asy.j).iter().map(|v| v.abs()).sum();
        let den: f64 = asy.j.iter().map(|v| v.abs()).sum();
        assert!(num / den < 0.15, "relative distance {}", num / den);
    }

    #[test]
    fn theoretical_asd_collapses_to_classical_for_pure_location() {
        // Location-only model: J = V = 1, so the covariance is the scalar
        // tau(1-tau)/f^2.
        let gen = GenerativeParams::new(
            ModelParams { phi: vec![0.3], psi: vec![], gamma1: vec![], gamma2: vec![], beta: vec![] },
            InnovationSpec::Normal { omega: 0.7 },
        )
        .unwrap();
        let tau = 0.1;
        let theta = gen.quantile_params(tau).unwrap();
        let orders = theta.orders();
        let asy =
            theoretical_asd_subset(&gen, &theta, tau, 20_000, 4, &[orders.idx_phi(0)]).unwrap();
        assert!((asy.j[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((asy.v[(0, 0)] - 1.0).abs() < 1e-12);
        let f = gen.innovation.density_at_quantile(tau).unwrap();
        let classical = tau * (1.0 - tau) / (f * f);
        assert!((asy.cov[(0, 0)] - classical).abs() / classical < 1e-9);
    }

    #[test]
    fn confidence_interval_edges() {
        let gen = design_a();
        let y = simulate_path(&SimConfig::new(gen.clone(), 1500, 8)).unwrap().y;
        let theta = gen.quantile_params(0.1).unwrap();
        let orders = theta.orders();
        let fit = crate::estimation::qr_fit(&y, 0.1, orders, Some(theta), &FitOptions::default())
            .unwrap();
        let cov = fit.sandwich.clone().expect("sandwich available");

        let cis = confidence_intervals(&fit, &cov, 0.9).unwrap();
        for (i, (lo, hi)) in cis.iter().enumerate() {
            let v = fit.theta_hat.to_vec()[i];
            assert!(*lo <= v && v <= *hi);
        }

        // Zero covariance degenerates every interval to a point.
        let d = orders.dim();
        let zero = CovarianceEstimate {
            v_hat: DMatrix::zeros(d, d),
            h_hat: DMatrix::zeros(d, d),
            sandwich: DMatrix::zeros(d, d),
            bandwidth: 1.0,
            kernel_fraction: 0.0,
            n: y.len(),
        };
        for (i, (lo, hi)) in confidence_intervals(&fit, &zero, 0.9).unwrap().iter().enumerate() {
            let v = fit.theta_hat.to_vec()[i];
            assert_eq!(*lo, v);
            assert_eq!(*hi, v);
        }
    }

    #[test]
    fn singular_h_reported_for_absurd_bandwidth() {
        let gen = design_a();
        let y = simulate_path(&SimConfig::new(gen.clone(), 800, 14)).unwrap().y;
        let theta = gen.quantile_params(0.05).unwrap();
        // A bandwidth far below the residual scale leaves the kernel empty.
        match sandwich_cov(&y, &theta, 0.05, theta.orders(), Some(1e-12)) {
            Err(Error::SingularH) => {}
            other => panic!("expected SingularH, got {other:?}"),
        }
    }
}
