//! Check-loss objective, constrained Nelder-Mead minimization, and the
//! Gaussian-QMLE warm start.
//!
//! Positivity and simplex constraints are handled by smooth
//! reparameterization (log for gamma, additive-logistic scaled to
//! `sum beta < 0.999` for beta) so the simplex search itself is
//! unconstrained; box bounds on the remaining coordinates are enforced by
//! returning an infinite objective sentinel, which Nelder-Mead treats as an
//! ordinary worst value.

use crate::filter::{filter, FilterState};
use crate::inference::{self, CovarianceEstimate};
use crate::model::{validate, GenerativeParams, ModelOrders, ModelParams, QuantileParams};
use crate::numeric;
use crate::{Error, Result};

/// Coefficients at or below this are snapped to the boundary after a fit.
const SNAP_TO_ZERO: f64 = 1e-8;

/// The check (pinball) loss `rho_tau(u) = u (tau - 1{u < 0})`.
#[inline]
pub fn check_loss(u: f64, tau: f64) -> f64 {
    if u >= 0.0 {
        tau * u
    } else {
        (tau - 1.0) * u
    }
}

/// Empirical tau-quantile: the order statistic of rank `ceil(n tau)`
/// (lowest minimizer of the sample check loss; no interpolation).
pub fn empirical_quantile(xs: &[f64], tau: f64) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let rank = (tau * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Box bounds for the estimation parameter space. The compactness
/// assumption gives no concrete box, so these are configurable defaults.
#[derive(Debug, Clone, Copy)]
pub struct ParamBounds {
    pub xi_abs: f64,
    pub arma_abs: f64,
    pub gamma_max: f64,
    pub beta_sum_max: f64,
}

impl Default for ParamBounds {
    fn default() -> Self {
        Self { xi_abs: 50.0, arma_abs: 10.0, gamma_max: 10.0, beta_sum_max: 0.999 }
    }
}

/// Optimizer options shared by the QR and QML fits.
#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Absolute tolerance on the simplex value spread.
    pub ftol: f64,
    /// Tolerance on the simplex diameter.
    pub xtol: f64,
    /// Iteration cap per run; defaults to 5000 per dimension.
    pub max_iter: Option<usize>,
    /// Number of re-inflation restarts around the incumbent.
    pub restarts: usize,
    pub bounds: ParamBounds,
    /// Multiplier on the default sandwich bandwidth `sd(resid) n^{-1/3}`.
    pub bandwidth_scale: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        // No re-inflation restarts by default: the check-loss surface of
        // tail fits has a long shallow valley trading xi against the scale
        // coefficients, and restarted simplices slide down it to points far
        // from the single-run minimizer. Restarts remain available for
        // rough objectives.
        Self {
            ftol: 1e-10,
            xtol: 1e-8,
            max_iter: None,
            restarts: 0,
            bounds: ParamBounds::default(),
            bandwidth_scale: 1.0,
        }
    }
}

/// The quantile-regression objective `G_n(theta) = n^-1 sum rho_tau(Y_t -
/// q_t(theta))`.
#[derive(Debug, Clone)]
pub struct Objective {
    pub tau: f64,
    pub y: Vec<f64>,
    pub orders: ModelOrders,
}

impl Objective {
    pub fn new(tau: f64, y: Vec<f64>, orders: ModelOrders) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::Domain(format!("tau must lie in (0,1), got {tau}")));
        }
        if y.is_empty() {
            return Err(Error::InvalidInput("series must have length >= 1".into()));
        }
        if y.iter().any(|v| v.is_nan()) {
            return Err(Error::InvalidInput("series contains NaN".into()));
        }
        Ok(Self { tau, y, orders })
    }

    /// Mean check loss at theta. Invalid theta evaluates to `f64::INFINITY`
    /// so derivative-free search can step across the constraint boundary.
    pub fn value(&self, theta: &QuantileParams) -> f64 {
        match filter(&self.y, theta, self.orders) {
            Ok(state) => self.value_from_state(&state),
            Err(_) => f64::INFINITY,
        }
    }

    fn value_from_state(&self, state: &FilterState) -> f64 {
        let n = self.y.len() as f64;
        let s: f64 = self
            .y
            .iter()
            .zip(&state.q_tilde)
            .map(|(&yt, &qt)| check_loss(yt - qt, self.tau))
            .sum();
        let v = s / n;
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }
}

/// Backwards-compatible free-function form of [`Objective::value`].
pub fn objective_value(obj: &Objective, theta: &QuantileParams) -> f64 {
    obj.value(theta)
}

// ---------------------------------------------------------------------------
// Generic Nelder-Mead
// ---------------------------------------------------------------------------

/// Outcome of one simplex search.
#[derive(Debug, Clone)]
pub struct NmResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub iterations: usize,
    pub converged: bool,
    pub restarts_used: usize,
}

/// Standard Nelder-Mead on an arbitrary function, with re-inflation
/// restarts around the incumbent. The returned point is the best vertex
/// ever seen, so the result never exceeds `f(x0)`.
pub fn minimize<F: Fn(&[f64]) -> f64>(
    f: &F,
    x0: &[f64],
    ftol: f64,
    xtol: f64,
    max_iter: usize,
    restarts: usize,
) -> Result<NmResult> {
    let steps: Vec<f64> = x0.iter().map(|&v| 0.1 * v.abs().max(0.25)).collect();
    minimize_with_steps(f, x0, &steps, ftol, xtol, max_iter, restarts)
}

/// [`minimize`] with explicit per-coordinate initial simplex steps.
pub fn minimize_with_steps<F: Fn(&[f64]) -> f64>(
    f: &F,
    x0: &[f64],
    steps: &[f64],
    ftol: f64,
    xtol: f64,
    max_iter: usize,
    restarts: usize,
) -> Result<NmResult> {
    let mut best = nm_single(f, x0, steps, ftol, xtol, max_iter)?;
    let mut restarts_used = 0;
    for _ in 0..restarts {
        let inflated: Vec<f64> = steps.iter().map(|s| 2.0 * s).collect();
        let run = nm_single(f, &best.x, &inflated, ftol, xtol, max_iter)?;
        restarts_used += 1;
        let improved = run.fx < best.fx - ftol;
        let run_fx = run.fx;
        if run_fx <= best.fx {
            best = NmResult { iterations: best.iterations + run.iterations, ..run };
        } else {
            best.iterations += run.iterations;
        }
        if !improved {
            break;
        }
    }
    best.restarts_used = restarts_used;
    Ok(best)
}

fn nm_single<F: Fn(&[f64]) -> f64>(
    f: &F,
    x0: &[f64],
    steps: &[f64],
    ftol: f64,
    xtol: f64,
    max_iter: usize,
) -> Result<NmResult> {
    let dim = x0.len();
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(dim + 1);
    simplex.push(x0.to_vec());
    for i in 0..dim {
        let mut v = x0.to_vec();
        v[i] += steps[i];
        simplex.push(v);
    }
    let clean = |v: f64| if v.is_nan() { f64::INFINITY } else { v };
    let mut fvals: Vec<f64> = simplex.iter().map(|v| clean(f(v))).collect();
    if fvals.iter().all(|v| !v.is_finite()) {
        return Err(Error::Initialization(
            "every vertex of the starting simplex is infeasible".into(),
        ));
    }

    let (mut iterations, mut converged) = (0usize, false);
    while iterations < max_iter {
        iterations += 1;
        // order ascending by value
        let mut idx: Vec<usize> = (0..=dim).collect();
        idx.sort_by(|&a, &b| fvals[a].total_cmp(&fvals[b]));
        let reorder: Vec<Vec<f64>> = idx.iter().map(|&i| simplex[i].clone()).collect();
        let revals: Vec<f64> = idx.iter().map(|&i| fvals[i]).collect();
        simplex = reorder;
        fvals = revals;

        let spread = fvals[dim] - fvals[0];
        let diameter = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if spread < ftol && diameter < xtol {
            converged = true;
            break;
        }

        let centroid: Vec<f64> = (0..dim)
            .map(|j| simplex[..dim].iter().map(|v| v[j]).sum::<f64>() / dim as f64)
            .collect();
        let worst = simplex[dim].clone();
        let mix = |a: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&worst)
                .map(|(&c, &w)| c + a * (c - w))
                .collect()
        };

        let reflected = mix(1.0);
        let fr = clean(f(&reflected));
        if fr < fvals[0] {
            let expanded = mix(2.0);
            let fe = clean(f(&expanded));
            if fe < fr {
                simplex[dim] = expanded;
                fvals[dim] = fe;
            } else {
                simplex[dim] = reflected;
                fvals[dim] = fr;
            }
        } else if fr < fvals[dim - 1] {
            simplex[dim] = reflected;
            fvals[dim] = fr;
        } else {
            let contracted = if fr < fvals[dim] { mix(0.5) } else { mix(-0.5) };
            let fc = clean(f(&contracted));
            if fc < fvals[dim].min(fr) {
                simplex[dim] = contracted;
                fvals[dim] = fc;
            } else {
                // shrink toward the best vertex
                for i in 1..=dim {
                    let shrunk: Vec<f64> = simplex[i]
                        .iter()
                        .zip(&simplex[0])
                        .map(|(&v, &b)| b + 0.5 * (v - b))
                        .collect();
                    fvals[i] = clean(f(&shrunk));
                    simplex[i] = shrunk;
                }
            }
        }
    }

    let mut best = 0;
    for i in 1..=dim {
        if fvals[i] < fvals[best] {
            best = i;
        }
    }
    Ok(NmResult {
        x: simplex[best].clone(),
        fx: fvals[best],
        iterations,
        converged,
        restarts_used: 0,
    })
}

// ---------------------------------------------------------------------------
// Smooth constraint transform
// ---------------------------------------------------------------------------

/// Maps between the constrained parameter vector and the unconstrained
/// search space: identity on xi/phi/psi, log on gamma, additive-logistic
/// scaled by `beta_sum_max` on beta.
struct ParamTransform {
    orders: ModelOrders,
    bounds: ParamBounds,
    with_xi: bool,
}

impl ParamTransform {
    fn blocks(&self) -> (usize, usize, usize, usize) {
        let head = if self.with_xi { 1 } else { 0 };
        let arma = 1 + self.orders.ar + self.orders.ma;
        let gammas = 2 * self.orders.arch;
        (head, arma, gammas, self.orders.garch)
    }

    fn to_unconstrained(&self, theta: &[f64]) -> Vec<f64> {
        let (head, arma, gammas, betas) = self.blocks();
        let mut z = Vec::with_capacity(theta.len());
        z.extend(&theta[..head + arma]);
        for &g in &theta[head + arma..head + arma + gammas] {
            z.push(g.max(SNAP_TO_ZERO).ln());
        }
        let beta = &theta[head + arma + gammas..];
        let cap = self.bounds.beta_sum_max;
        let mut u: Vec<f64> = beta.iter().map(|&b| (b / cap).max(1e-10)).collect();
        let total: f64 = u.iter().sum();
        if total >= 1.0 - 1e-9 {
            let shrink = (1.0 - 1e-9) / total;
            u.iter_mut().for_each(|v| *v *= shrink);
        }
        let slack = 1.0 - u.iter().sum::<f64>();
        for v in u {
            z.push((v / slack).ln());
        }
        debug_assert_eq!(z.len(), head + arma + gammas + betas);
        z
    }

    fn to_constrained(&self, z: &[f64]) -> Vec<f64> {
        let (head, arma, gammas, _) = self.blocks();
        let mut theta = Vec::with_capacity(z.len());
        theta.extend(&z[..head + arma]);
        for &v in &z[head + arma..head + arma + gammas] {
            theta.push(v.exp());
        }
        let s: Vec<f64> = z[head + arma + gammas..].iter().map(|&v| v.exp()).collect();
        let denom = 1.0 + s.iter().sum::<f64>();
        for v in s {
            theta.push(self.bounds.beta_sum_max * v / denom);
        }
        theta
    }

    /// Simplex steps in the unconstrained space corresponding to one common
    /// raw-space step of `max_i 0.1 |theta_i|` (0.1 when all zero) on every
    /// coordinate: the classical Nelder-Mead start geometry of the
    /// optimizer the simulation tables were produced with. Each step is the
    /// exact unconstrained-space displacement of that raw move.
    fn simplex_steps(&self, z0: &[f64]) -> Vec<f64> {
        let theta = self.to_constrained(z0);
        let mut raw = theta.iter().fold(0.0f64, |a, &v| a.max(0.1 * v.abs()));
        if raw == 0.0 {
            raw = 0.1;
        }
        (0..z0.len())
            .map(|i| {
                let mut moved = theta.clone();
                moved[i] += raw;
                let z_moved = self.to_unconstrained(&moved);
                (z_moved[i] - z0[i]).abs().clamp(1e-3, 3.0)
            })
            .collect()
    }

    /// Box feasibility of a constrained vector; the smooth transform already
    /// guarantees positivity and the beta simplex.
    fn in_box(&self, theta: &[f64]) -> bool {
        let (head, arma, gammas, _) = self.blocks();
        if self.with_xi && theta[0].abs() > self.bounds.xi_abs {
            return false;
        }
        if theta[head..head + arma].iter().any(|v| v.abs() > self.bounds.arma_abs) {
            return false;
        }
        theta[head + arma..head + arma + gammas]
            .iter()
            .all(|&g| g <= self.bounds.gamma_max)
    }
}

// ---------------------------------------------------------------------------
// Fit results and the QR / QML pipelines
// ---------------------------------------------------------------------------

/// Outcome of a quantile-regression fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub theta_hat: QuantileParams,
    pub objective_value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub restarts_used: usize,
    /// Set when `|xi_hat| < 2 se(xi_hat)`: at xi = 0 the scale parameters
    /// drop out of the conditional quantile and only the ARMA coefficients
    /// stay identified.
    pub xi_near_zero_warning: bool,
    /// Sandwich covariance at theta_hat, when it could be computed.
    pub sandwich: Option<CovarianceEstimate>,
}

/// Minimize the check-loss objective by Nelder-Mead from a given starting
/// point. No warm start, no covariance; [`qr_fit`] wraps this with both.
pub fn nelder_mead(
    obj: &Objective,
    init: &QuantileParams,
    opts: &FitOptions,
) -> Result<FitResult> {
    validate(init, obj.orders)?;
    let transform = ParamTransform { orders: obj.orders, bounds: opts.bounds, with_xi: true };
    let z0 = transform.to_unconstrained(&init.to_vec());
    let orders = obj.orders;
    let f = |z: &[f64]| -> f64 {
        let v = transform.to_constrained(z);
        if !transform.in_box(&v) {
            return f64::INFINITY;
        }
        match QuantileParams::from_vec(orders, &v) {
            Ok(theta) => obj.value(&theta),
            Err(_) => f64::INFINITY,
        }
    };
    let max_iter = opts.max_iter.unwrap_or(5000 * orders.dim());
    let steps = transform.simplex_steps(&z0);
    let nm = minimize_with_steps(&f, &z0, &steps, opts.ftol, opts.xtol, max_iter, opts.restarts)?;

    let mut theta_vec = transform.to_constrained(&nm.x);
    let mut value = nm.fx;
    // Boundary gammas/betas are reachable only in the limit of the log
    // transform; snap tiny coefficients to zero when that does not hurt.
    let snapped: Vec<f64> = theta_vec
        .iter()
        .enumerate()
        .map(|(i, &v)| if i > 1 + orders.ar + orders.ma && v.abs() < SNAP_TO_ZERO { 0.0 } else { v })
        .collect();
    if snapped != theta_vec {
        if let Ok(theta_s) = QuantileParams::from_vec(orders, &snapped) {
            let vs = obj.value(&theta_s);
            if vs <= value + 1e-12 {
                theta_vec = snapped;
                value = vs.min(value);
            }
        }
    }
    let theta_hat = QuantileParams::from_vec(orders, &theta_vec)?;
    Ok(FitResult {
        theta_hat,
        objective_value: value,
        iterations: nm.iterations,
        converged: nm.converged,
        restarts_used: nm.restarts_used,
        xi_near_zero_warning: false,
        sandwich: None,
    })
}

/// Gaussian-QMLE of the generative parameters, with omega profiled out and
/// sandwich standard errors from the numerical Hessian and outer product of
/// per-observation scores.
#[derive(Debug, Clone)]
pub struct QmleFit {
    /// Model coefficients plus the Gaussian innovation law N(0, omega_hat).
    pub gen: GenerativeParams,
    /// Standard errors aligned with (phi0..phiP, psi, gamma1, gamma2, beta,
    /// omega).
    pub se: Vec<f64>,
    pub objective_value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub restarts_used: usize,
}

/// The Gaussian quasi-likelihood loss at fixed omega:
/// `n^-1 sum [ log(omega h_t^2) + eps_t^2 / (omega h_t^2) ]`.
fn qmle_loss_at(y: &[f64], model_vec: &[f64], orders: ModelOrders, omega: f64) -> f64 {
    let mut full = vec![0.0];
    full.extend_from_slice(model_vec);
    let theta = match QuantileParams::from_vec(orders, &full) {
        Ok(t) => t,
        Err(_) => return f64::INFINITY,
    };
    let state = match filter(y, &theta, orders) {
        Ok(s) => s,
        Err(_) => return f64::INFINITY,
    };
    let n = y.len() as f64;
    let v = state
        .eps_tilde
        .iter()
        .zip(&state.h2_tilde)
        .map(|(&e, &h2)| (omega * h2).ln() + e * e / (omega * h2))
        .sum::<f64>()
        / n;
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// Profiled omega: `n^-1 sum eps_t^2 / h_t^2` at the given coefficients.
fn qmle_profile_omega(y: &[f64], model_vec: &[f64], orders: ModelOrders) -> Option<f64> {
    let mut full = vec![0.0];
    full.extend_from_slice(model_vec);
    let theta = QuantileParams::from_vec(orders, &full).ok()?;
    let state = filter(y, &theta, orders).ok()?;
    let n = y.len() as f64;
    Some(
        state
            .eps_tilde
            .iter()
            .zip(&state.h2_tilde)
            .map(|(&e, &h2)| e * e / h2)
            .sum::<f64>()
            / n,
    )
}

pub fn qmle_fit(y: &[f64], orders: ModelOrders, opts: &FitOptions) -> Result<QmleFit> {
    let model_dim = orders.dim() - 1;
    if y.len() <= 10 * (model_dim + 1) {
        return Err(Error::InvalidInput(format!(
            "QMLE needs n > 10 (dim+1) = {}, got n = {}",
            10 * (model_dim + 1),
            y.len()
        )));
    }
    if y.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidInput("series contains NaN".into()));
    }

    // Scale-aware starting point.
    let y_mean = numeric::mean(y);
    let y_var = numeric::sample_sd(y).map(|s| s * s).unwrap_or(1.0).max(1e-12);
    let mut init = ModelParams {
        phi: std::iter::once(y_mean)
            .chain(std::iter::repeat(0.0).take(orders.ar))
            .collect(),
        psi: vec![0.0; orders.ma],
        gamma1: vec![0.2 / y_var / orders.arch.max(1) as f64; orders.arch],
        gamma2: vec![0.2 / y_var / orders.arch.max(1) as f64; orders.arch],
        beta: vec![0.5 / orders.garch.max(1) as f64; orders.garch],
    };
    init.phi[0] = y_mean * (1.0 + init.psi.iter().sum::<f64>());

    let transform = ParamTransform { orders, bounds: opts.bounds, with_xi: false };
    let init_vec = {
        let full = QuantileParams { xi: 0.0, model: init };
        full.to_vec()[1..].to_vec()
    };
    let z0 = transform.to_unconstrained(&init_vec);
    let f = |z: &[f64]| -> f64 {
        let v = transform.to_constrained(z);
        if !transform.in_box(&v) {
            return f64::INFINITY;
        }
        match qmle_profile_omega(y, &v, orders) {
            Some(omega) if omega > 0.0 => qmle_loss_at(y, &v, orders, omega),
            _ => f64::INFINITY,
        }
    };
    let max_iter = opts.max_iter.unwrap_or(5000 * (model_dim + 1));
    let steps = transform.simplex_steps(&z0);
    let nm = minimize_with_steps(&f, &z0, &steps, opts.ftol, opts.xtol, max_iter, opts.restarts)?;

    let model_vec = transform.to_constrained(&nm.x);
    let omega = qmle_profile_omega(y, &model_vec, orders)
        .ok_or_else(|| Error::Initialization("QMLE landed on an infeasible point".into()))?;
    let mut full = vec![0.0];
    full.extend_from_slice(&model_vec);
    let model = QuantileParams::from_vec(orders, &full)?.model;

    let se = qmle_sandwich_se(y, &model_vec, orders, omega);
    let gen = GenerativeParams::new(model, crate::innovations::InnovationSpec::Normal { omega })?;
    Ok(QmleFit {
        gen,
        se,
        objective_value: nm.fx,
        iterations: nm.iterations,
        converged: nm.converged,
        restarts_used: nm.restarts_used,
    })
}

/// Sandwich A^-1 B A^-1 / n for the Gaussian quasi-likelihood in
/// (coefficients, omega); A and the per-observation scores are numerical.
fn qmle_sandwich_se(y: &[f64], model_vec: &[f64], orders: ModelOrders, omega: f64) -> Vec<f64> {
    let n = y.len();
    let d = model_vec.len() + 1;
    let mut zeta = model_vec.to_vec();
    zeta.push(omega);
    // keep differentiation off the gamma/beta zero boundary
    for v in zeta.iter_mut() {
        if *v == 0.0 {
            *v = SNAP_TO_ZERO;
        }
    }
    let steps: Vec<f64> = zeta.iter().map(|v| 1e-4 * (1.0 + v.abs())).collect();

    let per_obs = |zeta: &[f64]| -> Option<Vec<f64>> {
        let (coefs, om) = zeta.split_at(zeta.len() - 1);
        let mut full = vec![0.0];
        full.extend_from_slice(coefs);
        let theta = QuantileParams::from_vec(orders, &full).ok()?;
        let state = filter(y, &theta, orders).ok()?;
        let om = om[0];
        if om <= 0.0 {
            return None;
        }
        Some(
            state
                .eps_tilde
                .iter()
                .zip(&state.h2_tilde)
                .map(|(&e, &h2)| (om * h2).ln() + e * e / (om * h2))
                .collect(),
        )
    };

    // Per-observation scores by central differences.
    let mut scores = vec![vec![0.0; d]; n];
    for j in 0..d {
        let mut up = zeta.clone();
        up[j] += steps[j];
        let mut dn = zeta.clone();
        dn[j] -= steps[j];
        let (lu, ld) = match (per_obs(&up), per_obs(&dn)) {
            (Some(a), Some(b)) => (a, b),
            _ => return vec![f64::NAN; d],
        };
        for t in 0..n {
            scores[t][j] = (lu[t] - ld[t]) / (2.0 * steps[j]);
        }
    }
    let mut b = nalgebra::DMatrix::<f64>::zeros(d, d);
    for s in &scores {
        for i in 0..d {
            for j in 0..d {
                b[(i, j)] += s[i] * s[j];
            }
        }
    }
    b /= n as f64;

    // Hessian of the mean loss by central second differences.
    let mean_loss = |zeta: &[f64]| -> f64 {
        per_obs(zeta).map_or(f64::INFINITY, |l| l.iter().sum::<f64>() / n as f64)
    };
    let mut a = nalgebra::DMatrix::<f64>::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let mut pp = zeta.clone();
            pp[i] += steps[i];
            pp[j] += steps[j];
            let mut pm = zeta.clone();
            pm[i] += steps[i];
            pm[j] -= steps[j];
            let mut mp = zeta.clone();
            mp[i] -= steps[i];
            mp[j] += steps[j];
            let mut mm = zeta.clone();
            mm[i] -= steps[i];
            mm[j] -= steps[j];
            let v = (mean_loss(&pp) - mean_loss(&pm) - mean_loss(&mp) + mean_loss(&mm))
                / (4.0 * steps[i] * steps[j]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }

    let a_inv = inference::psd_inverse(&a);
    let cov = &a_inv * &b * &a_inv / n as f64;
    (0..d).map(|i| cov[(i, i)].max(0.0).sqrt()).collect()
}

/// Full quantile-regression pipeline: Gaussian-QML warm start (unless an
/// initial point is supplied), xi seeded at the tau-quantile of the
/// standardized QML residuals, Nelder-Mead, then the sandwich covariance
/// and the xi-near-zero identifiability flag.
pub fn qr_fit(
    y: &[f64],
    tau: f64,
    orders: ModelOrders,
    init: Option<QuantileParams>,
    opts: &FitOptions,
) -> Result<FitResult> {
    let obj = Objective::new(tau, y.to_vec(), orders)?;
    let init = match init {
        Some(theta) => theta,
        None => {
            let qml = qmle_fit(y, orders, opts)?;
            let theta0 = QuantileParams { xi: 0.0, model: qml.gen.model.clone() };
            let state = filter(y, &theta0, orders)?;
            let std_resid: Vec<f64> = state
                .eps_tilde
                .iter()
                .zip(&state.h2_tilde)
                .map(|(&e, &h2)| e / h2.sqrt())
                .collect();
            QuantileParams { xi: empirical_quantile(&std_resid, tau), model: qml.gen.model }
        }
    };
    let mut fit = nelder_mead(&obj, &init, opts)?;

    // Sandwich for the identifiability flag; retry with a doubled bandwidth
    // when the kernel matrix is singular.
    let mut c_n: Option<f64> = None;
    for attempt in 0..4 {
        match inference::sandwich_cov(y, &fit.theta_hat, tau, orders, c_n) {
            Ok(cov) => {
                let se_xi = (cov.sandwich[(0, 0)].max(0.0) / y.len() as f64).sqrt();
                fit.xi_near_zero_warning = fit.theta_hat.xi.abs() < 2.0 * se_xi;
                fit.sandwich = Some(cov);
                break;
            }
            Err(Error::SingularH) if attempt < 3 => {
                let base = inference::default_bandwidth(y, &fit.theta_hat, tau, orders)
                    .unwrap_or(1e-2)
                    * opts.bandwidth_scale;
                c_n = Some(base * 2f64.powi(attempt as i32 + 1));
            }
            Err(_) => {
                // cannot certify xi away from zero
                fit.xi_near_zero_warning = true;
                break;
            }
        }
    }
    Ok(fit)
}
