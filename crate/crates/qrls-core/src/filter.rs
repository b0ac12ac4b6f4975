//! Truncated conditional-quantile filter and its analytical gradient.
//!
//! Given observations and a parameter vector theta, the filter runs the
//! residual and squared-scale recursions with fixed initial values
//! (`eps = 0`, `Y = phi(1)^-1 phi_0`, `h^2 = beta(1)^-1` for t <= 0) and
//! produces `q_t(theta) = Y_t - eps_t + xi h_t`, the computable
//! approximation of the conditional tau-quantile. The gradient is obtained
//! by differentiating the same recursions forward in time, including the
//! dependence of the initial values on theta, so it is the exact derivative
//! of the computed `q_t` and matches finite differences at every t.

use crate::model::{validate, ModelOrders, QuantileParams};
use crate::{Error, Result};

/// Dense n x d gradient storage, row t-1 holding d q_t / d theta.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    data: Vec<f64>,
    dim: usize,
}

impl Gradients {
    fn zeros(n: usize, dim: usize) -> Self {
        Self { data: vec![0.0; n * dim], dim }
    }

    /// Gradient of q_t with respect to theta, zero-based t.
    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    fn row_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Output of the filter: residuals, squared scales, conditional quantiles,
/// and optionally the gradient of each quantile.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    /// eps_t(phi), t = 1..=n.
    pub eps_tilde: Vec<f64>,
    /// h_t^2(phi, theta), always >= 1.
    pub h2_tilde: Vec<f64>,
    /// q_t(theta).
    pub q_tilde: Vec<f64>,
    /// d q_t / d theta when requested.
    pub grad_q: Option<Gradients>,
}

impl FilterState {
    pub fn len(&self) -> usize {
        self.q_tilde.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q_tilde.is_empty()
    }

    /// h_t, the conditional scale.
    pub fn h_at(&self, t: usize) -> f64 {
        self.h2_tilde[t].sqrt()
    }
}

/// Run the quantile filter, values only.
pub fn filter(y: &[f64], theta: &QuantileParams, orders: ModelOrders) -> Result<FilterState> {
    filter_impl(y, theta, orders, false)
}

/// Run the quantile filter and accumulate the analytical gradient.
pub fn filter_with_gradient(
    y: &[f64],
    theta: &QuantileParams,
    orders: ModelOrders,
) -> Result<FilterState> {
    filter_impl(y, theta, orders, true)
}

/// Long-presample approximation of the untruncated quantile process.
///
/// Runs the filter on the extended series and discards the first
/// `presample` outputs; the result approximates `q_t(theta)` for the
/// retained points with error shrinking geometrically in the presample
/// length. With `presample = 0` this is exactly [`filter`].
pub fn oracle_q_exact(
    y_extended: &[f64],
    presample: usize,
    theta: &QuantileParams,
    orders: ModelOrders,
) -> Result<Vec<f64>> {
    if presample >= y_extended.len() {
        return Err(Error::InvalidInput(format!(
            "presample {presample} leaves no observations out of {}",
            y_extended.len()
        )));
    }
    let state = filter(y_extended, theta, orders)?;
    Ok(state.q_tilde[presample..].to_vec())
}

fn filter_impl(
    y: &[f64],
    theta: &QuantileParams,
    orders: ModelOrders,
    with_grad: bool,
) -> Result<FilterState> {
    validate(theta, orders)?;
    if y.is_empty() {
        return Err(Error::InvalidInput("series must have length >= 1".into()));
    }
    if y.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidInput("series contains NaN".into()));
    }

    let m = &theta.model;
    let xi = theta.xi;
    let n = y.len();
    let (np, nq) = (orders.ar, orders.ma);
    let (ng, na) = (orders.garch, orders.arch);
    let dim = orders.dim();

    let phi0 = m.phi[0];
    let inv_phi1 = 1.0 / m.phi_at_one();
    let y_init = phi0 * inv_phi1;
    let h2_init = 1.0 / m.beta_at_one();

    let mut eps = Vec::with_capacity(n);
    let mut h2 = Vec::with_capacity(n);
    let mut q = Vec::with_capacity(n);

    // t is 1-based; presample values are the fixed initials.
    let y_at = |t: isize| -> f64 {
        if t >= 1 {
            y[(t - 1) as usize]
        } else {
            y_init
        }
    };

    for t in 1..=n as isize {
        let i = (t - 1) as usize;
        let eps_at = |s: isize| -> f64 {
            if s >= 1 {
                eps[(s - 1) as usize]
            } else {
                0.0
            }
        };
        let h2_at = |s: isize| -> f64 {
            if s >= 1 {
                h2[(s - 1) as usize]
            } else {
                h2_init
            }
        };

        let mut e = y[i] - phi0;
        for j in 1..=np {
            e -= m.phi[j] * y_at(t - j as isize);
        }
        for k in 1..=nq {
            e -= m.psi[k - 1] * eps_at(t - k as isize);
        }

        let mut h2t = 1.0;
        for k in 1..=na {
            let el = eps_at(t - k as isize);
            let plus = el.max(0.0);
            let minus = (-el).max(0.0);
            h2t += m.gamma1[k - 1] * plus * plus + m.gamma2[k - 1] * minus * minus;
        }
        for j in 1..=ng {
            h2t += m.beta[j - 1] * h2_at(t - j as isize);
        }

        eps.push(e);
        h2.push(h2t);
        q.push(y[i] - e + xi * h2t.sqrt());
    }

    if !with_grad {
        return Ok(FilterState { eps_tilde: eps, h2_tilde: h2, q_tilde: q, grad_q: None });
    }

    // Gradient pass: differentiate the recursions forward. Initial-value
    // derivatives: d(eps)=0 for t<=0; d(h^2)/d(beta_j) = h2_init^2 for t<=0;
    // the presample Y stand-in depends on phi0 and phi_j.
    let mut deps = Gradients::zeros(n, dim);
    let mut dh2 = Gradients::zeros(n, dim);
    let mut dq = Gradients::zeros(n, dim);

    let dy_init_dphi0 = inv_phi1;
    let dy_init_dphi = phi0 * inv_phi1 * inv_phi1;
    let dh2_init_dbeta = h2_init * h2_init;

    let idx_phi0 = orders.idx_phi(0);
    let n_loc = 1 + np + nq; // columns 1..=n_loc carry phi/psi derivatives

    for t in 1..=n as isize {
        let i = (t - 1) as usize;
        let mut deps_t = vec![0.0; dim];
        let mut dh2_t = vec![0.0; dim];

        // d eps_t / d phi, d eps_t / d psi
        deps_t[idx_phi0] = -1.0;
        for j in 1..=np {
            if t - (j as isize) < 1 {
                // lagged Y is the stand-in phi0/phi(1)
                deps_t[idx_phi0] -= m.phi[j] * dy_init_dphi0;
            }
        }
        for jm in 1..=np {
            let col = orders.idx_phi(jm);
            deps_t[col] = -y_at(t - jm as isize);
            for j in 1..=np {
                if t - (j as isize) < 1 {
                    deps_t[col] -= m.phi[j] * dy_init_dphi;
                }
            }
        }
        for im in 1..=nq {
            let col = orders.idx_psi(im);
            let s = t - im as isize;
            deps_t[col] = if s >= 1 { -eps[(s - 1) as usize] } else { 0.0 };
        }
        for k in 1..=nq {
            let s = t - k as isize;
            if s >= 1 {
                let prev = deps.row((s - 1) as usize);
                let psi_k = m.psi[k - 1];
                for col in 1..=n_loc {
                    deps_t[col] -= psi_k * prev[col];
                }
            }
        }

        // d h_t^2 / d theta
        for k in 1..=na {
            let s = t - k as isize;
            let el = if s >= 1 { eps[(s - 1) as usize] } else { 0.0 };
            let plus = el.max(0.0);
            let minus = (-el).max(0.0);
            // squared hinges have continuous first derivatives, so no
            // tie-break is needed at eps = 0
            if s >= 1 {
                let w = 2.0 * (m.gamma1[k - 1] * plus - m.gamma2[k - 1] * minus);
                if w != 0.0 {
                    let prev = deps.row((s - 1) as usize);
                    for col in 1..=n_loc {
                        dh2_t[col] += w * prev[col];
                    }
                }
            }
            dh2_t[orders.idx_gamma1(k)] += plus * plus;
            dh2_t[orders.idx_gamma2(k)] += minus * minus;
        }
        for jm in 1..=ng {
            let s = t - jm as isize;
            dh2_t[orders.idx_beta(jm)] += if s >= 1 { h2[(s - 1) as usize] } else { h2_init };
        }
        for j in 1..=ng {
            let s = t - j as isize;
            let beta_j = m.beta[j - 1];
            if s >= 1 {
                let prev = dh2.row((s - 1) as usize);
                for col in 1..dim {
                    dh2_t[col] += beta_j * prev[col];
                }
            } else {
                for jm in 1..=ng {
                    dh2_t[orders.idx_beta(jm)] += beta_j * dh2_init_dbeta;
                }
            }
        }

        // d q_t = -d eps_t + xi * d h_t with d h_t = d h_t^2 / (2 h_t)
        let ht = h2[i].sqrt();
        let half_xi_over_h = xi / (2.0 * ht);
        {
            let out = dq.row_mut(i);
            out[orders.idx_xi()] = ht;
            for col in 1..dim {
                out[col] = -deps_t[col] + half_xi_over_h * dh2_t[col];
            }
        }
        deps.row_mut(i).copy_from_slice(&deps_t);
        dh2.row_mut(i).copy_from_slice(&dh2_t);
    }

    Ok(FilterState { eps_tilde: eps, h2_tilde: h2, q_tilde: q, grad_q: Some(dq) })
}
