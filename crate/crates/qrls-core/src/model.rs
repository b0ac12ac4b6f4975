//! Parameter containers for ARMA(P,Q)-AGARCH(p,q) models, validity checks,
//! and power-series expansions of the model's rational filters.
//!
//! The AGARCH part is the reparameterized form with volatility intercept
//! fixed to one: `h_t^2 = 1 + sum gamma1_i (eps_{t-i}^+)^2
//! + sum gamma2_i (eps_{t-i}^-)^2 + sum beta_j h_{t-j}^2`, and the
//! innovations carry the free variance `omega`.

use nalgebra::DMatrix;
use serde::de::{self, MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::innovations::InnovationSpec;
use crate::numeric;
use crate::{Error, Result};

/// Tolerance for the `|root| > 1` checks on characteristic polynomials.
const ROOT_TOL: f64 = 1e-8;

/// Integer tuple (P, Q, p, q) fixing the ARMA-AGARCH shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelOrders {
    /// AR order P.
    #[serde(rename = "P")]
    pub ar: usize,
    /// MA order Q.
    #[serde(rename = "Q")]
    pub ma: usize,
    /// GARCH-lag order p (number of beta coefficients).
    #[serde(rename = "p")]
    pub garch: usize,
    /// ARCH-lag order q (number of gamma coefficients per sign).
    #[serde(rename = "q")]
    pub arch: usize,
}

impl ModelOrders {
    pub fn new(ar: usize, ma: usize, garch: usize, arch: usize) -> Self {
        Self { ar, ma, garch, arch }
    }

    /// Length of the quantile parameter vector (xi, phi0..phiP, psi, gamma1,
    /// gamma2, beta).
    pub fn dim(&self) -> usize {
        2 + self.ar + self.ma + 2 * self.arch + self.garch
    }

    /// True when the model has a dynamic scale part. Without one, xi and
    /// phi0 enter the conditional quantile only through their sum and are
    /// not separately identifiable.
    pub fn has_scale_part(&self) -> bool {
        self.garch > 0 || self.arch > 0
    }

    /// Position of xi in the canonical parameter vector.
    pub fn idx_xi(&self) -> usize {
        0
    }

    /// Position of phi_j (j = 0..=P).
    pub fn idx_phi(&self, j: usize) -> usize {
        1 + j
    }

    /// Position of psi_i (i = 1..=Q).
    pub fn idx_psi(&self, i: usize) -> usize {
        1 + self.ar + i
    }

    /// Position of gamma1_i (i = 1..=q).
    pub fn idx_gamma1(&self, i: usize) -> usize {
        1 + self.ar + self.ma + i
    }

    /// Position of gamma2_i (i = 1..=q).
    pub fn idx_gamma2(&self, i: usize) -> usize {
        1 + self.ar + self.ma + self.arch + i
    }

    /// Position of beta_j (j = 1..=p).
    pub fn idx_beta(&self, j: usize) -> usize {
        1 + self.ar + self.ma + 2 * self.arch + j
    }

    /// Canonical parameter names, in vector order.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = vec!["xi".to_string()];
        names.extend((0..=self.ar).map(|j| format!("phi{j}")));
        names.extend((1..=self.ma).map(|i| format!("psi{i}")));
        names.extend((1..=self.arch).map(|i| format!("gamma1{i}")));
        names.extend((1..=self.arch).map(|i| format!("gamma2{i}")));
        names.extend((1..=self.garch).map(|j| format!("beta{j}")));
        names
    }
}

/// ARMA and AGARCH coefficients without the innovation quantile: the model
/// part shared between quantile regression and QML estimation.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// AR coefficients phi_0..phi_P; `phi[0]` is the intercept.
    pub phi: Vec<f64>,
    /// MA coefficients psi_1..psi_Q.
    pub psi: Vec<f64>,
    /// ARCH coefficients gamma_11..gamma_1q on squared positive shocks.
    pub gamma1: Vec<f64>,
    /// ARCH coefficients gamma_21..gamma_2q on squared negative shocks.
    pub gamma2: Vec<f64>,
    /// GARCH coefficients beta_1..beta_p.
    pub beta: Vec<f64>,
}

impl ModelParams {
    pub fn orders(&self) -> ModelOrders {
        ModelOrders {
            ar: self.phi.len().saturating_sub(1),
            ma: self.psi.len(),
            garch: self.beta.len(),
            arch: self.gamma1.len(),
        }
    }

    /// phi(1) = 1 - sum phi_j (intercept excluded).
    pub fn phi_at_one(&self) -> f64 {
        1.0 - self.phi[1..].iter().sum::<f64>()
    }

    /// psi(1) = 1 + sum psi_i.
    pub fn psi_at_one(&self) -> f64 {
        1.0 + self.psi.iter().sum::<f64>()
    }

    /// beta(1) = 1 - sum beta_j.
    pub fn beta_at_one(&self) -> f64 {
        1.0 - self.beta.iter().sum::<f64>()
    }

    fn flat_values(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.orders().dim() - 1);
        v.extend(&self.phi);
        v.extend(&self.psi);
        v.extend(&self.gamma1);
        v.extend(&self.gamma2);
        v.extend(&self.beta);
        v
    }

    fn from_flat(orders: ModelOrders, values: &[f64]) -> Result<Self> {
        let expect = orders.dim() - 1;
        if values.len() != expect {
            return Err(Error::DimensionMismatch(format!(
                "expected {expect} model coefficients, got {}",
                values.len()
            )));
        }
        let (p_, q_) = (orders.garch, orders.arch);
        let mut it = values.iter().copied();
        Ok(Self {
            phi: (&mut it).take(orders.ar + 1).collect(),
            psi: (&mut it).take(orders.ma).collect(),
            gamma1: (&mut it).take(q_).collect(),
            gamma2: (&mut it).take(q_).collect(),
            beta: (&mut it).take(p_).collect(),
        })
    }
}

/// Full parameter vector theta = (xi, phi, psi, gamma1, gamma2, beta)
/// estimated by quantile regression.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileParams {
    /// Innovation quantile xi(tau), in the same units as u_t.
    pub xi: f64,
    /// ARMA-AGARCH coefficients.
    pub model: ModelParams,
}

impl QuantileParams {
    pub fn new(
        xi: f64,
        phi: Vec<f64>,
        psi: Vec<f64>,
        gamma1: Vec<f64>,
        gamma2: Vec<f64>,
        beta: Vec<f64>,
    ) -> Self {
        Self { xi, model: ModelParams { phi, psi, gamma1, gamma2, beta } }
    }

    pub fn orders(&self) -> ModelOrders {
        self.model.orders()
    }

    /// Flatten to the canonical vector (xi, phi0..phiP, psi, gamma1, gamma2,
    /// beta).
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![self.xi];
        v.extend(self.model.flat_values());
        v
    }

    /// Rebuild from the canonical vector; the length must match `orders`.
    pub fn from_vec(orders: ModelOrders, values: &[f64]) -> Result<Self> {
        if values.len() != orders.dim() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} parameters for orders ({},{},{},{}), got {}",
                orders.dim(),
                orders.ar,
                orders.ma,
                orders.garch,
                orders.arch,
                values.len()
            )));
        }
        Ok(Self { xi: values[0], model: ModelParams::from_flat(orders, &values[1..])? })
    }
}

/// Generative model: coefficients plus the innovation law. What the
/// simulator and the Gaussian QMLE operate on; xi is not a generative
/// quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerativeParams {
    pub model: ModelParams,
    pub innovation: InnovationSpec,
}

impl GenerativeParams {
    pub fn new(model: ModelParams, innovation: InnovationSpec) -> Result<Self> {
        if innovation.omega() <= 0.0 {
            return Err(Error::Domain(format!(
                "innovation variance omega must be positive, got {}",
                innovation.omega()
            )));
        }
        Ok(Self { model, innovation })
    }

    /// Innovation variance omega = E u_t^2.
    pub fn omega(&self) -> f64 {
        self.innovation.omega()
    }

    /// The quantile-regression parameter vector implied at level `tau`:
    /// theta(tau) = (F_u^-1(tau), model part).
    pub fn quantile_params(&self, tau: f64) -> Result<QuantileParams> {
        let xi = self.innovation.quantile(tau)?;
        Ok(QuantileParams { xi, model: self.model.clone() })
    }
}

/// Truncated coefficients of the model's infinite-order representations.
///
/// `c1`, `c2` solve `sum c_lk z^k = gamma_l(z) / beta(z)` (the ARCH(inf)
/// form of the squared scale, intercept `c0 = beta(1)^-1`), and `d` solves
/// `1 + sum d_k z^k = phi(z) / psi(z)` (the AR(inf) form of the location).
#[derive(Debug, Clone, PartialEq)]
pub struct FilterCoeffs {
    /// ARCH(inf) intercept `(1 - sum beta_j)^-1`.
    pub c0: f64,
    /// Coefficients on squared positive shocks, k = 1..=K.
    pub c1: Vec<f64>,
    /// Coefficients on squared negative shocks, k = 1..=K.
    pub c2: Vec<f64>,
    /// AR(inf) coefficients d_k, k = 1..=K.
    pub d: Vec<f64>,
    /// Truncation length K.
    pub truncation: usize,
}

/// Check theta against the model constraints.
///
/// Dimension mismatches are structural errors; everything else reports the
/// first violated constraint by name ("gamma nonneg", "beta nonneg",
/// "beta sum", "psi roots", "phi unit root").
pub fn validate(theta: &QuantileParams, orders: ModelOrders) -> Result<()> {
    let m = &theta.model;
    if m.phi.len() != orders.ar + 1
        || m.psi.len() != orders.ma
        || m.gamma1.len() != orders.arch
        || m.gamma2.len() != orders.arch
        || m.beta.len() != orders.garch
    {
        return Err(Error::DimensionMismatch(format!(
            "parameter lengths (phi {}, psi {}, gamma1 {}, gamma2 {}, beta {}) do not match orders ({},{},{},{})",
            m.phi.len(),
            m.psi.len(),
            m.gamma1.len(),
            m.gamma2.len(),
            m.beta.len(),
            orders.ar,
            orders.ma,
            orders.garch,
            orders.arch,
        )));
    }
    let all = theta.to_vec();
    if all.iter().any(|x| !x.is_finite()) {
        return Err(Error::Constraint("finite"));
    }
    if m.gamma1.iter().chain(&m.gamma2).any(|&g| g < 0.0) {
        return Err(Error::Constraint("gamma nonneg"));
    }
    if m.beta.iter().any(|&b| b < 0.0) {
        return Err(Error::Constraint("beta nonneg"));
    }
    if m.beta.iter().sum::<f64>() >= 1.0 {
        return Err(Error::Constraint("beta sum"));
    }
    if !poly_roots_outside_unit_disc(&m.psi) {
        return Err(Error::Constraint("psi roots"));
    }
    // The filter initials divide by phi(1); unit-root AR parts are out of
    // scope.
    if m.phi_at_one().abs() <= ROOT_TOL {
        return Err(Error::Constraint("phi unit root"));
    }
    Ok(())
}

/// True when `1 + a_1 z + ... + a_k z^k` has no zeros in the closed unit
/// disc, checked through the spectral radius of the companion matrix of the
/// reciprocal polynomial.
fn poly_roots_outside_unit_disc(coeffs: &[f64]) -> bool {
    let k = coeffs.len();
    if k == 0 {
        return true;
    }
    let mut comp = DMatrix::<f64>::zeros(k, k);
    for (i, &a) in coeffs.iter().enumerate() {
        comp[(0, i)] = -a;
    }
    for i in 1..k {
        comp[(i, i - 1)] = 1.0;
    }
    let radius = comp
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    radius < 1.0 - ROOT_TOL
}

/// Default truncation for [`FilterCoeffs`]: the smallest K with
/// `(sum beta)^K < 1e-12`, capped at 10^4 and floored so every finite-order
/// coefficient is retained.
pub fn default_truncation(theta: &QuantileParams, orders: ModelOrders) -> usize {
    let sb: f64 = theta.model.beta.iter().sum();
    let floor = orders.arch.max(orders.ar + orders.ma).max(1);
    if sb <= 0.0 {
        return floor;
    }
    let k = (-12.0 * std::f64::consts::LN_10 / sb.ln()).ceil() as usize;
    k.clamp(floor, 10_000)
}

/// ARCH(inf) coefficients `c_lk` for k = 1..=K by long division of
/// `gamma_l(z) / beta(z)`, plus the intercept c0.
pub fn arch_infty_coeffs(
    theta: &QuantileParams,
    orders: ModelOrders,
    truncation: usize,
) -> Result<FilterCoeffs> {
    validate(theta, orders)?;
    if truncation == 0 {
        return Err(Error::Domain("truncation K must be >= 1".into()));
    }
    let m = &theta.model;
    let beta_sum: f64 = m.beta.iter().sum();
    if beta_sum >= 1.0 {
        return Err(Error::NonstationaryScale(beta_sum));
    }
    let series = |gamma: &[f64]| -> Vec<f64> {
        let mut c = vec![0.0; truncation + 1]; // c[0] unused
        for k in 1..=truncation {
            let mut v = if k <= gamma.len() { gamma[k - 1] } else { 0.0 };
            for (j, &b) in m.beta.iter().enumerate() {
                let lag = j + 1;
                if lag < k {
                    v += b * c[k - lag];
                }
            }
            c[k] = v;
        }
        c.remove(0);
        c
    };
    Ok(FilterCoeffs {
        c0: 1.0 / m.beta_at_one(),
        c1: series(&m.gamma1),
        c2: series(&m.gamma2),
        d: Vec::new(),
        truncation,
    })
}

/// AR(inf) coefficients `d_k` for k = 1..=K from
/// `1 + sum d_k z^k = phi(z) / psi(z)`.
pub fn ar_infty_coeffs(
    theta: &QuantileParams,
    orders: ModelOrders,
    truncation: usize,
) -> Result<FilterCoeffs> {
    validate(theta, orders)?;
    if truncation == 0 {
        return Err(Error::Domain("truncation K must be >= 1".into()));
    }
    let m = &theta.model;
    let mut d = vec![0.0; truncation + 1];
    d[0] = 1.0;
    for k in 1..=truncation {
        // coefficient of z^k in phi(z) = 1 - sum phi_j z^j
        let mut v = if k <= m.phi.len() - 1 { -m.phi[k] } else { 0.0 };
        for (i, &psi) in m.psi.iter().enumerate() {
            let lag = i + 1;
            if lag <= k {
                v -= psi * d[k - lag];
            }
        }
        d[k] = v;
    }
    d.remove(0);
    Ok(FilterCoeffs { c0: 1.0 / m.beta_at_one(), c1: Vec::new(), c2: Vec::new(), d, truncation })
}

/// Monte-Carlo estimate of `E (beta_1 + gamma_11 (u^+)^2
/// + gamma_21 (u^-)^2)^m` for AGARCH(1,1) generative parameters, with the
/// standard error of the estimate.
///
/// Finite values below one certify strict stationarity with
/// `E |eps_t|^{2m} < infinity`.
pub fn moment_condition(
    gen: &GenerativeParams,
    m: f64,
    mc_reps: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let orders = gen.model.orders();
    if orders.garch != 1 || orders.arch != 1 {
        return Err(Error::UnsupportedOrders(format!(
            "moment_condition requires AGARCH(1,1); got (p,q) = ({},{})",
            orders.garch, orders.arch
        )));
    }
    if mc_reps < 2 {
        return Err(Error::Domain("mc_reps must be >= 2".into()));
    }
    let beta1 = gen.model.beta[0];
    let g1 = gen.model.gamma1[0];
    let g2 = gen.model.gamma2[0];
    let u = gen.innovation.sample(mc_reps, seed)?;
    let xs: Vec<f64> = u
        .iter()
        .map(|&ut| {
            let up = ut.max(0.0);
            let un = (-ut).max(0.0);
            (beta1 + g1 * up * up + g2 * un * un).powf(m)
        })
        .collect();
    let mean = numeric::mean(&xs);
    let se = numeric::sample_sd(&xs).unwrap_or(0.0) / (mc_reps as f64).sqrt();
    Ok((mean, se))
}

// ---------------------------------------------------------------------------
// Flat JSON codec
//
// Parameters serialize as a flat object in canonical key order:
// xi, phi0..phiP, psi1..psiQ, gamma11..gamma1q, gamma21..gamma2q,
// beta1..betap, omega (generative only), family/nu/skew (generative only).
// ---------------------------------------------------------------------------

fn serialize_model_entries<M: SerializeMap>(m: &ModelParams, map: &mut M) -> std::result::Result<(), M::Error> {
    for (j, v) in m.phi.iter().enumerate() {
        map.serialize_entry(&format!("phi{j}"), v)?;
    }
    for (i, v) in m.psi.iter().enumerate() {
        map.serialize_entry(&format!("psi{}", i + 1), v)?;
    }
    for (i, v) in m.gamma1.iter().enumerate() {
        map.serialize_entry(&format!("gamma1{}", i + 1), v)?;
    }
    for (i, v) in m.gamma2.iter().enumerate() {
        map.serialize_entry(&format!("gamma2{}", i + 1), v)?;
    }
    for (j, v) in m.beta.iter().enumerate() {
        map.serialize_entry(&format!("beta{}", j + 1), v)?;
    }
    Ok(())
}

impl Serialize for QuantileParams {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let n = self.orders().dim();
        let mut map = serializer.serialize_map(Some(n))?;
        map.serialize_entry("xi", &self.xi)?;
        serialize_model_entries(&self.model, &mut map)?;
        map.end()
    }
}

impl Serialize for GenerativeParams {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(None)?;
        serialize_model_entries(&self.model, &mut map)?;
        map.serialize_entry("omega", &self.omega())?;
        match &self.innovation {
            InnovationSpec::Normal { .. } => map.serialize_entry("family", "normal")?,
            InnovationSpec::SkewedT { nu, skew, .. } => {
                map.serialize_entry("family", "skewed_t")?;
                map.serialize_entry("nu", nu)?;
                map.serialize_entry("skew", skew)?;
            }
        }
        map.end()
    }
}

/// Indexed keys ("phi0", "psi1", ...) collected from a flat map.
#[derive(Default)]
struct FlatFields {
    xi: Option<f64>,
    omega: Option<f64>,
    family: Option<String>,
    nu: Option<f64>,
    skew: Option<f64>,
    phi: Vec<(usize, f64)>,
    psi: Vec<(usize, f64)>,
    gamma1: Vec<(usize, f64)>,
    gamma2: Vec<(usize, f64)>,
    beta: Vec<(usize, f64)>,
}

impl FlatFields {
    fn insert(&mut self, key: &str, value: f64) -> std::result::Result<(), String> {
        let push = |ks: &mut Vec<(usize, f64)>, idx: &str| -> std::result::Result<(), String> {
            let i: usize = idx.parse().map_err(|_| format!("bad parameter key index in `{key}`"))?;
            ks.push((i, value));
            Ok(())
        };
        if key == "xi" {
            self.xi = Some(value);
        } else if key == "omega" {
            self.omega = Some(value);
        } else if key == "nu" {
            self.nu = Some(value);
        } else if key == "skew" {
            self.skew = Some(value);
        } else if let Some(i) = key.strip_prefix("gamma1") {
            push(&mut self.gamma1, i)?;
        } else if let Some(i) = key.strip_prefix("gamma2") {
            push(&mut self.gamma2, i)?;
        } else if let Some(i) = key.strip_prefix("phi") {
            push(&mut self.phi, i)?;
        } else if let Some(i) = key.strip_prefix("psi") {
            push(&mut self.psi, i)?;
        } else if let Some(i) = key.strip_prefix("beta") {
            push(&mut self.beta, i)?;
        } else {
            return Err(format!("unknown parameter key `{key}`"));
        }
        Ok(())
    }

    /// Sorted coefficient vector from indexed keys; indices must be
    /// contiguous starting at `start`.
    fn dense(mut ks: Vec<(usize, f64)>, name: &str, start: usize) -> std::result::Result<Vec<f64>, String> {
        ks.sort_by_key(|&(i, _)| i);
        for (pos, &(i, _)) in ks.iter().enumerate() {
            if i != start + pos {
                return Err(format!("non-contiguous `{name}` indices (missing {name}{})", start + pos));
            }
        }
        Ok(ks.into_iter().map(|(_, v)| v).collect())
    }

    fn into_model(self) -> std::result::Result<(Option<f64>, ModelParams, Option<f64>, Option<String>, Option<f64>, Option<f64>), String> {
        let phi = Self::dense(self.phi, "phi", 0)?;
        if phi.is_empty() {
            return Err("missing `phi0`".into());
        }
        let model = ModelParams {
            phi,
            psi: Self::dense(self.psi, "psi", 1)?,
            gamma1: Self::dense(self.gamma1, "gamma1", 1)?,
            gamma2: Self::dense(self.gamma2, "gamma2", 1)?,
            beta: Self::dense(self.beta, "beta", 1)?,
        };
        Ok((self.xi, model, self.omega, self.family, self.nu, self.skew))
    }
}

/// Accepts both float and integer literals, so flat parameter maps read
/// identically from JSON and TOML.
#[derive(Deserialize)]
#[serde(untagged)]
enum Number {
    Float(f64),
    Int(i64),
}

impl Number {
    fn get(self) -> f64 {
        match self {
            Number::Float(v) => v,
            Number::Int(v) => v as f64,
        }
    }
}

struct FlatVisitor;

impl<'de> Visitor<'de> for FlatVisitor {
    type Value = FlatFields;

    fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
        f.write_str("a flat parameter object with keys xi, phi0.., psi1.., gamma11.., gamma21.., beta1.., omega, family")
    }

    fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> std::result::Result<FlatFields, A::Error> {
        let mut fields = FlatFields::default();
        while let Some(key) = access.next_key::<String>()? {
            if key == "family" {
                fields.family = Some(access.next_value::<String>()?);
            } else if key == "schema" {
                let _ = access.next_value::<de::IgnoredAny>()?;
            } else {
                let value = access.next_value::<Number>()?.get();
                fields.insert(&key, value).map_err(de::Error::custom)?;
            }
        }
        Ok(fields)
    }
}

impl<'de> Deserialize<'de> for QuantileParams {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let fields = deserializer.deserialize_map(FlatVisitor)?;
        let (xi, model, ..) = fields.into_model().map_err(de::Error::custom)?;
        let xi = xi.ok_or_else(|| de::Error::custom("missing `xi`"))?;
        Ok(QuantileParams { xi, model })
    }
}

impl<'de> Deserialize<'de> for GenerativeParams {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let fields = deserializer.deserialize_map(FlatVisitor)?;
        let (_, model, omega, family, nu, skew) = fields.into_model().map_err(de::Error::custom)?;
        let omega = omega.ok_or_else(|| de::Error::custom("missing `omega`"))?;
        let innovation = match family.as_deref().unwrap_or("normal") {
            "normal" => InnovationSpec::Normal { omega },
            "skewed_t" => InnovationSpec::SkewedT {
                nu: nu.ok_or_else(|| de::Error::custom("skewed_t requires `nu`"))?,
                skew: skew.ok_or_else(|| de::Error::custom("skewed_t requires `skew`"))?,
                omega,
            },
            other => return Err(de::Error::custom(format!("unknown innovation family `{other}`"))),
        };
        GenerativeParams::new(model, innovation).map_err(de::Error::custom)
    }
}
