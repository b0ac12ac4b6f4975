//! `qrls`: seeded, reproducible command-line runs of the ARMA-AGARCH
//! quantile-regression toolkit. Subcommands: simulate, fit, qmle, asd,
//! mc-study, tau-grid. Exit codes: 0 success, 1 user error, 2 numerical
//! failure.

mod io;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use qrls_core::estimation::{qmle_fit, qr_fit, FitOptions};
use qrls_core::experiments::{run_mc_study, tau_grid_fit, McStudyConfig};
use qrls_core::inference::theoretical_asd;
use qrls_core::model::{GenerativeParams, ModelOrders, QuantileParams};
use qrls_core::simulate::{simulate_path, SimConfig};

use io::{CliError, Manifest};

#[derive(Parser, Serialize)]
#[command(name = "qrls", version, about = "Quantile regression for ARMA-AGARCH location-scale time series")]
struct Cli {
    /// Worker threads for Monte-Carlo and grid runs (also env QRLS_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Serialize)]
enum Command {
    /// Simulate a stationary path and write t,Y,eps,h2 as CSV.
    Simulate(SimulateArgs),
    /// Quantile-regression fit at one tau.
    Fit(FitArgs),
    /// Gaussian-QML fit with sandwich standard errors.
    Qmle(QmleArgs),
    /// Theoretical asymptotic covariance and ASDs at given parameters.
    Asd(AsdArgs),
    /// Monte-Carlo estimator study (bias / SD / ASD / RMSE ratios).
    McStudy(McStudyArgs),
    /// Fit a grid of taus with shared warm start and confidence intervals.
    TauGrid(TauGridArgs),
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    /// Generative parameters: flat JSON with omega and family keys.
    #[arg(long, required_unless_present = "design")]
    params: Option<PathBuf>,
    /// Built-in simulation design instead of --params: "a" (normal) or "b"
    /// (skewed t4).
    #[arg(long)]
    design: Option<String>,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    burnin: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct FitArgs {
    /// Input CSV: single numeric column or a `Y` header column.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    tau: f64,
    /// Model orders P,Q,p,q.
    #[arg(long, value_parser = parse_orders)]
    orders: ModelOrders,
    /// Optional starting point (flat JSON with xi); defaults to the
    /// Gaussian-QML warm start.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Echoed for provenance; the fit itself is deterministic.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Attach sandwich standard errors to the output.
    #[arg(long)]
    with_se: bool,
    /// Treat the input as price levels and fit 100 * diff(log) returns.
    #[arg(long)]
    log_returns_x100: bool,
    /// Multiplier on the default kernel bandwidth sd(resid) n^(-1/3).
    #[arg(long, default_value_t = 1.0)]
    bandwidth_scale: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct QmleArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_parser = parse_orders)]
    orders: ModelOrders,
    #[arg(long)]
    log_returns_x100: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct AsdArgs {
    /// Probability level; defaults to the tau stored in --fit.
    #[arg(long, required_unless_present = "fit")]
    tau: Option<f64>,
    /// Generative parameters (flat JSON with omega/family).
    #[arg(long, required_unless_present = "fit")]
    gen: Option<PathBuf>,
    /// Reuse orders/tau/coefficients from a fit output; innovation then
    /// comes from --gen or --family/--omega[/--nu/--skew].
    #[arg(long)]
    fit: Option<PathBuf>,
    #[arg(long)]
    family: Option<String>,
    #[arg(long)]
    omega: Option<f64>,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    skew: Option<f64>,
    /// Override the innovation quantile; defaults to F_u^-1(tau) (or the
    /// fitted xi with --fit).
    #[arg(long)]
    xi: Option<f64>,
    #[arg(long, default_value_t = 100_000)]
    path_len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sample size the reported ASDs refer to.
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct McStudyArgs {
    /// Study configuration, JSON or TOML by extension.
    #[arg(long)]
    config: PathBuf,
    /// Long-format CSV (tau,param,stat,value); metadata goes to
    /// <out>.meta.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct TauGridArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_parser = parse_orders)]
    orders: ModelOrders,
    /// Comma-separated grid; defaults to 0.025, 0.05, ..., 0.975.
    #[arg(long, value_parser = parse_taus)]
    taus: Option<Taus>,
    #[arg(long, default_value_t = 0.9)]
    level: f64,
    #[arg(long)]
    log_returns_x100: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Serialize)]
struct Taus(Vec<f64>);

fn parse_orders(s: &str) -> Result<ModelOrders, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 4 {
        return Err("expected P,Q,p,q".into());
    }
    let nums: Vec<usize> = parts
        .iter()
        .map(|p| p.trim().parse().map_err(|_| format!("bad order `{p}`")))
        .collect::<Result<_, String>>()?;
    Ok(ModelOrders::new(nums[0], nums[1], nums[2], nums[3]))
}

fn parse_taus(s: &str) -> Result<Taus, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse().map_err(|_| format!("bad tau `{p}`")))
        .collect::<Result<_, String>>()?;
    Ok(Taus(v))
}

fn default_tau_grid() -> Vec<f64> {
    (1..=39).map(|i| i as f64 * 0.025).collect()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    let threads = cli
        .threads
        .or_else(|| std::env::var("QRLS_THREADS").ok().and_then(|v| v.parse().ok()));
    if let Some(t) = threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build_global();
    }

    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::User(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let started = Instant::now();
    match &cli.command {
        Command::Simulate(a) => simulate_cmd(a, started),
        Command::Fit(a) => fit_cmd(a, started),
        Command::Qmle(a) => qmle_cmd(a, started),
        Command::Asd(a) => asd_cmd(a, started),
        Command::McStudy(a) => mc_study_cmd(a, started),
        Command::TauGrid(a) => tau_grid_cmd(a, started),
    }
}

fn builtin_design(name: &str) -> Result<GenerativeParams, CliError> {
    let taus = vec![0.5];
    let cfg = match name {
        "a" => McStudyConfig::design_a(taus, 0),
        "b" => McStudyConfig::design_b(taus, 0),
        other => return Err(CliError::User(format!("unknown design `{other}` (use a or b)"))),
    };
    Ok(cfg.gen)
}

fn simulate_cmd(a: &SimulateArgs, started: Instant) -> Result<(), CliError> {
    let gen: GenerativeParams = match (&a.params, &a.design) {
        (Some(path), _) => io::read_json(path)?,
        (None, Some(d)) => builtin_design(d)?,
        (None, None) => return Err(CliError::User("either --params or --design is required".into())),
    };
    // Advisory stationarity check; a warning does not block the run.
    if gen.model.orders().garch == 1 && gen.model.orders().arch == 1 {
        if let Ok((m1, se)) = qrls_core::model::moment_condition(&gen, 1.0, 10_000, a.seed) {
            if m1 >= 1.0 {
                eprintln!(
                    "warning: E[beta1 + gamma11 (u+)^2 + gamma21 (u-)^2] = {m1:.3} (se {se:.3}) >= 1; \
                     the scale process may not have a second moment"
                );
            }
        }
    }
    let cfg = SimConfig { orders: gen.model.orders(), gen, n: a.n, burnin: a.burnin, seed: a.seed };
    let path = simulate_path(&cfg)?;

    let mut csv = String::from("t,Y,eps,h2\n");
    for i in 0..path.y.len() {
        csv.push_str(&format!("{},{},{},{}\n", i + 1, path.y[i], path.eps[i], path.h2[i]));
    }
    io::write_text(&a.out, &csv)?;
    Manifest::new("simulate", a, Some(a.seed), started).write(&a.out)
}

#[derive(Serialize)]
struct FitFile<'a> {
    schema: u32,
    tau: f64,
    orders: ModelOrders,
    theta_hat: &'a QuantileParams,
    objective_value: f64,
    iterations: usize,
    converged: bool,
    restarts_used: usize,
    xi_near_zero_warning: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    se: Option<std::collections::BTreeMap<String, f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bandwidth: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    kernel_fraction: Option<f64>,
}

fn fit_cmd(a: &FitArgs, started: Instant) -> Result<(), CliError> {
    let y = io::read_series(&a.input, a.log_returns_x100)?;
    let init: Option<QuantileParams> = match &a.init {
        Some(p) => Some(io::read_json(p)?),
        None => None,
    };
    let opts = FitOptions { bandwidth_scale: a.bandwidth_scale, ..FitOptions::default() };
    let fit = qr_fit(&y, a.tau, a.orders, init, &opts)?;

    let (se, bandwidth, kernel_fraction) = if a.with_se {
        match &fit.sandwich {
            Some(cov) => {
                let names = a.orders.param_names();
                let se_map = names.into_iter().zip(cov.se()).collect();
                (Some(se_map), Some(cov.bandwidth), Some(cov.kernel_fraction))
            }
            None => return Err(CliError::Numerical("sandwich covariance unavailable (singular H)".into())),
        }
    } else {
        (None, None, None)
    };
    let file = FitFile {
        schema: 1,
        tau: a.tau,
        orders: a.orders,
        theta_hat: &fit.theta_hat,
        objective_value: fit.objective_value,
        iterations: fit.iterations,
        converged: fit.converged,
        restarts_used: fit.restarts_used,
        xi_near_zero_warning: fit.xi_near_zero_warning,
        se,
        bandwidth,
        kernel_fraction,
    };
    io::write_json(&a.out, &file)?;
    Manifest::new("fit", a, Some(a.seed), started).write(&a.out)?;
    if !fit.converged {
        // output is written for inspection, but the run counts as failed
        return Err(CliError::Numerical(
            "fit did not converge within the iteration budget".into(),
        ));
    }
    Ok(())
}

#[derive(Serialize)]
struct QmleFile {
    schema: u32,
    orders: ModelOrders,
    estimates: GenerativeParams,
    se: std::collections::BTreeMap<String, f64>,
    objective_value: f64,
    iterations: usize,
    converged: bool,
}

fn qmle_cmd(a: &QmleArgs, started: Instant) -> Result<(), CliError> {
    let y = io::read_series(&a.input, a.log_returns_x100)?;
    let fit = qmle_fit(&y, a.orders, &FitOptions::default())?;
    let mut names: Vec<String> = a.orders.param_names()[1..].to_vec();
    names.push("omega".into());
    let file = QmleFile {
        schema: 1,
        orders: a.orders,
        estimates: fit.gen.clone(),
        se: names.into_iter().zip(fit.se).collect(),
        objective_value: fit.objective_value,
        iterations: fit.iterations,
        converged: fit.converged,
    };
    io::write_json(&a.out, &file)?;
    Manifest::new("qmle", a, None, started).write(&a.out)?;
    if !fit.converged {
        return Err(CliError::Numerical(
            "QMLE did not converge within the iteration budget".into(),
        ));
    }
    Ok(())
}

#[derive(Serialize)]
struct AsdFile {
    schema: u32,
    tau: f64,
    n: usize,
    path_len: usize,
    asd: std::collections::BTreeMap<String, f64>,
    #[serde(rename = "J")]
    j: Vec<Vec<f64>>,
    #[serde(rename = "V")]
    v: Vec<Vec<f64>>,
    cov: Vec<Vec<f64>>,
    mc_se: Vec<Vec<f64>>,
}

fn matrix_rows(m: &qrls_core::nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn asd_cmd(a: &AsdArgs, started: Instant) -> Result<(), CliError> {
    // Innovation law: --gen file, or flags.
    let gen_file: Option<GenerativeParams> = match &a.gen {
        Some(p) => Some(io::read_json(p)?),
        None => None,
    };
    let (model, xi_from_fit, tau) = match &a.fit {
        Some(p) => {
            let v: serde_json::Value = io::read_json(p)?;
            let theta: QuantileParams = serde_json::from_value(v["theta_hat"].clone())
                .map_err(|e| CliError::User(format!("{}: bad theta_hat: {e}", p.display())))?;
            let tau = a
                .tau
                .or_else(|| v["tau"].as_f64())
                .ok_or_else(|| CliError::User("fit file lacks tau; pass --tau".into()))?;
            (theta.model.clone(), Some(theta.xi), tau)
        }
        None => {
            let g = gen_file
                .clone()
                .ok_or_else(|| CliError::User("--gen or --fit is required".into()))?;
            let tau = a.tau.ok_or_else(|| CliError::User("--tau is required".into()))?;
            (g.model, None, tau)
        }
    };

    let innovation = if let Some(g) = &gen_file {
        g.innovation.clone()
    } else {
        let omega = a
            .omega
            .ok_or_else(|| CliError::User("--omega (with --family) or --gen required to fix the innovation law".into()))?;
        match a.family.as_deref().unwrap_or("normal") {
            "normal" => qrls_core::InnovationSpec::Normal { omega },
            "skewed_t" => qrls_core::InnovationSpec::SkewedT {
                nu: a.nu.ok_or_else(|| CliError::User("skewed_t requires --nu".into()))?,
                skew: a.skew.ok_or_else(|| CliError::User("skewed_t requires --skew".into()))?,
                omega,
            },
            other => return Err(CliError::User(format!("unknown family `{other}`"))),
        }
    };
    let gen = GenerativeParams::new(model, innovation)?;
    let xi = match (a.xi, xi_from_fit) {
        (Some(x), _) => x,
        (None, Some(x)) => x,
        (None, None) => gen.innovation.quantile(tau)?,
    };
    let theta_star = QuantileParams { xi, model: gen.model.clone() };

    let asy = theoretical_asd(&gen, &theta_star, tau, a.path_len, a.seed)?;
    let names = theta_star.orders().param_names();
    let file = AsdFile {
        schema: 1,
        tau,
        n: a.n,
        path_len: a.path_len,
        asd: names.into_iter().zip(asy.asd(a.n)).collect(),
        j: matrix_rows(&asy.j),
        v: matrix_rows(&asy.v),
        cov: matrix_rows(&asy.cov),
        mc_se: matrix_rows(&asy.mc_se),
    };
    io::write_json(&a.out, &file)?;
    Manifest::new("asd", a, Some(a.seed), started).write(&a.out)
}

/// On-disk study configuration; JSON or TOML.
#[derive(serde::Deserialize)]
struct StudyFile {
    #[serde(default)]
    #[allow(dead_code)]
    schema: Option<u32>,
    /// Built-in design "a" or "b"; otherwise supply `gen`.
    #[serde(default)]
    design: Option<String>,
    #[serde(default)]
    gen: Option<GenerativeParams>,
    #[serde(default)]
    orders: Option<ModelOrders>,
    #[serde(default)]
    taus: Option<Vec<f64>>,
    #[serde(default)]
    n: Option<usize>,
    #[serde(default)]
    reps: Option<usize>,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    compare_qmle: Option<bool>,
    #[serde(default)]
    burnin: Option<usize>,
    #[serde(default)]
    asd_path_len: Option<usize>,
}

#[derive(Serialize)]
struct StudyMeta {
    schema: u32,
    reps: usize,
    n: usize,
    seed: u64,
    failures: usize,
    resampled_paths: usize,
    high_failure_warning: bool,
    min_sandwich_eigen_ratio: f64,
    psd_violations: usize,
}

fn mc_study_cmd(a: &McStudyArgs, started: Instant) -> Result<(), CliError> {
    let text = io::read_text(&a.config)?;
    let file: StudyFile = if a.config.extension().and_then(|e| e.to_str()) == Some("toml") {
        toml::from_str(&text).map_err(|e| CliError::User(format!("{}: {e}", a.config.display())))?
    } else {
        serde_json::from_str(&text).map_err(|e| CliError::User(format!("{}: {e}", a.config.display())))?
    };

    let taus = file.taus.unwrap_or_else(|| vec![0.05, 0.25, 0.75, 0.95]);
    let seed = file.seed.unwrap_or(0);
    let mut cfg = match (file.design.as_deref(), file.gen) {
        (Some("a"), None) => McStudyConfig::design_a(taus, seed),
        (Some("b"), None) => McStudyConfig::design_b(taus, seed),
        (None, Some(gen)) => {
            let orders = file.orders.unwrap_or_else(|| gen.model.orders());
            let mut c = McStudyConfig::design_a(taus, seed);
            c.orders = orders;
            c.gen = gen;
            c
        }
        (Some(other), None) => {
            return Err(CliError::User(format!("unknown design `{other}` (use a, b, or a gen table)")))
        }
        _ => return Err(CliError::User("specify either design = \"a\"/\"b\" or a gen table, not both".into())),
    };
    if let Some(n) = file.n {
        cfg.n = n;
    }
    if let Some(r) = file.reps {
        cfg.reps = r;
    }
    if let Some(c) = file.compare_qmle {
        cfg.compare_qmle = c;
    }
    if let Some(b) = file.burnin {
        cfg.burnin = b;
    }
    if let Some(p) = file.asd_path_len {
        cfg.asd_path_len = p;
    }

    let table = run_mc_study(&cfg)?;
    let mut csv = String::from("tau,param,stat,value\n");
    let fmt_opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &table.rows {
        csv.push_str(&format!("{},{},bias,{}\n", r.tau, r.param, r.bias));
        csv.push_str(&format!("{},{},sd,{}\n", r.tau, r.param, fmt_opt(r.sd)));
        csv.push_str(&format!("{},{},asd,{}\n", r.tau, r.param, r.asd));
        csv.push_str(&format!("{},{},rmse_qr,{}\n", r.tau, r.param, r.rmse_qr));
        if r.rmse_qmle.is_some() {
            csv.push_str(&format!("{},{},rmse_qmle,{}\n", r.tau, r.param, fmt_opt(r.rmse_qmle)));
            csv.push_str(&format!("{},{},ratio,{}\n", r.tau, r.param, fmt_opt(r.ratio)));
        }
    }
    io::write_text(&a.out, &csv)?;

    let m = &table.metadata;
    let meta = StudyMeta {
        schema: 1,
        reps: m.reps,
        n: m.n,
        seed: m.seed,
        failures: m.failures,
        resampled_paths: m.resampled_paths,
        high_failure_warning: m.high_failure_warning,
        min_sandwich_eigen_ratio: m.min_sandwich_eigen_ratio,
        psd_violations: m.psd_violations,
    };
    let meta_path = io::suffixed(&a.out, ".meta.json");
    io::write_json(&meta_path, &meta)?;
    if m.high_failure_warning {
        eprintln!("warning: {} of {} fits failed (> 5%)", m.failures, m.reps * cfg.taus.len());
    }
    Manifest::new("mc-study", a, Some(seed), started).write_with(&a.out, &[meta_path])
}

#[derive(Serialize)]
struct TauGridMeta {
    schema: u32,
    level: f64,
    stationarity_diagnostic: Option<StationarityDiag>,
    failures: Vec<(f64, String)>,
}

#[derive(Serialize)]
struct StationarityDiag {
    mean: f64,
    se: f64,
}

fn tau_grid_cmd(a: &TauGridArgs, started: Instant) -> Result<(), CliError> {
    let y = io::read_series(&a.input, a.log_returns_x100)?;
    let taus = a.taus.clone().map(|t| t.0).unwrap_or_else(default_tau_grid);
    let res = tau_grid_fit(&y, &taus, a.orders, a.level, &FitOptions::default())?;

    let mut csv = String::from("tau,param,estimate,se,lo90,hi90,warning\n");
    for r in &res.rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.tau,
            r.param,
            r.estimate,
            r.se.map(|v| v.to_string()).unwrap_or_default(),
            r.lo,
            r.hi,
            r.warning
        ));
    }
    io::write_text(&a.out, &csv)?;
    let meta = TauGridMeta {
        schema: 1,
        level: res.level,
        stationarity_diagnostic: res
            .stationarity_diagnostic
            .map(|(mean, se)| StationarityDiag { mean, se }),
        failures: res.failures.clone(),
    };
    let meta_path = io::suffixed(&a.out, ".meta.json");
    io::write_json(&meta_path, &meta)?;
    for (tau, msg) in &res.failures {
        eprintln!("warning: tau = {tau} failed: {msg}");
    }
    Manifest::new("tau-grid", a, Some(a.seed), started).write_with(&a.out, &[meta_path])
}
