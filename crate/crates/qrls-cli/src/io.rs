//! File I/O helpers: series reading, JSON/CSV writing, run manifests, and
//! the user-vs-numerical error split behind the exit codes.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{de::DeserializeOwned, Serialize};

/// CLI-level error: `User` maps to exit code 1, `Numerical` to exit code 2.
#[derive(Debug)]
pub enum CliError {
    User(String),
    Numerical(String),
}

impl From<qrls_core::Error> for CliError {
    fn from(e: qrls_core::Error) -> Self {
        if e.is_user_error() {
            CliError::User(e.to_string())
        } else {
            CliError::Numerical(e.to_string())
        }
    }
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::User(format!("{}: {e}", path.display())))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::User(format!("{}: {e}", path.display())))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    serde_json::from_str(&read_text(path)?)
        .map_err(|e| CliError::User(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::User(format!("{}: {e}", path.display())))?;
    text.push('\n');
    write_text(path, &text)
}

/// `path` with `suffix` appended to the full file name.
pub fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

/// Read the observation series from a CSV file: either one numeric column
/// without a header, or any header row with a `Y` column. With
/// `log_returns_x100` the column is taken as price levels and transformed
/// to 100 times the log-price differences.
pub fn read_series(path: &Path, log_returns_x100: bool) -> Result<Vec<f64>, CliError> {
    let text = read_text(path)?;
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let first = lines
        .next()
        .ok_or_else(|| CliError::User(format!("{}: empty file", path.display())))?;

    let fields: Vec<&str> = first.split(',').map(str::trim).collect();
    let numeric_first = fields.iter().all(|f| f.parse::<f64>().is_ok());

    let mut values = Vec::new();
    let y_col = if numeric_first {
        if fields.len() != 1 {
            return Err(CliError::User(format!(
                "{}: {} headerless columns; use a header row with a `Y` column",
                path.display(),
                fields.len()
            )));
        }
        values.push(fields[0].parse::<f64>().unwrap());
        0
    } else {
        fields
            .iter()
            .position(|f| *f == "Y")
            .ok_or_else(|| CliError::User(format!("{}: no `Y` column in header", path.display())))?
    };

    for (lineno, line) in lines.enumerate() {
        let field = line
            .split(',')
            .nth(y_col)
            .ok_or_else(|| CliError::User(format!("{}: short row {}", path.display(), lineno + 2)))?
            .trim();
        let v: f64 = field
            .parse()
            .map_err(|_| CliError::User(format!("{}: bad number `{field}` in row {}", path.display(), lineno + 2)))?;
        values.push(v);
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(CliError::User(format!("{}: series contains NaN", path.display())));
    }

    if log_returns_x100 {
        if values.iter().any(|&v| v <= 0.0) {
            return Err(CliError::User(
                "log-return transform requires strictly positive price levels".into(),
            ));
        }
        let returns = values
            .windows(2)
            .map(|w| 100.0 * (w[1].ln() - w[0].ln()))
            .collect::<Vec<f64>>();
        if returns.is_empty() {
            return Err(CliError::User("need at least two prices for returns".into()));
        }
        return Ok(returns);
    }
    Ok(values)
}

/// Run provenance written alongside every output file.
#[derive(Serialize)]
pub struct Manifest<T: Serialize> {
    schema: u32,
    subcommand: &'static str,
    config: T,
    seed: Option<u64>,
    version: &'static str,
    wall_time_s: f64,
    outputs: Vec<String>,
}

impl<T: Serialize> Manifest<T> {
    pub fn new(subcommand: &'static str, config: T, seed: Option<u64>, started: Instant) -> Self {
        Self {
            schema: 1,
            subcommand,
            config,
            seed,
            version: env!("CARGO_PKG_VERSION"),
            wall_time_s: started.elapsed().as_secs_f64(),
            outputs: Vec::new(),
        }
    }

    /// Record the primary output and write `<out>.manifest.json` next to it.
    pub fn write(self, out: &Path) -> Result<(), CliError> {
        self.write_with(out, &[])
    }

    /// As [`write`](Self::write), also recording secondary output files.
    pub fn write_with(mut self, out: &Path, extra: &[PathBuf]) -> Result<(), CliError> {
        self.outputs.push(out.display().to_string());
        self.outputs.extend(extra.iter().map(|p| p.display().to_string()));
        write_json(&suffixed(out, ".manifest.json"), &self)
    }
}
