//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Every key must be a
//! field of [`ExperimentConfig`]; anything else is an error.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::driver::ExperimentConfig;
use crate::error::{Error, Result};
use crate::qp::{InnerProduct, Preconditioner};

pub const KEYS: &[&str] = &[
    "f1",
    "f2",
    "mu",
    "n",
    "levels",
    "max_sqp_iters",
    "cg_tol",
    "alpha",
    "baseline_scaling",
    "baseline_iters",
    "grad_tol",
    "seed",
    "preconditioner",
    "inner_product",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

/// Sets one field from its textual value.
pub fn set_key(config: &mut ExperimentConfig, key: &str, value: &str) -> Result<()> {
    match key {
        "f1" => config.f1 = parse(key, value)?,
        "f2" => config.f2 = parse(key, value)?,
        "mu" => config.mu = parse(key, value)?,
        "n" => config.n = parse(key, value)?,
        "levels" => config.levels = parse(key, value)?,
        "max_sqp_iters" => config.max_sqp_iters = parse(key, value)?,
        "cg_tol" => config.cg_tol = parse(key, value)?,
        "alpha" => config.alpha = parse(key, value)?,
        "baseline_scaling" => config.baseline_scaling = parse(key, value)?,
        "baseline_iters" => config.baseline_iters = parse(key, value)?,
        "grad_tol" => config.grad_tol = parse(key, value)?,
        "seed" => config.seed = parse(key, value)?,
        "preconditioner" => {
            config.preconditioner = match value {
                "none" => Preconditioner::None,
                "tangential" => Preconditioner::Tangential,
                _ => return Err(Error::Config(format!("{key}: expected none or tangential, got {value:?}"))),
            }
        }
        "inner_product" => {
            config.inner_product = match value {
                "arclength" => InnerProduct::ArcLength,
                "euclidean" => InnerProduct::Euclidean,
                _ => return Err(Error::Config(format!("{key}: expected arclength or euclidean, got {value:?}"))),
            }
        }
        _ => return Err(Error::Config(format!("unknown key {key:?}"))),
    }
    Ok(())
}

/// Applies the lines of a config file on top of the defaults.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::default();
    let mut seen = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!("line {}: expected key = value", lineno + 1)));
        };
        let (key, value) = (key.trim(), value.trim());
        if seen.contains(&key) {
            return Err(Error::Config(format!("duplicate key {key:?}")));
        }
        set_key(&mut config, key, value)?;
        seen.push(key);
    }
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

/// Inverse of [`parse_config`].
pub fn render_config(config: &ExperimentConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "f1 = {}", config.f1);
    let _ = writeln!(s, "f2 = {}", config.f2);
    let _ = writeln!(s, "mu = {}", config.mu);
    let _ = writeln!(s, "n = {}", config.n);
    let _ = writeln!(s, "levels = {}", config.levels);
    let _ = writeln!(s, "max_sqp_iters = {}", config.max_sqp_iters);
    let _ = writeln!(s, "cg_tol = {:e}", config.cg_tol);
    let _ = writeln!(s, "alpha = {}", config.alpha);
    let _ = writeln!(s, "baseline_scaling = {}", config.baseline_scaling);
    let _ = writeln!(s, "baseline_iters = {}", config.baseline_iters);
    let _ = writeln!(s, "grad_tol = {:e}", config.grad_tol);
    let _ = writeln!(s, "seed = {}", config.seed);
    let pre = match config.preconditioner {
        Preconditioner::None => "none",
        Preconditioner::Tangential => "tangential",
    };
    let _ = writeln!(s, "preconditioner = {pre}");
    let inner = match config.inner_product {
        InnerProduct::ArcLength => "arclength",
        InnerProduct::Euclidean => "euclidean",
    };
    let _ = writeln!(s, "inner_product = {inner}");
    s
}
