//! Job configuration files. Every struct rejects unknown fields and every
//! default is visible through `--print-config`.

use std::path::Path;

use infrelax::dp::GridSpec;
use infrelax::market::{parameter_set, ModelParams};
use infrelax::penalties::PenaltyKind;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveConfig {
    /// Published set used when `params` is absent.
    pub parameter_set: u8,
    /// Overrides the risk aversion of the chosen parameters.
    pub gamma: Option<f64>,
    pub params: Option<ModelParams>,
    pub grid: GridSpec,
    pub quadrature_points: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            parameter_set: 1,
            gamma: None,
            params: None,
            grid: GridSpec::default(),
            quadrature_points: 3,
        }
    }
}

impl SolveConfig {
    pub fn model(&self) -> Result<ModelParams, CliError> {
        let base = match &self.params {
            Some(p) => p.clone(),
            None => parameter_set(self.parameter_set).map_err(|e| CliError::Input(e.to_string()))?,
        };
        let p = match self.gamma {
            Some(g) => base.with_gamma(g),
            None => base,
        };
        p.validate().map_err(|e| CliError::Input(e.to_string()))?;
        Ok(p)
    }
}

/// Settings shared by `lower`, `upper` and `feasibility`. The model itself
/// comes from the grid file; `params`, `parameter_set` and `gamma`, when set,
/// are cross-checked against it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundsConfig {
    pub parameter_set: Option<u8>,
    pub gamma: Option<f64>,
    pub params: Option<ModelParams>,
    /// Antithetic pairs per run (single paths when `antithetic` is false).
    pub paths_per_run: Option<usize>,
    pub runs: usize,
    pub antithetic: bool,
    pub penalty: PenaltyKind,
    pub seed: Option<u64>,
    pub workers: usize,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        Self {
            parameter_set: None,
            gamma: None,
            params: None,
            paths_per_run: None,
            runs: 10,
            antithetic: true,
            penalty: PenaltyKind::M1,
            seed: None,
            workers: 1,
        }
    }
}

/// Default paths per run: 100 pairs for lower bounds, 30 for upper bounds,
/// 10000 pairs for the feasibility check.
pub const LOWER_PATHS: usize = 100;
pub const UPPER_PATHS: usize = 30;
pub const FEASIBILITY_PAIRS: usize = 10_000;

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn parse<T: for<'de> Deserialize<'de>>(text: &str, path: &Path) -> Result<T, CliError> {
    serde_json::from_str(text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// A bare parameter document (as written by `gen-params`) has a top-level
/// `mu0`; anything else is a solve configuration.
pub fn load_solve(path: Option<&Path>) -> Result<SolveConfig, CliError> {
    let Some(path) = path else {
        return Ok(SolveConfig::default());
    };
    let text = read(path)?;
    let value: Value = parse(&text, path)?;
    if value.get("mu0").is_some() {
        let params: ModelParams = parse(&text, path)?;
        Ok(SolveConfig {
            params: Some(params),
            ..SolveConfig::default()
        })
    } else {
        parse(&text, path)
    }
}

pub fn load_bounds(path: Option<&Path>) -> Result<BoundsConfig, CliError> {
    match path {
        None => Ok(BoundsConfig::default()),
        Some(path) => parse(&read(path)?, path),
    }
}

pub fn to_pretty_json<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("config serializes");
    text.push('\n');
    text
}
