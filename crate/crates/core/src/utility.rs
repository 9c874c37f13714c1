//! CRRA utility and certainty equivalents.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
#[error("value {value} has no certainty equivalent under gamma = {gamma}")]
pub struct CertaintyEquivalentError {
    pub value: f64,
    pub gamma: f64,
}

/// `x^(1-gamma) / (1-gamma)`; `-inf` for `x <= 0` when `gamma > 1`.
pub fn crra(x: f64, gamma: f64) -> f64 {
    let one_m = 1.0 - gamma;
    if x <= 0.0 {
        return if one_m < 0.0 { f64::NEG_INFINITY } else { 0.0 };
    }
    x.powf(one_m) / one_m
}

pub fn crra_prime(x: f64, gamma: f64) -> f64 {
    x.powf(-gamma)
}

pub fn crra_second(x: f64, gamma: f64) -> f64 {
    -gamma * x.powf(-gamma - 1.0)
}

/// Wealth whose CRRA utility equals `value`: `((1-gamma) value)^(1/(1-gamma))`.
pub fn certainty_equivalent(value: f64, gamma: f64) -> Result<f64, CertaintyEquivalentError> {
    let one_m = 1.0 - gamma;
    let base = one_m * value;
    if !(base > 0.0) || gamma == 1.0 {
        return Err(CertaintyEquivalentError { value, gamma });
    }
    Ok(base.powf(1.0 / one_m))
}
