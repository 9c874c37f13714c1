use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::MarketError;

/// Market and preference constants of the discretized portfolio problem.
///
/// Rates and volatilities are annualized; `delta` is the period length in
/// years. The JSON form uses the field names below (`K`, `T`, `W0` upper-case).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub n: usize,
    pub d: usize,
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
    /// Lower-triangular `n x n` volatility matrix, row-major.
    pub sigma: Vec<Vec<f64>>,
    pub r_f: f64,
    pub lambda: f64,
    pub sigma_phi1: Vec<f64>,
    /// Loadings of the state on the `d` extra shocks.
    pub sigma_phi2: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    #[serde(rename = "K")]
    pub periods: usize,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub phi0: f64,
    #[serde(rename = "W0")]
    pub w0: f64,
}

pub const PARAMETER_SET_IDS: [u8; 4] = [1, 2, 3, 4];

struct Published {
    mu0: [f64; 3],
    mu1: [f64; 3],
    sigma: [[f64; 3]; 3],
    lambda: f64,
    sigma_phi1: [f64; 3],
    sigma_phi2: f64,
}

const SETS: [Published; 4] = [
    Published {
        mu0: [0.081, 0.110, 0.130],
        mu1: [0.034, 0.059, 0.073],
        sigma: [[0.186, 0.0, 0.0], [0.228, 0.083, 0.0], [0.251, 0.139, 0.069]],
        lambda: 0.336,
        sigma_phi1: [-0.741, -0.037, -0.060],
        sigma_phi2: 0.284,
    },
    Published {
        mu0: [0.081, 0.110, 0.130],
        mu1: [0.034, 0.059, 0.073],
        sigma: [[0.186, 0.0, 0.0], [0.228, 0.083, 0.0], [0.251, 0.139, 0.069]],
        lambda: 1.671,
        sigma_phi1: [-0.017, 0.149, 0.058],
        sigma_phi2: 1.725,
    },
    Published {
        mu0: [0.142, 0.109, 0.089],
        mu1: [0.065, 0.049, 0.049],
        sigma: [[0.256, 0.0, 0.0], [0.217, 0.054, 0.0], [0.207, 0.062, 0.062]],
        lambda: 0.336,
        sigma_phi1: [-0.741, -0.040, -0.034],
        sigma_phi2: 0.288,
    },
    Published {
        mu0: [0.142, 0.109, 0.089],
        mu1: [0.061, 0.060, 0.067],
        sigma: [[0.256, 0.0, 0.0], [0.217, 0.054, 0.0], [0.206, 0.062, 0.062]],
        lambda: 1.671,
        sigma_phi1: [-0.017, 0.212, 0.096],
        sigma_phi2: 1.716,
    },
];

/// One of the four published three-asset parameter sets, with `gamma = 1.5`.
/// Use [`ModelParams::with_gamma`] for other risk aversions.
pub fn parameter_set(id: u8) -> Result<ModelParams, MarketError> {
    let set = match id {
        1..=4 => &SETS[usize::from(id) - 1],
        _ => return Err(MarketError::UnknownParameterSet(id)),
    };
    Ok(ModelParams {
        n: 3,
        d: 1,
        mu0: set.mu0.to_vec(),
        mu1: set.mu1.to_vec(),
        sigma: set.sigma.iter().map(|r| r.to_vec()).collect(),
        r_f: 0.01,
        lambda: set.lambda,
        sigma_phi1: set.sigma_phi1.to_vec(),
        sigma_phi2: vec![set.sigma_phi2],
        alpha: 0.5,
        beta: 1.0,
        gamma: 1.5,
        delta: 0.1,
        periods: 10,
        horizon: 1.0,
        phi0: 0.0,
        w0: 1.0,
    })
}

impl ModelParams {
    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn validate(&self) -> Result<(), MarketError> {
        let bad = |msg: String| Err(MarketError::InvalidParams(msg));
        let n = self.n;
        if n == 0 {
            return bad("n must be at least 1".into());
        }
        if self.mu0.len() != n || self.mu1.len() != n || self.sigma_phi1.len() != n {
            return bad(format!("mu0, mu1 and sigma_phi1 must have length n={n}"));
        }
        if self.sigma_phi2.len() != self.d {
            return bad(format!("sigma_phi2 must have length d={}", self.d));
        }
        if self.sigma.len() != n || self.sigma.iter().any(|r| r.len() != n) {
            return bad(format!("sigma must be {n}x{n}"));
        }
        for (i, row) in self.sigma.iter().enumerate() {
            if !(row[i] > 0.0) {
                return bad(format!("sigma[{i}][{i}] must be positive"));
            }
            if row[i + 1..].iter().any(|&v| v != 0.0) {
                return bad(format!("sigma row {i} has entries above the diagonal"));
            }
        }
        if self.periods == 0 {
            return bad("K must be at least 1".into());
        }
        if !(self.delta > 0.0) {
            return bad("delta must be positive".into());
        }
        if (self.periods as f64 * self.delta - self.horizon).abs() > 1e-12 {
            return bad(format!(
                "K*delta = {} differs from T = {}",
                self.periods as f64 * self.delta,
                self.horizon
            ));
        }
        if !(self.gross_rf() > 0.0) {
            return bad("1 + r_f*delta must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0, 1]".into());
        }
        if !(self.beta > 0.0) {
            return bad("beta must be positive".into());
        }
        if !(self.gamma > 0.0) || self.gamma == 1.0 {
            return bad("gamma must be positive and different from 1".into());
        }
        if !(self.w0 > 0.0) {
            return bad("W0 must be positive".into());
        }
        let finite = self
            .mu0
            .iter()
            .chain(&self.mu1)
            .chain(self.sigma.iter().flatten())
            .chain(&self.sigma_phi1)
            .chain(&self.sigma_phi2)
            .chain([&self.r_f, &self.lambda, &self.phi0])
            .all(|v| v.is_finite());
        if !finite {
            return bad("all parameters must be finite".into());
        }
        Ok(())
    }

    /// Gross one-period risk-free return `1 + r_f * delta`.
    pub fn gross_rf(&self) -> f64 {
        1.0 + self.r_f * self.delta
    }

    pub fn sqrt_delta(&self) -> f64 {
        self.delta.sqrt()
    }

    /// `beta^(k*delta)`.
    pub fn discount(&self, k: usize) -> f64 {
        self.beta.powf(k as f64 * self.delta)
    }

    /// Drift of the log-return at state `phi`: `mu0 + mu1 * phi`.
    pub fn return_drift(&self, phi: f64) -> Vec<f64> {
        self.mu0
            .iter()
            .zip(&self.mu1)
            .map(|(a, b)| a + b * phi)
            .collect()
    }

    /// Diagonal of `sigma sigma^T`.
    pub fn return_variances(&self) -> Vec<f64> {
        self.sigma
            .iter()
            .map(|row| row.iter().map(|v| v * v).sum())
            .collect()
    }

    /// Mean-reverting drift of the market state, `-lambda * phi`.
    pub fn state_drift(&self, phi: f64) -> f64 {
        -self.lambda * phi
    }

    /// Total per-year variance of the state innovation.
    pub fn state_variance(&self) -> f64 {
        self.sigma_phi1
            .iter()
            .chain(&self.sigma_phi2)
            .map(|v| v * v)
            .sum()
    }

    /// `sigma * z`.
    pub fn sigma_times(&self, z: &[f64]) -> Vec<f64> {
        self.sigma
            .iter()
            .map(|row| row.iter().zip(z).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Hex SHA-256 of the canonical JSON form; used to pair grid files with
    /// the parameters they were solved for.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("params serialize");
        hex::encode(Sha256::digest(&json))
    }

    /// Which published set these parameters equal, ignoring `gamma`.
    pub fn published_id(&self) -> Option<u8> {
        PARAMETER_SET_IDS.into_iter().find(|&id| {
            parameter_set(id)
                .map(|p| p.with_gamma(self.gamma) == *self)
                .unwrap_or(false)
        })
    }
}
