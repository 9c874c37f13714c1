//! Discretized market: mean-reverting state, lognormal returns, and wealth
//! under long-only, no-borrowing portfolio and consumption decisions.

mod params;

pub use params::{parameter_set, ModelParams, PARAMETER_SET_IDS};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lowest wealth an admissible trajectory may reach.
pub const WEALTH_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MarketError {
    #[error("unknown parameter set {0}; valid ids are 1, 2, 3, 4")]
    UnknownParameterSet(u8),
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),
    #[error("inadmissible decision at stage {stage}: {reason}")]
    Inadmissible { stage: usize, reason: String },
}

/// Portfolio fractions `pi` and consumption fraction `c` of current wealth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub pi: Vec<f64>,
    pub c: f64,
}

impl Decision {
    pub fn cash(n: usize) -> Self {
        Self {
            pi: vec![0.0; n],
            c: 0.0,
        }
    }

    /// Check membership in `{pi >= 0, c >= 0, c <= R_f (1 - 1'pi)}`.
    pub fn check_admissible(&self, gross_rf: f64) -> Result<(), String> {
        if let Some((i, v)) = self.pi.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
            return Err(format!("pi[{i}] = {v} is negative"));
        }
        if !(self.c >= 0.0) {
            return Err(format!("consumption fraction {} is negative", self.c));
        }
        let cap = gross_rf * (1.0 - self.pi.iter().sum::<f64>());
        if self.c > cap + 1e-12 {
            return Err(format!("consumption {} exceeds the cash cap {cap}", self.c));
        }
        Ok(())
    }
}

/// A non-anticipative feedback rule: stage, market state and wealth in,
/// fractional decision out.
pub trait Policy: Sync {
    fn decide(&self, stage: usize, phi: f64, wealth: f64) -> Decision;
}

impl<F> Policy for F
where
    F: Fn(usize, f64, f64) -> Decision + Sync,
{
    fn decide(&self, stage: usize, phi: f64, wealth: f64) -> Decision {
        self(stage, phi, wealth)
    }
}

/// One realization of the Gaussian drivers: `z[k]` and `ztilde[k]` drive the
/// transition from stage `k` to `k + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShockPath {
    pub z: Vec<Vec<f64>>,
    pub ztilde: Vec<Vec<f64>>,
    /// True for the negated leg of an antithetic pair.
    pub mirrored: bool,
}

impl ShockPath {
    pub fn draw<R: Rng + ?Sized>(rng: &mut R, periods: usize, n: usize, d: usize) -> Self {
        let mut z = Vec::with_capacity(periods);
        let mut ztilde = Vec::with_capacity(periods);
        for _ in 0..periods {
            z.push((0..n).map(|_| rng.sample(StandardNormal)).collect());
            ztilde.push((0..d).map(|_| rng.sample(StandardNormal)).collect());
        }
        Self {
            z,
            ztilde,
            mirrored: false,
        }
    }

    /// Draws of path `index` in run `run`. Each (run, index) pair owns a
    /// ChaCha stream, so paths regenerate independently of evaluation order.
    pub fn seeded(seed: u64, run: u32, index: u32, periods: usize, n: usize, d: usize) -> Self {
        Self::draw(&mut path_rng(seed, run, index), periods, n, d)
    }

    pub fn zeros(periods: usize, n: usize, d: usize) -> Self {
        Self {
            z: vec![vec![0.0; n]; periods],
            ztilde: vec![vec![0.0; d]; periods],
            mirrored: false,
        }
    }

    /// The antithetic partner `(-Z, -Ztilde)`.
    pub fn antithetic(&self) -> Self {
        let neg = |m: &Vec<Vec<f64>>| m.iter().map(|r| r.iter().map(|v| -v).collect()).collect();
        Self {
            z: neg(&self.z),
            ztilde: neg(&self.ztilde),
            mirrored: !self.mirrored,
        }
    }

    pub fn periods(&self) -> usize {
        self.z.len()
    }
}

/// Generator for path `index` of run `run`: stream id `run << 32 | index`.
pub fn path_rng(seed: u64, run: u32, index: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((u64::from(run) << 32) | u64::from(index));
    rng
}

/// Market state and, when a policy is applied, wealth and consumption.
#[derive(Debug, Clone)]
pub struct MarketPath {
    /// `phi[0..=K]`.
    pub phi: Vec<f64>,
    /// `returns[k]` is the gross return vector realized over `(k, k+1]`.
    pub returns: Vec<Vec<f64>>,
    /// `wealth[0..=K]`.
    pub wealth: Vec<f64>,
    /// Consumption amounts `C_k = c_k W_k`.
    pub consumption: Vec<f64>,
    pub decisions: Vec<Decision>,
}

impl MarketPath {
    /// Risky holdings `Pi_k = pi_k W_k`.
    pub fn holdings(&self) -> Vec<Vec<f64>> {
        self.decisions
            .iter()
            .zip(&self.wealth)
            .map(|(d, w)| d.pi.iter().map(|p| p * w).collect())
            .collect()
    }
}

/// `phi_{k+1} = phi_k - lambda phi_k delta + sigma_phi1 z sqrt(delta) + sigma_phi2 ztilde sqrt(delta)`.
pub fn step_state(phi: f64, z: &[f64], ztilde: &[f64], p: &ModelParams) -> f64 {
    let sd = p.sqrt_delta();
    let loading1: f64 = p.sigma_phi1.iter().zip(z).map(|(a, b)| a * b).sum();
    let loading2: f64 = p.sigma_phi2.iter().zip(ztilde).map(|(a, b)| a * b).sum();
    phi + p.state_drift(phi) * p.delta + loading1 * sd + loading2 * sd
}

/// Log-returns over one period before exponentiation, `(mu - sigma^2/2) delta + sigma z sqrt(delta)`.
pub fn log_returns(phi: f64, z: &[f64], p: &ModelParams) -> Vec<f64> {
    let sd = p.sqrt_delta();
    let shock = p.sigma_times(z);
    p.return_drift(phi)
        .iter()
        .zip(p.return_variances())
        .zip(shock)
        .map(|((mu, var), s)| (mu - 0.5 * var) * p.delta + s * sd)
        .collect()
}

/// Gross returns of the risky assets over one period.
pub fn step_return(phi: f64, z: &[f64], p: &ModelParams) -> Vec<f64> {
    log_returns(phi, z, p).into_iter().map(f64::exp).collect()
}

/// `W_{k+1} = W_k R_f + (R - R_f 1)' Pi - C` in amounts.
pub fn step_wealth(wealth: f64, holdings: &[f64], consumption: f64, returns: &[f64], p: &ModelParams) -> f64 {
    let rf = p.gross_rf();
    let excess: f64 = returns.iter().zip(holdings).map(|(r, h)| (r - rf) * h).sum();
    wealth * rf + excess - consumption
}

/// Market states and returns along `shocks`, without a policy.
pub fn simulate_market(p: &ModelParams, shocks: &ShockPath) -> (Vec<f64>, Vec<Vec<f64>>) {
    let k_max = shocks.periods();
    let mut phi = Vec::with_capacity(k_max + 1);
    let mut returns = Vec::with_capacity(k_max);
    phi.push(p.phi0);
    for k in 0..k_max {
        returns.push(step_return(phi[k], &shocks.z[k], p));
        phi.push(step_state(phi[k], &shocks.z[k], &shocks.ztilde[k], p));
    }
    (phi, returns)
}

/// Apply `policy` along `shocks` from `(phi0, W0)`.
pub fn simulate_policy_path<P: Policy + ?Sized>(
    p: &ModelParams,
    policy: &P,
    shocks: &ShockPath,
) -> Result<MarketPath, MarketError> {
    let rf = p.gross_rf();
    let (phi, returns) = simulate_market(p, shocks);
    let k_max = shocks.periods();
    let mut wealth = Vec::with_capacity(k_max + 1);
    let mut consumption = Vec::with_capacity(k_max);
    let mut decisions = Vec::with_capacity(k_max);
    wealth.push(p.w0);
    for k in 0..k_max {
        let w = wealth[k];
        let dec = policy.decide(k, phi[k], w);
        if dec.pi.len() != p.n {
            return Err(MarketError::Inadmissible {
                stage: k,
                reason: format!("policy returned {} weights for {} assets", dec.pi.len(), p.n),
            });
        }
        dec.check_admissible(rf)
            .map_err(|reason| MarketError::Inadmissible { stage: k, reason })?;
        let holdings: Vec<f64> = dec.pi.iter().map(|x| x * w).collect();
        let cons = dec.c * w;
        let next = step_wealth(w, &holdings, cons, &returns[k], p);
        if !(next > WEALTH_FLOOR) {
            return Err(MarketError::Inadmissible {
                stage: k,
                reason: format!("wealth at stage {} would be {next}", k + 1),
            });
        }
        consumption.push(cons);
        decisions.push(dec);
        wealth.push(next);
    }
    Ok(MarketPath {
        phi,
        returns,
        wealth,
        consumption,
        decisions,
    })
}
