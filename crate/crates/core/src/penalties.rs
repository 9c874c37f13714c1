//! Penalties for the portfolio problem as affine forms in the decisions.
//!
//! Along one shock path, every penalty used here has the shape
//! `constant + sum_k lin_pi[k]' Pi_k + sum_k lin_c[k] C_k` with holdings and
//! consumption in amounts. The coefficients come from the baseline policy's
//! trajectory on the same path and the grid value factors.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dp::ValueGrid;
use crate::market::{simulate_policy_path, MarketError, MarketPath, ModelParams, Policy, ShockPath};

/// Baseline quantities along one path; independent of the inner decisions.
#[derive(Debug, Clone)]
pub struct PenaltyContext {
    pub shocks: ShockPath,
    /// Baseline trajectory: states, realized returns, wealth and decisions.
    pub baseline: MarketPath,
    /// `J_hat_k(phi_bar_k)` for `k = 0..K`.
    pub j_hat: Vec<f64>,
    /// Slope of `J_hat_k` at `phi_bar_k`.
    pub grad_j: Vec<f64>,
    /// Per-stage copies of the volatility loadings.
    pub sigma: Vec<Vec<Vec<f64>>>,
    pub sigma_phi1: Vec<Vec<f64>>,
    pub sigma_phi2: Vec<Vec<f64>>,
}

impl PenaltyContext {
    pub fn periods(&self) -> usize {
        self.j_hat.len()
    }
}

pub fn build_context<P: Policy + ?Sized>(
    p: &ModelParams,
    vg: &ValueGrid,
    policy: &P,
    shocks: &ShockPath,
) -> Result<PenaltyContext, MarketError> {
    let baseline = simulate_policy_path(p, policy, shocks)?;
    let k_max = shocks.periods();
    let j_hat = (0..k_max).map(|k| vg.interpolate_j(k, baseline.phi[k])).collect();
    let grad_j = (0..k_max).map(|k| vg.gradient_j(k, baseline.phi[k])).collect();
    Ok(PenaltyContext {
        shocks: shocks.clone(),
        baseline,
        j_hat,
        grad_j,
        sigma: vec![p.sigma.clone(); k_max],
        sigma_phi1: vec![p.sigma_phi1.clone(); k_max],
        sigma_phi2: vec![p.sigma_phi2.clone(); k_max],
    })
}

/// `constant + sum_k lin_pi[k]' Pi_k + sum_k lin_c[k] C_k`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PenaltyForm {
    pub constant: f64,
    pub lin_pi: Vec<Vec<f64>>,
    pub lin_c: Vec<f64>,
}

impl PenaltyForm {
    pub fn zero(periods: usize, n: usize) -> Self {
        Self {
            constant: 0.0,
            lin_pi: vec![vec![0.0; n]; periods],
            lin_c: vec![0.0; periods],
        }
    }

    pub fn evaluate(&self, holdings: &[Vec<f64>], consumption: &[f64]) -> f64 {
        let mut total = self.constant;
        for (k, row) in self.lin_pi.iter().enumerate() {
            total += row.iter().zip(&holdings[k]).map(|(a, b)| a * b).sum::<f64>();
            total += self.lin_c[k] * consumption[k];
        }
        total
    }

    /// Coefficients in the inner-problem layout `(Pi_0, C_0, ..., Pi_{K-1}, C_{K-1})`.
    pub fn flat_coefficients(&self) -> Vec<f64> {
        self.lin_pi
            .iter()
            .zip(&self.lin_c)
            .flat_map(|(pi, c)| pi.iter().copied().chain(std::iter::once(*c)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyKind {
    Zero,
    M1,
    M2,
}

impl PenaltyKind {
    pub const ALL: [PenaltyKind; 3] = [PenaltyKind::Zero, PenaltyKind::M1, PenaltyKind::M2];

    pub fn form(self, ctx: &PenaltyContext, p: &ModelParams) -> PenaltyForm {
        match self {
            PenaltyKind::Zero => PenaltyForm::zero(ctx.periods(), p.n),
            PenaltyKind::M1 => m1_form(ctx, p),
            PenaltyKind::M2 => m2_form(ctx, p),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PenaltyKind::Zero => "zero",
            PenaltyKind::M1 => "m1",
            PenaltyKind::M2 => "m2",
        }
    }
}

impl std::str::FromStr for PenaltyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "zero" => Ok(PenaltyKind::Zero),
            "m1" => Ok(PenaltyKind::M1),
            "m2" => Ok(PenaltyKind::M2),
            other => Err(format!("unknown penalty {other:?}; expected zero, m1 or m2")),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `grad J_hat_k * (sigma_phi1' Z_{k+1} + sigma_phi2' Ztilde_{k+1}) sqrt(delta)`.
fn state_shock_term(ctx: &PenaltyContext, k: usize, sd: f64) -> f64 {
    let z = &ctx.shocks.z[k];
    let zt = &ctx.shocks.ztilde[k];
    ctx.grad_j[k] * (dot(&ctx.sigma_phi1[k], z) + dot(&ctx.sigma_phi2[k], zt)) * sd
}

/// State-shock terms fold into the constant; the return-shock term is linear
/// in `Pi_k` and carries `W_bar_k^(-gamma)`.
pub fn m1_form(ctx: &PenaltyContext, p: &ModelParams) -> PenaltyForm {
    let k_max = ctx.periods();
    let sd = p.sqrt_delta();
    let om = 1.0 - p.gamma;
    let mut form = PenaltyForm::zero(k_max, p.n);
    for k in 0..k_max {
        let disc = p.discount(k);
        let w = ctx.baseline.wealth[k];
        form.constant += disc * w.powf(om) * state_shock_term(ctx, k, sd);
        let scale = disc * om * w.powf(-p.gamma) * ctx.j_hat[k] * sd;
        for (i, row) in ctx.sigma[k].iter().enumerate() {
            form.lin_pi[k][i] = scale * dot(row, &ctx.shocks.z[k]);
        }
    }
    form
}

/// M1 with the stage-`k` state-shock terms linearized in `(Pi_{k-1}, C_{k-1})`
/// around the baseline; equal to M1 at the baseline decisions.
pub fn m2_form(ctx: &PenaltyContext, p: &ModelParams) -> PenaltyForm {
    let mut form = m1_form(ctx, p);
    let sd = p.sqrt_delta();
    let rf = p.gross_rf();
    let holdings = ctx.baseline.holdings();
    for k in 1..ctx.periods() {
        let w = ctx.baseline.wealth[k];
        let coef = p.discount(k) * (1.0 - p.gamma) * w.powf(-p.gamma) * state_shock_term(ctx, k, sd);
        // Return realized over (k-1, k].
        let excess: Vec<f64> = ctx.baseline.returns[k - 1].iter().map(|r| r - rf).collect();
        for (l, e) in form.lin_pi[k - 1].iter_mut().zip(&excess) {
            *l += coef * e;
        }
        form.lin_c[k - 1] -= coef;
        form.constant -= coef * (dot(&excess, &holdings[k - 1]) - ctx.baseline.consumption[k - 1]);
    }
    form
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeasibilityReport {
    pub penalty: String,
    /// Antithetic pairs; each unit is the pair average.
    pub pairs: usize,
    pub seed: u64,
    pub mean: f64,
    pub stderr: f64,
    pub pass: bool,
}

/// Mean of a penalty at `policy`'s decisions under the grid baseline, over
/// antithetic pairs. Passes iff `|mean| <= 3 stderr`.
pub fn feasibility_check<P: Policy + ?Sized>(
    kind: PenaltyKind,
    p: &ModelParams,
    vg: &ValueGrid,
    policy: &P,
    pairs: usize,
    seed: u64,
) -> Result<FeasibilityReport, MarketError> {
    let mut report = feasibility_check_with(|ctx, p| kind.form(ctx, p), p, vg, policy, pairs, seed)?;
    report.penalty = kind.name().to_string();
    Ok(report)
}

/// As [`feasibility_check`] for an arbitrary form builder.
pub fn feasibility_check_with<F, P>(
    build: F,
    p: &ModelParams,
    vg: &ValueGrid,
    policy: &P,
    pairs: usize,
    seed: u64,
) -> Result<FeasibilityReport, MarketError>
where
    F: Fn(&PenaltyContext, &ModelParams) -> PenaltyForm + Sync,
    P: Policy + ?Sized,
{
    let units: Vec<f64> = (0..pairs as u32)
        .into_par_iter()
        .map(|i| {
            let shocks = ShockPath::seeded(seed, 0, i, p.periods, p.n, p.d);
            let mut total = 0.0;
            for leg in [shocks.antithetic(), shocks] {
                let ctx = build_context(p, vg, vg, &leg)?;
                let path = simulate_policy_path(p, policy, &leg)?;
                total += build(&ctx, p).evaluate(&path.holdings(), &path.consumption);
            }
            Ok(0.5 * total)
        })
        .collect::<Result<_, MarketError>>()?;
    let (mean, stderr) = mean_stderr(&units);
    Ok(FeasibilityReport {
        penalty: "custom".into(),
        pairs,
        seed,
        mean,
        stderr,
        pass: mean.abs() <= 3.0 * stderr,
    })
}

/// Sample mean and `sd / sqrt(n)`, summed in slice order.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
