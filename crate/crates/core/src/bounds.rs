//! Monte Carlo lower bounds by simulating the grid policy, and dual upper
//! bounds by solving one penalized perfect-foresight problem per shock path.
//!
//! Path `i` of run `r` is drawn from its own stream `(seed, r, i)`; with
//! antithetic sampling both legs of the pair share that stream. Path values
//! are computed in parallel and summed in index order, so estimates do not
//! depend on the worker count.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::concave::{maximize, LinearConstraints, Objective, Status};
use crate::dp::{interior_decision, ValueGrid};
use crate::market::{simulate_policy_path, MarketError, MarketPath, ModelParams, Policy, ShockPath};
use crate::penalties::{build_context, PenaltyContext, PenaltyForm, PenaltyKind};
use crate::utility::{certainty_equivalent, crra, CertaintyEquivalentError};

/// Tolerance of each pathwise inner maximization.
pub const INNER_TOL: f64 = 1e-6;
/// Lower limit imposed on consumption amounts and terminal wealth.
pub const DOMAIN_GUARD: f64 = 1e-10;
/// Weight of the interior point in the inner start point.
const START_BLEND: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Antithetic pairs per run when `antithetic`, single paths otherwise.
    pub paths_per_run: usize,
    pub runs: usize,
    pub antithetic: bool,
    pub seed: u64,
    pub penalty: PenaltyKind,
    pub workers: usize,
}

impl RunConfig {
    /// 100 antithetic pairs in each of 10 runs.
    pub fn lower_default(seed: u64) -> Self {
        Self {
            paths_per_run: 100,
            runs: 10,
            antithetic: true,
            seed,
            penalty: PenaltyKind::Zero,
            workers: 1,
        }
    }

    /// 30 antithetic pairs in each of 10 runs.
    pub fn upper_default(seed: u64, penalty: PenaltyKind) -> Self {
        Self {
            paths_per_run: 30,
            penalty,
            ..Self::lower_default(seed)
        }
    }

    pub fn validate(&self) -> Result<(), BoundsError> {
        if self.paths_per_run < 1 {
            return Err(BoundsError::Config("paths_per_run must be at least 1".into()));
        }
        if self.runs < 2 {
            return Err(BoundsError::Config("runs must be at least 2 for a standard error".into()));
        }
        if self.workers < 1 {
            return Err(BoundsError::Config("workers must be at least 1".into()));
        }
        if u32::try_from(self.paths_per_run).is_err() || u32::try_from(self.runs).is_err() {
            return Err(BoundsError::Config("paths_per_run and runs must fit in 32 bits".into()));
        }
        Ok(())
    }

    /// Simulated paths in one run.
    pub fn paths_in_run(&self) -> usize {
        if self.antithetic {
            2 * self.paths_per_run
        } else {
            self.paths_per_run
        }
    }
}

#[derive(Debug, Error)]
pub enum BoundsError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error("path {index} of run {run} (seed {seed}, mirrored {mirrored}): {source}")]
    Path {
        run: u32,
        index: u32,
        seed: u64,
        mirrored: bool,
        #[source]
        source: MarketError,
    },
    #[error(transparent)]
    CertaintyEquivalent(#[from] CertaintyEquivalentError),
    #[error("worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundKind {
    Lower,
    Upper,
}

impl BoundKind {
    pub fn name(self) -> &'static str {
        match self {
            BoundKind::Lower => "lower",
            BoundKind::Upper => "upper",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundEstimate {
    pub kind: BoundKind,
    /// `None` for lower bounds.
    pub penalty: Option<PenaltyKind>,
    pub parameter_set: Option<u8>,
    pub gamma: f64,
    pub params_hash: String,
    pub config: RunConfig,
    pub run_means: Vec<f64>,
    pub mean: f64,
    pub stderr: f64,
    pub ce_run_means: Vec<f64>,
    pub ce_mean: f64,
    pub ce_stderr: f64,
    /// Inner problems stopped at the Newton cap; always 0 for lower bounds.
    pub flagged_paths: usize,
    pub total_paths: usize,
}

impl BoundEstimate {
    /// Upper bounds with 1% or more flagged paths are rejected.
    pub fn accepted(&self) -> bool {
        100 * self.flagged_paths < self.total_paths
    }

    pub fn csv_row(&self) -> CsvRow {
        CsvRow {
            parameter_set: self
                .parameter_set
                .map_or_else(|| "custom".to_string(), |id| id.to_string()),
            gamma: self.gamma,
            bound_type: self.kind.name().to_string(),
            penalty: self.penalty.map_or("none", PenaltyKind::name).to_string(),
            value_mean: self.mean,
            value_stderr: self.stderr,
            ce_mean: self.ce_mean,
            ce_stderr: self.ce_stderr,
            paths_per_run: self.config.paths_per_run,
            runs: self.config.runs,
            seed: self.config.seed,
            flagged_paths: self.flagged_paths,
        }
    }
}

/// One line of the aggregate bounds table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvRow {
    pub parameter_set: String,
    pub gamma: f64,
    pub bound_type: String,
    pub penalty: String,
    pub value_mean: f64,
    pub value_stderr: f64,
    pub ce_mean: f64,
    pub ce_stderr: f64,
    pub paths_per_run: usize,
    pub runs: usize,
    pub seed: u64,
    pub flagged_paths: usize,
}

/// `sum_k alpha beta^(k delta) U(C_k) delta + (1 - alpha) beta^(K delta) U(W_K)`.
pub fn path_utility(p: &ModelParams, consumption: &[f64], terminal_wealth: f64) -> f64 {
    let mut total = 0.0;
    if p.alpha > 0.0 {
        for (k, &c) in consumption.iter().enumerate() {
            total += p.alpha * p.discount(k) * crra(c, p.gamma) * p.delta;
        }
    }
    if p.alpha < 1.0 {
        total += (1.0 - p.alpha) * p.discount(consumption.len()) * crra(terminal_wealth, p.gamma);
    }
    total
}

fn realized_utility(p: &ModelParams, path: &MarketPath) -> f64 {
    path_utility(p, &path.consumption, *path.wealth.last().expect("wealth has K + 1 entries"))
}

/// Penalized perfect-foresight objective in `x = (Pi_0, C_0, ..., Pi_{K-1}, C_{K-1})`.
///
/// Wealth is affine in `x`: `W_k(x) = wealth_const[k] + wealth_lin.row(k) x`.
#[derive(Debug, Clone)]
pub struct InnerObjective {
    pub n: usize,
    pub periods: usize,
    pub gamma: f64,
    /// `alpha beta^(k delta) delta` per stage.
    pub consumption_weight: Vec<f64>,
    /// `(1 - alpha) beta^(K delta)`.
    pub terminal_weight: f64,
    pub wealth_const: Vec<f64>,
    pub wealth_lin: DMatrix<f64>,
    pub penalty: PenaltyForm,
    penalty_flat: Vec<f64>,
}

impl InnerObjective {
    fn c_index(&self, k: usize) -> usize {
        k * (self.n + 1) + self.n
    }

    pub fn wealth(&self, k: usize, x: &[f64]) -> f64 {
        self.wealth_const[k] + self.wealth_lin.row(k).iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Utility of `x` before the penalty.
    pub fn utility(&self, x: &[f64]) -> f64 {
        let mut total = 0.0;
        for (k, &w) in self.consumption_weight.iter().enumerate() {
            if w > 0.0 {
                let c = x[self.c_index(k)];
                if !(c > 0.0) {
                    return f64::NEG_INFINITY;
                }
                total += w * crra(c, self.gamma);
            }
        }
        if self.terminal_weight > 0.0 {
            let wk = self.wealth(self.periods, x);
            if !(wk > 0.0) {
                return f64::NEG_INFINITY;
            }
            total += self.terminal_weight * crra(wk, self.gamma);
        }
        total
    }

    /// Decision vector in this layout from amounts.
    pub fn pack(&self, holdings: &[Vec<f64>], consumption: &[f64]) -> Vec<f64> {
        holdings
            .iter()
            .zip(consumption)
            .flat_map(|(h, c)| h.iter().copied().chain(std::iter::once(*c)))
            .collect()
    }
}

impl Objective for InnerObjective {
    fn dim(&self) -> usize {
        self.periods * (self.n + 1)
    }

    fn value(&self, x: &[f64]) -> f64 {
        let linear: f64 = self.penalty_flat.iter().zip(x).map(|(a, b)| a * b).sum();
        self.utility(x) - (self.penalty.constant + linear)
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        for (g, l) in grad.iter_mut().zip(&self.penalty_flat) {
            *g = -l;
        }
        for (k, &w) in self.consumption_weight.iter().enumerate() {
            if w > 0.0 {
                let j = self.c_index(k);
                grad[j] += w * x[j].powf(-self.gamma);
            }
        }
        if self.terminal_weight > 0.0 {
            let s = self.terminal_weight * self.wealth(self.periods, x).powf(-self.gamma);
            for (g, a) in grad.iter_mut().zip(self.wealth_lin.row(self.periods).iter()) {
                *g += s * a;
            }
        }
    }

    fn hessian(&self, x: &[f64], hess: &mut DMatrix<f64>) {
        for (k, &w) in self.consumption_weight.iter().enumerate() {
            if w > 0.0 {
                let j = self.c_index(k);
                hess[(j, j)] -= self.gamma * w * x[j].powf(-self.gamma - 1.0);
            }
        }
        if self.terminal_weight > 0.0 {
            let s = -self.gamma * self.terminal_weight * self.wealth(self.periods, x).powf(-self.gamma - 1.0);
            let a: DVector<f64> = self.wealth_lin.row(self.periods).transpose();
            hess.ger(s, &a, &a, 1.0);
        }
    }
}

/// Inner problem of one path: objective, constraints and a strictly feasible start.
///
/// Rows: `C_k + R_f 1'Pi_k - R_f W_k(x) <= 0`, `C_k >= 1e-10`, `W_K(x) >= 1e-10`;
/// `Pi_k >= 0` through the mask. `C_k >= 0` is implied by its guard row.
pub fn assemble_inner(
    p: &ModelParams,
    form: &PenaltyForm,
    ctx: &PenaltyContext,
) -> (InnerObjective, LinearConstraints, Vec<f64>) {
    let n = p.n;
    let k_max = ctx.periods();
    let m = k_max * (n + 1);
    let rf = p.gross_rf();
    let returns = &ctx.baseline.returns;

    let mut wealth_const = Vec::with_capacity(k_max + 1);
    let mut wealth_lin = DMatrix::zeros(k_max + 1, m);
    wealth_const.push(p.w0);
    for k in 0..k_max {
        wealth_const.push(rf * wealth_const[k]);
        let prev = wealth_lin.row(k) * rf;
        wealth_lin.row_mut(k + 1).copy_from(&prev);
        let base = k * (n + 1);
        for i in 0..n {
            wealth_lin[(k + 1, base + i)] += returns[k][i] - rf;
        }
        wealth_lin[(k + 1, base + n)] -= 1.0;
    }

    let rows = 2 * k_max + 1;
    let mut a = DMatrix::zeros(rows, m);
    let mut b = DVector::zeros(rows);
    for k in 0..k_max {
        let base = k * (n + 1);
        for j in 0..m {
            a[(k, j)] = -rf * wealth_lin[(k, j)];
        }
        for i in 0..n {
            a[(k, base + i)] += rf;
        }
        a[(k, base + n)] += 1.0;
        b[k] = rf * wealth_const[k];

        a[(k_max + k, base + n)] = -1.0;
        b[k_max + k] = -DOMAIN_GUARD;
    }
    for j in 0..m {
        a[(rows - 1, j)] = -wealth_lin[(k_max, j)];
    }
    b[rows - 1] = wealth_const[k_max] - DOMAIN_GUARD;
    let nonneg = (0..m).map(|j| j % (n + 1) != n).collect();
    let cons = LinearConstraints::new(a, b, nonneg);

    let objective = InnerObjective {
        n,
        periods: k_max,
        gamma: p.gamma,
        consumption_weight: (0..k_max).map(|k| p.alpha * p.discount(k) * p.delta).collect(),
        terminal_weight: (1.0 - p.alpha) * p.discount(k_max),
        wealth_const,
        wealth_lin,
        penalty_flat: form.flat_coefficients(),
        penalty: form.clone(),
    };
    let x0 = start_point(p, ctx);
    (objective, cons, x0)
}

/// Baseline fractions pulled `1e-4` toward the interior point, applied along
/// the realized returns.
fn start_point(p: &ModelParams, ctx: &PenaltyContext) -> Vec<f64> {
    let target = interior_decision(p.n);
    let mut x = Vec::with_capacity(ctx.periods() * (p.n + 1));
    let mut wealth = p.w0;
    for (k, dec) in ctx.baseline.decisions.iter().enumerate() {
        let frac: Vec<f64> = dec
            .pi
            .iter()
            .chain(std::iter::once(&dec.c))
            .zip(&target)
            .map(|(v, t)| (1.0 - START_BLEND) * v + START_BLEND * t)
            .collect();
        let holdings: Vec<f64> = frac[..p.n].iter().map(|f| f * wealth).collect();
        let cons = frac[p.n] * wealth;
        x.extend_from_slice(&holdings);
        x.push(cons);
        wealth = crate::market::step_wealth(wealth, &holdings, cons, &ctx.baseline.returns[k], p);
    }
    x
}

/// Outcome of one pathwise inner problem.
#[derive(Debug, Clone)]
pub struct InnerPathResult {
    pub value: f64,
    pub status: Status,
    /// Realized utility of the baseline policy on the same path.
    pub baseline_utility: f64,
    pub penalty_at_baseline: f64,
    pub x: Vec<f64>,
}

pub fn solve_inner_path(
    p: &ModelParams,
    vg: &ValueGrid,
    kind: PenaltyKind,
    shocks: &ShockPath,
) -> Result<InnerPathResult, MarketError> {
    let ctx = build_context(p, vg, vg, shocks)?;
    let form = kind.form(&ctx, p);
    let (objective, cons, x0) = assemble_inner(p, &form, &ctx);
    let sol = maximize(&objective, &cons, &x0, INNER_TOL);
    Ok(InnerPathResult {
        value: sol.f,
        status: sol.status,
        baseline_utility: realized_utility(p, &ctx.baseline),
        penalty_at_baseline: form.evaluate(&ctx.baseline.holdings(), &ctx.baseline.consumption),
        x: sol.x,
    })
}

struct PathValue {
    value: f64,
    flagged: bool,
}

/// Evaluate every path of every run and reduce per run in index order.
fn run_paths<F>(p: &ModelParams, cfg: &RunConfig, eval: F) -> Result<(Vec<f64>, usize), BoundsError>
where
    F: Fn(&ShockPath) -> Result<PathValue, MarketError> + Sync,
{
    cfg.validate()?;
    let units: Vec<(u32, u32)> = (0..cfg.runs as u32)
        .flat_map(|r| (0..cfg.paths_per_run as u32).map(move |i| (r, i)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| BoundsError::Pool(e.to_string()))?;
    let eval_unit = |&(run, index): &(u32, u32)| -> Result<Vec<PathValue>, BoundsError> {
        let shocks = ShockPath::seeded(cfg.seed, run, index, p.periods, p.n, p.d);
        let legs = if cfg.antithetic {
            vec![shocks.clone(), shocks.antithetic()]
        } else {
            vec![shocks]
        };
        legs.iter()
            .map(|leg| {
                eval(leg).map_err(|source| BoundsError::Path {
                    run,
                    index,
                    seed: cfg.seed,
                    mirrored: leg.mirrored,
                    source,
                })
            })
            .collect()
    };
    let results: Vec<Result<Vec<PathValue>, BoundsError>> =
        pool.install(|| units.par_iter().map(eval_unit).collect());

    let mut run_sums = vec![0.0; cfg.runs];
    let mut flagged = 0;
    for ((run, _), res) in units.iter().zip(results) {
        for pv in res? {
            run_sums[*run as usize] += pv.value;
            flagged += usize::from(pv.flagged);
        }
    }
    let per_run = cfg.paths_in_run() as f64;
    Ok((run_sums.into_iter().map(|s| s / per_run).collect(), flagged))
}

fn estimate(
    p: &ModelParams,
    cfg: &RunConfig,
    kind: BoundKind,
    penalty: Option<PenaltyKind>,
    run_means: Vec<f64>,
    flagged_paths: usize,
) -> Result<BoundEstimate, BoundsError> {
    let (mean, stderr) = run_statistics(&run_means);
    let ce_run_means = run_means
        .iter()
        .map(|&v| certainty_equivalent(v, p.gamma))
        .collect::<Result<Vec<_>, _>>()?;
    let (ce_mean, ce_stderr) = run_statistics(&ce_run_means);
    Ok(BoundEstimate {
        kind,
        penalty,
        parameter_set: p.published_id(),
        gamma: p.gamma,
        params_hash: p.content_hash(),
        config: cfg.clone(),
        run_means,
        mean,
        stderr,
        ce_run_means,
        ce_mean,
        ce_stderr,
        flagged_paths,
        total_paths: cfg.runs * cfg.paths_in_run(),
    })
}

/// Mean and standard error across run means.
pub fn run_statistics(run_means: &[f64]) -> (f64, f64) {
    crate::penalties::mean_stderr(run_means)
}

/// Simulated value of the grid policy.
pub fn lower_bound(p: &ModelParams, vg: &ValueGrid, cfg: &RunConfig) -> Result<BoundEstimate, BoundsError> {
    lower_bound_with_policy(p, vg, cfg)
}

pub fn lower_bound_with_policy<P: Policy + ?Sized>(
    p: &ModelParams,
    policy: &P,
    cfg: &RunConfig,
) -> Result<BoundEstimate, BoundsError> {
    let (run_means, _) = run_paths(p, cfg, |shocks| {
        let path = simulate_policy_path(p, policy, shocks)?;
        Ok(PathValue {
            value: realized_utility(p, &path),
            flagged: false,
        })
    })?;
    estimate(p, cfg, BoundKind::Lower, None, run_means, 0)
}

/// Mean of pathwise penalized foresight optima under `cfg.penalty`.
pub fn upper_bound(p: &ModelParams, vg: &ValueGrid, cfg: &RunConfig) -> Result<BoundEstimate, BoundsError> {
    let (run_means, flagged) = run_paths(p, cfg, |shocks| {
        let res = solve_inner_path(p, vg, cfg.penalty, shocks)?;
        Ok(PathValue {
            value: res.value,
            flagged: res.status != Status::Converged,
        })
    })?;
    estimate(p, cfg, BoundKind::Upper, Some(cfg.penalty), run_means, flagged)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DualityGap {
    pub value_gap_frac: f64,
    pub ce_gap_frac: f64,
}

/// Gap of the tighter of two upper bounds, relative to the lower bound.
pub fn duality_gap(lower: &BoundEstimate, upper_m1: &BoundEstimate, upper_m2: &BoundEstimate) -> DualityGap {
    gap_from_means(
        lower.mean,
        lower.ce_mean,
        upper_m1.mean.min(upper_m2.mean),
        upper_m1.ce_mean.min(upper_m2.ce_mean),
    )
}

pub fn gap_from_means(lower: f64, lower_ce: f64, upper: f64, upper_ce: f64) -> DualityGap {
    DualityGap {
        value_gap_frac: (upper - lower) / lower.abs(),
        ce_gap_frac: (upper_ce - lower_ce) / lower_ce.abs(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{parameter_set, Decision};

    #[test]
    fn config_validation() {
        let mut cfg = RunConfig::lower_default(1);
        assert!(cfg.validate().is_ok());
        cfg.runs = 1;
        assert!(matches!(cfg.validate(), Err(BoundsError::Config(_))));
        cfg.runs = 2;
        cfg.workers = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn all_cash_policy_has_a_deterministic_value() {
        let mut p = parameter_set(1).unwrap();
        p.alpha = 0.0;
        p.beta = 1.0;
        let cash = |_: usize, _: f64, _: f64| Decision::cash(3);
        let cfg = RunConfig {
            paths_per_run: 5,
            runs: 3,
            ..RunConfig::lower_default(7)
        };
        let est = lower_bound_with_policy(&p, &cash, &cfg).unwrap();
        let expected = crra(p.w0 * p.gross_rf().powi(p.periods as i32), p.gamma);
        for v in &est.run_means {
            assert!((v - expected).abs() <= 1e-14 * expected.abs());
        }
        assert!(est.stderr < 1e-14);
        assert_eq!(est.total_paths, 30);
    }

    #[test]
    fn gap_of_equal_bounds_is_zero() {
        let g = gap_from_means(-5.0, 0.13, -5.0, 0.13);
        assert_eq!(g.value_gap_frac, 0.0);
        assert_eq!(g.ce_gap_frac, 0.0);
        let g = gap_from_means(-5.480, 0.1332, -5.392, 0.1376);
        assert!((g.value_gap_frac - 0.0161).abs() < 1e-4);
    }

    #[test]
    fn inadmissible_paths_carry_their_replay_address() {
        let p = parameter_set(1).unwrap();
        let bad = |k: usize, _: f64, _: f64| Decision {
            pi: vec![0.0; 3],
            c: if k == 2 { 5.0 } else { 0.0 },
        };
        let err = lower_bound_with_policy(&p, &bad, &RunConfig::lower_default(11)).unwrap_err();
        match err {
            BoundsError::Path { run, index, seed, .. } => assert_eq!((run, index, seed), (0, 0, 11)),
            other => panic!("unexpected {other}"),
        }
    }
}
