//! Exact duality on small finite MDPs.
//!
//! Everything here is computed by enumeration: backward induction for the
//! primal value, every scenario sequence for the dual expectation, and every
//! action sequence for the inner deterministic problem unless the penalty is
//! stage-separable.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest number of scenario or action sequences enumerated.
pub const ENUMERATION_LIMIT: u64 = 1_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum MdpError {
    #[error("invalid MDP: {0}")]
    Invalid(String),
    #[error("{what} needs {count} sequences, above the enumeration limit of {ENUMERATION_LIMIT}")]
    SizeGuard { what: &'static str, count: String },
    #[error("expected {expected} entries, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("duality checks failed: {0:?}")]
    Duality(Box<DualityViolation>),
}

/// A state given either by index or by label in a JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StateRef {
    Index(usize),
    Label(String),
}

/// JSON form of a finite MDP.
///
/// `transition[s][a][o]` is the successor state; `stage_reward[k][s][a]` the
/// reward. `stage_outcome_probs`, when present, overrides `outcome_probs`
/// stage by stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpDocument {
    pub horizon: usize,
    pub states: Vec<String>,
    pub actions: Vec<String>,
    pub outcomes: Vec<String>,
    pub outcome_probs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage_outcome_probs: Option<Vec<Vec<f64>>>,
    pub transition: Vec<Vec<Vec<StateRef>>>,
    pub stage_reward: Vec<Vec<Vec<f64>>>,
    pub terminal_reward: Vec<f64>,
    pub initial_state: StateRef,
}

/// A validated finite MDP with index-based tables.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMdp {
    horizon: usize,
    states: Vec<String>,
    actions: Vec<String>,
    outcomes: Vec<String>,
    probs: Vec<Vec<f64>>,
    transition: Vec<Vec<Vec<usize>>>,
    stage_reward: Vec<Vec<Vec<f64>>>,
    terminal_reward: Vec<f64>,
    initial_state: usize,
}

impl FiniteMdp {
    pub fn from_json(text: &str) -> Result<Self, MdpError> {
        let doc: MdpDocument =
            serde_json::from_str(text).map_err(|e| MdpError::Invalid(e.to_string()))?;
        Self::new(doc)
    }

    pub fn new(doc: MdpDocument) -> Result<Self, MdpError> {
        let bad = |msg: String| Err(MdpError::Invalid(msg));
        let (ns, na, no) = (doc.states.len(), doc.actions.len(), doc.outcomes.len());
        if doc.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if ns == 0 || na == 0 || no == 0 {
            return bad("states, actions and outcomes must be nonempty".into());
        }
        let resolve = |r: &StateRef| -> Result<usize, MdpError> {
            match r {
                StateRef::Index(i) if *i < ns => Ok(*i),
                StateRef::Index(i) => Err(MdpError::Invalid(format!("state index {i} out of range"))),
                StateRef::Label(l) => doc
                    .states
                    .iter()
                    .position(|s| s == l)
                    .ok_or_else(|| MdpError::Invalid(format!("unknown state label {l:?}"))),
            }
        };

        let probs = match &doc.stage_outcome_probs {
            Some(table) if table.len() != doc.horizon => {
                return bad(format!("stage_outcome_probs needs {} rows", doc.horizon))
            }
            Some(table) => table.clone(),
            None => vec![doc.outcome_probs.clone(); doc.horizon],
        };
        for (k, row) in probs.iter().enumerate() {
            if row.len() != no {
                return bad(format!("stage {k}: {} outcome probabilities for {no} outcomes", row.len()));
            }
            if row.iter().any(|&p| !(p >= 0.0)) {
                return bad(format!("stage {k}: outcome probabilities must be nonnegative"));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > 1e-12 {
                return bad(format!("stage {k}: outcome probabilities sum to {total}"));
            }
        }

        if doc.transition.len() != ns {
            return bad(format!("transition needs {ns} state rows"));
        }
        let mut transition = Vec::with_capacity(ns);
        for (s, by_action) in doc.transition.iter().enumerate() {
            if by_action.len() != na {
                return bad(format!("transition[{s}] needs {na} action rows"));
            }
            let mut rows = Vec::with_capacity(na);
            for (a, by_outcome) in by_action.iter().enumerate() {
                if by_outcome.len() != no {
                    return bad(format!("transition[{s}][{a}] needs {no} outcomes"));
                }
                rows.push(by_outcome.iter().map(resolve).collect::<Result<Vec<_>, _>>()?);
            }
            transition.push(rows);
        }

        if doc.stage_reward.len() != doc.horizon
            || doc
                .stage_reward
                .iter()
                .any(|st| st.len() != ns || st.iter().any(|r| r.len() != na))
        {
            return bad(format!("stage_reward must be {} x {ns} x {na}", doc.horizon));
        }
        if doc.terminal_reward.len() != ns {
            return bad(format!("terminal_reward needs {ns} entries"));
        }
        let all_finite = doc.stage_reward.iter().flatten().flatten().all(|v| v.is_finite())
            && doc.terminal_reward.iter().all(|v| v.is_finite());
        if !all_finite {
            return bad("rewards must be finite".into());
        }
        let initial_state = resolve(&doc.initial_state)?;

        Ok(Self {
            horizon: doc.horizon,
            states: doc.states,
            actions: doc.actions,
            outcomes: doc.outcomes,
            probs,
            transition,
            stage_reward: doc.stage_reward,
            terminal_reward: doc.terminal_reward,
            initial_state,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn num_outcomes(&self) -> usize {
        self.outcomes.len()
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    pub fn state_label(&self, s: usize) -> &str {
        &self.states[s]
    }

    pub fn action_label(&self, a: usize) -> &str {
        &self.actions[a]
    }

    /// Probability of outcome `o` realized at the end of stage `k`.
    pub fn prob(&self, k: usize, o: usize) -> f64 {
        self.probs[k][o]
    }

    pub fn next_state(&self, s: usize, a: usize, o: usize) -> usize {
        self.transition[s][a][o]
    }

    pub fn reward(&self, k: usize, s: usize, a: usize) -> f64 {
        self.stage_reward[k][s][a]
    }

    pub fn terminal_reward(&self, s: usize) -> f64 {
        self.terminal_reward[s]
    }

    /// `E[v(f(s, a, V_{k+1}))]` over the stage-`k` outcome distribution.
    pub fn expect_next(&self, k: usize, s: usize, a: usize, v: &[f64]) -> f64 {
        (0..self.num_outcomes())
            .map(|o| self.probs[k][o] * v[self.transition[s][a][o]])
            .sum()
    }

    /// Number of outcome sequences, or the guard error.
    pub fn scenario_count(&self) -> Result<u64, MdpError> {
        sequence_count(self.num_outcomes(), self.horizon, "scenario enumeration")
    }

    /// Scenario number `index` in lexicographic order (stage 0 most significant).
    pub fn scenario(&self, index: u64) -> Scenario {
        let outcomes = decode(index, self.num_outcomes(), self.horizon);
        let probability = outcomes
            .iter()
            .enumerate()
            .map(|(k, &o)| self.probs[k][o])
            .product();
        Scenario {
            outcomes,
            probability,
        }
    }

    /// States `x_0..x_K` visited by `actions` under `scenario`.
    pub fn trajectory(&self, actions: &[usize], scenario: &Scenario) -> Result<Vec<usize>, MdpError> {
        self.check_lengths(actions, scenario)?;
        let mut states = Vec::with_capacity(self.horizon + 1);
        let mut s = self.initial_state;
        states.push(s);
        for (k, &a) in actions.iter().enumerate() {
            s = self.transition[s][a][scenario.outcomes[k]];
            states.push(s);
        }
        Ok(states)
    }

    /// `sum_k g_k(x_k, a_k) + Lambda(x_K)` along the induced trajectory.
    pub fn total_reward(&self, actions: &[usize], scenario: &Scenario) -> Result<f64, MdpError> {
        let states = self.trajectory(actions, scenario)?;
        let running: f64 = actions
            .iter()
            .enumerate()
            .map(|(k, &a)| self.stage_reward[k][states[k]][a])
            .sum();
        Ok(running + self.terminal_reward[states[self.horizon]])
    }

    fn check_lengths(&self, actions: &[usize], scenario: &Scenario) -> Result<(), MdpError> {
        for len in [actions.len(), scenario.outcomes.len()] {
            if len != self.horizon {
                return Err(MdpError::LengthMismatch {
                    expected: self.horizon,
                    got: len,
                });
            }
        }
        if let Some(&a) = actions.iter().find(|&&a| a >= self.num_actions()) {
            return Err(MdpError::Invalid(format!("action index {a} out of range")));
        }
        if let Some(&o) = scenario.outcomes.iter().find(|&&o| o >= self.num_outcomes()) {
            return Err(MdpError::Invalid(format!("outcome index {o} out of range")));
        }
        Ok(())
    }
}

fn sequence_count(base: usize, len: usize, what: &'static str) -> Result<u64, MdpError> {
    let count = (base as u64).checked_pow(len as u32);
    match count {
        Some(c) if c <= ENUMERATION_LIMIT => Ok(c),
        _ => Err(MdpError::SizeGuard {
            what,
            count: format!("{base}^{len}"),
        }),
    }
}

/// Mixed-radix digits of `index`, most significant first.
fn decode(mut index: u64, base: usize, len: usize) -> Vec<usize> {
    let mut digits = vec![0; len];
    for slot in digits.iter_mut().rev() {
        *slot = (index % base as u64) as usize;
        index /= base as u64;
    }
    digits
}

/// One outcome sequence `(v_1, ..., v_K)` and its probability.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub outcomes: Vec<usize>,
    pub probability: f64,
}

/// Backward-induction values and the lowest-index argmax policy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageValues {
    /// `values[k][s]` for `k = 0..=K`.
    pub values: Vec<Vec<f64>>,
    /// `policy[k][s]` for `k = 0..K`.
    pub policy: Vec<Vec<usize>>,
}

impl StageValues {
    pub fn initial_value(&self, mdp: &FiniteMdp) -> f64 {
        self.values[0][mdp.initial_state]
    }
}

pub fn solve_dp(mdp: &FiniteMdp) -> StageValues {
    let k_max = mdp.horizon;
    let mut values = vec![Vec::new(); k_max + 1];
    let mut policy = vec![Vec::new(); k_max];
    values[k_max] = mdp.terminal_reward.clone();
    for k in (0..k_max).rev() {
        let (v, pol): (Vec<f64>, Vec<usize>) = (0..mdp.num_states())
            .map(|s| {
                let mut best = (f64::NEG_INFINITY, 0);
                for a in 0..mdp.num_actions() {
                    let q = mdp.stage_reward[k][s][a] + mdp.expect_next(k, s, a, &values[k + 1]);
                    if q > best.0 {
                        best = (q, a);
                    }
                }
                best
            })
            .unzip();
        values[k] = v;
        policy[k] = pol;
    }
    StageValues { values, policy }
}

/// A penalty `M(a, v)` on action and outcome sequences.
pub trait Penalty: Sync {
    fn evaluate(&self, mdp: &FiniteMdp, actions: &[usize], scenario: &Scenario) -> Result<f64, MdpError>;

    /// `m_k(x_k, a_k, v_{k+1})` when `M = sum_k m_k`; `None` for a penalty
    /// that couples stages. A `Some` answer enables the stagewise inner solve.
    fn stage_term(&self, _mdp: &FiniteMdp, _k: usize, _s: usize, _a: usize, _o: usize) -> Option<f64> {
        None
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPenalty;

impl Penalty for ZeroPenalty {
    fn evaluate(&self, mdp: &FiniteMdp, actions: &[usize], scenario: &Scenario) -> Result<f64, MdpError> {
        mdp.check_lengths(actions, scenario)?;
        Ok(0.0)
    }

    fn stage_term(&self, _: &FiniteMdp, _: usize, _: usize, _: usize, _: usize) -> Option<f64> {
        Some(0.0)
    }
}

/// The value-function penalty `sum_k V_{k+1}(x_{k+1}) - E[V_{k+1} | x_k, a_k]`.
#[derive(Debug, Clone)]
pub struct OptimalPenalty {
    pub values: StageValues,
}

impl OptimalPenalty {
    pub fn new(values: StageValues) -> Self {
        Self { values }
    }
}

impl Penalty for OptimalPenalty {
    fn evaluate(&self, mdp: &FiniteMdp, actions: &[usize], scenario: &Scenario) -> Result<f64, MdpError> {
        optimal_penalty_value(mdp, &self.values, actions, scenario)
    }

    fn stage_term(&self, mdp: &FiniteMdp, k: usize, s: usize, a: usize, o: usize) -> Option<f64> {
        let next = &self.values.values[k + 1];
        Some(next[mdp.next_state(s, a, o)] - mdp.expect_next(k, s, a, next))
    }
}

/// `factor * M`; dual feasible whenever `M` is.
pub struct ScaledPenalty<P> {
    pub inner: P,
    pub factor: f64,
}

impl<P: Penalty> Penalty for ScaledPenalty<P> {
    fn evaluate(&self, mdp: &FiniteMdp, actions: &[usize], scenario: &Scenario) -> Result<f64, MdpError> {
        Ok(self.factor * self.inner.evaluate(mdp, actions, scenario)?)
    }

    fn stage_term(&self, mdp: &FiniteMdp, k: usize, s: usize, a: usize, o: usize) -> Option<f64> {
        self.inner.stage_term(mdp, k, s, a, o).map(|m| self.factor * m)
    }
}

pub fn optimal_penalty_value(
    mdp: &FiniteMdp,
    sv: &StageValues,
    actions: &[usize],
    scenario: &Scenario,
) -> Result<f64, MdpError> {
    let states = mdp.trajectory(actions, scenario)?;
    Ok((0..mdp.horizon)
        .map(|k| {
            let next = &sv.values[k + 1];
            next[states[k + 1]] - mdp.expect_next(k, states[k], actions[k], next)
        })
        .sum())
}

/// `sum g + Lambda - M` for one action sequence on one scenario.
pub fn inner_objective<P: Penalty + ?Sized>(
    mdp: &FiniteMdp,
    penalty: &P,
    actions: &[usize],
    scenario: &Scenario,
) -> Result<f64, MdpError> {
    Ok(mdp.total_reward(actions, scenario)? - penalty.evaluate(mdp, actions, scenario)?)
}

/// Best action sequence with the scenario known in advance. Ties go to the
/// lexicographically smallest sequence.
pub fn inner_solve<P: Penalty + ?Sized>(
    mdp: &FiniteMdp,
    penalty: &P,
    scenario: &Scenario,
) -> Result<(Vec<usize>, f64), MdpError> {
    if scenario.outcomes.len() != mdp.horizon {
        return Err(MdpError::LengthMismatch {
            expected: mdp.horizon,
            got: scenario.outcomes.len(),
        });
    }
    if let Some(found) = stagewise_inner(mdp, penalty, scenario) {
        return Ok(found);
    }
    let count = sequence_count(mdp.num_actions(), mdp.horizon, "exhaustive inner solve")?;
    let mut best = (Vec::new(), f64::NEG_INFINITY);
    for index in 0..count {
        let actions = decode(index, mdp.num_actions(), mdp.horizon);
        let value = inner_objective(mdp, penalty, &actions, scenario)?;
        if value > best.1 {
            best = (actions, value);
        }
    }
    Ok(best)
}

/// Deterministic backward recursion on the known scenario, valid when every
/// stage term exists.
fn stagewise_inner<P: Penalty + ?Sized>(
    mdp: &FiniteMdp,
    penalty: &P,
    scenario: &Scenario,
) -> Option<(Vec<usize>, f64)> {
    let (k_max, ns, na) = (mdp.horizon, mdp.num_states(), mdp.num_actions());
    let mut value = mdp.terminal_reward.clone();
    let mut choice = vec![vec![0; ns]; k_max];
    for k in (0..k_max).rev() {
        let o = scenario.outcomes[k];
        let mut stage = vec![0.0; ns];
        for s in 0..ns {
            let mut best = (f64::NEG_INFINITY, 0);
            for a in 0..na {
                let m = penalty.stage_term(mdp, k, s, a, o)?;
                let q = mdp.stage_reward[k][s][a] - m + value[mdp.transition[s][a][o]];
                if q > best.0 {
                    best = (q, a);
                }
            }
            stage[s] = best.0;
            choice[k][s] = best.1;
        }
        value = stage;
    }
    let mut s = mdp.initial_state;
    let mut actions = Vec::with_capacity(k_max);
    for (k, row) in choice.iter().enumerate() {
        let a = row[s];
        actions.push(a);
        s = mdp.transition[s][a][scenario.outcomes[k]];
    }
    Some((actions, value[mdp.initial_state]))
}

/// `sum_v P(v) f(v)` over every scenario, summed in scenario index order.
fn scenario_expectation<F>(mdp: &FiniteMdp, f: F) -> Result<f64, MdpError>
where
    F: Fn(&Scenario) -> Result<f64, MdpError> + Sync,
{
    let count = mdp.scenario_count()?;
    let terms: Vec<f64> = (0..count)
        .into_par_iter()
        .map(|i| {
            let scenario = mdp.scenario(i);
            f(&scenario).map(|v| scenario.probability * v)
        })
        .collect::<Result<_, _>>()?;
    Ok(terms.iter().sum())
}

/// Exact dual bound `E[max_a (sum g + Lambda - M)]`.
pub fn dual_bound_exact<P: Penalty + ?Sized>(mdp: &FiniteMdp, penalty: &P) -> Result<f64, MdpError> {
    scenario_expectation(mdp, |s| inner_solve(mdp, penalty, s).map(|(_, v)| v))
}

/// Actions chosen by a Markov policy `policy[k][s]` along a scenario.
pub fn markov_actions(mdp: &FiniteMdp, policy: &[Vec<usize>], scenario: &Scenario) -> Vec<usize> {
    let mut s = mdp.initial_state;
    let mut actions = Vec::with_capacity(mdp.horizon);
    for (k, &o) in scenario.outcomes.iter().enumerate() {
        let a = policy[k][s];
        actions.push(a);
        s = mdp.transition[s][a][o];
    }
    actions
}

/// Exact `E[M(a(v), v)]` when actions follow a Markov policy.
pub fn expected_penalty<P: Penalty + ?Sized>(
    mdp: &FiniteMdp,
    penalty: &P,
    policy: &[Vec<usize>],
) -> Result<f64, MdpError> {
    scenario_expectation(mdp, |s| penalty.evaluate(mdp, &markov_actions(mdp, policy, s), s))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualityReport {
    pub v0: f64,
    pub zero_penalty_bound: f64,
    pub optimal_penalty_bound: f64,
    /// `E[M*]` under the DP-optimal policy.
    pub optimal_penalty_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "check", rename_all = "snake_case")]
pub enum DualityCheck {
    WeakDuality { bound: f64, v0: f64 },
    StrongDuality { bound: f64, v0: f64, gap: f64 },
    PenaltyMean { mean: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualityViolation {
    pub report: DualityReport,
    pub failures: Vec<DualityCheck>,
}

pub const STRONG_DUALITY_TOL: f64 = 1e-10;
pub const PENALTY_MEAN_TOL: f64 = 1e-12;

/// Primal value, zero- and optimal-penalty bounds, with weak duality, strong
/// duality and the zero-mean property of the optimal penalty checked.
pub fn verify_duality(mdp: &FiniteMdp) -> Result<DualityReport, MdpError> {
    let sv = solve_dp(mdp);
    let v0 = sv.initial_value(mdp);
    let zero = dual_bound_exact(mdp, &ZeroPenalty)?;
    let optimal = OptimalPenalty::new(sv.clone());
    let bound = dual_bound_exact(mdp, &optimal)?;
    let mean = expected_penalty(mdp, &optimal, &sv.policy)?;
    let report = DualityReport {
        v0,
        zero_penalty_bound: zero,
        optimal_penalty_bound: bound,
        optimal_penalty_mean: mean,
    };

    // Rounding in the scenario sum is allowed relative to the value scale.
    let scale = 1.0 + v0.abs();
    let mut failures = Vec::new();
    if zero < v0 - 1e-12 * scale {
        failures.push(DualityCheck::WeakDuality { bound: zero, v0 });
    }
    if (bound - v0).abs() > STRONG_DUALITY_TOL * scale {
        failures.push(DualityCheck::StrongDuality {
            bound,
            v0,
            gap: bound - v0,
        });
    }
    if mean.abs() > PENALTY_MEAN_TOL * scale {
        failures.push(DualityCheck::PenaltyMean { mean });
    }
    if failures.is_empty() {
        Ok(report)
    } else {
        Err(MdpError::Duality(Box::new(DualityViolation { report, failures })))
    }
}
