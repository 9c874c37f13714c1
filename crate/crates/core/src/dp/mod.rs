//! Grid-based backward recursion for the wealth-free value factor `J_k(phi)`
//! of the CRRA portfolio problem, plus the piecewise-linear extensions of the
//! value factor, its slope and the grid policy off the grid.

mod bellman;
mod quadrature;
mod transition;

pub use bellman::{BellmanObjective, WEALTH_GUARD};
pub use quadrature::{build_quadrature, hermite_rule, QuadratureRule};
pub use transition::{build_phi_transition, normal_cdf, normal_sf, PhiTransition};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::concave::{maximize_with, BarrierOptions, Status};
use crate::market::{Decision, MarketError, ModelParams, Policy};

#[derive(Debug, Error)]
pub enum DpError {
    #[error("unsupported quadrature order {0}; use 3, 5 or 7")]
    UnsupportedQuadrature(usize),
    #[error("quadrature dimension {0} outside 1..=4")]
    QuadratureDimension(usize),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("Bellman node solve failed at stage {stage}, phi = {phi}: {status:?}")]
    NodeFailure { stage: usize, phi: f64, status: Status },
    #[error(transparent)]
    Market(#[from] MarketError),
}

/// Equally spaced state grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub nodes: usize,
    pub lo: f64,
    pub hi: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            nodes: 21,
            lo: -2.0,
            hi: 2.0,
        }
    }
}

impl GridSpec {
    pub fn points(&self) -> Result<Vec<f64>, DpError> {
        if self.nodes < 2 || !(self.hi > self.lo) {
            return Err(DpError::InvalidGrid(format!(
                "need at least 2 nodes on a nonempty range, got {} on [{}, {}]",
                self.nodes, self.lo, self.hi
            )));
        }
        Ok(uniform_grid(self.nodes, self.lo, self.hi))
    }
}

pub fn uniform_grid(nodes: usize, lo: f64, hi: f64) -> Vec<f64> {
    let last = (nodes - 1) as f64;
    (0..nodes).map(|i| lo + (hi - lo) * i as f64 / last).collect()
}

/// Value factors, nodal slopes and grid policy for every stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueGrid {
    pub grid: Vec<f64>,
    /// `values[k][i] = J_k(grid[i])` for `k = 0..=K`.
    pub values: Vec<Vec<f64>>,
    /// `slopes[k][i]`: slope of the interpolant at node `i`, averaged across
    /// the two adjacent segments at interior nodes; `k = 0..K`.
    pub slopes: Vec<Vec<f64>>,
    /// `policy[k][i]` for `k = 0..K`.
    pub policy: Vec<Vec<Decision>>,
    pub gross_rf: f64,
}

/// Strictly feasible reference point `(eps/n 1, eps)` for node problems.
pub fn interior_decision(n: usize) -> Vec<f64> {
    const EPS: f64 = 1e-3;
    let mut x = vec![EPS / n as f64; n];
    x.push(EPS);
    x
}

/// Solve the recursion on `grid` with one quadrature rule and φ-transition.
///
/// Node problems run in parallel within a stage; each one warm-starts from the
/// same node's stage `k + 1` solution pulled slightly toward the interior point.
pub fn backward_recursion(
    p: &ModelParams,
    grid: &[f64],
    rule: &QuadratureRule,
    transition: &PhiTransition,
    opts: &BarrierOptions,
) -> Result<ValueGrid, DpError> {
    p.validate()?;
    if grid.len() < 2 || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(DpError::InvalidGrid("grid must be strictly increasing with 2+ nodes".into()));
    }
    if rule.dims() != p.n {
        return Err(DpError::QuadratureDimension(rule.dims()));
    }
    let n_nodes = grid.len();
    let k_max = p.periods;
    let terminal = (1.0 - p.alpha) / (1.0 - p.gamma);

    let mut values = vec![vec![0.0; n_nodes]; k_max + 1];
    values[k_max] = vec![terminal; n_nodes];
    let mut policy = vec![Vec::new(); k_max];
    let interior = interior_decision(p.n);
    let mut previous: Vec<Vec<f64>> = vec![interior.clone(); n_nodes];

    for k in (0..k_max).rev() {
        let next = &values[k + 1];
        let solved: Vec<Result<(f64, Vec<f64>), DpError>> = (0..n_nodes)
            .into_par_iter()
            .map(|i| {
                let expected = transition.expect_row(i, next);
                let obj = BellmanObjective::new(p, grid[i], rule, expected);
                let cons = obj.constraints();
                let theta = 1e-3;
                let x0: Vec<f64> = previous[i]
                    .iter()
                    .zip(&interior)
                    .map(|(a, b)| (1.0 - theta) * a + theta * b)
                    .collect();
                let x0 = if cons.is_strictly_feasible(&x0) { x0 } else { interior.clone() };
                let sol = maximize_with(&obj, &cons, &x0, opts);
                if !sol.converged() {
                    return Err(DpError::NodeFailure {
                        stage: k,
                        phi: grid[i],
                        status: sol.status,
                    });
                }
                Ok((sol.f, sol.x))
            })
            .collect();

        let mut stage_policy = Vec::with_capacity(n_nodes);
        for (i, res) in solved.into_iter().enumerate() {
            let (f, x) = res?;
            values[k][i] = f;
            stage_policy.push(Decision {
                pi: x[..p.n].to_vec(),
                c: x[p.n],
            });
            previous[i] = x;
        }
        policy[k] = stage_policy;
    }

    let slopes = values[..k_max].iter().map(|v| nodal_slopes(grid, v)).collect();
    Ok(ValueGrid {
        grid: grid.to_vec(),
        values,
        slopes,
        policy,
        gross_rf: p.gross_rf(),
    })
}

/// Build the grid, transition and rule from settings and run the recursion.
pub fn solve_value_grid(p: &ModelParams, spec: &GridSpec, quad_points: usize) -> Result<ValueGrid, DpError> {
    let grid = spec.points()?;
    let rule = build_quadrature(quad_points, p.n)?;
    let transition = build_phi_transition(&grid, p);
    backward_recursion(p, &grid, &rule, &transition, &BarrierOptions::with_tol(1e-8))
}

fn nodal_slopes(grid: &[f64], values: &[f64]) -> Vec<f64> {
    let seg: Vec<f64> = grid
        .windows(2)
        .zip(values.windows(2))
        .map(|(g, v)| (v[1] - v[0]) / (g[1] - g[0]))
        .collect();
    let n = grid.len();
    (0..n)
        .map(|i| match i {
            0 => seg[0],
            _ if i + 1 == n => seg[n - 2],
            _ => 0.5 * (seg[i - 1] + seg[i]),
        })
        .collect()
}

impl ValueGrid {
    pub fn stages(&self) -> usize {
        self.policy.len()
    }

    /// Segment index `i` with `grid[i] <= phi <= grid[i+1]`, clamped to the
    /// boundary segments.
    fn segment(&self, phi: f64) -> usize {
        let n = self.grid.len();
        match self.grid.partition_point(|&g| g <= phi) {
            0 => 0,
            i if i >= n => n - 2,
            i => i - 1,
        }
    }

    /// Piecewise-linear `J_k(phi)`, continued linearly past the end nodes.
    pub fn interpolate_j(&self, k: usize, phi: f64) -> f64 {
        let i = self.segment(phi);
        let (g0, g1) = (self.grid[i], self.grid[i + 1]);
        let (v0, v1) = (self.values[k][i], self.values[k][i + 1]);
        v0 + (v1 - v0) * (phi - g0) / (g1 - g0)
    }

    /// Slope of the interpolant: segment slope between nodes, the average of
    /// the two adjacent segments exactly at an interior node, and the boundary
    /// segment slope at or beyond the end nodes.
    pub fn gradient_j(&self, k: usize, phi: f64) -> f64 {
        let n = self.grid.len();
        let seg_slope = |i: usize| {
            (self.values[k][i + 1] - self.values[k][i]) / (self.grid[i + 1] - self.grid[i])
        };
        if phi <= self.grid[0] {
            return seg_slope(0);
        }
        if phi >= self.grid[n - 1] {
            return seg_slope(n - 2);
        }
        if let Ok(i) = self.grid.binary_search_by(|g| g.total_cmp(&phi)) {
            return 0.5 * (seg_slope(i - 1) + seg_slope(i));
        }
        seg_slope(self.segment(phi))
    }

    /// Interpolated nodal policy (constant beyond the end nodes), projected
    /// onto the admissible set.
    pub fn policy_lookup(&self, k: usize, phi: f64) -> Decision {
        let nodes = &self.policy[k];
        let n = self.grid.len();
        let raw = if phi <= self.grid[0] {
            nodes[0].clone()
        } else if phi >= self.grid[n - 1] {
            nodes[n - 1].clone()
        } else {
            let i = self.segment(phi);
            let w = (phi - self.grid[i]) / (self.grid[i + 1] - self.grid[i]);
            let (a, b) = (&nodes[i], &nodes[i + 1]);
            Decision {
                pi: a.pi.iter().zip(&b.pi).map(|(x, y)| x + w * (y - x)).collect(),
                c: a.c + w * (b.c - a.c),
            }
        };
        project_admissible(raw, self.gross_rf)
    }
}

impl Policy for ValueGrid {
    fn decide(&self, stage: usize, phi: f64, _wealth: f64) -> Decision {
        self.policy_lookup(stage, phi)
    }
}

/// Euclidean projection of `pi` onto `{pi >= 0, 1'pi <= 1}`, then `c` clamped
/// to `[0, R_f (1 - 1'pi)]`.
pub fn project_admissible(mut d: Decision, gross_rf: f64) -> Decision {
    d.pi.iter_mut().for_each(|v| *v = v.max(0.0));
    let total: f64 = d.pi.iter().sum();
    let on_simplex = total > 1.0;
    if on_simplex {
        let mut sorted = d.pi.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let mut cumsum = 0.0;
        let mut tau = 0.0;
        for (j, v) in sorted.iter().enumerate() {
            cumsum += v;
            let candidate = (cumsum - 1.0) / (j + 1) as f64;
            if v - candidate > 0.0 {
                tau = candidate;
            }
        }
        d.pi.iter_mut().for_each(|v| *v = (*v - tau).max(0.0));
    }
    // A projected point sits on the face 1'pi = 1, where no consumption fits.
    let cap = if on_simplex {
        0.0
    } else {
        (gross_rf * (1.0 - d.pi.iter().sum::<f64>())).max(0.0)
    };
    d.c = d.c.clamp(0.0, cap);
    d
}

pub const VALUE_GRID_FORMAT: &str = "infrelax-value-grid";
pub const VALUE_GRID_VERSION: u32 = 1;

/// On-disk form of a solved grid, tied to its parameters by content hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValueGridFile {
    pub format: String,
    pub version: u32,
    pub params_hash: String,
    pub params: ModelParams,
    pub grid_spec: GridSpec,
    pub quadrature_points: usize,
    pub value_grid: ValueGrid,
}

impl ValueGridFile {
    pub fn new(params: ModelParams, grid_spec: GridSpec, quadrature_points: usize, value_grid: ValueGrid) -> Self {
        Self {
            format: VALUE_GRID_FORMAT.to_string(),
            version: VALUE_GRID_VERSION,
            params_hash: params.content_hash(),
            params,
            grid_spec,
            quadrature_points,
            value_grid,
        }
    }

    /// Format, version and hash consistency.
    pub fn check(&self) -> Result<(), String> {
        if self.format != VALUE_GRID_FORMAT {
            return Err(format!("not a value grid file (format {:?})", self.format));
        }
        if self.version != VALUE_GRID_VERSION {
            return Err(format!(
                "value grid version {} is not supported (expected {VALUE_GRID_VERSION})",
                self.version
            ));
        }
        if self.params.content_hash() != self.params_hash {
            return Err("stored params_hash does not match the stored parameters".into());
        }
        Ok(())
    }
}
