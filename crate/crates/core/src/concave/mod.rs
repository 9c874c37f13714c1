//! Log-barrier interior-point maximization of a smooth concave objective over
//! a polyhedron `{x : A x <= b, x_j >= 0 for masked j}`.
//!
//! The solver targets small dense problems (a few dozen variables) such as a
//! single Bellman node or a pathwise inner problem, so every Newton system is
//! assembled densely and factored by Cholesky.

mod kkt;

pub use kkt::{check_kkt, nnls, KktReport};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

/// A smooth concave objective with an open domain.
///
/// `value` must return `f64::NEG_INFINITY` (or any non-finite value) outside
/// the domain. `gradient` and `hessian` are only called inside the domain.
pub trait Objective {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], grad: &mut [f64]);
    fn hessian(&self, x: &[f64], hess: &mut DMatrix<f64>);

    fn in_domain(&self, x: &[f64]) -> bool {
        self.value(x).is_finite()
    }
}

/// Linear inequality rows `A x <= b` plus per-coordinate nonnegativity.
#[derive(Debug, Clone)]
pub struct LinearConstraints {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub nonneg: Vec<bool>,
}

impl LinearConstraints {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, nonneg: Vec<bool>) -> Self {
        assert_eq!(a.nrows(), b.len(), "row count of A must match b");
        assert_eq!(a.ncols(), nonneg.len(), "column count of A must match mask");
        Self { a, b, nonneg }
    }

    /// Only nonnegativity constraints on an `m`-dimensional variable.
    pub fn nonneg_only(m: usize, nonneg: Vec<bool>) -> Self {
        Self::new(DMatrix::zeros(0, m), DVector::zeros(0), nonneg)
    }

    pub fn dim(&self) -> usize {
        self.nonneg.len()
    }

    /// Total number of inequality constraints, nonnegativity included.
    pub fn count(&self) -> usize {
        self.a.nrows() + self.nonneg.iter().filter(|&&m| m).count()
    }

    /// `b - A x` for the general rows.
    pub fn row_slacks(&self, x: &[f64]) -> DVector<f64> {
        let xv = DVector::from_column_slice(x);
        &self.b - &self.a * xv
    }

    /// Largest violation over all constraints, 0 when feasible.
    pub fn violation(&self, x: &[f64]) -> f64 {
        let rows = self
            .row_slacks(x)
            .iter()
            .fold(0.0_f64, |acc, &s| acc.max(-s));
        self.nonneg
            .iter()
            .zip(x)
            .filter(|(m, _)| **m)
            .fold(rows, |acc, (_, &xj)| acc.max(-xj))
    }

    pub fn is_strictly_feasible(&self, x: &[f64]) -> bool {
        self.row_slacks(x).iter().all(|&s| s > 0.0)
            && self.nonneg.iter().zip(x).all(|(m, &xj)| !*m || xj > 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub x: Vec<f64>,
    pub f: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub status: Status,
    /// Objective value after each completed centering step.
    pub trace: Vec<f64>,
    /// Final barrier parameter.
    pub t: f64,
}

impl Solution {
    pub fn converged(&self) -> bool {
        self.status == Status::Converged
    }
}

#[derive(Debug, Clone)]
pub struct BarrierOptions {
    pub tol: f64,
    /// Cap on Newton steps summed over all centering steps.
    pub max_newton: usize,
    /// Barrier parameter growth per centering step.
    pub mu: f64,
    /// Newton decrement threshold `lambda^2 / 2` ending a centering step.
    pub center_tol: f64,
    /// Print one line per centering step to stderr.
    pub trace: bool,
}

impl Default for BarrierOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_newton: 200,
            mu: 20.0,
            center_tol: 1e-10,
            trace: false,
        }
    }
}

impl BarrierOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }
}

/// Maximize `oracle` over `cons` from a strictly feasible `x0`.
pub fn maximize<O: Objective + ?Sized>(
    oracle: &O,
    cons: &LinearConstraints,
    x0: &[f64],
    tol: f64,
) -> Solution {
    maximize_with(oracle, cons, x0, &BarrierOptions::with_tol(tol))
}

pub fn maximize_with<O: Objective + ?Sized>(
    oracle: &O,
    cons: &LinearConstraints,
    x0: &[f64],
    opts: &BarrierOptions,
) -> Solution {
    let m = cons.dim();
    assert_eq!(oracle.dim(), m, "objective and constraint dimensions differ");
    let f0 = oracle.value(x0);
    if x0.len() != m || !cons.is_strictly_feasible(x0) || !f0.is_finite() {
        return Solution {
            x: x0.to_vec(),
            f: f0,
            kkt_residual: f64::INFINITY,
            iterations: 0,
            status: Status::Infeasible,
            trace: Vec::new(),
            t: 0.0,
        };
    }

    let mut state = Barrier::new(oracle, cons);
    let n_cons = cons.count().max(1) as f64;
    let mut x = DVector::from_column_slice(x0);
    // Initial duality-gap estimate on the objective's own scale.
    let mut t = n_cons / f0.abs().max(1.0);
    let mut iterations = 0usize;
    let mut trace = Vec::new();
    let mut best_x = x.clone();
    let mut best_f = f0;

    loop {
        let ok = state.center(&mut x, t, opts, &mut iterations);
        let f = oracle.value(x.as_slice());
        if f > best_f {
            best_f = f;
            best_x.copy_from(&x);
        }
        trace.push(f);
        if opts.trace {
            eprintln!(
                "barrier: t={t:.3e} f={f:.12e} newton={iterations} gap={:.3e}",
                n_cons / t
            );
        }
        if !ok {
            break;
        }
        if n_cons / t <= opts.tol {
            let kkt = state
                .kkt_residual(x.as_slice(), t)
                .min(active_set_residual(oracle, cons, x.as_slice(), opts.tol));
            // A residual still above tol gets further centering steps until
            // the duality measure is four orders below tol.
            let status = if kkt <= opts.tol {
                if let Some((xp, fp, kp)) = snap_to_bounds(oracle, cons, x.as_slice(), f, opts.tol) {
                    trace.push(fp);
                    return Solution {
                        x: xp,
                        f: fp,
                        kkt_residual: kp,
                        iterations,
                        status: Status::Converged,
                        trace,
                        t,
                    };
                }
                Status::Converged
            } else if n_cons / t > 1e-4 * opts.tol {
                t *= opts.mu;
                continue;
            } else {
                Status::MaxIter
            };
            return Solution {
                x: x.as_slice().to_vec(),
                f,
                kkt_residual: kkt,
                iterations,
                status,
                trace,
                t,
            };
        }
        t *= opts.mu;
    }

    let kkt = state.kkt_residual(best_x.as_slice(), t);
    Solution {
        x: best_x.as_slice().to_vec(),
        f: best_f,
        kkt_residual: kkt,
        iterations,
        status: Status::MaxIter,
        trace,
        t,
    }
}

struct Barrier<'a, O: Objective + ?Sized> {
    oracle: &'a O,
    cons: &'a LinearConstraints,
    mask: Vec<usize>,
    grad_f: Vec<f64>,
    hess_f: DMatrix<f64>,
}

impl<'a, O: Objective + ?Sized> Barrier<'a, O> {
    fn new(oracle: &'a O, cons: &'a LinearConstraints) -> Self {
        let m = cons.dim();
        let mask = (0..m).filter(|&j| cons.nonneg[j]).collect();
        Self {
            oracle,
            cons,
            mask,
            grad_f: vec![0.0; m],
            hess_f: DMatrix::zeros(m, m),
        }
    }

    /// Barrier objective `-t f(x) - sum log(slack)`; `+inf` outside.
    fn phi(&self, x: &[f64], t: f64) -> f64 {
        let mut acc = 0.0;
        for s in self.cons.row_slacks(x).iter() {
            if *s <= 0.0 {
                return f64::INFINITY;
            }
            acc -= s.ln();
        }
        for &j in &self.mask {
            if x[j] <= 0.0 {
                return f64::INFINITY;
            }
            acc -= x[j].ln();
        }
        let f = self.oracle.value(x);
        if !f.is_finite() {
            return f64::INFINITY;
        }
        acc - t * f
    }

    /// Gradient and Hessian of the barrier objective.
    fn derivatives(&mut self, x: &[f64], t: f64) -> (DVector<f64>, DMatrix<f64>) {
        let m = self.cons.dim();
        self.oracle.gradient(x, &mut self.grad_f);
        self.hess_f.fill(0.0);
        self.oracle.hessian(x, &mut self.hess_f);
        let slacks = self.cons.row_slacks(x);
        let inv_s = slacks.map(|s| 1.0 / s);

        let mut g = DVector::from_fn(m, |j, _| -t * self.grad_f[j]);
        g += self.cons.a.tr_mul(&inv_s);
        let mut scaled = self.cons.a.clone();
        for (i, mut row) in scaled.row_iter_mut().enumerate() {
            row *= inv_s[i];
        }
        let mut h = scaled.tr_mul(&scaled);
        h -= &self.hess_f * t;
        for &j in &self.mask {
            g[j] -= 1.0 / x[j];
            h[(j, j)] += 1.0 / (x[j] * x[j]);
        }
        (g, h)
    }

    /// Newton centering at fixed `t`. Returns false when the Newton budget is
    /// exhausted or no further progress is possible.
    fn center(
        &mut self,
        x: &mut DVector<f64>,
        t: f64,
        opts: &BarrierOptions,
        iterations: &mut usize,
    ) -> bool {
        let mut phi_x = self.phi(x.as_slice(), t);
        let mut last_pure = f64::INFINITY;
        loop {
            if *iterations >= opts.max_newton {
                return false;
            }
            let (g, h) = self.derivatives(x.as_slice(), t);
            let step = match newton_direction(h, &g) {
                Some(d) => d,
                None => return false,
            };
            let decrement = -g.dot(&step);
            *iterations += 1;
            if !(decrement.is_finite()) {
                return false;
            }
            if decrement / 2.0 <= opts.center_tol {
                return true;
            }

            // Largest step keeping every slack positive.
            let mut alpha_max = f64::INFINITY;
            let ds = -(&self.cons.a * &step);
            let slacks = self.cons.row_slacks(x.as_slice());
            for (s, d) in slacks.iter().zip(ds.iter()) {
                if *d < 0.0 {
                    alpha_max = alpha_max.min(-s / d);
                }
            }
            for &j in &self.mask {
                if step[j] < 0.0 {
                    alpha_max = alpha_max.min(-x[j] / step[j]);
                }
            }
            let mut alpha = if alpha_max.is_finite() {
                (0.99 * alpha_max).min(1.0)
            } else {
                1.0
            };

            // Pure Newton region: the full step converges quadratically in the
            // gradient, while a value test cannot resolve changes below the
            // rounding floor of the barrier value.
            if decrement < 0.0625 && alpha_max > 1.0 / 0.99 {
                // Without quadratic contraction the decrement is rounding noise.
                if decrement > 0.5 * last_pure {
                    return true;
                }
                last_pure = decrement;
                let trial = &*x + &step;
                let phi_trial = self.phi(trial.as_slice(), t);
                if phi_trial.is_finite() && phi_trial <= phi_x + 1e-12 * phi_x.abs().max(1.0) {
                    x.copy_from(&trial);
                    phi_x = phi_trial;
                    continue;
                }
            }

            let slope = g.dot(&step);
            let mut accepted = false;
            let mut stalled = false;
            for _ in 0..80 {
                let trial = &*x + alpha * &step;
                let phi_trial = self.phi(trial.as_slice(), t);
                if phi_trial.is_finite() && phi_trial <= phi_x + 0.01 * alpha * slope {
                    stalled = phi_x - phi_trial <= 1e-14 * phi_x.abs().max(1.0);
                    x.copy_from(&trial);
                    phi_x = phi_trial;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                // Roundoff floor: the current point is as centred as it gets.
                return decrement / 2.0 <= 1e-6;
            }
            if stalled {
                // Progress is below the rounding floor of the barrier value.
                return true;
            }
        }
    }

    /// Scaled stationarity residual with barrier multipliers `1/(t s)`.
    fn kkt_residual(&mut self, x: &[f64], t: f64) -> f64 {
        self.oracle.gradient(x, &mut self.grad_f);
        let slacks = self.cons.row_slacks(x);
        let lambda = slacks.map(|s| 1.0 / (t * s));
        let mut r = DVector::from_column_slice(&self.grad_f);
        r -= self.cons.a.tr_mul(&lambda);
        for &j in &self.mask {
            r[j] += 1.0 / (t * x[j]);
        }
        let scale = self
            .grad_f
            .iter()
            .fold(1.0_f64, |acc, g| acc.max(g.abs()));
        r.amax() / scale
    }
}

/// Set masked coordinates within `sqrt(tol)` of zero, whose partial derivative
/// pushes them toward the bound, exactly to zero. Returns the polished point
/// only if it stays feasible, does not lower `f` and keeps the residual within
/// `tol`. The barrier otherwise leaves such coordinates at `O(1/sqrt(t))` when
/// the objective is nearly flat along them.
fn snap_to_bounds<O: Objective + ?Sized>(
    oracle: &O,
    cons: &LinearConstraints,
    x: &[f64],
    f: f64,
    tol: f64,
) -> Option<(Vec<f64>, f64, f64)> {
    let mut grad = vec![0.0; cons.dim()];
    oracle.gradient(x, &mut grad);
    let threshold = tol.sqrt();
    let mut xp = x.to_vec();
    let mut fp = f;
    let mut changed = false;
    for j in 0..xp.len() {
        if !cons.nonneg[j] || xp[j] == 0.0 || xp[j] > threshold || grad[j] >= 0.0 {
            continue;
        }
        let keep = xp[j];
        xp[j] = 0.0;
        let trial = oracle.value(&xp);
        if trial.is_finite() && trial >= fp && cons.violation(&xp) == 0.0 {
            fp = trial;
            changed = true;
        } else {
            xp[j] = keep;
        }
    }
    if !changed {
        return None;
    }
    let kkt = active_set_residual(oracle, cons, &xp, tol);
    (kkt <= tol).then_some((xp, fp, kkt))
}

/// Stationarity with multipliers refitted on the near-active set. Slacks of
/// order `1/t` make the barrier estimate `1/(t s)` lose digits to cancellation.
fn active_set_residual<O: Objective + ?Sized>(
    oracle: &O,
    cons: &LinearConstraints,
    x: &[f64],
    tol: f64,
) -> f64 {
    let mut grad = vec![0.0; cons.dim()];
    oracle.gradient(x, &mut grad);
    let scale = grad.iter().fold(1.0_f64, |acc, g| acc.max(g.abs()));
    kkt::report_at(x, oracle, cons, tol).stationarity / scale
}

/// Solve `H d = -g` by Cholesky on the unit-diagonal scaling `D H D`, adding
/// diagonal regularization if needed. Near a bound, barrier terms make the
/// diagonal span many orders of magnitude; the scaling removes that spread.
fn newton_direction(h: DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    let scale = h.diagonal().map(|v| if v > 0.0 { 1.0 / v.sqrt() } else { 1.0 });
    let mut h = DMatrix::from_fn(h.nrows(), h.ncols(), |i, j| h[(i, j)] * scale[i] * scale[j]);
    let g = g.component_mul(&scale);
    let diag_max = h.diagonal().amax().max(1e-300);
    let mut reg = 0.0;
    for _ in 0..12 {
        if let Some(chol) = h.clone().cholesky() {
            let d = chol.solve(&(-&g)).component_mul(&scale);
            if d.iter().all(|v| v.is_finite()) {
                return Some(d);
            }
        }
        let next = if reg == 0.0 { 1e-14 * diag_max } else { reg * 100.0 };
        for i in 0..h.nrows() {
            h[(i, i)] += next - reg;
        }
        reg = next;
    }
    None
}
