use nalgebra::{DMatrix, DVector};

use crate::concave::{LinearConstraints, Objective};
use crate::market::{log_returns, ModelParams};

use super::QuadratureRule;

/// Smallest wealth factor `R_f + (R - R_f)'pi - c` allowed at a quadrature node.
pub const WEALTH_GUARD: f64 = 1e-10;

/// Per-node Bellman objective in `x = (pi, c)`:
///
/// `alpha/(1-gamma) c^(1-gamma) delta + beta^delta E[(R_f + (R - R_f)'pi - c)^(1-gamma)] * EJ`
///
/// where the return expectation runs over the quadrature rule at the node's
/// state and `EJ` is the expected next-stage value factor.
#[derive(Debug, Clone)]
pub struct BellmanObjective {
    pub alpha: f64,
    pub gamma: f64,
    pub delta: f64,
    pub gross_rf: f64,
    /// `beta^delta * EJ`.
    pub continuation: f64,
    /// `R_q - R_f` per quadrature node.
    pub excess: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl BellmanObjective {
    pub fn new(p: &ModelParams, phi: f64, rule: &QuadratureRule, expected_next: f64) -> Self {
        let rf = p.gross_rf();
        let excess = rule
            .nodes
            .iter()
            .map(|z| log_returns(phi, z, p).into_iter().map(|l| l.exp() - rf).collect())
            .collect();
        Self {
            alpha: p.alpha,
            gamma: p.gamma,
            delta: p.delta,
            gross_rf: rf,
            continuation: p.beta.powf(p.delta) * expected_next,
            excess,
            weights: rule.weights.clone(),
        }
    }

    fn n(&self) -> usize {
        self.excess.first().map_or(0, Vec::len)
    }

    fn factor(&self, q: usize, x: &[f64]) -> f64 {
        let n = self.n();
        let risky: f64 = self.excess[q].iter().zip(&x[..n]).map(|(e, p)| e * p).sum();
        self.gross_rf + risky - x[n]
    }

    /// Constraints `1'pi R_f + c <= R_f`, the per-node wealth guards and
    /// nonnegativity of every coordinate.
    pub fn constraints(&self) -> LinearConstraints {
        let n = self.n();
        let rows = 1 + self.excess.len();
        let mut a = DMatrix::zeros(rows, n + 1);
        let mut b = DVector::zeros(rows);
        for i in 0..n {
            a[(0, i)] = self.gross_rf;
        }
        a[(0, n)] = 1.0;
        b[0] = self.gross_rf;
        for (q, ex) in self.excess.iter().enumerate() {
            for i in 0..n {
                a[(q + 1, i)] = -ex[i];
            }
            a[(q + 1, n)] = 1.0;
            b[q + 1] = self.gross_rf - WEALTH_GUARD;
        }
        LinearConstraints::new(a, b, vec![true; n + 1])
    }
}

impl Objective for BellmanObjective {
    fn dim(&self) -> usize {
        self.n() + 1
    }

    fn value(&self, x: &[f64]) -> f64 {
        let n = self.n();
        let one_m = 1.0 - self.gamma;
        let c = x[n];
        let mut total = 0.0;
        if self.alpha > 0.0 {
            if !(c > 0.0) {
                return f64::NEG_INFINITY;
            }
            total += self.alpha / one_m * c.powf(one_m) * self.delta;
        }
        let mut acc = 0.0;
        for (q, w) in self.weights.iter().enumerate() {
            let f = self.factor(q, x);
            if !(f > 0.0) {
                return f64::NEG_INFINITY;
            }
            acc += w * f.powf(one_m);
        }
        total + self.continuation * acc
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        let n = self.n();
        let one_m = 1.0 - self.gamma;
        grad.iter_mut().for_each(|g| *g = 0.0);
        if self.alpha > 0.0 {
            grad[n] = self.alpha * x[n].powf(-self.gamma) * self.delta;
        }
        for (q, w) in self.weights.iter().enumerate() {
            let s = self.continuation * w * one_m * self.factor(q, x).powf(-self.gamma);
            for i in 0..n {
                grad[i] += s * self.excess[q][i];
            }
            grad[n] -= s;
        }
    }

    fn hessian(&self, x: &[f64], hess: &mut DMatrix<f64>) {
        let n = self.n();
        let one_m = 1.0 - self.gamma;
        if self.alpha > 0.0 {
            hess[(n, n)] += -self.gamma * self.alpha * x[n].powf(-self.gamma - 1.0) * self.delta;
        }
        let mut v = vec![0.0; n + 1];
        for (q, w) in self.weights.iter().enumerate() {
            let s = self.continuation * w * one_m * (-self.gamma) * self.factor(q, x).powf(-self.gamma - 1.0);
            v[..n].copy_from_slice(&self.excess[q]);
            v[n] = -1.0;
            for i in 0..=n {
                for j in 0..=n {
                    hess[(i, j)] += s * v[i] * v[j];
                }
            }
        }
    }
}
