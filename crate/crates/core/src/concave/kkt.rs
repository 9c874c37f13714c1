use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::{LinearConstraints, Objective, Solution};

/// First-order optimality residuals at a candidate maximizer.
///
/// Constraint indices follow the order rows of `A` first, then the masked
/// nonnegativity constraints in coordinate order.
#[derive(Debug, Clone, Serialize)]
pub struct KktReport {
    pub active: Vec<usize>,
    pub multipliers: Vec<f64>,
    /// `||grad f - sum nu_i grad g_i||_inf` over the active set.
    pub stationarity: f64,
    /// `max nu_i * slack_i`.
    pub complementarity: f64,
    pub feasibility_gap: f64,
}

impl KktReport {
    pub fn residual(&self) -> f64 {
        self.stationarity
            .max(self.complementarity)
            .max(self.feasibility_gap)
    }

    /// Multiplier of constraint `index`, zero when inactive.
    pub fn multiplier(&self, index: usize) -> f64 {
        self.active
            .iter()
            .position(|&i| i == index)
            .map_or(0.0, |p| self.multipliers[p])
    }
}

pub fn check_kkt<O: Objective + ?Sized>(
    sol: &Solution,
    oracle: &O,
    cons: &LinearConstraints,
    tol: f64,
) -> KktReport {
    report_at(&sol.x, oracle, cons, tol)
}

pub(super) fn report_at<O: Objective + ?Sized>(
    x: &[f64],
    oracle: &O,
    cons: &LinearConstraints,
    tol: f64,
) -> KktReport {
    let m = cons.dim();
    let active_tol = tol.sqrt().max(1e-12);

    // Constraint gradients (of g_i(x) <= 0) and slacks, in report order.
    let mut normals: Vec<DVector<f64>> = Vec::new();
    let mut slacks = Vec::new();
    for (i, s) in cons.row_slacks(x).iter().enumerate() {
        normals.push(cons.a.row(i).transpose());
        slacks.push(*s);
    }
    for j in (0..m).filter(|&j| cons.nonneg[j]) {
        let mut e = DVector::zeros(m);
        e[j] = -1.0;
        normals.push(e);
        slacks.push(x[j]);
    }

    let active: Vec<usize> = slacks
        .iter()
        .enumerate()
        .filter(|(i, &s)| s <= active_tol * (1.0 + bound_scale(cons, *i)))
        .map(|(i, _)| i)
        .collect();

    let mut grad = vec![0.0; m];
    oracle.gradient(x, &mut grad);
    let g = DVector::from_vec(grad);

    let e = DMatrix::from_fn(m, active.len(), |r, c| normals[active[c]][r]);
    let nu = nnls(&e, &g);
    let stationarity = (&g - &e * &nu).amax();
    let complementarity = active
        .iter()
        .zip(nu.iter())
        .fold(0.0_f64, |acc, (&i, &v)| acc.max((v * slacks[i]).abs()));

    KktReport {
        active,
        multipliers: nu.as_slice().to_vec(),
        stationarity,
        complementarity,
        feasibility_gap: cons.violation(x),
    }
}

fn bound_scale(cons: &LinearConstraints, i: usize) -> f64 {
    if i < cons.b.len() {
        cons.b[i].abs()
    } else {
        0.0
    }
}

/// Nonnegative least squares `min ||E nu - g||, nu >= 0` (Lawson-Hanson).
pub fn nnls(e: &DMatrix<f64>, g: &DVector<f64>) -> DVector<f64> {
    let p = e.ncols();
    let mut nu = DVector::zeros(p);
    if p == 0 {
        return nu;
    }
    let eps = 1e-12 * (1.0 + g.amax()) * (1.0 + e.amax());
    let mut passive = vec![false; p];

    for _outer in 0..3 * p + 10 {
        let w = e.tr_mul(&(g - e * &nu));
        let candidate = (0..p)
            .filter(|&j| !passive[j])
            .max_by(|&a, &b| w[a].total_cmp(&w[b]));
        match candidate {
            Some(j) if w[j] > eps => passive[j] = true,
            _ => break,
        }

        for _inner in 0..3 * p + 10 {
            let s = passive_ls(e, g, &passive);
            let all_positive = (0..p).filter(|&j| passive[j]).all(|j| s[j] > 0.0);
            if all_positive {
                nu = s;
                break;
            }
            let mut alpha = f64::INFINITY;
            for j in (0..p).filter(|&j| passive[j] && s[j] <= 0.0) {
                let denom = nu[j] - s[j];
                if denom > 0.0 {
                    alpha = alpha.min(nu[j] / denom);
                }
            }
            if !alpha.is_finite() {
                alpha = 0.0;
            }
            nu += alpha * (&s - &nu);
            for j in 0..p {
                if passive[j] && nu[j] <= eps {
                    nu[j] = 0.0;
                    passive[j] = false;
                }
            }
        }
    }
    nu
}

fn passive_ls(e: &DMatrix<f64>, g: &DVector<f64>, passive: &[bool]) -> DVector<f64> {
    let cols: Vec<usize> = (0..passive.len()).filter(|&j| passive[j]).collect();
    let sub = DMatrix::from_fn(e.nrows(), cols.len(), |r, c| e[(r, cols[c])]);
    let svd = sub.svd(true, true);
    let sol = svd
        .solve(g, 1e-13)
        .unwrap_or_else(|_| DVector::zeros(cols.len()));
    let mut full = DVector::zeros(passive.len());
    for (c, &j) in cols.iter().enumerate() {
        full[j] = sol[c];
    }
    full
}
