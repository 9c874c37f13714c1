use libm::erfc;

use crate::market::ModelParams;

/// Row-stochastic grid transition matrix of the market state.
#[derive(Debug, Clone)]
pub struct PhiTransition {
    pub probs: Vec<Vec<f64>>,
    /// Constant OU coefficients make one matrix serve every stage.
    pub stage_independent: bool,
}

/// `P(X <= x)` for a standard normal.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `P(X > x)` for a standard normal.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Mass of `N(0, 1)` on `(lo, hi]`, computed on whichever tail keeps precision.
fn interval_mass(lo: f64, hi: f64) -> f64 {
    if lo >= 0.0 {
        normal_sf(lo) - normal_sf(hi)
    } else {
        normal_cdf(hi) - normal_cdf(lo)
    }
}

/// Discretize `phi' ~ N(phi (1 - lambda delta), var * delta)` onto `grid` by
/// assigning each node the mass of its midpoint cell; outer cells are unbounded.
pub fn build_phi_transition(grid: &[f64], p: &ModelParams) -> PhiTransition {
    let n = grid.len();
    assert!(n >= 2, "phi grid needs at least two nodes");
    let edges: Vec<f64> = grid.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let sd = (p.state_variance() * p.delta).sqrt();

    let probs = grid
        .iter()
        .map(|&phi| {
            let mean = phi + p.state_drift(phi) * p.delta;
            let mut row = vec![0.0; n];
            if !(sd > 0.0) {
                row[nearest(grid, mean)] = 1.0;
                return row;
            }
            for (j, cell) in row.iter_mut().enumerate() {
                let lo = if j == 0 { f64::NEG_INFINITY } else { (edges[j - 1] - mean) / sd };
                let hi = if j + 1 == n { f64::INFINITY } else { (edges[j] - mean) / sd };
                *cell = interval_mass(lo, hi).max(0.0);
            }
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= total);
            row
        })
        .collect();

    PhiTransition {
        probs,
        stage_independent: true,
    }
}

/// Index of the node closest to `x`; ties go to the lower index.
fn nearest(grid: &[f64], x: f64) -> usize {
    let mut best = 0;
    for (i, g) in grid.iter().enumerate() {
        if (g - x).abs() < (grid[best] - x).abs() {
            best = i;
        }
    }
    best
}

impl PhiTransition {
    /// `sum_j P[i][j] values[j]`.
    pub fn expect_row(&self, i: usize, values: &[f64]) -> f64 {
        self.probs[i].iter().zip(values).map(|(p, v)| p * v).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::uniform_grid;
    use crate::market::parameter_set;

    /// Composite Gauss-Legendre integral of the normal density, independent of erfc.
    fn density_mass(lo: f64, hi: f64, mean: f64, sd: f64) -> f64 {
        let lo = lo.max(mean - 40.0 * sd);
        let hi = hi.min(mean + 40.0 * sd);
        if hi <= lo {
            return 0.0;
        }
        let xs = [-0.906179845938664, -0.538469310105683, 0.0, 0.538469310105683, 0.906179845938664];
        let ws = [0.236926885056189, 0.478628670499366, 0.568888888888889, 0.478628670499366, 0.236926885056189];
        let panels = 4000;
        let h = (hi - lo) / panels as f64;
        let mut acc = 0.0;
        for k in 0..panels {
            let a = lo + k as f64 * h;
            for (x, w) in xs.iter().zip(&ws) {
                let t = a + 0.5 * h * (x + 1.0);
                let u = (t - mean) / sd;
                acc += 0.5 * h * w * (-0.5 * u * u).exp();
            }
        }
        acc / (sd * (2.0 * std::f64::consts::PI).sqrt())
    }

    #[test]
    fn rows_are_stochastic() {
        let p = parameter_set(2).unwrap();
        let t = build_phi_transition(&uniform_grid(21, -2.0, 2.0), &p);
        for row in &t.probs {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn frozen_state_gives_identity() {
        let mut p = parameter_set(1).unwrap();
        p.lambda = 0.0;
        p.sigma_phi1 = vec![0.0; 3];
        p.sigma_phi2 = vec![0.0];
        let t = build_phi_transition(&uniform_grid(5, -1.0, 1.0), &p);
        for (i, row) in t.probs.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert_eq!(*v, if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn huge_variance_spreads_mass_by_cell_width() {
        let mut p = parameter_set(1).unwrap();
        p.sigma_phi2 = vec![1e6];
        let grid = uniform_grid(5, -1.0, 1.0);
        let t = build_phi_transition(&grid, &p);
        // Inner cells have width 0.5; for sd ~ 3e5 the density is flat across them.
        let sd = (p.state_variance() * p.delta).sqrt();
        let flat = 0.5 / (sd * (2.0 * std::f64::consts::PI).sqrt());
        for row in &t.probs {
            for &v in &row[1..4] {
                assert!((v - flat).abs() < 1e-9);
            }
            assert!((row[0] - 0.5).abs() < 1e-5);
        }
    }

    #[test]
    fn cell_masses_match_density_integral() {
        let p = parameter_set(1).unwrap();
        let grid = uniform_grid(21, -2.0, 2.0);
        let t = build_phi_transition(&grid, &p);
        let i = 10; // phi = 0
        let mean = grid[i] * (1.0 - p.lambda * p.delta);
        let sd = (p.state_variance() * p.delta).sqrt();
        let edges: Vec<f64> = grid.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        let mut raw = Vec::new();
        for j in 0..grid.len() {
            let lo = if j == 0 { f64::NEG_INFINITY } else { edges[j - 1] };
            let hi = if j + 1 == grid.len() { f64::INFINITY } else { edges[j] };
            raw.push(density_mass(lo, hi, mean, sd));
        }
        let total: f64 = raw.iter().sum();
        for j in 0..grid.len() {
            assert!((t.probs[i][j] - raw[j] / total).abs() < 1e-12, "cell {j}");
        }
    }

    #[test]
    fn degenerate_row_picks_nearest_node() {
        let mut p = parameter_set(1).unwrap();
        p.sigma_phi1 = vec![0.0; 3];
        p.sigma_phi2 = vec![0.0];
        let grid = uniform_grid(21, -2.0, 2.0);
        let t = build_phi_transition(&grid, &p);
        // phi = 2 drifts to 1.9328, nearest node 2.0.
        assert_eq!(t.probs[20][20], 1.0);
        // phi = 1.4 drifts to 1.35296, nearest 1.4.
        assert_eq!(t.probs[17][17], 1.0);
    }
}
