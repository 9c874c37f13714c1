use std::sync::OnceLock;

use infrelax::dp::{
    build_phi_transition, solve_value_grid, uniform_grid, GridSpec, ValueGrid, ValueGridFile,
};
use infrelax::market::{parameter_set, ModelParams, PARAMETER_SET_IDS};
use proptest::prelude::*;

fn set1_grid() -> &'static ValueGrid {
    static VG: OnceLock<ValueGrid> = OnceLock::new();
    VG.get_or_init(|| solve_value_grid(&parameter_set(1).unwrap(), &GridSpec::default(), 3).unwrap())
}

fn single_asset(periods: usize) -> ModelParams {
    ModelParams {
        n: 1,
        d: 1,
        mu0: vec![0.08],
        mu1: vec![0.3],
        sigma: vec![vec![0.2]],
        r_f: 0.01,
        lambda: 0.4,
        sigma_phi1: vec![-0.5],
        sigma_phi2: vec![0.3],
        alpha: 0.5,
        beta: 0.96,
        gamma: 3.0,
        delta: 0.1,
        periods,
        horizon: periods as f64 * 0.1,
        phi0: 0.0,
        w0: 1.0,
    }
}

/// Nested brute-force Bellman recursion over `(pi, c)` on a 1e-3 lattice with
/// its own three-point rule: nodes `-sqrt(3), 0, sqrt(3)`, weights `1/6, 2/3, 1/6`.
fn grid_search_values(p: &ModelParams, grid: &[f64]) -> Vec<Vec<f64>> {
    let rf = 1.0 + p.r_f * p.delta;
    let zs = [-(3f64.sqrt()), 0.0, 3f64.sqrt()];
    let ws = [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0];
    let sig = p.sigma[0][0];
    let om = 1.0 - p.gamma;
    let probs = build_phi_transition(grid, p).probs;

    let mut values = vec![vec![(1.0 - p.alpha) / om; grid.len()]];
    for _ in 0..p.periods {
        let next = values.last().unwrap().clone();
        let stage: Vec<f64> = grid
            .iter()
            .enumerate()
            .map(|(i, &phi)| {
                let ej: f64 = probs[i].iter().zip(&next).map(|(a, b)| a * b).sum();
                let excess: Vec<f64> = zs
                    .iter()
                    .map(|z| {
                        let lr = (p.mu0[0] + p.mu1[0] * phi - 0.5 * sig * sig) * p.delta
                            + sig * z * p.delta.sqrt();
                        lr.exp() - rf
                    })
                    .collect();
                let mut best = f64::NEG_INFINITY;
                for a in 0..=1000 {
                    let pi = a as f64 * 1e-3;
                    let cap = rf * (1.0 - pi);
                    let mut b = 1;
                    while b as f64 * 1e-3 <= cap {
                        let c = b as f64 * 1e-3;
                        let mut acc = 0.0;
                        let mut ok = true;
                        for (e, w) in excess.iter().zip(&ws) {
                            let f = rf + e * pi - c;
                            if f < 1e-10 {
                                ok = false;
                                break;
                            }
                            acc += w * f.powf(om);
                        }
                        if ok {
                            let v = p.alpha / om * c.powf(om) * p.delta + p.beta.powf(p.delta) * acc * ej;
                            best = best.max(v);
                        }
                        b += 1;
                    }
                }
                best
            })
            .collect();
        values.push(stage);
    }
    values.reverse();
    values
}

#[test]
fn two_stage_recursion_matches_brute_force_grid_search() {
    let p = single_asset(2);
    let spec = GridSpec {
        nodes: 5,
        lo: -2.0,
        hi: 2.0,
    };
    let vg = solve_value_grid(&p, &spec, 3).unwrap();
    let oracle = grid_search_values(&p, &uniform_grid(5, -2.0, 2.0));
    for k in 0..=2 {
        for i in 0..5 {
            let rel = (vg.values[k][i] - oracle[k][i]).abs() / oracle[k][i].abs();
            assert!(rel < 1e-4, "stage {k} node {i}: {} vs {}", vg.values[k][i], oracle[k][i]);
            // The barrier solution dominates every lattice point.
            assert!(vg.values[k][i] >= oracle[k][i] - 1e-9 * oracle[k][i].abs());
        }
    }
}

#[test]
fn zero_excess_return_without_consumption_holds_cash() {
    let mut p = parameter_set(1).unwrap();
    p.alpha = 0.0;
    p.mu1 = vec![0.0; 3];
    let rf = p.gross_rf();
    // Lognormal mean equal to R_f makes every risky asset a zero-premium bet.
    p.mu0 = vec![rf.ln() / p.delta; 3];
    let vg = solve_value_grid(&p, &GridSpec::default(), 3).unwrap();
    let closed = (p.beta.powf(p.delta) * rf.powf(1.0 - p.gamma)).powi(p.periods as i32) / (1.0 - p.gamma);
    for (i, v) in vg.values[0].iter().enumerate() {
        assert!((v - closed).abs() < 1e-9 * closed.abs(), "node {i}: {v} vs {closed}");
    }
    for stage in &vg.policy {
        for d in stage {
            assert!(d.pi.iter().all(|v| v.abs() < 1e-6), "{d:?}");
            assert!(d.c.abs() < 1e-6);
        }
    }
}

#[test]
fn doubling_the_grid_moves_initial_value_by_under_one_percent() {
    let p = parameter_set(1).unwrap();
    let coarse = set1_grid().interpolate_j(0, 0.0);
    let fine = solve_value_grid(&p, &GridSpec { nodes: 41, ..GridSpec::default() }, 3)
        .unwrap()
        .interpolate_j(0, 0.0);
    assert!(((fine - coarse) / coarse).abs() < 0.01, "{coarse} vs {fine}");
}

#[test]
fn published_sets_satisfy_grid_invariants() {
    for id in PARAMETER_SET_IDS {
        for gamma in [0.5, 1.5] {
            let p = parameter_set(id).unwrap().with_gamma(gamma);
            let vg = solve_value_grid(&p, &GridSpec::default(), 3).unwrap();
            let terminal = (1.0 - p.alpha) / (1.0 - p.gamma);
            assert!(vg.values[p.periods].iter().all(|&v| v == terminal));
            for stage in &vg.values {
                assert!(stage.iter().all(|&v| if gamma > 1.0 { v < 0.0 } else { v > 0.0 }));
            }
            for (k, stage) in vg.policy.iter().enumerate() {
                for (i, d) in stage.iter().enumerate() {
                    let excess = d.pi.iter().sum::<f64>() - 1.0;
                    let cap = p.gross_rf() * (1.0 - d.pi.iter().sum::<f64>());
                    assert!(d.pi.iter().all(|&v| v >= -1e-9), "set {id} k {k} i {i}");
                    assert!(excess <= 1e-9 && d.c >= -1e-9 && d.c <= cap + 1e-9, "set {id} k {k} i {i}");
                }
            }
            assert_eq!(vg.slopes.len(), p.periods);
        }
    }
}

#[test]
fn value_grid_file_round_trips_through_json() {
    let p = parameter_set(1).unwrap();
    let file = ValueGridFile::new(p, GridSpec::default(), 3, set1_grid().clone());
    let json = serde_json::to_string(&file).unwrap();
    let back: ValueGridFile = serde_json::from_str(&json).unwrap();
    assert_eq!(back, file);
    back.check().unwrap();

    let mut tampered = back;
    tampered.params.lambda += 1e-9;
    assert!(tampered.check().is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn looked_up_policy_is_admissible(k in 0usize..10, phi in -4.0..4.0f64) {
        let vg = set1_grid();
        let d = vg.policy_lookup(k, phi);
        prop_assert!(d.check_admissible(vg.gross_rf).is_ok(), "{d:?}");
    }

    #[test]
    fn gradient_is_the_secant_slope_inside_segments(k in 0usize..10, phi in -3.0..3.0f64) {
        let vg = set1_grid();
        let h = 1e-7;
        // Stay clear of nodes where the slope is an average.
        let frac = ((phi + 2.0) / 0.2).fract();
        prop_assume!(phi.abs() > 2.0 + 2.0 * h || (frac > 1e-5 && frac < 1.0 - 1e-5));
        let fd = (vg.interpolate_j(k, phi + h) - vg.interpolate_j(k, phi - h)) / (2.0 * h);
        let g = vg.gradient_j(k, phi);
        prop_assert!((fd - g).abs() <= 1e-6 * (1.0 + g.abs()), "{fd} vs {g}");
    }
}
