use infrelax::concave::{check_kkt, maximize, LinearConstraints, Objective, Status};
use infrelax::dp::{build_quadrature, BellmanObjective};
use infrelax::market::parameter_set;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// `f(x) = c'x - x'Qx/2` with `Q = L L' + 0.1 I`.
#[derive(Debug, Clone)]
struct Qp {
    q: DMatrix<f64>,
    c: DVector<f64>,
}

impl Objective for Qp {
    fn dim(&self) -> usize {
        self.c.len()
    }
    fn value(&self, x: &[f64]) -> f64 {
        let x = DVector::from_column_slice(x);
        self.c.dot(&x) - 0.5 * x.dot(&(&self.q * &x))
    }
    fn gradient(&self, x: &[f64], g: &mut [f64]) {
        let x = DVector::from_column_slice(x);
        let r = &self.c - &self.q * x;
        g.copy_from_slice(r.as_slice());
    }
    fn hessian(&self, _x: &[f64], h: &mut DMatrix<f64>) {
        *h -= &self.q;
    }
}

/// Best feasible stationary point over every active-set guess.
fn active_set_oracle(qp: &Qp, cons: &LinearConstraints) -> (Vec<f64>, f64) {
    let m = qp.dim();
    let mut normals: Vec<(DVector<f64>, f64)> = (0..cons.a.nrows())
        .map(|i| (cons.a.row(i).transpose(), cons.b[i]))
        .collect();
    for j in 0..m {
        let mut e = DVector::zeros(m);
        e[j] = -1.0;
        normals.push((e, 0.0));
    }
    let mut best = (vec![0.0; m], f64::NEG_INFINITY);
    for mask in 0u32..(1 << normals.len()) {
        let act: Vec<usize> = (0..normals.len()).filter(|i| mask >> i & 1 == 1).collect();
        if act.len() > m {
            continue;
        }
        let size = m + act.len();
        let mut kkt = DMatrix::zeros(size, size);
        let mut rhs = DVector::zeros(size);
        kkt.view_mut((0, 0), (m, m)).copy_from(&qp.q);
        rhs.rows_mut(0, m).copy_from(&qp.c);
        for (r, &i) in act.iter().enumerate() {
            for j in 0..m {
                kkt[(j, m + r)] = normals[i].0[j];
                kkt[(m + r, j)] = normals[i].0[j];
            }
            rhs[m + r] = normals[i].1;
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        let x: Vec<f64> = sol.rows(0, m).iter().copied().collect();
        if cons.violation(&x) > 1e-12 {
            continue;
        }
        let f = qp.value(&x);
        if f > best.1 {
            best = (x, f);
        }
    }
    best
}

fn random_instance() -> impl Strategy<Value = (Qp, LinearConstraints, Vec<f64>)> {
    (1usize..=3)
        .prop_flat_map(|m| {
            (
                Just(m),
                prop::collection::vec(-1.0..1.0f64, m * m),
                prop::collection::vec(-2.0..2.0f64, m),
                0usize..=3,
                prop::collection::vec(-1.0..1.0f64, 3 * m),
                prop::collection::vec(0.05..1.0f64, 3),
                prop::collection::vec(0.1..1.0f64, m),
            )
        })
        .prop_map(|(m, l, c, rows, a, slack, x0)| {
            let l = DMatrix::from_row_slice(m, m, &l);
            let q = &l * l.transpose() + DMatrix::identity(m, m) * 0.1;
            let a = DMatrix::from_fn(rows, m, |i, j| a[i * m + j]);
            let x0v = DVector::from_column_slice(&x0);
            let b = DVector::from_fn(rows, |i, _| (a.row(i) * &x0v)[0] + slack[i]);
            let cons = LinearConstraints::new(a, b, vec![true; m]);
            (Qp { q, c: DVector::from_vec(c) }, cons, x0)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn random_quadratic_programs_match_active_set_oracle((qp, cons, x0) in random_instance()) {
        let tol = 1e-8;
        let sol = maximize(&qp, &cons, &x0, tol);
        prop_assert_eq!(sol.status, Status::Converged);
        prop_assert!(cons.violation(&sol.x) <= 1e-9);
        let (x_star, f_star) = active_set_oracle(&qp, &cons);
        prop_assert!((sol.f - f_star).abs() <= 10.0 * tol * (1.0 + f_star.abs()), "{} vs {}", sol.f, f_star);
        for (a, b) in sol.x.iter().zip(&x_star) {
            prop_assert!((a - b).abs() <= 1e-4, "{:?} vs {:?}", sol.x, x_star);
        }
        let report = check_kkt(&sol, &qp, &cons, tol);
        prop_assert!(report.residual() <= 10.0 * tol, "{:?}", report);
    }

    #[test]
    fn centering_values_never_decrease((qp, cons, x0) in random_instance()) {
        let sol = maximize(&qp, &cons, &x0, 1e-8);
        for w in sol.trace.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-12 * w[0].abs().max(1.0), "{:?}", sol.trace);
        }
    }

    #[test]
    fn halving_tolerance_costs_at_most_tolerance((qp, cons, x0) in random_instance(), tol_exp in 4i32..9) {
        let tol = 10f64.powi(-tol_exp);
        let a = maximize(&qp, &cons, &x0, tol);
        let b = maximize(&qp, &cons, &x0, tol / 2.0);
        prop_assert!(b.f >= a.f - tol, "{} then {}", a.f, b.f);
    }
}

fn bellman_node(gamma: f64, phi: f64) -> BellmanObjective {
    let p = parameter_set(1).unwrap().with_gamma(gamma);
    let rule = build_quadrature(3, 3).unwrap();
    BellmanObjective::new(&p, phi, &rule, 1.0 / (1.0 - gamma))
}

/// Points of `{pi >= 0, c >= 0, R_f 1'pi + c <= R_f}` at least ~1e-2 inside,
/// where h = 1e-6 differences are not dominated by truncation error.
fn interior_point(raw: &[f64], gross_rf: f64) -> Vec<f64> {
    let mut x: Vec<f64> = raw[..3].iter().map(|v| 0.01 + 0.29 * v).collect();
    let used: f64 = x.iter().sum();
    x.push(gross_rf * (1.0 - used) * (0.02 + 0.96 * raw[3]));
    x
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn bellman_gradient_matches_central_differences(
        raw in prop::collection::vec(0.0..1.0f64, 4),
        gamma in prop::sample::select(vec![1.5, 3.0, 5.0]),
        phi in -2.0..2.0f64,
    ) {
        let obj = bellman_node(gamma, phi);
        let x = interior_point(&raw, obj.gross_rf);
        prop_assume!(obj.constraints().is_strictly_feasible(&x));
        let mut g = vec![0.0; 4];
        obj.gradient(&x, &mut g);
        let h = 1e-6;
        for j in 0..4 {
            let mut up = x.clone();
            let mut dn = x.clone();
            up[j] += h;
            dn[j] -= h;
            let fd = (obj.value(&up) - obj.value(&dn)) / (2.0 * h);
            // Differencing values of size |f| loses ~eps |f| / h.
            let rounding = 1e-15 * obj.value(&x).abs() / h;
            prop_assert!(
                (fd - g[j]).abs() <= 1e-5 * g[j].abs().max(1.0) + rounding,
                "coord {}: {} vs {}", j, fd, g[j]
            );
        }
        let mut hess = DMatrix::zeros(4, 4);
        obj.hessian(&x, &mut hess);
        for j in 0..4 {
            let mut up = x.clone();
            let mut dn = x.clone();
            up[j] += h;
            dn[j] -= h;
            let (mut gu, mut gd) = (vec![0.0; 4], vec![0.0; 4]);
            obj.gradient(&up, &mut gu);
            obj.gradient(&dn, &mut gd);
            for i in 0..4 {
                let fd = (gu[i] - gd[i]) / (2.0 * h);
                // Differencing a gradient entry of size |g_i| loses ~eps |g_i| / h.
                let rounding = 1e-14 * g[i].abs().max(gu[i].abs()) / h;
                let allowed = 1e-5 * hess[(i, j)].abs().max(1.0) + rounding;
                prop_assert!((fd - hess[(i, j)]).abs() <= allowed, "({}, {}): {} vs {}", i, j, fd, hess[(i, j)]);
            }
        }
    }

    #[test]
    fn bellman_objective_is_midpoint_concave(
        a in prop::collection::vec(0.0..1.0f64, 4),
        b in prop::collection::vec(0.0..1.0f64, 4),
        gamma in prop::sample::select(vec![0.5, 1.5, 5.0]),
    ) {
        let obj = bellman_node(gamma, 0.3);
        let xa = interior_point(&a, obj.gross_rf);
        let xb = interior_point(&b, obj.gross_rf);
        let (fa, fb) = (obj.value(&xa), obj.value(&xb));
        prop_assume!(fa.is_finite() && fb.is_finite());
        let mid: Vec<f64> = xa.iter().zip(&xb).map(|(u, v)| 0.5 * (u + v)).collect();
        prop_assert!(obj.value(&mid) >= 0.5 * (fa + fb) - 1e-12 * (fa.abs() + fb.abs()));
    }
}
