use super::*;
use crate::linalg::Mat;
use crate::manifold::{solve_manifold, GridOptions};
use crate::model::{MonomialTerm, PolyMap};
use crate::riccati::solve_dtare;

fn p2() -> Problem {
    let f = PolyMap::new(1, 1, vec![vec![MonomialTerm::new(0.1, vec![2], vec![0])]]).unwrap();
    Problem::scalar(0.5, 1.0, 1.0, 1.0)
        .unwrap()
        .with_nonlinearities(f, PolyMap::zero(1, 1, 1))
        .unwrap()
        .with_epsilon(0.2)
        .unwrap()
}

fn planar() -> Problem {
    let a = Mat::from_row_slice(2, 2, &[0.8, 0.3, -0.2, 0.9]);
    let b = Mat::from_row_slice(2, 1, &[0.0, 1.0]);
    let f = PolyMap::new(
        2,
        1,
        vec![vec![MonomialTerm::new(0.1, vec![0, 2], vec![0])], vec![MonomialTerm::new(0.3, vec![1, 1], vec![0])]],
    )
    .unwrap();
    Problem::lq(a, b, Mat::identity(2, 2), Mat::identity(1, 1))
        .unwrap()
        .with_nonlinearities(f, PolyMap::zero(2, 1, 1))
        .unwrap()
        .with_epsilon(0.1)
        .unwrap()
}

fn v(x: &[f64]) -> Vector {
    Vector::from_column_slice(x)
}

#[test]
fn quadrature_is_exact_on_polynomials() {
    let got = integrate_unit(|t| Ok(3.0 * t * t + t.powi(7)), vec![0.3], 1e-15).unwrap();
    assert!((got - 1.125).abs() < 1e-15);
}

#[test]
fn lq_cost_and_feedback() {
    let tol = Tolerances::default();
    let a = Mat::from_row_slice(2, 2, &[1.1, 0.2, 0.0, 0.7]);
    let b = Mat::from_row_slice(2, 1, &[0.0, 1.0]);
    let prob = Problem::lq(a, b, Mat::identity(2, 2), Mat::identity(1, 1)).unwrap();
    let sol = solve_manifold(&prob, &GridOptions { resolution: 9, ..Default::default() }, &tol).unwrap();
    let x = v(&[0.031, -0.077]);
    let exact = 0.5 * x.dot(&(sol.p() * &x));
    assert!((cost_at(&sol, &x).unwrap() - exact).abs() < 1e-15);
    assert!((cost_along_staircase(&sol, &x).unwrap() - exact).abs() < 1e-15);
    let k = &sol.context.riccati.k;
    assert!((feedback_at(&prob, &sol, &x).unwrap() - k * &x).amax() < 1e-10);
    assert_eq!(cost_at(&sol, &v(&[0.0, 0.0])).unwrap(), 0.0);
    assert_eq!(feedback_at(&prob, &sol, &v(&[0.0, 0.0])).unwrap()[0], 0.0);

    let samples = ball_samples(2, 0.05, 20, 1);
    let report = dpe_residual(&prob, &ManifoldValue { problem: &prob, solution: &sol }, &samples, &tol).unwrap();
    assert!(report.r1_max <= 1e-10 && report.r2_max <= 1e-10, "{report:?}");

    let field = cost_field(&prob, &sol).unwrap();
    for i in 0..field.pi.node_count() {
        let x = field.pi.node(i);
        assert!((field.pi.at_node(i)[0] - 0.5 * x.dot(&(sol.p() * &x))).abs() < 1e-15);
    }
}

#[test]
fn dpe_residual_vanishes_at_origin() {
    let tol = Tolerances::default();
    let prob = p2();
    let sol = solve_manifold(&prob, &GridOptions::default(), &tol).unwrap();
    let report = dpe_residual(&prob, &ManifoldValue { problem: &prob, solution: &sol }, &[v(&[0.0])], &tol).unwrap();
    assert_eq!((report.samples[0].r1, report.samples[0].r2), (0.0, 0.0));
}

#[test]
fn p2_cost_field_properties() {
    let tol = Tolerances::default();
    let prob = p2();
    let sol = solve_manifold(&prob, &GridOptions::default(), &tol).unwrap();
    let samples = ball_samples(1, 0.1, 30, 2);
    let report = dpe_residual(&prob, &ManifoldValue { problem: &prob, solution: &sol }, &samples, &tol).unwrap();
    assert!(report.passed, "{report:?}");
    assert!(gradient_consistency(&sol, &samples).unwrap() <= tol.gradient_consistency);

    let field = cost_field(&prob, &sol).unwrap();
    assert!(field.pi.values().iter().all(|p| *p >= 0.0));
    assert_eq!(field.kappa.at_node(field.kappa.origin_index())[0], 0.0);
    let d = 1e-3;
    let second = (cost_at(&sol, &v(&[d])).unwrap() - 2.0 * cost_at(&sol, &v(&[0.0])).unwrap()
        + cost_at(&sol, &v(&[-d])).unwrap())
        / (d * d);
    let p = sol.p()[(0, 0)];
    assert!((second - p).abs() <= 1e-3 * p);
}

#[test]
fn planar_paths_agree_and_hessian_is_psd() {
    let tol = Tolerances::default();
    let prob = planar();
    let sol = solve_manifold(&prob, &GridOptions { resolution: 21, ..Default::default() }, &tol).unwrap();
    let samples = ball_samples(2, 0.1, 50, 3);
    assert!(path_independence(&sol, &samples).unwrap() <= tol.path_independence);

    let d = 1e-3;
    let pi = |x: Vector| cost_at(&sol, &x).unwrap();
    for x in ball_samples(2, 0.025, 20, 4) {
        let mut hess = Mat::zeros(2, 2);
        for i in 0..2 {
            for j in 0..2 {
                let mut e = [Vector::zeros(2), Vector::zeros(2)];
                e[0][i] = d;
                e[1][j] = d;
                hess[(i, j)] = (pi(&x + &e[0] + &e[1]) - pi(&x + &e[0] - &e[1]) - pi(&x - &e[0] + &e[1])
                    + pi(&x - &e[0] - &e[1]))
                    / (4.0 * d * d);
            }
        }
        assert!(linalg::min_symmetric_eigenvalue(&hess) > 0.0);
    }
}

#[test]
fn oracle_matches_riccati_for_lq() {
    let tol = Tolerances::default();
    let prob = Problem::scalar(0.5, 1.0, 1.0, 1.0).unwrap();
    let oracle = value_iteration_oracle(&prob, &OracleOptions::default(), &tol).unwrap();
    assert!(oracle.monotone);
    let p = solve_dtare(&prob, &tol).unwrap().p[(0, 0)];
    let pi = &oracle.field.pi;
    // Relative to the sup of the exact cost on the interval.
    let scale = 0.5 * p * 0.01;
    for i in 0..pi.node_count() {
        let x = pi.node(i)[0];
        assert!((pi.at_node(i)[0] - 0.5 * p * x * x).abs() <= 1e-3 * scale, "x = {x}");
    }
}

#[test]
fn oracle_of_zero_cost_is_zero() {
    let tol = Tolerances::default();
    let prob = Problem::scalar(0.5, 1.0, 0.0, 1.0).unwrap();
    let oracle =
        value_iteration_oracle(&prob, &OracleOptions { half_width: 0.05, ..Default::default() }, &tol).unwrap();
    assert!(oracle.field.pi.values().iter().all(|p| *p == 0.0));
    assert!(oracle.field.kappa.values().iter().all(|u| *u == 0.0));
}

#[test]
fn oracle_rejects_large_dimension() {
    let prob =
        Problem::lq(Mat::identity(3, 3) * 0.5, Mat::identity(3, 1), Mat::identity(3, 3), Mat::identity(1, 1)).unwrap();
    assert!(value_iteration_oracle(&prob, &OracleOptions::default(), &Tolerances::default()).is_err());
}

#[test]
fn p2_policy_matches_oracle() {
    let tol = Tolerances::default();
    let prob = p2();
    let sol = solve_manifold(&prob, &GridOptions::default(), &tol).unwrap();
    let oracle = value_iteration_oracle(&prob, &OracleOptions::default(), &tol).unwrap();
    let kappa = &oracle.field.kappa;
    for i in 0..kappa.node_count() {
        let x = kappa.node(i);
        let u = feedback_at(&prob, &sol, &x).unwrap();
        assert!((u[0] - kappa.at_node(i)[0]).abs() <= 2.0 * oracle.control_step, "x = {}", x[0]);
    }
    assert!(oracle_gap(&sol, &oracle, 0.1).unwrap() <= tol.oracle_cost);
}
