use dtsm::linalg::{Mat, Vector};
use dtsm::manifold::{GridFn, Interpolation};
use dtsm::model::{
    cutoff_apply, eliminate_cross_term, gronwall_bounds, CutoffProfile, GronwallKind, MonomialTerm, PolyMap,
};
use dtsm::pmp::{hamiltonian_eval, nonlinear_remainders, optimal_control, BidirectionalPoint};
use dtsm::{Problem, Tolerances};
use proptest::prelude::*;

fn term_min(n: usize, m: usize, min: u32) -> impl Strategy<Value = MonomialTerm> {
    (-2.0..2.0f64, proptest::collection::vec(0u32..3, n), proptest::collection::vec(0u32..3, m))
        .prop_filter("degree range", move |(_, x, u)| {
            (min..=4).contains(&(x.iter().sum::<u32>() + u.iter().sum::<u32>()))
        })
        .prop_map(|(c, x, u)| MonomialTerm::new(c, x, u))
}

fn poly(n: usize, m: usize, n_out: usize) -> impl Strategy<Value = PolyMap> {
    poly_min(n, m, n_out, 2)
}

fn poly_min(n: usize, m: usize, n_out: usize, min: u32) -> impl Strategy<Value = PolyMap> {
    proptest::collection::vec(proptest::collection::vec(term_min(n, m, min), 0..4), n_out)
        .prop_map(move |comps| PolyMap::new(n, m, comps).unwrap())
}

fn dims() -> impl Strategy<Value = (usize, usize)> {
    (1usize..=3, 1usize..=3)
}

fn sized_poly() -> impl Strategy<Value = (PolyMap, Vec<f64>, Vec<f64>)> {
    dims().prop_flat_map(|(n, m)| {
        (poly(n, m, n), proptest::collection::vec(-1.0..1.0f64, n), proptest::collection::vec(-1.0..1.0f64, m))
    })
}

fn matrix(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = Mat> {
    proptest::collection::vec(lo..hi, rows * cols).prop_map(move |v| Mat::from_row_slice(rows, cols, &v))
}

/// Convex problem with a cross term and small smooth nonlinearities.
fn problem() -> impl Strategy<Value = Problem> {
    dims().prop_flat_map(|(n, m)| {
        (
            matrix(n, n, -1.0, 1.0),
            matrix(n, m, -1.0, 1.0),
            matrix(n, n, -1.0, 1.0),
            matrix(m, m, -1.0, 1.0),
            matrix(n, m, -0.3, 0.3),
            poly(n, m, n),
            // Quadratic cost terms would shift the linearisation, so the
            // cost remainder starts at degree three.
            poly_min(n, m, 1, 3),
        )
            .prop_map(move |(a, b, c, d, s, f, l)| {
                let r = d.transpose() * &d + Mat::identity(m, m);
                let q =
                    c.transpose() * &c + Mat::identity(n, n) + &s * r.clone().try_inverse().unwrap() * s.transpose();
                let scale = |p: PolyMap| {
                    let comps = p
                        .components()
                        .iter()
                        .map(|c| {
                            c.iter()
                                .map(|t| MonomialTerm::new(0.05 * t.coeff, t.x_exp.clone(), t.u_exp.clone()))
                                .collect()
                        })
                        .collect();
                    PolyMap::new(n, m, comps).unwrap()
                };
                Problem::new(a, b, q, r, s, scale(f), scale(l), 0.1).unwrap()
            })
    })
}

fn scale_of(m: &Mat) -> f64 {
    1.0 + m.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn poly_jacobian_matches_central_differences((p, x, u) in sized_poly()) {
        let eval = p.eval_derivatives(&x, &u, false).unwrap();
        let (n, m) = (x.len(), u.len());
        let mut fd = Mat::zeros(p.n_out(), n + m);
        for j in 0..n + m {
            let (mut xp, mut xm, mut up, mut um) = (x.clone(), x.clone(), u.clone(), u.clone());
            let base = if j < n { x[j] } else { u[j - n] };
            let h = 1e-6 * (1.0 + base.abs());
            if j < n { xp[j] += h; xm[j] -= h; } else { up[j - n] += h; um[j - n] -= h; }
            let fp = p.eval(&xp, &up).unwrap();
            let fm = p.eval(&xm, &um).unwrap();
            for i in 0..p.n_out() {
                fd[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        let err = (&eval.jacobian - &fd).amax();
        prop_assert!(err <= 1e-6 * scale_of(&eval.jacobian), "err {}", err);
    }

    #[test]
    fn cross_term_elimination_is_idempotent(p in problem(), pts in proptest::collection::vec(-0.5..0.5f64, 6)) {
        let once = eliminate_cross_term(&p).unwrap();
        let twice = eliminate_cross_term(&once).unwrap();
        prop_assert_eq!(&once.a, &twice.a);
        prop_assert_eq!(&once.q, &twice.q);
        prop_assert_eq!(&once.s, &twice.s);
        let (n, m) = (p.n(), p.m());
        let x: Vec<f64> = pts.iter().cycle().take(n).copied().collect();
        let u: Vec<f64> = pts.iter().rev().cycle().take(m).copied().collect();
        prop_assert_eq!(once.dynamics(&x, &u).unwrap(), twice.dynamics(&x, &u).unwrap());
        prop_assert_eq!(once.stage_cost(&x, &u).unwrap(), twice.stage_cost(&x, &u).unwrap());
    }

    #[test]
    fn cutoff_is_identity_inside_and_zero_outside(
        eps in 1e-3..10.0f64,
        dir in proptest::collection::vec(-1.0..1.0f64, 1..5),
        radius in 0.0..3.0f64,
    ) {
        let d = Vector::from_vec(dir);
        prop_assume!(d.norm() > 1e-6);
        let y = &d * (radius * eps / d.norm());
        let out = cutoff_apply(&y, &CutoffProfile::new(eps));
        if y.norm() <= eps {
            prop_assert_eq!(out, y);
        } else if y.norm() >= 2.0 * eps {
            prop_assert!(out.iter().all(|v| *v == 0.0));
        } else {
            prop_assert!(out.norm() <= y.norm());
        }
    }

    #[test]
    fn hamiltonian_gradients_match_differences(
        p in problem(),
        pts in proptest::collection::vec(-0.5..0.5f64, 9),
    ) {
        let (n, m) = (p.n(), p.m());
        let x: Vec<f64> = pts[..n].to_vec();
        let u: Vec<f64> = pts[3..3 + m].to_vec();
        let lp: Vec<f64> = pts[6..6 + n].to_vec();
        let h = hamiltonian_eval(&p, &x, &u, &lp).unwrap();
        let step = 1e-6;
        for j in 0..n {
            let (mut a, mut b) = (x.clone(), x.clone());
            a[j] += step;
            b[j] -= step;
            let fd = (hamiltonian_eval(&p, &a, &u, &lp).unwrap().value - hamiltonian_eval(&p, &b, &u, &lp).unwrap().value) / (2.0 * step);
            prop_assert!((fd - h.grad_x[j]).abs() <= 1e-6 * (1.0 + h.grad_x[j].abs()));
        }
        for j in 0..m {
            let (mut a, mut b) = (u.clone(), u.clone());
            a[j] += step;
            b[j] -= step;
            let fd = (hamiltonian_eval(&p, &x, &a, &lp).unwrap().value - hamiltonian_eval(&p, &x, &b, &lp).unwrap().value) / (2.0 * step);
            prop_assert!((fd - h.grad_u[j]).abs() <= 1e-6 * (1.0 + h.grad_u[j].abs()));
        }
    }

    #[test]
    fn optimal_control_is_a_strict_local_minimum(
        p in problem(),
        pts in proptest::collection::vec(-0.2..0.2f64, 6),
    ) {
        let tol = Tolerances::default();
        let n = p.n();
        let pt = BidirectionalPoint::new(Vector::from_column_slice(&pts[..n]), Vector::from_column_slice(&pts[3..3 + n]));
        let u = optimal_control(&p, &pt, &tol).unwrap();
        let h = hamiltonian_eval(&p, pt.x.as_slice(), u.as_slice(), pt.lambda_plus.as_slice()).unwrap();
        prop_assert!(h.grad_u.norm() <= tol.newton_gradient * (1.0 + pt.x.norm() + pt.lambda_plus.norm()));
        prop_assert!(dtsm::linalg::min_symmetric_eigenvalue(&h.hess_uu) > 0.0);
    }

    #[test]
    fn remainders_are_flat_at_origin(p in problem()) {
        let tol = Tolerances::default();
        let p = eliminate_cross_term(&p).unwrap();
        let n = p.n();
        let at = |x: Vector, l: Vector| nonlinear_remainders(&p, &BidirectionalPoint::new(x, l), &tol).unwrap();
        let (f0, g0) = at(Vector::zeros(n), Vector::zeros(n));
        prop_assert!(f0.amax() == 0.0 && g0.amax() == 0.0);
        let step = 1e-4;
        for j in 0..2 * n {
            let mut e = Vector::zeros(2 * n);
            e[j] = step;
            let (fp, gp) = at(e.rows(0, n).into_owned(), e.rows(n, n).into_owned());
            let (fm, gm) = at(-e.rows(0, n).into_owned(), -e.rows(n, n).into_owned());
            let jac = ((fp - fm).amax().max((gp - gm).amax())) / (2.0 * step);
            prop_assert!(jac <= 1e-7, "jacobian column {} = {}", j, jac);
        }
    }

    #[test]
    fn grid_interpolation_hits_nodes(
        n in 1usize..=3,
        half in 2usize..5,
        seed in proptest::collection::vec(-1.0..1.0f64, 8),
        cubic in any::<bool>(),
    ) {
        let interp = if cubic { Interpolation::Cubic } else { Interpolation::Multilinear };
        let res = 2 * half + 1;
        let count = res.pow(n as u32);
        let values: Vec<f64> = (0..count).map(|i| seed[i % seed.len()] * (i as f64 + 1.0).sqrt()).collect();
        let g = GridFn::from_values(n, 1, 0.3, res, interp, values).unwrap();
        prop_assert_eq!(g.at_node(g.origin_index())[0], 0.0);
        for i in 0..g.node_count() {
            prop_assert_eq!(g.eval(g.node(i).as_slice())[0], g.at_node(i)[0]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn linear_gronwall_dominates(
        delta in 0.0..1.5f64,
        l in 0.0..1.0f64,
        u0 in 0.0..1.0f64,
        shrink in proptest::collection::vec((0.0..=1.0f64, 0.0..=1.0f64), 30),
        start in 0.0..=1.0f64,
    ) {
        let bound = gronwall_bounds(GronwallKind::Linear { delta, l, u0 }, shrink.len()).unwrap();
        let mut u = start * u0;
        for (k, (s, t)) in shrink.iter().enumerate() {
            prop_assert!(u <= bound[k] * (1.0 + 1e-12) + 1e-300, "k = {} u = {} bound = {}", k, u, bound[k]);
            u = s * delta * u + t * l;
        }
    }

    #[test]
    fn summed_gronwall_dominates(
        c1 in 0.0..1.0f64,
        c2 in 0.0..1.0f64,
        fractions in proptest::collection::vec(-1.0..=1.0f64, 30),
    ) {
        let bound = gronwall_bounds(GronwallKind::Summed { c1, c2 }, fractions.len()).unwrap();
        let mut sum = 0.0;
        for (k, f) in fractions.iter().enumerate() {
            let xi = f * (c1 * sum + c2);
            if k >= 1 {
                prop_assert!(xi.abs() <= bound[k] * (1.0 + 1e-12), "k = {} xi = {} bound = {}", k, xi, bound[k]);
            }
            sum += xi.abs();
        }
    }
}
