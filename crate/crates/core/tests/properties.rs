use mvhedge::bsde::{solve_v, solve_vh_terminal, BsdeOptions};
use mvhedge::lattice::{
    build_lattice, discrete_gkw, gkw_reconstruction, ObservationLattice, TimeGrid,
};
use mvhedge::model::{Coefficient, DiffusionSpec, HTildeSign, PayoffSpec};
use mvhedge::operator::{
    compute_tilde_inputs, optimal_strategy, solve_martingale_equation, solve_with_rhs, MvhOperator,
    SolverOptions,
};
use mvhedge::pde::nu_root;
use proptest::prelude::*;

fn lattice(n: usize) -> ObservationLattice {
    build_lattice(TimeGrid::new(n, 1.0).unwrap()).unwrap()
}

fn theta_field(a: f64, b: f64) -> Coefficient {
    Coefficient::field(move |t, x| a + b * (x + t).tanh())
}

fn vector(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, 1usize << n)
}

fn lattice_case() -> impl Strategy<Value = (usize, f64, f64, f64, Vec<f64>, Vec<f64>)> {
    (1usize..=6).prop_flat_map(|n| {
        (
            Just(n),
            -1.5f64..1.5,
            -1.0f64..1.0,
            -0.95f64..0.95,
            vector(n),
            vector(n),
        )
    })
}

fn scale(v: &[f64]) -> f64 {
    1.0 + v.iter().map(|x| x * x).sum::<f64>()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn operator_is_symmetric_and_nonnegative((n, a, b, rho, u, v) in lattice_case()) {
        let lat = lattice(n);
        let spec = DiffusionSpec::new(theta_field(a, b), rho, 1.0, PayoffSpec::Constant(0.0));
        let op = MvhOperator::new(&spec, &lat).unwrap();
        let au = op.apply(&u).unwrap();
        let av = op.apply(&v).unwrap();
        let tol = 1e-10 * (scale(&u) * scale(&v)).sqrt();
        prop_assert!((lat.inner(&au, &v) - lat.inner(&u, &av)).abs() <= tol);
        prop_assert!(lat.inner(&au, &u) >= -1e-12 * scale(&u));
    }

    #[test]
    fn gkw_reproduces_terminal_values((n, _a, _b, _rho, u, _v) in lattice_case()) {
        let lat = lattice(n);
        let parts = discrete_gkw(&u, &lat).unwrap();
        let rebuilt = gkw_reconstruction(&parts, &lat).unwrap();
        for (x, y) in rebuilt.terminal().iter().zip(&u) {
            prop_assert!((x - y).abs() <= 1e-12 * scale(&u));
        }
        prop_assert!((parts.initial_value - lat.expectation(&u)).abs() <= 1e-12 * scale(&u));
    }

    #[test]
    fn solution_norm_is_bounded_by_rhs((n, a, b, rho, u, _v) in lattice_case()) {
        let lat = lattice(n);
        let spec = DiffusionSpec::new(theta_field(a, b), rho, 1.0, PayoffSpec::Constant(0.0));
        let op = MvhOperator::new(&spec, &lat).unwrap();
        let sol = solve_with_rhs(&op, &spec, &lat, u.clone(), &SolverOptions::default()).unwrap();
        let y = sol.y_tilde.terminal();
        prop_assert!(lat.inner(y, y) <= lat.inner(&u, &u) * (1.0 + 1e-9) + 1e-18);
    }

    #[test]
    fn claim_scaling_is_exact(n in 1usize..=8, theta in -2.0f64..2.0, rho in -0.9f64..0.9, c in 0.1f64..10.0) {
        let lat = lattice(n);
        let opts = SolverOptions { tol: 1e-13, ..SolverOptions::default() };
        let run = |claim: f64| {
            let spec = DiffusionSpec::new(theta, rho, 1.0, PayoffSpec::Constant(claim));
            let tilde = compute_tilde_inputs(&spec, &lat, HTildeSign::Standard).unwrap();
            let sol = solve_martingale_equation(&tilde, &spec, &lat, &opts).unwrap();
            let pi = optimal_strategy(&sol, &tilde, &spec, &lat).unwrap();
            (sol.y_tilde, pi)
        };
        let (y1, p1) = run(1.0);
        let (yc, pc) = run(c);
        prop_assert!(yc.max_abs_diff(&y1.map(|v| c * v)) <= 1e-9 * c);
        prop_assert!(pc.max_abs_diff(&p1.map(|v| c * v)) <= 1e-9 * c * (1.0 + p1.max_abs()));
    }

    #[test]
    fn value_linear_in_terminal((n, a, b, rho, u, v) in lattice_case(), al in -2.0f64..2.0, be in -2.0f64..2.0) {
        let lat = lattice(n);
        let spec = DiffusionSpec::new(theta_field(a, b), rho, 1.0, PayoffSpec::Constant(1.0));
        let (vv, phi, _) = solve_v(&spec, &lat, &BsdeOptions::default()).unwrap();
        let combo: Vec<f64> = u.iter().zip(&v).map(|(x, y)| al * x + be * y).collect();
        let (hu, _) = solve_vh_terminal(&vv, &phi, &u, &spec, &lat).unwrap();
        let (hv, _) = solve_vh_terminal(&vv, &phi, &v, &spec, &lat).unwrap();
        let (hc, _) = solve_vh_terminal(&vv, &phi, &combo, &spec, &lat).unwrap();
        let expect = hu.zip_map(&hv, |x, y| al * x + be * y);
        prop_assert!(hc.max_abs_diff(&expect) <= 1e-11 * scale(&u).max(scale(&v)));
    }

    #[test]
    fn value_process_lies_in_unit_interval(n in 1usize..=10, a in -2.0f64..2.0, b in -1.0f64..1.0, rho in -0.95f64..0.95) {
        let lat = lattice(n);
        let spec = DiffusionSpec::new(theta_field(a, b), rho, 1.0, PayoffSpec::Constant(1.0));
        let (v, _, iters) = solve_v(&spec, &lat, &BsdeOptions::default()).unwrap();
        prop_assert!(v.values().all(|x| x > 0.0 && x <= 1.0 + 1e-12));
        prop_assert!(iters.iter().flatten().all(|&k| k <= 50));
    }

    #[test]
    fn nu_solves_its_equation(rho in -0.99f64..0.99, alpha in 0.01f64..50.0) {
        let u = nu_root(rho, alpha).unwrap();
        let r2 = rho * rho;
        prop_assert!(u > 0.0);
        let lhs = (1.0 - r2) / u - r2 * u.ln();
        prop_assert!((lhs - alpha).abs() <= 1e-10 * alpha.max(1.0));
        prop_assert!((nu_root(rho, 1.0 - r2).unwrap() - 1.0).abs() <= 1e-12);
        prop_assert!((nu_root(0.0, alpha).unwrap() - 1.0 / alpha).abs() <= 1e-12 / alpha.min(1.0));
    }
}

#[test]
fn dense_direct_solve_matches_krylov() {
    let lat = lattice(2);
    let spec = DiffusionSpec::new(theta_field(0.8, 0.4), 0.6, 1.0, PayoffSpec::Constant(0.0));
    let op = MvhOperator::new(&spec, &lat).unwrap();
    let dim = op.dim();
    let mut m = nalgebra::DMatrix::<f64>::identity(dim, dim);
    for j in 0..dim {
        let mut e = vec![0.0; dim];
        e[j] = 1.0;
        for (i, v) in op.apply(&e).unwrap().into_iter().enumerate() {
            m[(i, j)] += v;
        }
    }
    assert!((&m - m.transpose()).amax() < 1e-14);
    let rhs = vec![1.0, -0.5, 2.0, 0.25];
    let direct = m
        .lu()
        .solve(&nalgebra::DVector::from_vec(rhs.clone()))
        .unwrap();
    let opts = SolverOptions {
        tol: 1e-14,
        ..SolverOptions::default()
    };
    let sol = solve_with_rhs(&op, &spec, &lat, rhs, &opts).unwrap();
    for (a, b) in sol.y_tilde.terminal().iter().zip(direct.iter()) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}
