use std::f64::consts::PI;

use ergodica::coeff::{CoefficientField, FieldConfig, LinearOperatorSpec, Mat, Periodic};
use ergodica::domain::{
    assemble_effective, assemble_oscillatory, is_monotone, DirichletSolver, DomainGrid,
};
use ergodica::effective::EffectiveLinear;
use ergodica::linalg::SolverKind;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn sin_abc() -> LinearOperatorSpec {
    let field = FieldConfig::OnePlusDeltaSin {
        delta: 0.5,
        beta: 1.0,
        kappa: 1.0,
    }
    .build()
    .unwrap();
    LinearOperatorSpec::new(field, 0.5, 1.5, 1.0, 0.0).unwrap()
}

fn sep_2d() -> LinearOperatorSpec {
    let field = FieldConfig::SeparableSin { delta: 0.5 }.build().unwrap();
    LinearOperatorSpec::new(field, 0.5, 1.5, 0.0, 0.0).unwrap()
}

#[test]
fn dirichlet_solve_matches_dense_lu() {
    for kind in [SolverKind::Banded, SolverKind::Iterative] {
        let grid = DomainGrid::unit(1, 48).unwrap();
        let op = assemble_oscillatory(&sin_abc(), 0.25, &grid).unwrap();
        let s = op.proper_shift();
        let solver = DirichletSolver::new(&op, s, kind).unwrap();
        let f = grid.restrict(&grid.sample(|x| (3.0 * x[0]).cos()));
        let g = grid.sample(|x| 1.0 + x[0]);
        let w = solver.solve(&f, Some(&g)).unwrap();

        // dense oracle: (L − s)w = f with the boundary values moved to the right side
        let n = op.matrix.dim();
        let dense = op.matrix.to_dense();
        let m = DMatrix::from_fn(n, n, |i, j| dense[i][j] - if i == j { s } else { 0.0 });
        let mut rhs = DVector::from_vec(f.clone());
        for &(row, node, c) in &op.boundary {
            rhs[row] -= c * g[node];
        }
        let x = m.lu().solve(&rhs).unwrap();
        let err = (0..n).fold(0.0f64, |e, k| e.max((w[grid.interior_to_full(k)] - x[k]).abs()));
        assert!(err < 1e-9, "{kind:?}: {err}");
        assert_eq!(w[0], 1.0);
        assert_eq!(w[48], 2.0);
    }
}

#[test]
fn constants_solve_the_pure_diffusion_problem() {
    let grid = DomainGrid::unit(2, 16).unwrap();
    let op = assemble_oscillatory(&sep_2d(), 0.25, &grid).unwrap();
    let solver = DirichletSolver::new(&op, 0.0, SolverKind::Auto).unwrap();
    let w = solver.solve(&vec![0.0; grid.interior_len()], Some(&vec![3.5; grid.full_len()])).unwrap();
    assert!(w.iter().all(|v| (v - 3.5).abs() < 1e-11));
}

#[test]
fn constant_coefficients_reproduce_quadratics() {
    // three-point second differences are exact on quadratics, central drift on linears
    let a = Mat::sym2(1.3, 0.2, 0.7);
    let eff = EffectiveLinear::from_constants(&a, &[0.4, -0.6], 0.0);
    let grid = DomainGrid::unit(2, 8).unwrap();
    let op = assemble_effective(&eff, &grid).unwrap();
    let u = grid.sample(|x| x[0] * x[0] + 3.0 * x[0] * x[1] - 2.0 * x[1] * x[1] + x[0]);
    let lu = op.apply(&u);
    let exact = |x: [f64; 2]| 2.0 * 1.3 + 2.0 * 0.2 * 3.0 + 0.7 * -4.0 + 0.4 * (2.0 * x[0] + 3.0 * x[1] + 1.0) - 0.6 * (3.0 * x[0] - 4.0 * x[1]);
    for (k, v) in lu.iter().enumerate() {
        let x = grid.point(grid.interior_to_full(k));
        assert!((v - exact(x)).abs() < 1e-10);
    }
}

#[test]
fn catalog_operators_are_monotone() {
    for (spec, dim, n) in [(sin_abc(), 1, 64), (sep_2d(), 2, 16)] {
        let grid = DomainGrid::unit(dim, n).unwrap();
        for eps in [0.25, 0.125] {
            let op = assemble_oscillatory(&spec, eps, &grid).unwrap();
            let r = is_monotone(&op, op.proper_shift());
            assert!(r.monotone, "dim {dim} eps {eps} {:?} {:?}", r.reason, r.worst);
        }
    }
}

#[test]
fn monotonicity_check_flags_a_positive_shift() {
    let grid = DomainGrid::unit(1, 16).unwrap();
    let op = assemble_oscillatory(&sin_abc(), 0.25, &grid).unwrap();
    // sI − L with s far below the spectrum loses its positive diagonal
    let r = is_monotone(&op, -1e6);
    assert!(!r.monotone);
    assert!(r.worst.is_some());
}

#[test]
fn torus_points_are_exact_for_reciprocal_integers() {
    let grid = DomainGrid::unit(1, 64).unwrap();
    for m in [4u32, 8, 16] {
        let eps = 1.0 / m as f64;
        for k in 0..=64 {
            let y = grid.torus_point(k, eps)[0];
            let expected = ((k as u64 * m as u64) % 64) as f64 / 64.0;
            assert_eq!(y, expected);
        }
    }
    // nodes one period apart see identical coefficients
    let op = assemble_oscillatory(&sin_abc(), 0.25, &grid).unwrap();
    let d = op.matrix.diagonal();
    for k in 0..(d.len() - 16) {
        assert_eq!(d[k], d[k + 16]);
    }
}

#[test]
fn trapezoid_weights_integrate_the_sine() {
    let grid = DomainGrid::unit(2, 64).unwrap();
    let w = grid.trapezoid_weights();
    let f = grid.sample(|x| (PI * x[0]).sin() * (PI * x[1]).sin());
    let integral: f64 = w.iter().zip(&f).map(|(a, b)| a * b).sum();
    assert!((integral - 4.0 / (PI * PI)).abs() < 1e-3);
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
}

#[test]
fn rejects_degenerate_grids() {
    assert!(DomainGrid::unit(1, 1).is_err());
    assert!(DomainGrid::unit(3, 8).is_err());
    assert!(DomainGrid::new(1, [1.0, 0.0], [0.0, 1.0], [8, 1]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn maximum_principle(seed in 0u64..10_000, eps_pow in 2u32..5) {
        // (L − s)w = f with f ≤ 0 and zero boundary data forces w ≥ 0
        let grid = DomainGrid::unit(1, 64).unwrap();
        let op = assemble_oscillatory(&sin_abc(), 0.5f64.powi(eps_pow as i32), &grid).unwrap();
        let solver = DirichletSolver::new(&op, op.proper_shift(), SolverKind::Auto).unwrap();
        let f: Vec<f64> = (0..grid.interior_len())
            .map(|k| -(((k as u64 * 2654435761 + seed) % 1000) as f64) / 1000.0)
            .collect();
        let w = solver.solve(&f, None).unwrap();
        prop_assert!(w.iter().all(|v| *v >= -1e-14));
    }

    #[test]
    fn comparison_with_boundary_data(lo in -2.0..2.0f64, hi in -2.0..2.0f64) {
        // with f = 0 and no zeroth order term, boundary extremes bound the solution
        let spec = LinearOperatorSpec::new(CoefficientField::diffusion_1d(Periodic::one_plus_sin(0.5, 0)), 0.5, 1.5, 0.0, 0.0).unwrap();
        let grid = DomainGrid::unit(1, 32).unwrap();
        let op = assemble_oscillatory(&spec, 0.125, &grid).unwrap();
        let solver = DirichletSolver::new(&op, 0.0, SolverKind::Auto).unwrap();
        let mut g = vec![0.0; grid.full_len()];
        g[0] = lo;
        g[32] = hi;
        let w = solver.solve(&vec![0.0; grid.interior_len()], Some(&g)).unwrap();
        let (a, b) = (lo.min(hi), lo.max(hi));
        prop_assert!(w.iter().all(|v| *v >= a - 1e-12 && *v <= b + 1e-12));
    }
}
