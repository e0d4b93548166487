use std::f64::consts::PI;

use ergodica::coeff::{BellmanSpec, CoefficientField, FieldConfig, LinearOperatorSpec, Mat, Periodic};
use ergodica::domain::{assemble_controls, assemble_oscillatory, frozen_operator, DomainGrid};
use ergodica::eigen::{
    bellman_eigen_with, collatz_wielandt, left_perron_vector, principal_eigenpair, principal_eigenpair_bellman, PowerIteration,
};
use ergodica::linalg::SolverKind;
use nalgebra::DMatrix;
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

/// Smallest real part of the spectrum of `−L`, from a dense eigensolve.
fn dense_lambda(dense: &[Vec<f64>]) -> f64 {
    let n = dense.len();
    let m = DMatrix::from_fn(n, n, |i, j| -dense[i][j]);
    m.complex_eigenvalues().iter().map(|z| z.re).fold(f64::INFINITY, f64::min)
}

#[test]
fn matches_dense_eigensolver() {
    let grid = DomainGrid::unit(1, 64).unwrap();
    for eps in [0.25, 0.125] {
        let op = assemble_oscillatory(&sin_abc(), eps, &grid).unwrap();
        let e = principal_eigenpair(&op, 1e-11, 5000).unwrap();
        let oracle = dense_lambda(&op.matrix.to_dense());
        assert!((e.lambda - oracle).abs() < 1e-9, "{} vs {oracle}", e.lambda);
        assert!(e.residual < 1e-8);
        assert!(e.cw_lower <= e.lambda + 1e-12 && e.lambda <= e.cw_upper + 1e-12);
    }
}

#[test]
fn two_dimensional_laplacian() {
    let n = 24;
    let grid = DomainGrid::unit(2, n).unwrap();
    let spec = LinearOperatorSpec::new(CoefficientField::constant(Mat::identity(2), &[0.0, 0.0], 0.0).unwrap(), 1.0, 1.0, 0.0, 0.0).unwrap();
    let op = assemble_oscillatory(&spec, 1.0, &grid).unwrap();
    let e = principal_eigenpair(&op, 1e-11, 5000).unwrap();
    let h = 1.0 / n as f64;
    let exact = 8.0 / (h * h) * (PI * h / 2.0).sin().powi(2);
    assert!((e.lambda - exact).abs() < 1e-8);
    let phi = grid.sample(|x| (PI * x[0]).sin() * (PI * x[1]).sin());
    let err = e.phi.iter().zip(&phi).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    assert!(err < 1e-7);
}

#[test]
fn constant_potential_shifts_the_eigenvalue() {
    let grid = DomainGrid::unit(1, 32).unwrap();
    let mk = |c: f64| {
        let spec = LinearOperatorSpec::new(CoefficientField::constant(Mat::scalar(1.0), &[0.0], c).unwrap(), 1.0, 1.0, 0.0, c.abs()).unwrap();
        principal_eigenpair(&assemble_oscillatory(&spec, 1.0, &grid).unwrap(), 1e-11, 5000).unwrap().lambda
    };
    assert!((mk(3.0) - (mk(0.0) - 3.0)).abs() < 1e-9);
    assert!((mk(-2.0) - (mk(0.0) + 2.0)).abs() < 1e-9);
}

#[test]
fn banded_and_iterative_agree() {
    let grid = DomainGrid::unit(1, 96).unwrap();
    let op = assemble_oscillatory(&sin_abc(), 0.125, &grid).unwrap();
    let a = PowerIteration::new().with_solver(SolverKind::Banded).run(&op).unwrap();
    let b = PowerIteration::new().with_solver(SolverKind::Iterative).run(&op).unwrap();
    assert!((a.lambda - b.lambda).abs() < 1e-9);
}

#[test]
fn bracket_from_any_positive_vector() {
    let grid = DomainGrid::unit(1, 48).unwrap();
    let op = assemble_oscillatory(&sin_abc(), 0.25, &grid).unwrap();
    let e = principal_eigenpair(&op, 1e-11, 5000).unwrap();
    let trial = grid.sample(|x| x[0] * (1.0 - x[0]));
    let (lo, hi) = collatz_wielandt(&op, &trial).unwrap();
    assert!(lo <= e.lambda && e.lambda <= hi);
    assert!(collatz_wielandt(&op, &vec![0.0; grid.full_len()]).is_err());
}

#[test]
fn rejects_bad_inputs() {
    let grid = DomainGrid::unit(1, 16).unwrap();
    let op = assemble_oscillatory(&sin_abc(), 0.25, &grid).unwrap();
    assert!(PowerIteration::new().with_tolerance(0.0).run(&op).is_err());
    assert!(PowerIteration::new().with_start(vec![-1.0; 15]).run(&op).is_err());
    assert!(PowerIteration::new().with_start(vec![1.0; 3]).run(&op).is_err());
}

#[test]
fn left_perron_vector_is_a_left_eigenvector() {
    let grid = DomainGrid::unit(1, 64).unwrap();
    let op = assemble_oscillatory(&sin_abc(), 0.125, &grid).unwrap();
    let right = principal_eigenpair(&op, 1e-11, 5000).unwrap();
    let left = left_perron_vector(&op, 1e-11, 5000).unwrap();
    assert!((left.lambda - right.lambda).abs() < 1e-9);
    assert!((left.mu.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    assert!(left.mu.iter().all(|m| *m > 0.0));
    // μᵀL = −λμᵀ against the dense matrix
    let dense = op.matrix.to_dense();
    let n = dense.len();
    let scale = left.mu.iter().fold(0.0f64, |a, b| a.max(*b));
    for j in 0..n {
        let s: f64 = (0..n).map(|i| left.mu[i] * dense[i][j]).sum();
        assert!((s + left.lambda * left.mu[j]).abs() < 1e-7 * scale, "{j}");
    }
}

#[test]
fn left_and_right_vectors_coincide_for_symmetric_operators() {
    let grid = DomainGrid::unit(1, 32).unwrap();
    let spec = LinearOperatorSpec::new(CoefficientField::constant(Mat::scalar(1.0), &[0.0], 0.0).unwrap(), 1.0, 1.0, 0.0, 0.0).unwrap();
    let op = assemble_oscillatory(&spec, 1.0, &grid).unwrap();
    let right = principal_eigenpair(&op, 1e-12, 5000).unwrap();
    let left = left_perron_vector(&op, 1e-12, 5000).unwrap();
    let phi = grid.restrict(&right.phi);
    let total: f64 = phi.iter().sum();
    for (m, p) in left.mu.iter().zip(&phi) {
        assert!((m - p / total).abs() < 1e-10);
    }
}

fn two_controls() -> BellmanSpec {
    let c = |p: Periodic| LinearOperatorSpec::new(CoefficientField::diffusion_1d(p), 0.5, 1.5, 0.0, 0.0).unwrap();
    BellmanSpec::new(vec![c(Periodic::one_plus_sin(0.5, 0)), c(Periodic::Const(1.2))]).unwrap()
}

#[test]
fn bellman_eigenvalue_is_the_smallest_frozen_one() {
    let grid = DomainGrid::unit(1, 9).unwrap();
    let spec = two_controls();
    let ops = assemble_controls(&spec, 0.5, &grid).unwrap();
    let b = principal_eigenpair_bellman(&spec, 0.5, &grid, 1e-12).unwrap();
    let brute = (0..1usize << 8)
        .map(|mask| {
            let policy: Vec<usize> = (0..8).map(|i| (mask >> i) & 1).collect();
            principal_eigenpair(&frozen_operator(&ops, &policy), 1e-12, 5000).unwrap().lambda
        })
        .fold(f64::INFINITY, f64::min);
    assert!((b.pair.lambda - brute).abs() < 1e-9, "{} vs {brute}", b.pair.lambda);
    assert!(b.history.windows(2).all(|w| w[1] <= w[0] + 1e-9));
}

#[test]
fn bellman_with_one_control_is_linear() {
    let grid = DomainGrid::unit(1, 32).unwrap();
    let spec = BellmanSpec::singleton(sin_abc());
    let b = principal_eigenpair_bellman(&spec, 0.25, &grid, 1e-11).unwrap();
    let l = principal_eigenpair(&assemble_oscillatory(&sin_abc(), 0.25, &grid).unwrap(), 1e-11, 5000).unwrap();
    assert!((b.pair.lambda - l.lambda).abs() < 1e-10);
}

#[test]
fn separable_two_dimensional_field() {
    // a = diag(a₁(x₁/ε), a₂(x₂/ε)) separates: λ is the sum of two 1D eigenvalues
    let n = 32;
    let eps = 0.25;
    let field = FieldConfig::SeparableSin { delta: 0.5 }.build().unwrap();
    let spec = LinearOperatorSpec::new(field, 0.5, 1.5, 0.0, 0.0).unwrap();
    let e2 = principal_eigenpair(&assemble_oscillatory(&spec, eps, &DomainGrid::unit(2, n).unwrap()).unwrap(), 1e-11, 5000).unwrap();
    let one = LinearOperatorSpec::new(CoefficientField::diffusion_1d(Periodic::one_plus_sin(0.5, 0)), 0.5, 1.5, 0.0, 0.0).unwrap();
    let e1 = principal_eigenpair(&assemble_oscillatory(&one, eps, &DomainGrid::unit(1, n).unwrap()).unwrap(), 1e-11, 5000).unwrap();
    assert!((e2.lambda - 2.0 * e1.lambda).abs() < 1e-8, "{} vs {}", e2.lambda, 2.0 * e1.lambda);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn random_starts_converge_to_the_same_pair(seed in 0u64..100_000) {
        let grid = DomainGrid::unit(1, 48).unwrap();
        let op = assemble_oscillatory(&sin_abc(), 0.125, &grid).unwrap();
        let base = principal_eigenpair(&op, 1e-11, 5000).unwrap();
        let start: Vec<f64> = (0..47).map(|k| 0.01 + ((k as u64 * 2654435761 + seed) % 997) as f64 / 997.0).collect();
        let e = PowerIteration::new().with_tolerance(1e-11).with_start(start).run(&op).unwrap();
        prop_assert!((e.lambda - base.lambda).abs() < 1e-9);
        let diff = e.phi.iter().zip(&base.phi).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        prop_assert!(diff < 1e-7);
    }

    #[test]
    fn scaling_the_operator_scales_the_eigenvalue(alpha in 0.1..10.0f64) {
        let grid = DomainGrid::unit(1, 32).unwrap();
        let op = assemble_oscillatory(&sin_abc(), 0.25, &grid).unwrap();
        let a = principal_eigenpair(&op, 1e-11, 5000).unwrap();
        let b = principal_eigenpair(&op.scaled(alpha), 1e-11 * alpha, 5000).unwrap();
        prop_assert!((b.lambda - alpha * a.lambda).abs() < 1e-8 * alpha);
    }

    #[test]
    fn bellman_start_policy_does_not_matter(mask in 0usize..(1 << 15)) {
        let grid = DomainGrid::unit(1, 16).unwrap();
        let ops = assemble_controls(&two_controls(), 0.25, &grid).unwrap();
        let start: Vec<usize> = (0..15).map(|i| (mask >> i) & 1).collect();
        let a = bellman_eigen_with(&ops, 1e-12, None).unwrap();
        let b = bellman_eigen_with(&ops, 1e-12, Some(start)).unwrap();
        prop_assert!((a.pair.lambda - b.pair.lambda).abs() < 1e-9);
    }
}
