//! Principal eigenpairs of monotone discrete operators.
//!
//! Sign convention: `Lφ = −λφ` with `φ > 0` in the interior and `φ = 0` on the boundary.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::coeff::BellmanSpec;
use crate::domain::{apply_controls, assemble_controls, frozen_operator, DirichletSolver, DiscreteOperator, DomainGrid};
use crate::error::{Error, Result};
use crate::linalg::SolverKind;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenPair {
    pub lambda: f64,
    /// Values on every grid node (zero on the boundary), `max = 1`.
    pub phi: Vec<f64>,
    /// `‖Lφ + λφ‖∞` over the interior.
    pub residual: f64,
    pub cw_lower: f64,
    pub cw_upper: f64,
    pub iterations: usize,
    /// Bracket width after every iteration.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub widths: Vec<f64>,
}

impl EigenPair {
    pub fn width(&self) -> f64 {
        self.cw_upper - self.cw_lower
    }
}

/// Shifted inverse power iteration certified by Collatz–Wielandt bounds.
///
/// With `s = max(0, max c) + 1`, `B = sI − L` is a nonsingular M-matrix and `B⁻¹ > 0`.
/// For a positive iterate `v` the ratios `(B⁻¹v)ᵢ/vᵢ` bracket the Perron root `1/(s+λ)`,
/// which gives `λ ∈ [1/max − s, 1/min − s]`; iteration stops once that bracket is no
/// wider than the tolerance.
#[derive(Clone, Debug)]
pub struct PowerIteration {
    tol: f64,
    max_iter: usize,
    start: Option<Vec<f64>>,
    polish: usize,
    solver: SolverKind,
}

impl Default for PowerIteration {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 5000,
            start: None,
            polish: 2,
            solver: SolverKind::Auto,
        }
    }
}

impl PowerIteration {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iterations(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    /// Starting vector on interior nodes (must be positive).
    pub fn with_start(mut self, start: Vec<f64>) -> Self {
        self.start = Some(start);
        self
    }

    /// Extra iterations after the bracket closes.
    pub fn with_polish(mut self, polish: usize) -> Self {
        self.polish = polish;
        self
    }

    pub fn with_solver(mut self, solver: SolverKind) -> Self {
        self.solver = solver;
        self
    }

    pub fn run(&self, op: &DiscreteOperator) -> Result<EigenPair> {
        let shift = op.proper_shift();
        let solver = DirichletSolver::new(op, shift, self.solver)?;
        self.run_with(op, &solver)
    }

    /// Runs with a prefactorized `sI − L`.
    pub fn run_with(&self, op: &DiscreteOperator, solver: &DirichletSolver) -> Result<EigenPair> {
        let n = op.matrix.dim();
        if n == 0 {
            return Err(Error::Input("operator has no interior nodes".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("eigen tolerance must be positive, got {}", self.tol)));
        }
        let s = solver.shift();
        let mut v = match &self.start {
            Some(x) => {
                if x.len() != n || x.iter().any(|v| !(*v > 0.0)) {
                    return Err(Error::Input("start vector must be positive on every interior node".into()));
                }
                let m = x.iter().fold(0.0f64, |a, b| a.max(*b));
                x.iter().map(|v| v / m).collect()
            }
            None => vec![1.0; n],
        };
        let mut widths = Vec::new();
        let mut polish_left: Option<usize> = None;
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        let mut rho = 0.0;
        for it in 1..=self.max_iter {
            let w = solver.solve_interior(&v)?;
            let (mut rmin, mut rmax) = (f64::INFINITY, 0.0f64);
            let (mut num, mut den) = (0.0, 0.0);
            for (i, (&wi, &vi)) in w.iter().zip(&v).enumerate() {
                if !(wi > 0.0) {
                    return Err(Error::Positivity {
                        node: op.grid.interior_to_full(i),
                        value: wi,
                    });
                }
                let r = wi / vi;
                rmin = rmin.min(r);
                rmax = rmax.max(r);
                num += wi * vi;
                den += vi * vi;
            }
            // bracket for λ from the bracket of the Perron root of B⁻¹
            lo = lo.max(1.0 / rmax - s);
            hi = hi.min(1.0 / rmin - s);
            rho = num / den;
            widths.push(hi - lo);
            let wmax = w.iter().fold(0.0f64, |a, b| a.max(*b));
            v = w.into_iter().map(|x| x / wmax).collect();
            match polish_left {
                Some(0) => return Ok(self.finish(op, v, rho, lo, hi, it, widths)),
                Some(k) => polish_left = Some(k - 1),
                None if hi - lo <= self.tol => {
                    if self.polish == 0 {
                        return Ok(self.finish(op, v, rho, lo, hi, it, widths));
                    }
                    polish_left = Some(self.polish - 1);
                }
                None => {}
            }
        }
        if hi - lo <= self.tol {
            return Ok(self.finish(op, v, rho, lo, hi, self.max_iter, widths));
        }
        Err(Error::NotConverged {
            iterations: self.max_iter,
            lower: lo,
            upper: hi,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        op: &DiscreteOperator,
        v: Vec<f64>,
        rho: f64,
        lo: f64,
        hi: f64,
        iterations: usize,
        widths: Vec<f64>,
    ) -> EigenPair {
        let s = op.proper_shift();
        let lambda = (1.0 / rho - s).clamp(lo, hi);
        let phi = op.grid.extend(&v);
        let lphi = op.apply(&phi);
        let residual = lphi
            .iter()
            .zip(&v)
            .fold(0.0f64, |m, (l, p)| m.max((l + lambda * p).abs()));
        EigenPair {
            lambda,
            phi,
            residual,
            cw_lower: lo,
            cw_upper: hi,
            iterations,
            widths,
        }
    }
}

/// Principal eigenpair with tolerance `tol` on the certified bracket width.
pub fn principal_eigenpair(op: &DiscreteOperator, tol: f64, max_iter: usize) -> Result<EigenPair> {
    PowerIteration::new()
        .with_tolerance(tol)
        .with_max_iterations(max_iter)
        .run(op)
}

/// Left Perron vector of `−L` on interior nodes, normalized to a probability vector.
///
/// The discrete analogue of the invariant measure attached to the principal eigenvalue;
/// reported as a diagnostic only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvariantMeasure {
    pub lambda: f64,
    pub mu: Vec<f64>,
    pub cw_lower: f64,
    pub cw_upper: f64,
    pub residual: f64,
}

pub fn left_perron_vector(op: &DiscreteOperator, tol: f64, max_iter: usize) -> Result<InvariantMeasure> {
    let mut adjoint = op.clone();
    adjoint.matrix = op.matrix.transpose();
    let pair = principal_eigenpair(&adjoint, tol, max_iter)?;
    let mu = op.grid.restrict(&pair.phi);
    let total: f64 = mu.iter().sum();
    Ok(InvariantMeasure {
        lambda: pair.lambda,
        mu: mu.iter().map(|m| m / total).collect(),
        cw_lower: pair.cw_lower,
        cw_upper: pair.cw_upper,
        residual: pair.residual / total,
    })
}

/// `(min, max)` over interior nodes of `(−Lφ)ᵢ/φᵢ`; brackets the principal eigenvalue.
pub fn collatz_wielandt(op: &DiscreteOperator, phi: &[f64]) -> Result<(f64, f64)> {
    let grid = &op.grid;
    if phi.len() != grid.full_len() {
        return Err(Error::Input("φ must hold one value per grid node".into()));
    }
    let lphi = op.apply(phi);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (k, l) in lphi.iter().enumerate() {
        let p = phi[grid.interior_to_full(k)];
        if !(p > 0.0) {
            return Err(Error::Input(format!(
                "φ must be positive in the interior (node {} has {p})",
                grid.interior_to_full(k)
            )));
        }
        let r = -l / p;
        lo = lo.min(r);
        hi = hi.max(r);
    }
    Ok((lo, hi))
}

/// Eigenpair of a Bellman operator with the optimal control per interior node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BellmanEigen {
    pub pair: EigenPair,
    pub policy: Vec<usize>,
    /// Frozen-policy eigenvalue after each improvement.
    pub history: Vec<f64>,
}

/// Principal eigenpair of `max_β L_β` (controls at scale `ε`; `ε = 0` for constant controls).
///
/// Howard iteration: solve the frozen linear eigenproblem, re-select the maximizing
/// control against its eigenfunction, repeat until the policy is stationary. Every
/// improvement weakly lowers the eigenvalue, and the result is the smallest frozen
/// eigenvalue over all policy fields.
pub fn principal_eigenpair_bellman(spec: &BellmanSpec, eps: f64, grid: &DomainGrid, tol: f64) -> Result<BellmanEigen> {
    let ops = assemble_controls(spec, eps, grid)?;
    bellman_eigen_with(&ops, tol, None)
}

pub fn bellman_eigen_with(ops: &[DiscreteOperator], tol: f64, initial: Option<Vec<usize>>) -> Result<BellmanEigen> {
    let n = ops[0].matrix.dim();
    let mut policy = initial.unwrap_or_else(|| vec![0; n]);
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    let mut history = Vec::new();
    let mut previous = policy.clone();
    let mut start: Option<Vec<f64>> = None;
    const MAX_IMPROVEMENTS: usize = 200;
    for _ in 0..MAX_IMPROVEMENTS {
        seen.insert(policy.clone());
        let op = frozen_operator(ops, &policy);
        let mut pi = PowerIteration::new().with_tolerance(tol);
        if let Some(s) = start.take() {
            pi = pi.with_start(s);
        }
        let pair = pi.run(&op)?;
        history.push(pair.lambda);
        let (_, next) = apply_controls(ops, &pair.phi, Some(&policy));
        if next == policy {
            return Ok(BellmanEigen { pair, policy, history });
        }
        let stalled = history.len() > 1 && pair.lambda >= history[history.len() - 2] - tol;
        if seen.contains(&next) && stalled {
            return Err(Error::PolicyCycle {
                detail: format!("eigenvalue stalled at {}", pair.lambda),
                previous,
                current: policy,
            });
        }
        start = Some(op.grid.restrict(&pair.phi));
        previous = std::mem::replace(&mut policy, next);
    }
    Err(Error::PolicyCycle {
        detail: format!("no stationary policy after {MAX_IMPROVEMENTS} improvements"),
        previous,
        current: policy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::{CoefficientField, LinearOperatorSpec, Mat};
    use crate::domain::assemble_oscillatory;
    use std::f64::consts::PI;

    fn lap_op(dim: usize, n: usize) -> DiscreteOperator {
        let spec = LinearOperatorSpec::new(
            CoefficientField::constant(Mat::identity(dim), &vec![0.0; dim], 0.0).unwrap(),
            1.0,
            1.0,
            0.0,
            0.0,
        )
        .unwrap();
        assemble_oscillatory(&spec, 1.0, &DomainGrid::unit(dim, n).unwrap()).unwrap()
    }

    #[test]
    fn dirichlet_laplacian_1d() {
        let op = lap_op(1, 256);
        let e = principal_eigenpair(&op, 1e-10, 1000).unwrap();
        let h = 1.0 / 256.0;
        let exact = 4.0 / (h * h) * (PI * h / 2.0).sin().powi(2);
        assert!((e.lambda - exact).abs() < 1e-9);
        assert!(e.cw_lower <= e.lambda && e.lambda <= e.cw_upper);
        let x = op.grid.sample(|x| (PI * x[0]).sin());
        assert!(e.phi.iter().zip(&x).all(|(a, b)| (a - b).abs() < 1e-8));
    }

    #[test]
    fn brackets_shrink_and_shift_is_exact() {
        let op = lap_op(2, 16);
        let e = principal_eigenpair(&op, 1e-11, 1000).unwrap();
        assert!(e.widths.windows(2).all(|w| w[1] <= w[0] + 1e-13));
        let f = principal_eigenpair(&op.shifted(0.75), 1e-11, 1000).unwrap();
        assert!((f.lambda - (e.lambda - 0.75)).abs() < 1e-9);
    }

    #[test]
    fn collatz_wielandt_of_parabola() {
        let op = lap_op(1, 64);
        let phi = op.grid.sample(|x| x[0] * (1.0 - x[0]));
        let (lo, hi) = collatz_wielandt(&op, &phi).unwrap();
        assert!((lo - 8.0).abs() < 1e-9);
        assert!(hi > PI * PI);
        let bad = op.grid.sample(|x| x[0] - 0.5);
        assert!(matches!(collatz_wielandt(&op, &bad), Err(Error::Input(_))));
    }
}
