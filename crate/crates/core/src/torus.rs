//! Periodic grids, monotone discretizations of `a(y)D²` on the torus and cell-problem solvers.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::coeff::{BellmanSpec, CoefficientField, Mat};
use crate::error::{Error, Result};
use crate::interp::{periodic_cubic, periodic_weights};
use crate::linalg::{interleaved_order, CsrMatrix, LinearSolver, SolverKind, Triplets};
use crate::stencil;

/// Regular grid on the unit torus, `n` points per axis, first axis fastest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeriodicGrid {
    pub dim: usize,
    pub n: usize,
}

impl PeriodicGrid {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::Input(format!("torus dimension must be 1 or 2, got {dim}")));
        }
        if n < 4 {
            return Err(Error::Input(format!("torus grid needs at least 4 points per axis, got {n}")));
        }
        Ok(Self { dim, n })
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i + self.n * j
    }

    /// Index of the node shifted by `(di, dj)` with periodic wrap.
    pub fn shifted(&self, idx: usize, di: i32, dj: i32) -> usize {
        let n = self.n as i64;
        let i = (idx % self.n) as i64;
        let j = (idx / self.n) as i64;
        let ii = (i + di as i64).rem_euclid(n) as usize;
        let jj = if self.dim == 1 {
            0
        } else {
            (j + dj as i64).rem_euclid(n) as usize
        };
        self.index(ii, jj)
    }

    pub fn point(&self, idx: usize) -> [f64; 2] {
        let h = self.h();
        [(idx % self.n) as f64 * h, (idx / self.n) as f64 * h]
    }

    /// Samples `f` at every node.
    pub fn sample(&self, f: impl Fn([f64; 2]) -> f64) -> Vec<f64> {
        (0..self.len()).map(|k| f(self.point(k))).collect()
    }

    /// Node ordering with small bandwidth for the periodic couplings.
    pub fn band_order(&self) -> Vec<usize> {
        let line = interleaved_order(self.n);
        if self.dim == 1 {
            return line;
        }
        let mut order = Vec::with_capacity(self.len());
        for &j in &line {
            for &i in &line {
                order.push(self.index(i, j));
            }
        }
        order
    }

    /// Interpolated value of nodal data at an arbitrary torus point.
    pub fn interpolate(&self, values: &[f64], y: [f64; 2]) -> f64 {
        periodic_cubic(values, self.n, self.dim, y)
    }
}

/// How the additive constant of a cell solution is fixed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    MeanZero,
    /// `χ(y₀) = 0` with `y₀` the grid origin.
    #[default]
    AnchorAtOrigin,
}

/// Discrete `y ↦ a(y) : D²` on a periodic grid.
#[derive(Clone, Debug)]
pub struct TorusOperator {
    pub grid: PeriodicGrid,
    pub matrix: CsrMatrix,
}

/// Assembles the monotone discretization of `a(y) : D²_yy` with periodic wrap.
pub fn assemble_torus_diffusion(field: &CoefficientField, grid: &PeriodicGrid) -> Result<TorusOperator> {
    if field.dim != grid.dim {
        return Err(Error::Input(format!(
            "field dimension {} does not match torus dimension {}",
            field.dim, grid.dim
        )));
    }
    let matrix = assemble_rows(grid, |y| field.a(y))?;
    Ok(TorusOperator { grid: *grid, matrix })
}

fn assemble_rows(grid: &PeriodicGrid, a_at: impl Fn([f64; 2]) -> Mat) -> Result<CsrMatrix> {
    let h = grid.h();
    let taps_per_row = if grid.dim == 1 { 3 } else { 7 };
    let mut t = Triplets::with_capacity(grid.len(), grid.len() * taps_per_row);
    let mut worst: Option<(usize, f64)> = None;
    for row in 0..grid.len() {
        let a = a_at(grid.point(row));
        let (taps, min_off) = stencil::diffusion(&a, h, h);
        if min_off < 0.0 && worst.map_or(true, |(_, w)| min_off < w) {
            worst = Some((row, min_off));
        }
        for (di, dj, w) in taps {
            t.push(row, grid.shifted(row, di, dj), w);
        }
    }
    if let Some((node, w)) = worst {
        return Err(Error::Assembly {
            node,
            detail: format!(
                "cross coefficient exceeds the diagonal (negative off-diagonal weight {w:.3e}); |a12| must not exceed min(a11, a22)"
            ),
        });
    }
    Ok(t.build())
}

/// Solution `(χ, γ)` of a discrete ergodic problem `Aχ + f = γ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErgodicSolution {
    pub chi: Vec<f64>,
    pub gamma: f64,
    pub normalization: Normalization,
    /// `‖Aχ + f − γ‖∞` after refinement.
    pub residual: f64,
}

impl ErgodicSolution {
    pub fn zero(len: usize) -> Self {
        Self {
            chi: vec![0.0; len],
            gamma: 0.0,
            normalization: Normalization::AnchorAtOrigin,
            residual: 0.0,
        }
    }
}

/// Factorized cell operator, reusable across right-hand sides.
///
/// The singular system `Aχ + f = γ` is solved through `K = −A + e₀e₀ᵀ`, a nonsingular
/// M-matrix: with `χ(0) = 0` the equation reads `Kχ = f − γ`, so
/// `χ = K⁻¹f − γK⁻¹1` and `γ = (K⁻¹f)₀ / (K⁻¹1)₀`.
#[derive(Debug)]
pub struct CellSolver {
    grid: PeriodicGrid,
    a: CsrMatrix,
    k: LinearSolver,
    k_inv_one: Vec<f64>,
}

impl CellSolver {
    pub fn new(op: &TorusOperator) -> Result<Self> {
        Self::with_solver(op, SolverKind::Auto)
    }

    pub fn with_solver(op: &TorusOperator, kind: SolverKind) -> Result<Self> {
        let n = op.grid.len();
        let mut t = Triplets::with_capacity(n, op.matrix.nnz() + 1);
        for i in 0..n {
            for (j, v) in op.matrix.row(i) {
                t.push(i, j, -v);
            }
        }
        t.push(0, 0, 1.0);
        let k = LinearSolver::new(&t.build(), Some(&op.grid.band_order()), kind)?;
        let k_inv_one = k.solve(&vec![1.0; n])?;
        if !(k_inv_one[0].abs() > 0.0) {
            return Err(Error::Solver("singular cell system".into()));
        }
        Ok(Self {
            grid: op.grid,
            a: op.matrix.clone(),
            k,
            k_inv_one,
        })
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    pub fn operator(&self) -> &CsrMatrix {
        &self.a
    }

    fn raw(&self, f: &[f64]) -> Result<(Vec<f64>, f64)> {
        let kf = self.k.solve(f)?;
        let gamma = kf[0] / self.k_inv_one[0];
        let chi = kf
            .iter()
            .zip(&self.k_inv_one)
            .map(|(a, b)| a - gamma * b)
            .collect();
        Ok((chi, gamma))
    }

    fn residual(&self, chi: &[f64], f: &[f64], gamma: f64) -> Vec<f64> {
        let mut r = self.a.matvec(chi);
        for (ri, fi) in r.iter_mut().zip(f) {
            *ri += fi - gamma;
        }
        r
    }

    /// Solves `Aχ + f = γ` with one step of iterative refinement.
    pub fn solve(&self, f: &[f64], normalization: Normalization) -> Result<ErgodicSolution> {
        if f.len() != self.grid.len() {
            return Err(Error::Input(format!(
                "right-hand side has {} values, torus has {}",
                f.len(),
                self.grid.len()
            )));
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("right-hand side is not finite".into()));
        }
        let (mut chi, mut gamma) = self.raw(f)?;
        let r = self.residual(&chi, f, gamma);
        let (dchi, dgamma) = self.raw(&r)?;
        for (c, d) in chi.iter_mut().zip(&dchi) {
            *c += d;
        }
        gamma += dgamma;
        if normalization == Normalization::MeanZero {
            let mean = chi.iter().sum::<f64>() / chi.len() as f64;
            for c in &mut chi {
                *c -= mean;
            }
        }
        let residual = self
            .residual(&chi, f, gamma)
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        Ok(ErgodicSolution {
            chi,
            gamma,
            normalization,
            residual,
        })
    }
}

/// One-shot cell solve `a_op·χ + f = γ`.
pub fn solve_cell(op: &TorusOperator, f: &[f64], normalization: Normalization) -> Result<ErgodicSolution> {
    CellSolver::new(op)?.solve(f, normalization)
}

/// Cell solve with an arbitrary precomputed right-hand side (gradient couplings and the like).
pub fn solve_cell_with_rhs(op: &TorusOperator, rhs: &[f64], normalization: Normalization) -> Result<ErgodicSolution> {
    solve_cell(op, rhs, normalization)
}

/// 4th-order centered gradient of periodic nodal data.
pub fn torus_gradient(grid: &PeriodicGrid, values: &[f64]) -> [Vec<f64>; 2] {
    let w = periodic_weights(1, grid.h());
    let along = |axis: usize| -> Vec<f64> {
        (0..grid.len())
            .map(|k| {
                (0..5)
                    .map(|s| {
                        let off = s as i32 - 2;
                        let nb = if axis == 0 {
                            grid.shifted(k, off, 0)
                        } else {
                            grid.shifted(k, 0, off)
                        };
                        w[s] * values[nb]
                    })
                    .sum()
            })
            .collect()
    };
    let gx = along(0);
    let gy = if grid.dim == 2 { along(1) } else { vec![0.0; grid.len()] };
    [gx, gy]
}

/// 4th-order Hessian `[∂₁₁, ∂₁₂, ∂₂₂]` of periodic nodal data (mixed term by composition).
pub fn torus_hessian(grid: &PeriodicGrid, values: &[f64]) -> [Vec<f64>; 3] {
    let w = periodic_weights(2, grid.h());
    let second = |axis: usize| -> Vec<f64> {
        (0..grid.len())
            .map(|k| {
                (0..5)
                    .map(|s| {
                        let off = s as i32 - 2;
                        let nb = if axis == 0 {
                            grid.shifted(k, off, 0)
                        } else {
                            grid.shifted(k, 0, off)
                        };
                        w[s] * values[nb]
                    })
                    .sum()
            })
            .collect()
    };
    let hxx = second(0);
    if grid.dim == 1 {
        let z = vec![0.0; grid.len()];
        return [hxx, z.clone(), z];
    }
    let hyy = second(1);
    let [gx, _] = torus_gradient(grid, values);
    let [_, hxy] = torus_gradient(grid, &gx);
    [hxx, hxy, hyy]
}

/// Result of a Bellman cell problem: ergodic pair plus the optimal control per node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonlinearCell {
    pub solution: ErgodicSolution,
    pub policy: Vec<usize>,
    pub iterations: usize,
}

/// Per-control torus matrices, assembled once and reused by policy iterations.
#[derive(Clone, Debug)]
pub struct ControlOperators {
    pub grid: PeriodicGrid,
    pub matrices: Vec<CsrMatrix>,
    /// `a_β(y)` at every node, per control.
    pub a_nodes: Vec<Vec<Mat>>,
}

impl ControlOperators {
    pub fn new(spec: &BellmanSpec, grid: &PeriodicGrid) -> Result<Self> {
        let mut matrices = Vec::new();
        let mut a_nodes = Vec::new();
        for (beta, ctl) in spec.controls().iter().enumerate() {
            let op = assemble_torus_diffusion(&ctl.field, grid).map_err(|e| e.context(format!("control {beta}")))?;
            matrices.push(op.matrix);
            a_nodes.push((0..grid.len()).map(|k| ctl.field.a(grid.point(k))).collect());
        }
        Ok(Self {
            grid: *grid,
            matrices,
            a_nodes,
        })
    }

    /// Matrix whose row `i` comes from control `policy[i]`.
    pub fn frozen(&self, policy: &[usize]) -> TorusOperator {
        TorusOperator {
            grid: self.grid,
            matrix: select_rows(&self.matrices, policy),
        }
    }
}

/// Row-wise combination of same-shaped matrices.
pub(crate) fn select_rows(mats: &[CsrMatrix], policy: &[usize]) -> CsrMatrix {
    let n = policy.len();
    let mut t = Triplets::with_capacity(n, mats[0].nnz());
    for (i, &p) in policy.iter().enumerate() {
        for (j, v) in mats[p].row(i) {
            t.push(i, j, v);
        }
    }
    t.build()
}

/// Limit on policy improvements before a cycle is declared.
pub const HOWARD_MAX_ITER: usize = 200;

/// Solves `max_β a_β(y):(M + D²w) = c` by Howard policy iteration.
///
/// Each improvement weakly increases the frozen ergodic constant, and `c` equals the
/// largest ergodic constant over all policy fields. Lower-order terms of the controls do
/// not enter this problem.
pub fn solve_nonlinear_cell(spec: &BellmanSpec, m: &Mat, grid: &PeriodicGrid, tol: f64) -> Result<NonlinearCell> {
    let ops = ControlOperators::new(spec, grid)?;
    solve_nonlinear_cell_with(&ops, m, tol)
}

pub fn solve_nonlinear_cell_with(ops: &ControlOperators, m: &Mat, tol: f64) -> Result<NonlinearCell> {
    let grid = ops.grid;
    let n = grid.len();
    let nctl = ops.matrices.len();
    if m.dim != grid.dim {
        return Err(Error::Input("matrix dimension does not match the torus".into()));
    }
    let f_of = |beta: usize, k: usize| ops.a_nodes[beta][k].frobenius(m);
    let scale = 1.0 + m.norm() * ops.a_nodes.iter().flatten().map(|a| a.norm()).fold(0.0, f64::max);

    // start from the control maximizing the frozen source term
    let mut policy: Vec<usize> = (0..n)
        .map(|k| (0..nctl).fold(0, |best, b| if f_of(b, k) > f_of(best, k) + 1e-14 * scale { b } else { best }))
        .collect();
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    let mut previous: Vec<usize> = policy.clone();
    let mut last_gamma = f64::NEG_INFINITY;
    for iteration in 1..=HOWARD_MAX_ITER {
        seen.insert(policy.clone());
        let frozen = ops.frozen(&policy);
        let f: Vec<f64> = (0..n).map(|k| f_of(policy[k], k)).collect();
        let sol = CellSolver::new(&frozen)?.solve(&f, Normalization::AnchorAtOrigin)?;

        // improvement step against the current w, with hysteresis toward the current control
        let mut values = vec![vec![0.0; n]; nctl];
        for (beta, mat) in ops.matrices.iter().enumerate() {
            let aw = mat.matvec(&sol.chi);
            for k in 0..n {
                values[beta][k] = aw[k] + f_of(beta, k);
            }
        }
        let mut next = policy.clone();
        let mut residual = 0.0f64;
        for k in 0..n {
            let mut best = policy[k];
            for beta in 0..nctl {
                if values[beta][k] > values[best][k] + 1e-12 * scale {
                    best = beta;
                }
            }
            next[k] = best;
            let top = (0..nctl).map(|b| values[b][k]).fold(f64::NEG_INFINITY, f64::max);
            residual = residual.max((top - sol.gamma).abs());
        }
        if next == policy && residual <= tol * scale {
            return Ok(NonlinearCell {
                solution: ErgodicSolution { residual, ..sol },
                policy,
                iterations: iteration,
            });
        }
        if next == policy || (seen.contains(&next) && sol.gamma <= last_gamma + 1e-14 * scale) {
            return Err(Error::PolicyCycle {
                detail: format!(
                    "cell problem at M = {:?}: ergodic constant {} stalled with residual {residual:.3e}",
                    m.e, sol.gamma
                ),
                previous,
                current: policy,
            });
        }
        last_gamma = sol.gamma;
        previous = std::mem::replace(&mut policy, next);
    }
    Err(Error::IterationLimit {
        iterations: HOWARD_MAX_ITER,
        residual: f64::NAN,
    })
}
