//! Dirichlet discretizations of the oscillatory and effective operators on intervals and rectangles.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::coeff::{BellmanSpec, LinearOperatorSpec, Mat};
use crate::effective::EffectiveLinear;
use crate::error::{Error, Result};
use crate::interp::frac;
use crate::linalg::{CsrMatrix, LinearSolver, SolverKind, Triplets};
use crate::stencil;

/// Tensor grid on `Π(lo_k, hi_k)` with `n[k]` cells per axis; nodes include the boundary.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainGrid {
    pub dim: usize,
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub n: [usize; 2],
}

impl DomainGrid {
    pub fn new(dim: usize, lo: [f64; 2], hi: [f64; 2], n: [usize; 2]) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::Input(format!("domain dimension must be 1 or 2, got {dim}")));
        }
        for k in 0..dim {
            if !(hi[k] > lo[k]) {
                return Err(Error::Input(format!("empty domain along axis {k}")));
            }
            if n[k] < 2 {
                return Err(Error::Input(format!("need at least 2 cells along axis {k}")));
            }
        }
        let n = if dim == 1 { [n[0], 0] } else { n };
        Ok(Self { dim, lo, hi, n })
    }

    /// `(0,1)` or `(0,1)²` with `n` cells per axis.
    pub fn unit(dim: usize, n: usize) -> Result<Self> {
        Self::new(dim, [0.0; 2], [1.0; 2], [n, n])
    }

    pub fn h(&self, axis: usize) -> f64 {
        (self.hi[axis] - self.lo[axis]) / self.n[axis] as f64
    }

    fn nodes(&self, axis: usize) -> usize {
        if axis < self.dim {
            self.n[axis] + 1
        } else {
            1
        }
    }

    pub fn full_len(&self) -> usize {
        self.nodes(0) * self.nodes(1)
    }

    pub fn interior_len(&self) -> usize {
        (self.n[0] - 1) * if self.dim == 2 { self.n[1] - 1 } else { 1 }
    }

    pub fn full_index(&self, i: usize, j: usize) -> usize {
        i + self.nodes(0) * j
    }

    pub fn coords(&self, full: usize) -> (usize, usize) {
        (full % self.nodes(0), full / self.nodes(0))
    }

    pub fn point(&self, full: usize) -> [f64; 2] {
        let (i, j) = self.coords(full);
        let y = if self.dim == 2 {
            self.lo[1] + j as f64 * self.h(1)
        } else {
            0.0
        };
        [self.lo[0] + i as f64 * self.h(0), y]
    }

    pub fn is_boundary(&self, full: usize) -> bool {
        let (i, j) = self.coords(full);
        i == 0 || i == self.n[0] || (self.dim == 2 && (j == 0 || j == self.n[1]))
    }

    /// Full index of interior node `k` (interior nodes ordered first axis fastest).
    pub fn interior_to_full(&self, k: usize) -> usize {
        let m = self.n[0] - 1;
        self.full_index(k % m + 1, if self.dim == 2 { k / m + 1 } else { 0 })
    }

    pub fn full_to_interior(&self, full: usize) -> Option<usize> {
        if self.is_boundary(full) {
            return None;
        }
        let (i, j) = self.coords(full);
        let m = self.n[0] - 1;
        Some(i - 1 + if self.dim == 2 { (j - 1) * m } else { 0 })
    }

    /// Zero-extends interior values to all nodes.
    pub fn extend(&self, interior: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.full_len()];
        for (k, v) in interior.iter().enumerate() {
            full[self.interior_to_full(k)] = *v;
        }
        full
    }

    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        (0..self.interior_len()).map(|k| full[self.interior_to_full(k)]).collect()
    }

    pub fn sample(&self, f: impl Fn([f64; 2]) -> f64) -> Vec<f64> {
        (0..self.full_len()).map(|k| f(self.point(k))).collect()
    }

    pub fn boundary_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.full_len()).filter(|&k| self.is_boundary(k))
    }

    /// Trapezoidal quadrature weights on all nodes.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        (0..self.full_len())
            .map(|k| {
                let (i, j) = self.coords(k);
                let mut w = self.h(0) * if i == 0 || i == self.n[0] { 0.5 } else { 1.0 };
                if self.dim == 2 {
                    w *= self.h(1) * if j == 0 || j == self.n[1] { 0.5 } else { 1.0 };
                }
                w
            })
            .collect()
    }

    /// Fast-variable point `frac(x/ε)` of node `full`.
    ///
    /// For `ε = 1/m` with `m·lo` integral, uses exact integer arithmetic so every cell
    /// sees bit-identical coefficient samples.
    pub fn torus_point(&self, full: usize, eps: f64) -> [f64; 2] {
        let (i, j) = self.coords(full);
        let idx = [i, j];
        let recip = 1.0 / eps;
        let m = recip.round();
        let mut y = [0.0; 2];
        for axis in 0..self.dim {
            let span = self.hi[axis] - self.lo[axis];
            let lo_m = self.lo[axis] * m;
            let integral = |v: f64| (v - v.round()).abs() < 1e-12;
            y[axis] = if (recip - m).abs() <= 1e-9 * m && integral(lo_m) && integral(span) {
                let (k, n) = ((span.round() * m) as u64, self.n[axis] as u64);
                ((idx[axis] as u64 * k) % n) as f64 / n as f64
            } else {
                frac(self.point(full)[axis] / eps)
            };
        }
        y
    }
}

/// How drift terms are differenced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftScheme {
    /// Centered where the mesh-Péclet number is below one, upwind elsewhere.
    #[default]
    Auto,
    Centered,
    Upwind,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemeTags {
    pub drift: DriftScheme,
    pub upwind_nodes: usize,
}

/// Interior×interior matrix of a discrete operator plus its couplings to boundary nodes.
#[derive(Clone, Debug)]
pub struct DiscreteOperator {
    pub grid: DomainGrid,
    pub matrix: CsrMatrix,
    /// `(interior row, full boundary node, weight)`
    pub boundary: Vec<(usize, usize, f64)>,
    /// Oscillation scale; 0 for effective operators.
    pub eps: f64,
    pub scheme: SchemeTags,
    /// Largest zeroth-order coefficient over the nodes.
    pub c_max: f64,
}

impl DiscreteOperator {
    /// `Lφ` at interior nodes for full-node data (boundary values included).
    pub fn apply(&self, full: &[f64]) -> Vec<f64> {
        let mut out = self.matrix.matvec(&self.grid.restrict(full));
        for &(row, node, w) in &self.boundary {
            out[row] += w * full[node];
        }
        out
    }

    /// Properness shift `max(0, max c) + 1`.
    pub fn proper_shift(&self) -> f64 {
        self.c_max.max(0.0) + 1.0
    }

    /// `α·L`
    pub fn scaled(&self, alpha: f64) -> Self {
        let mut op = self.clone();
        op.matrix = self.matrix.scaled_shift(alpha, 0.0);
        for b in &mut op.boundary {
            b.2 *= alpha;
        }
        op.c_max *= alpha;
        op
    }

    /// `L + δ` (adds `δ` to the zeroth-order term).
    pub fn shifted(&self, delta: f64) -> Self {
        let mut op = self.clone();
        op.matrix = self.matrix.scaled_shift(1.0, delta);
        op.c_max += delta;
        op
    }
}

/// Assembles `a(x/ε):D² + b(x/ε)·∇ + c(x/ε)` with zero Dirichlet data eliminated.
pub fn assemble_oscillatory(spec: &LinearOperatorSpec, eps: f64, grid: &DomainGrid) -> Result<DiscreteOperator> {
    assemble_oscillatory_with(spec, eps, grid, DriftScheme::Auto)
}

pub fn assemble_oscillatory_with(
    spec: &LinearOperatorSpec,
    eps: f64,
    grid: &DomainGrid,
    drift: DriftScheme,
) -> Result<DiscreteOperator> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Input(format!("ε must be positive, got {eps}")));
    }
    if spec.dim() != grid.dim {
        return Err(Error::Input("operator and domain dimensions differ".into()));
    }
    let f = &spec.field;
    assemble(grid, eps, drift, |full| {
        let y = grid.torus_point(full, eps);
        (f.a(y), f.b(y), f.c(y))
    })
}

/// Assembles the constant-coefficient effective operator `ā:D² + b̄·∇ + c̄`.
pub fn assemble_effective(eff: &EffectiveLinear, grid: &DomainGrid) -> Result<DiscreteOperator> {
    assemble_effective_with(eff, grid, DriftScheme::Auto)
}

pub fn assemble_effective_with(eff: &EffectiveLinear, grid: &DomainGrid, drift: DriftScheme) -> Result<DiscreteOperator> {
    if eff.dim() != grid.dim {
        return Err(Error::Input("effective operator and domain dimensions differ".into()));
    }
    let a = eff.a_mat();
    let b = [eff.b_bar[0], eff.b_bar.get(1).copied().unwrap_or(0.0)];
    assemble(grid, 0.0, drift, |_| (a, b, eff.c_bar))
}

/// Assembles a constant-coefficient linear spec as an effective (`ε = 0`) operator.
pub fn assemble_constant(spec: &LinearOperatorSpec, grid: &DomainGrid) -> Result<DiscreteOperator> {
    let f = &spec.field;
    let y = [0.0; 2];
    assemble(grid, 0.0, DriftScheme::Auto, |_| (f.a(y), f.b(y), f.c(y)))
}

pub(crate) fn assemble(
    grid: &DomainGrid,
    eps: f64,
    drift: DriftScheme,
    coef: impl Fn(usize) -> (Mat, [f64; 2], f64),
) -> Result<DiscreteOperator> {
    let h = [grid.h(0), if grid.dim == 2 { grid.h(1) } else { 1.0 }];
    let ni = grid.interior_len();
    let mut t = Triplets::with_capacity(ni, ni * if grid.dim == 1 { 3 } else { 9 });
    let mut boundary = Vec::new();
    let mut worst: Option<(usize, f64)> = None;
    let mut upwind_nodes = 0;
    let mut c_max = f64::NEG_INFINITY;
    for row in 0..ni {
        let full = grid.interior_to_full(row);
        let (a, b, c) = coef(full);
        let (mut taps, min_off) = stencil::diffusion(&a, h[0], h[1]);
        if min_off < 0.0 && worst.map_or(true, |(_, w)| min_off < w) {
            worst = Some((full, min_off));
        }
        let pe = stencil::peclet(&a, b, h);
        let mut up = [false; 2];
        for axis in 0..grid.dim {
            up[axis] = match drift {
                DriftScheme::Auto => pe[axis] >= 1.0,
                DriftScheme::Centered => false,
                DriftScheme::Upwind => b[axis] != 0.0,
            };
        }
        if up.iter().any(|u| *u) {
            upwind_nodes += 1;
        }
        stencil::add_drift(&mut taps, b, h, up, grid.dim);
        taps.push((0, 0, c));
        c_max = c_max.max(c);
        let (i, j) = grid.coords(full);
        for (di, dj, w) in taps {
            let nb = grid.full_index((i as i64 + di as i64) as usize, (j as i64 + dj as i64) as usize);
            match grid.full_to_interior(nb) {
                Some(col) => t.push(row, col, w),
                None => boundary.push((row, nb, w)),
            }
        }
    }
    // diffusion and drift taps onto the same boundary node become one coupling
    boundary.sort_by_key(|&(row, node, _)| (row, node));
    boundary.dedup_by(|next, kept| {
        let same = next.0 == kept.0 && next.1 == kept.1;
        if same {
            kept.2 += next.2;
        }
        same
    });
    if let Some((node, w)) = worst {
        return Err(Error::Assembly {
            node,
            detail: format!("cross coefficient exceeds the diagonal (negative off-diagonal weight {w:.3e})"),
        });
    }
    Ok(DiscreteOperator {
        grid: *grid,
        matrix: t.build(),
        boundary,
        eps,
        scheme: SchemeTags { drift, upwind_nodes },
        c_max: if ni == 0 { 0.0 } else { c_max },
    })
}

/// Assembles every control of a Bellman operator at scale `ε` (`ε = 0`: constant controls).
pub fn assemble_controls(spec: &BellmanSpec, eps: f64, grid: &DomainGrid) -> Result<Vec<DiscreteOperator>> {
    spec.controls()
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let op = if eps == 0.0 {
                assemble_constant(c, grid)
            } else {
                assemble_oscillatory(c, eps, grid)
            };
            op.map_err(|e| e.context(format!("control {k}")))
        })
        .collect()
}

/// Operator whose interior row `i` is taken from control `policy[i]`.
pub fn frozen_operator(ops: &[DiscreteOperator], policy: &[usize]) -> DiscreteOperator {
    let matrix = crate::torus::select_rows(&ops.iter().map(|o| o.matrix.clone()).collect::<Vec<_>>(), policy);
    let boundary = ops
        .iter()
        .enumerate()
        .flat_map(|(k, op)| {
            op.boundary
                .iter()
                .filter(move |(row, _, _)| policy[*row] == k)
                .copied()
        })
        .collect();
    DiscreteOperator {
        grid: ops[0].grid,
        matrix,
        boundary,
        eps: ops[0].eps,
        scheme: ops[0].scheme,
        c_max: ops.iter().map(|o| o.c_max).fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Nodewise maximum over controls of `L_β φ`, with the maximizing control.
///
/// Ties keep the lower index unless `prefer` names a control within `1e-12` relative.
pub fn apply_controls(ops: &[DiscreteOperator], full: &[f64], prefer: Option<&[usize]>) -> (Vec<f64>, Vec<usize>) {
    let values: Vec<Vec<f64>> = ops.iter().map(|op| op.apply(full)).collect();
    let n = values[0].len();
    let scale = values
        .iter()
        .flatten()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    let mut out = vec![0.0; n];
    let mut arg = vec![0; n];
    for i in 0..n {
        let mut best = prefer.map_or(0, |p| p[i]);
        for (k, v) in values.iter().enumerate() {
            if v[i] > values[best][i] + 1e-12 * scale {
                best = k;
            }
        }
        out[i] = values[best][i];
        arg[i] = best;
    }
    (out, arg)
}

/// Discrete `F(x/ε, D²φ)` at interior nodes.
pub fn apply_bellman(spec: &BellmanSpec, eps: f64, grid: &DomainGrid, full: &[f64]) -> Result<Vec<f64>> {
    let ops = assemble_controls(spec, eps, grid)?;
    Ok(apply_controls(&ops, full, None).0)
}

/// Outcome of [`is_monotone`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonotoneReport {
    pub monotone: bool,
    /// `(row, col, value)` of the worst offending entry of `shift·I − L`, if any.
    pub worst: Option<(usize, usize, f64)>,
    pub reason: Option<String>,
}

/// Checks that `shift·I − L` is a nonsingular M-matrix: positive diagonal, nonpositive
/// off-diagonals, weak row diagonal dominance, and every row connected to a strictly
/// dominant one.
pub fn is_monotone(op: &DiscreteOperator, shift: f64) -> MonotoneReport {
    let n = op.matrix.dim();
    let mut worst: Option<(usize, usize, f64)> = None;
    let mut reason = None;
    let mut strict = vec![false; n];
    let mut fail = |row, col, v: f64, why: &str, worst: &mut Option<(usize, usize, f64)>| {
        if worst.map_or(true, |(_, _, w)| v.abs() > w.abs()) {
            *worst = Some((row, col, v));
            reason = Some(why.to_string());
        }
    };
    for i in 0..n {
        let mut diag = shift;
        let mut off = 0.0;
        for (j, v) in op.matrix.row(i) {
            if j == i {
                diag -= v;
            } else {
                let b = -v;
                if b > 0.0 {
                    fail(i, j, b, "positive off-diagonal entry", &mut worst);
                }
                off += b.abs();
            }
        }
        // boundary couplings also count as off-diagonal mass
        for &(row, node, w) in op.boundary.iter().filter(|(r, _, _)| *r == i) {
            if w < 0.0 {
                fail(row, node, -w, "negative boundary coupling", &mut worst);
            }
        }
        if diag <= 0.0 {
            fail(i, i, diag, "nonpositive diagonal entry", &mut worst);
            continue;
        }
        let slack = diag - off;
        let tol = 1e-12 * diag;
        if slack < -tol {
            fail(i, i, slack, "row is not diagonally dominant", &mut worst);
        }
        strict[i] = slack > tol;
    }
    if worst.is_none() {
        // every row must reach a strictly dominant row through the graph of nonzeros
        let mut reverse: Vec<Vec<usize>> = vec![Vec::new(); n];
        for i in 0..n {
            for (j, v) in op.matrix.row(i) {
                if j != i && v != 0.0 {
                    reverse[j].push(i);
                }
            }
        }
        let mut reached = strict.clone();
        let mut queue: VecDeque<usize> = (0..n).filter(|&i| strict[i]).collect();
        while let Some(j) = queue.pop_front() {
            for &i in &reverse[j] {
                if !reached[i] {
                    reached[i] = true;
                    queue.push_back(i);
                }
            }
        }
        if let Some(i) = (0..n).find(|&i| !reached[i]) {
            worst = Some((i, i, 0.0));
            reason = Some("row is not connected to a strictly dominant row".into());
        }
    }
    MonotoneReport {
        monotone: worst.is_none(),
        worst,
        reason,
    }
}

/// Factorization of `shift·I − L` for repeated Dirichlet solves.
#[derive(Debug)]
pub struct DirichletSolver {
    op: DiscreteOperator,
    shift: f64,
    solver: LinearSolver,
}

impl DirichletSolver {
    pub fn new(op: &DiscreteOperator, shift: f64, kind: SolverKind) -> Result<Self> {
        let b = op.matrix.scaled_shift(-1.0, shift);
        let solver = LinearSolver::new(&b, None, kind)?;
        Ok(Self {
            op: op.clone(),
            shift,
            solver,
        })
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn operator(&self) -> &DiscreteOperator {
        &self.op
    }

    /// `(shift·I − L)⁻¹ v` on interior vectors (zero boundary data).
    pub fn solve_interior(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.solver.solve(v)
    }

    /// Solves `(L − shift)w = f` in the interior with `w = g` on the boundary; returns full-node `w`.
    pub fn solve(&self, f: &[f64], g: Option<&[f64]>) -> Result<Vec<f64>> {
        let grid = &self.op.grid;
        let mut rhs: Vec<f64> = f.iter().map(|v| -v).collect();
        if let Some(g) = g {
            for &(row, node, w) in &self.op.boundary {
                rhs[row] += w * g[node];
            }
        }
        let w = self.solver.solve(&rhs)?;
        let mut full = grid.extend(&w);
        if let Some(g) = g {
            for node in grid.boundary_nodes() {
                full[node] = g[node];
            }
        }
        Ok(full)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::{CoefficientField, Periodic};

    fn lap(dim: usize) -> LinearOperatorSpec {
        LinearOperatorSpec::new(
            CoefficientField::constant(Mat::identity(dim), &vec![0.0; dim], 0.0).unwrap(),
            1.0,
            1.0,
            0.0,
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn quadratic_is_differenced_exactly() {
        let g = DomainGrid::unit(1, 16).unwrap();
        let op = assemble_oscillatory(&lap(1), 0.25, &g).unwrap();
        let u = g.sample(|x| x[0] * (1.0 - x[0]));
        assert!(op.apply(&u).iter().all(|v| (v + 2.0).abs() < 1e-10));
    }

    #[test]
    fn integer_torus_points() {
        let g = DomainGrid::unit(1, 64).unwrap();
        for k in 0..g.full_len() {
            let y = g.torus_point(k, 1.0 / 8.0);
            assert_eq!(y[0], ((k * 8) % 64) as f64 / 64.0);
        }
    }

    #[test]
    fn laplacian_is_monotone_and_shift_handles_potential() {
        let g = DomainGrid::unit(2, 8).unwrap();
        let op = assemble_oscillatory(&lap(2), 0.5, &g).unwrap();
        assert!(is_monotone(&op, 0.0).monotone);
        let five = op.shifted(5.0);
        assert!(is_monotone(&five, 6.0).monotone);
        assert!(!is_monotone(&five, 4.0).monotone);
    }

    #[test]
    fn forced_centered_drift_breaks_monotonicity() {
        let field = CoefficientField::new(
            1,
            [Periodic::Const(1.0), Periodic::zero(), Periodic::zero()],
            [Periodic::Const(100.0), Periodic::zero()],
            Periodic::zero(),
        )
        .unwrap();
        let spec = LinearOperatorSpec::new(field, 1.0, 1.0, 100.0, 0.0).unwrap();
        let g = DomainGrid::unit(1, 16).unwrap();
        let centered = assemble_oscillatory_with(&spec, 0.5, &g, DriftScheme::Centered).unwrap();
        let rep = is_monotone(&centered, 1.0);
        assert!(!rep.monotone);
        assert!(rep.worst.is_some() && rep.reason.is_some());
        assert!(centered.matrix.get(1, 0) < 0.0);
        let auto = assemble_oscillatory(&spec, 0.5, &g).unwrap();
        assert!(is_monotone(&auto, 1.0).monotone);
        assert_eq!(auto.scheme.upwind_nodes, 15);
    }

    #[test]
    fn dirichlet_solve_of_constant_data() {
        let g = DomainGrid::unit(2, 8).unwrap();
        let op = assemble_oscillatory(&lap(2), 0.5, &g).unwrap();
        let s = DirichletSolver::new(&op, 0.0, SolverKind::Auto).unwrap();
        let z = s.solve(&vec![0.0; g.interior_len()], Some(&vec![-0.7; g.full_len()])).unwrap();
        assert!(z.iter().all(|v| (v + 0.7).abs() < 1e-12));
    }
}
