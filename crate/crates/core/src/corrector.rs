//! Two-scale correctors on the domain: derivative bundles, `w₂`, `ψ₁`, `w₃`, boundary
//! correctors, the full corrector `v^ε`, the nonlinear second-order expansion, the pivot
//! problem and eigenfunction alignment.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coeff::{BellmanSpec, LinearOperatorSpec, Mat};
use crate::domain::{assemble, assemble_effective, assemble_oscillatory, DirichletSolver, DiscreteOperator, DomainGrid, DriftScheme};
use crate::effective::{CorrectorSet, EffectiveLinear, EffectiveMap};
use crate::eigen::EigenPair;
use crate::error::{Error, Result};
use crate::interp::LineDifferentiator;
use crate::linalg::{CsrMatrix, SolverKind};
use crate::torus::{assemble_torus_diffusion, torus_gradient, CellSolver, Normalization, PeriodicGrid};

/// Derivatives of a domain function up to third order.
///
/// `d1[k]`, `d2[k*d + l]`, `d3[(k*d + l)*d + m]`, all on full nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct DerivativeBundle {
    pub grid: DomainGrid,
    pub order: usize,
    pub u: Vec<f64>,
    pub d1: Vec<Vec<f64>>,
    pub d2: Vec<Vec<f64>>,
    pub d3: Vec<Vec<f64>>,
}

impl DerivativeBundle {
    pub fn dim(&self) -> usize {
        self.grid.dim
    }

    pub fn d2(&self, k: usize, l: usize) -> &[f64] {
        &self.d2[k * self.dim() + l]
    }

    pub fn d3(&self, k: usize, l: usize, m: usize) -> &[f64] {
        let d = self.dim();
        &self.d3[(k * d + l) * d + m]
    }

    /// Hessian at a node.
    pub fn hessian(&self, node: usize) -> Mat {
        if self.dim() == 1 {
            Mat::scalar(self.d2[0][node])
        } else {
            let off = 0.5 * (self.d2[1][node] + self.d2[2][node]);
            Mat::sym2(self.d2[0][node], off, self.d2[3][node])
        }
    }
}

/// Differentiates full-node data along one axis with 4th-order stencils.
pub fn diff_axis(grid: &DomainGrid, f: &[f64], axis: usize, order: usize) -> Result<Vec<f64>> {
    let nodes = grid.n[axis] + 1;
    let d = LineDifferentiator::new(nodes, grid.h(axis), order).ok_or_else(|| {
        Error::Input(format!(
            "grid too coarse for order-{order} differentiation along axis {axis} ({nodes} nodes)"
        ))
    })?;
    let mut out = vec![0.0; f.len()];
    if grid.dim == 1 {
        d.apply(|k| f[k], |k, v| out[k] = v);
        return Ok(out);
    }
    let other = grid.n[1 - axis] + 1;
    for line in 0..other {
        let idx = |k: usize| {
            if axis == 0 {
                grid.full_index(k, line)
            } else {
                grid.full_index(line, k)
            }
        };
        d.apply(|k| f[idx(k)], |k, v| out[idx(k)] = v);
    }
    Ok(out)
}

/// Hessian `[∂₀₀, ∂₀₁, ∂₁₁]` of full-node data (mixed term by composition).
fn hessian_fields(grid: &DomainGrid, f: &[f64]) -> Result<[Vec<f64>; 3]> {
    let dxx = diff_axis(grid, f, 0, 2)?;
    if grid.dim == 1 {
        let z = vec![0.0; f.len()];
        return Ok([dxx, z.clone(), z]);
    }
    let dx = diff_axis(grid, f, 0, 1)?;
    Ok([dxx, diff_axis(grid, &dx, 1, 1)?, diff_axis(grid, f, 1, 2)?])
}

/// Builds the bundle of `u` up to `order ≤ 3` (mixed derivatives by composition).
pub fn derivative_bundle(grid: &DomainGrid, u: &[f64], order: usize) -> Result<DerivativeBundle> {
    if order > 3 {
        return Err(Error::Input(format!("derivative order {order} is not supported (max 3)")));
    }
    if u.len() != grid.full_len() || u.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("u must hold one finite value per grid node".into()));
    }
    let d = grid.dim;
    let mut b = DerivativeBundle {
        grid: *grid,
        order,
        u: u.to_vec(),
        d1: Vec::new(),
        d2: Vec::new(),
        d3: Vec::new(),
    };
    if order >= 1 {
        b.d1 = (0..d).map(|k| diff_axis(grid, u, k, 1)).collect::<Result<_>>()?;
    }
    if order >= 2 {
        b.d2 = vec![Vec::new(); d * d];
        for k in 0..d {
            b.d2[k * d + k] = diff_axis(grid, u, k, 2)?;
        }
        if d == 2 {
            b.d2[1] = diff_axis(grid, &b.d1[0], 1, 1)?;
            b.d2[2] = diff_axis(grid, &b.d1[1], 0, 1)?;
        }
    }
    if order >= 3 {
        b.d3 = vec![Vec::new(); d * d * d];
        let mut by_count: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for idx in 0..d * d * d {
            let ones = [idx / (d * d), (idx / d) % d, idx % d].iter().filter(|&&a| a == 1).count();
            if !by_count.contains_key(&ones) {
                let field = match (d, ones) {
                    (1, _) | (2, 0) => diff_axis(grid, u, 0, 3)?,
                    (2, 3) => diff_axis(grid, u, 1, 3)?,
                    (2, 1) => diff_axis(grid, &b.d2[0], 1, 1)?,
                    _ => diff_axis(grid, &b.d2[3], 0, 1)?,
                };
                by_count.insert(ones, field);
            }
            b.d3[idx] = by_count[&ones].clone();
        }
    }
    Ok(b)
}

/// Evaluates torus data at `frac(x/ε)` for every domain node: direct lookup when the
/// point falls on a torus node, periodic cubic interpolation otherwise.
#[derive(Clone, Debug)]
pub struct TraceSampler {
    tgrid: PeriodicGrid,
    points: Vec<std::result::Result<usize, [f64; 2]>>,
}

impl TraceSampler {
    pub fn new(tgrid: &PeriodicGrid, grid: &DomainGrid, eps: f64) -> Self {
        let n = tgrid.n as f64;
        let points = (0..grid.full_len())
            .map(|k| {
                let y = grid.torus_point(k, eps);
                let mut idx = [0usize; 2];
                for axis in 0..grid.dim {
                    let s = y[axis] * n;
                    if (s - s.round()).abs() > 1e-9 {
                        return Err(y);
                    }
                    idx[axis] = (s.round() as usize) % tgrid.n;
                }
                Ok(tgrid.index(idx[0], idx[1]))
            })
            .collect();
        Self { tgrid: *tgrid, points }
    }

    pub fn trace(&self, values: &[f64]) -> Vec<f64> {
        self.points
            .iter()
            .map(|p| match p {
                Ok(i) => values[*i],
                Err(y) => self.tgrid.interpolate(values, *y),
            })
            .collect()
    }

    /// `Σ g_j(x/ε) h_j(x)`
    fn combine(&self, terms: &[(&[f64], &[f64])]) -> Vec<f64> {
        let mut out = vec![0.0; self.points.len()];
        for (g, h) in terms {
            if g.iter().all(|v| *v == 0.0) {
                continue;
            }
            for (o, (t, hv)) in out.iter_mut().zip(self.trace(g).iter().zip(h.iter())) {
                *o += t * hv;
            }
        }
        out
    }
}

/// `x ↦ w₂(x, x/ε) = χ^{kl}∂²_{kl}u + η^k∂_k u + νu`.
pub fn second_corrector(set: &CorrectorSet, bundle: &DerivativeBundle, eps: f64) -> Result<Vec<f64>> {
    if bundle.order < 2 {
        return Err(Error::Input("second corrector needs derivatives up to order 2".into()));
    }
    let s = TraceSampler::new(&set.grid, &bundle.grid, eps);
    Ok(s.combine(&w2_terms(set, bundle, None)))
}

fn w2_terms<'a>(set: &'a CorrectorSet, b: &'a DerivativeBundle, psi: Option<&'a DerivativeBundle>) -> Vec<(&'a [f64], &'a [f64])> {
    let d = set.dim();
    let src = psi.unwrap_or(b);
    let mut t: Vec<(&[f64], &[f64])> = Vec::new();
    for kl in 0..d * d {
        t.push((&set.chi_kl[kl].chi, &src.d2[kl]));
    }
    for k in 0..d {
        t.push((&set.eta_k[k].chi, &src.d1[k]));
    }
    t.push((&set.nu.chi, &src.u));
    t
}

fn w3_terms<'a>(set: &'a CorrectorSet, b: &'a DerivativeBundle, psi: &'a DerivativeBundle) -> Vec<(&'a [f64], &'a [f64])> {
    let d = set.dim();
    let mut t: Vec<(&[f64], &[f64])> = Vec::new();
    for klm in 0..d * d * d {
        t.push((&set.chi_klm[klm].chi, &b.d3[klm]));
    }
    for kl in 0..d * d {
        t.push((&set.eta_kl[kl].chi, &b.d2[kl]));
    }
    for k in 0..d {
        t.push((&set.nu_k[k].chi, &b.d1[k]));
    }
    t.push((&set.xi.chi, &b.u));
    t.extend(w2_terms(set, b, Some(psi)));
    t
}

/// Right-hand side `−ā_klm∂³u − b̄_kl∂²u − c̄_k∂u − d̄u` of the `ψ₁` problem, on full nodes.
fn psi1_rhs(eff: &EffectiveLinear, b: &DerivativeBundle) -> Vec<f64> {
    let d = b.dim();
    (0..b.u.len())
        .map(|i| {
            let mut s = eff.d_bar * b.u[i];
            for k in 0..d {
                s += eff.c_bar_k[k] * b.d1[k][i];
                for l in 0..d {
                    s += eff.b_bar_kl[k * d + l] * b.d2[k * d + l][i];
                    for m in 0..d {
                        s += eff.a_bar_klm[(k * d + l) * d + m] * b.d3[(k * d + l) * d + m][i];
                    }
                }
            }
            -s
        })
        .collect()
}

/// Solves `L̄ψ₁ = −ā_klm∂³u − b̄_kl∂²u − c̄_k∂u − d̄u` with `ψ₁ = 0` on the boundary.
pub fn solve_psi1(eff: &EffectiveLinear, bundle: &DerivativeBundle) -> Result<Vec<f64>> {
    if bundle.order < 3 {
        return Err(Error::Input("ψ₁ needs third derivatives of u".into()));
    }
    let grid = &bundle.grid;
    let rhs = psi1_rhs(eff, bundle);
    if rhs.iter().all(|v| *v == 0.0) {
        return Ok(vec![0.0; grid.full_len()]);
    }
    let op = assemble_effective(eff, grid)?;
    DirichletSolver::new(&op, 0.0, SolverKind::Auto)?.solve(&grid.restrict(&rhs), None)
}

/// `x ↦ w₃(x, x/ε)`, including the `ψ₁` block. One-dimensional problems only.
pub fn third_corrector(set: &CorrectorSet, bundle: &DerivativeBundle, psi1: &DerivativeBundle, eps: f64) -> Result<Vec<f64>> {
    if set.dim() != 1 {
        return Err(Error::Unsupported(
            "the third corrector is only built in one dimension (third derivatives degrade at rectangle corners)".into(),
        ));
    }
    if bundle.order < 3 || psi1.order < 2 {
        return Err(Error::Input("third corrector needs ∂³u and ∂²ψ₁".into()));
    }
    let s = TraceSampler::new(&set.grid, &bundle.grid, eps);
    Ok(s.combine(&w3_terms(set, bundle, psi1)))
}

/// Solves `L^ε z = 0` in the interior with `z = −trace` on the boundary.
pub fn boundary_corrector(solver: &DirichletSolver, trace: &[f64]) -> Result<Vec<f64>> {
    let grid = solver.operator().grid;
    let g: Vec<f64> = trace.iter().map(|v| -v).collect();
    if grid.boundary_nodes().all(|k| g[k] == 0.0) {
        return Ok(vec![0.0; grid.full_len()]);
    }
    solver.solve(&vec![0.0; grid.interior_len()], Some(&g))
}

/// Boundary correctors `z₂`, `z₃` for the given traces.
pub fn boundary_correctors(
    spec: &LinearOperatorSpec,
    eps: f64,
    grid: &DomainGrid,
    w2_trace: &[f64],
    w3_trace: Option<&[f64]>,
) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    let op = assemble_oscillatory(spec, eps, grid)?;
    let solver = DirichletSolver::new(&op, 0.0, SolverKind::Auto)?;
    let z2 = boundary_corrector(&solver, w2_trace)?;
    let z3 = w3_trace.map(|t| boundary_corrector(&solver, t)).transpose()?;
    Ok((z2, z3))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionResult {
    pub psi1: Vec<f64>,
    pub w2_trace: Vec<f64>,
    pub w3_trace: Option<Vec<f64>>,
    pub z2: Vec<f64>,
    pub z3: Option<Vec<f64>>,
    pub v_eps: Vec<f64>,
    pub sup_norm_v: f64,
}

/// `v^ε = εψ₁ + ε²(w₂ + z₂) + ε³(w₃ + z₃)`; the third-order block is skipped when absent.
pub fn full_corrector(
    psi1: &[f64],
    w2_trace: &[f64],
    z2: &[f64],
    w3_trace: Option<&[f64]>,
    z3: Option<&[f64]>,
    eps: f64,
) -> ExpansionResult {
    let n = psi1.len();
    let e2 = eps * eps;
    let e3 = e2 * eps;
    let v_eps: Vec<f64> = (0..n)
        .map(|i| {
            let third = match (w3_trace, z3) {
                (Some(w), Some(z)) => w[i] + z[i],
                (Some(w), None) => w[i],
                _ => 0.0,
            };
            eps * psi1[i] + e2 * (w2_trace[i] + z2[i]) + e3 * third
        })
        .collect();
    let sup_norm_v = sup_norm(&v_eps);
    ExpansionResult {
        psi1: psi1.to_vec(),
        w2_trace: w2_trace.to_vec(),
        w3_trace: w3_trace.map(<[f64]>::to_vec),
        z2: z2.to_vec(),
        z3: z3.map(<[f64]>::to_vec),
        v_eps,
        sup_norm_v,
    }
}

pub fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Linear expansion at one `ε`: correctors, `v^ε`, and the two-scale residual.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearExpansion {
    pub result: ExpansionResult,
    /// `‖L^ε(u + v^ε) + λ̄u‖∞` over interior nodes.
    pub residual: f64,
}

/// Runs the whole linear corrector chain for the effective pair `(u, λ̄)` on `op_eps.grid`.
///
/// The residual applies the two-scale chain rule to `u + εψ₁ + ε²w₂ + ε³w₃`: fast-variable
/// second derivatives through the torus operator, gradients by centered differences,
/// slow-variable derivatives by the domain stencils. The boundary correctors solve the
/// discrete equation exactly and add nothing.
pub fn linear_expansion(
    spec: &LinearOperatorSpec,
    set: &CorrectorSet,
    eff: &EffectiveLinear,
    u: &[f64],
    lambda_bar: f64,
    op_eps: &DiscreteOperator,
) -> Result<LinearExpansion> {
    let grid = op_eps.grid;
    let eps = op_eps.eps;
    let d = grid.dim;
    let bundle = derivative_bundle(&grid, u, 3)?;
    let psi1 = solve_psi1(eff, &bundle)?;
    let psi_b = derivative_bundle(&grid, &psi1, 2)?;
    let sampler = TraceSampler::new(&set.grid, &grid, eps);
    let w2 = sampler.combine(&w2_terms(set, &bundle, None));
    let w3 = if d == 1 {
        Some(sampler.combine(&w3_terms(set, &bundle, &psi_b)))
    } else {
        None
    };
    let solver = DirichletSolver::new(op_eps, 0.0, SolverKind::Auto)?;
    let z2 = boundary_corrector(&solver, &w2)?;
    let z3 = w3.as_deref().map(|t| boundary_corrector(&solver, t)).transpose()?;
    let result = full_corrector(&psi1, &w2, &z2, w3.as_deref(), z3.as_deref(), eps);

    // two-scale residual
    let top = TwoScale::new(spec, &set.grid, &grid, eps)?;
    let ones = vec![1.0; set.grid.len()];
    let e2 = eps * eps;
    let e3 = e2 * eps;
    let scaled = |h: &[f64], s: f64| h.iter().map(|v| v * s).collect::<Vec<f64>>();
    let mut terms: Vec<(&[f64], Vec<f64>)> = vec![(&ones, u.to_vec()), (&ones, scaled(&psi1, eps))];
    for (g, h) in w2_terms(set, &bundle, None) {
        terms.push((g, scaled(h, e2)));
    }
    if d == 1 {
        for (g, h) in w3_terms(set, &bundle, &psi_b) {
            terms.push((g, scaled(h, e3)));
        }
    }
    let mut r = top.apply(&terms)?;
    for (k, v) in r.iter_mut().enumerate() {
        *v += lambda_bar * u[grid.interior_to_full(k)];
    }
    Ok(LinearExpansion {
        result,
        residual: sup_norm(&r),
    })
}

/// Applies `L^ε` to sums `Σ g_j(x/ε) h_j(x)` by the two-scale chain rule.
struct TwoScale<'a> {
    spec: &'a LinearOperatorSpec,
    torus_op: CsrMatrix,
    tgrid: PeriodicGrid,
    grid: DomainGrid,
    sampler: TraceSampler,
    eps: f64,
}

impl<'a> TwoScale<'a> {
    fn new(spec: &'a LinearOperatorSpec, tgrid: &PeriodicGrid, grid: &DomainGrid, eps: f64) -> Result<Self> {
        Ok(Self {
            spec,
            torus_op: assemble_torus_diffusion(&spec.field, tgrid)?.matrix,
            tgrid: *tgrid,
            grid: *grid,
            sampler: TraceSampler::new(tgrid, grid, eps),
            eps,
        })
    }

    fn apply(&self, terms: &[(&[f64], Vec<f64>)]) -> Result<Vec<f64>> {
        let grid = &self.grid;
        let d = grid.dim;
        let ni = grid.interior_len();
        let coef: Vec<(Mat, [f64; 2], f64)> = (0..ni)
            .map(|k| {
                let y = grid.torus_point(grid.interior_to_full(k), self.eps);
                (self.spec.field.a(y), self.spec.field.b(y), self.spec.field.c(y))
            })
            .collect();
        let mut out = vec![0.0; ni];
        let (ie, ie2) = (1.0 / self.eps, 1.0 / (self.eps * self.eps));
        for (g, h) in terms {
            if g.iter().all(|v| *v == 0.0) || h.iter().all(|v| *v == 0.0) {
                continue;
            }
            let tg = self.sampler.trace(g);
            let tag = self.sampler.trace(&self.torus_op.matvec(g));
            let grad = torus_gradient(&self.tgrid, g);
            let tgrad: Vec<Vec<f64>> = (0..d).map(|i| self.sampler.trace(&grad[i])).collect();
            let hgrad: Vec<Vec<f64>> = (0..d).map(|i| diff_axis(grid, h, i, 1)).collect::<Result<_>>()?;
            let hh = hessian_fields(grid, h)?;
            for (k, o) in out.iter_mut().enumerate() {
                let x = grid.interior_to_full(k);
                let (a, b, c) = &coef[k];
                let hx = if d == 1 {
                    Mat::scalar(hh[0][x])
                } else {
                    Mat::sym2(hh[0][x], hh[1][x], hh[2][x])
                };
                let mut cross = 0.0;
                let mut drift_y = 0.0;
                let mut drift_x = 0.0;
                for i in 0..d {
                    drift_y += b[i] * tgrad[i][x];
                    drift_x += b[i] * hgrad[i][x];
                    for j in 0..d {
                        cross += 2.0 * a.e[i][j] * tgrad[i][x] * hgrad[j][x];
                    }
                }
                *o += ie2 * tag[x] * h[x]
                    + ie * (cross + drift_y * h[x])
                    + tg[x] * (a.frobenius(&hx) + drift_x + c * h[x]);
            }
        }
        Ok(out)
    }
}

/// Frozen-policy data reused by every slow point that selects the same policy.
#[derive(Clone, Debug)]
struct FrozenCell {
    /// `χ^{kl}_π` on the torus (`k*d + l`).
    chi: Vec<Vec<f64>>,
    a_bar: Mat,
    a_bar_klm: Vec<f64>,
    /// `A_β χ^{kl}_π` per control β.
    a_chi: Vec<Vec<Vec<f64>>>,
    /// `∇χ^{kl}_π`.
    grad: Vec<[Vec<f64>; 2]>,
}

fn frozen_cell(map: &EffectiveMap, policy: &[usize]) -> Result<FrozenCell> {
    let ops = map.operators();
    let grid = ops.grid;
    let d = grid.dim;
    let solver = CellSolver::new(&ops.frozen(policy))?;
    let a_at = |k: usize| ops.a_nodes[policy[k]][k];
    let mut chi = vec![Vec::new(); d * d];
    let mut a_bar = Mat::zeros(d);
    for k in 0..d {
        for l in 0..d {
            let f: Vec<f64> = (0..grid.len()).map(|n| a_at(n).e[k][l]).collect();
            let s = solver.solve(&f, Normalization::AnchorAtOrigin)?;
            a_bar.e[k][l] = s.gamma;
            chi[k * d + l] = s.chi;
        }
    }
    let grad: Vec<[Vec<f64>; 2]> = chi.iter().map(|c| torus_gradient(&grid, c)).collect();
    let mut a_bar_klm = vec![0.0; d * d * d];
    for kl in 0..d * d {
        for m in 0..d {
            let f: Vec<f64> = (0..grid.len())
                .map(|n| {
                    let a = a_at(n);
                    2.0 * (0..d).map(|i| a.e[i][m] * grad[kl][i][n]).sum::<f64>()
                })
                .collect();
            a_bar_klm[kl * d + m] = solver.solve(&f, Normalization::AnchorAtOrigin)?.gamma;
        }
    }
    let a_chi = ops
        .matrices
        .iter()
        .map(|m| chi.iter().map(|c| m.matvec(c)).collect())
        .collect();
    Ok(FrozenCell {
        chi,
        a_bar,
        a_bar_klm,
        a_chi,
        grad,
    })
}

/// Quantization step of normalized Hessian directions in the nonlinear cache.
pub const HESSIAN_QUANTUM: f64 = 1e-4;

fn direction_key(h: &Mat) -> Vec<i64> {
    let norm = h.norm();
    let dir = if norm > 1e-300 {
        h.scale(1.0 / norm)
    } else {
        Mat::identity(h.dim).scale(-1.0 / (h.dim as f64).sqrt())
    };
    let mut key = vec![(dir.e[0][0] / HESSIAN_QUANTUM).round() as i64];
    if h.dim == 2 {
        key.push((dir.e[0][1] / HESSIAN_QUANTUM).round() as i64);
        key.push((dir.e[1][1] / HESSIAN_QUANTUM).round() as i64);
    }
    key
}

fn key_matrix(key: &[i64]) -> Mat {
    let q = |k: i64| k as f64 * HESSIAN_QUANTUM;
    if key.len() == 1 {
        Mat::scalar(q(key[0]))
    } else {
        Mat::sym2(q(key[0]), q(key[1]), q(key[2]))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonlinearExpansion {
    /// `u + εw₁ + ε²w₂(x, x/ε)`
    pub expansion: Vec<f64>,
    pub w1: Vec<f64>,
    pub w2_trace: Vec<f64>,
    /// `Ψ₁(x)`
    pub psi_source: Vec<f64>,
    /// `‖F(x/ε, D²w^ε) + λ̄u‖∞` over interior nodes.
    pub residual: f64,
    /// Largest defect of the cell equation `F(y, D²u + D²_yy w₂) = F̄(D²u)` over sampled `(x, y)`.
    pub cell_residual: f64,
    pub cache_entries: usize,
}

/// Second-order expansion for a convex Bellman operator with pure second-order controls.
///
/// At each slow point the Hessian direction is quantized and the Bellman cell problem is
/// solved once per distinct direction; by 1-homogeneity `w₂(x, ·) = Σ χ^{kl}_π H_kl(x)`
/// with the frozen-policy correctors `χ^{kl}_π`. The frozen effective matrix gives the
/// linearized coefficients, whose third-order constants give `Ψ₁`.
pub fn nonlinear_expansion(
    spec: &BellmanSpec,
    map: &EffectiveMap,
    u: &[f64],
    lambda_bar: f64,
    eps: f64,
    grid: &DomainGrid,
) -> Result<NonlinearExpansion> {
    if spec.has_lower_order() {
        return Err(Error::Unsupported(
            "the nonlinear expansion needs controls without drift or potential".into(),
        ));
    }
    let d = grid.dim;
    let tgrid = *map.grid();
    let bundle = derivative_bundle(grid, u, 3)?;
    let hess: Vec<Mat> = (0..grid.full_len()).map(|x| bundle.hessian(x)).collect();

    // one Bellman cell solve per distinct direction, one frozen solve per distinct policy
    let keys: Vec<Vec<i64>> = hess.iter().map(direction_key).collect();
    let distinct: Vec<Vec<i64>> = {
        let mut k = keys.clone();
        k.sort();
        k.dedup();
        k
    };
    let policies: Vec<Vec<usize>> = distinct
        .par_iter()
        .map(|key| {
            map.cell(&key_matrix(key))
                .map(|c| c.policy)
                .map_err(|e| e.context(format!("Bellman cell problem at direction {key:?}")))
        })
        .collect::<Result<_>>()?;
    let mut policy_ids: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    for p in &policies {
        let next = policy_ids.len();
        policy_ids.entry(p.clone()).or_insert(next);
    }
    let mut unique: Vec<(usize, Vec<usize>)> = policy_ids.iter().map(|(p, i)| (*i, p.clone())).collect();
    unique.sort();
    let frozen: Vec<FrozenCell> = unique
        .par_iter()
        .map(|(_, p)| frozen_cell(map, p))
        .collect::<Result<_>>()?;
    let key_to_cell: BTreeMap<&Vec<i64>, usize> = distinct
        .iter()
        .zip(&policies)
        .map(|(k, p)| (k, policy_ids[p]))
        .collect();
    let cell_of: Vec<usize> = keys.iter().map(|k| key_to_cell[k]).collect();

    let sampler = TraceSampler::new(&tgrid, grid, eps);
    let trace_at = |values: &[f64], x: usize| -> f64 {
        // single-node trace
        match &sampler.points[x] {
            Ok(i) => values[*i],
            Err(y) => tgrid.interpolate(values, *y),
        }
    };
    let hk = |h: &Mat, kl: usize| h.e[kl / d][kl % d];

    let w2_trace: Vec<f64> = (0..grid.full_len())
        .map(|x| {
            let fc = &frozen[cell_of[x]];
            (0..d * d).map(|kl| trace_at(&fc.chi[kl], x) * hk(&hess[x], kl)).sum()
        })
        .collect();
    let psi_source: Vec<f64> = (0..grid.full_len())
        .map(|x| {
            let fc = &frozen[cell_of[x]];
            (0..d * d * d).map(|klm| fc.a_bar_klm[klm] * bundle.d3[klm][x]).sum()
        })
        .collect();

    // ā(x) ∂²ψ = −Ψ₁ with zero boundary data
    let w1 = if psi_source.iter().all(|v| *v == 0.0) {
        vec![0.0; grid.full_len()]
    } else {
        let op = assemble(grid, 0.0, DriftScheme::Auto, |x| (frozen[cell_of[x]].a_bar, [0.0; 2], 0.0))?;
        let rhs: Vec<f64> = grid.restrict(&psi_source).iter().map(|v| -v).collect();
        DirichletSolver::new(&op, 0.0, SolverKind::Auto)?.solve(&rhs, None)?
    };
    let expansion: Vec<f64> = (0..grid.full_len())
        .map(|x| u[x] + eps * w1[x] + eps * eps * w2_trace[x])
        .collect();

    // residual of F(x/ε, D²w^ε) + λ̄u by the two-scale chain rule
    let psi_h = hessian_fields(grid, &w1)?;
    let h_of_h: Vec<[Vec<f64>; 3]> = (0..d * d).map(|kl| hessian_fields(grid, &bundle.d2[kl])).collect::<Result<_>>()?;
    let ctl_a: Vec<Vec<Mat>> = spec
        .controls()
        .iter()
        .map(|c| (0..grid.full_len()).map(|x| c.field.a(grid.torus_point(x, eps))).collect())
        .collect();
    let sym = |f: &[Vec<f64>; 3], x: usize| {
        if d == 1 {
            Mat::scalar(f[0][x])
        } else {
            Mat::sym2(f[0][x], f[1][x], f[2][x])
        }
    };
    let mut residual = 0.0f64;
    for k in 0..grid.interior_len() {
        let x = grid.interior_to_full(k);
        let fc = &frozen[cell_of[x]];
        let h = &hess[x];
        // first-order block: D²ψ + 2 D²_xy w₂ and second-order block D²_xx w₂
        let mut first = sym(&psi_h, x);
        let mut second = Mat::zeros(d);
        for kl in 0..d * d {
            let chi = trace_at(&fc.chi[kl], x);
            second = second.add(&sym(&h_of_h[kl], x).scale(chi));
            for i in 0..d {
                for j in 0..d {
                    let gj = trace_at(&fc.grad[kl][j], x);
                    let v = gj * bundle.d3[kl * d + i][x];
                    first.e[i][j] += v;
                    first.e[j][i] += v;
                }
            }
        }
        let slow = h.add(&first.scale(eps)).add(&second.scale(eps * eps));
        let f = ctl_a
            .iter()
            .enumerate()
            .map(|(beta, a)| {
                let fast: f64 = (0..d * d).map(|kl| trace_at(&fc.a_chi[beta][kl], x) * hk(h, kl)).sum();
                a[x].frobenius(&slow) + fast
            })
            .fold(f64::NEG_INFINITY, f64::max);
        residual = residual.max((f + lambda_bar * u[x]).abs());
    }

    // cell equation at sampled slow points, every torus node
    let stride = (grid.interior_len() / 256).max(1);
    let mut cell_residual = 0.0f64;
    for k in (0..grid.interior_len()).step_by(stride) {
        let x = grid.interior_to_full(k);
        let fc = &frozen[cell_of[x]];
        let h = &hess[x];
        let target = fc.a_bar.frobenius(h);
        for y in 0..tgrid.len() {
            let top = (0..map.operators().matrices.len())
                .map(|beta| {
                    let fast: f64 = (0..d * d).map(|kl| fc.a_chi[beta][kl][y] * hk(h, kl)).sum();
                    map.operators().a_nodes[beta][y].frobenius(h) + fast
                })
                .fold(f64::NEG_INFINITY, f64::max);
            cell_residual = cell_residual.max((top - target).abs());
        }
    }

    Ok(NonlinearExpansion {
        expansion,
        w1,
        w2_trace,
        psi_source,
        residual,
        cell_residual,
        cache_entries: distinct.len(),
    })
}

/// Solves the pivot problem `(L^ε − s)w = −(λ̄ + s)u` with zero boundary data, where
/// `s = max(0, max c) + 1` makes both operators proper.
pub fn pivot_problem(spec: &LinearOperatorSpec, eps: f64, grid: &DomainGrid, u_eff: &EigenPair, lambda_bar: f64) -> Result<Vec<f64>> {
    let op = assemble_oscillatory(spec, eps, grid)?;
    let solver = DirichletSolver::new(&op, op.proper_shift(), SolverKind::Auto)?;
    pivot_with(&solver, &u_eff.phi, lambda_bar)
}

/// Pivot problem with a prefactorized `sI − L^ε`.
pub fn pivot_with(solver: &DirichletSolver, u: &[f64], lambda_bar: f64) -> Result<Vec<f64>> {
    let grid = solver.operator().grid;
    let s = solver.shift();
    let f: Vec<f64> = grid.restrict(u).iter().map(|v| -(lambda_bar + s) * v).collect();
    if f.iter().all(|v| *v == 0.0) {
        return Ok(vec![0.0; grid.full_len()]);
    }
    solver.solve(&f, None)
}

/// `t_ε = (w, u^ε)/‖u^ε‖² − 1` and `z^ε = (1 + t_ε)u^ε − w`, so that `(z^ε, u^ε) = 0`.
pub fn align_eigenfunctions(grid: &DomainGrid, w: &[f64], u_eps: &[f64]) -> Result<(f64, Vec<f64>)> {
    let weights = grid.trapezoid_weights();
    let dot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).zip(&weights).map(|((x, y), q)| x * y * q).sum() };
    let uu = dot(u_eps, u_eps);
    if !(uu > 0.0) {
        return Err(Error::Input("cannot align against a zero eigenfunction".into()));
    }
    let t = dot(w, u_eps) / uu - 1.0;
    let z: Vec<f64> = u_eps.iter().zip(w).map(|(u, w)| (1.0 + t) * u - w).collect();
    Ok((t, z))
}

/// Discrete `L²` inner product with trapezoidal weights.
pub fn inner(grid: &DomainGrid, a: &[f64], b: &[f64]) -> f64 {
    grid.trapezoid_weights()
        .iter()
        .zip(a.iter().zip(b))
        .map(|(q, (x, y))| q * x * y)
        .sum()
}
