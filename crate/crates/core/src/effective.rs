//! Effective constants from torus cell problems, the nonlinear effective map and its derivative.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coeff::{BellmanSpec, CoefficientField, LinearOperatorSpec, Mat};
use crate::error::{Error, Result};
use crate::torus::{
    assemble_torus_diffusion, solve_nonlinear_cell_with, torus_gradient, CellSolver, ControlOperators,
    ErgodicSolution, NonlinearCell, Normalization, PeriodicGrid,
};

/// All torus correctors of the linear expansion, on one grid.
///
/// Index conventions: `chi_kl[k*d + l]`, `chi_klm[(k*d + l)*d + m]`, `eta_kl[k*d + l]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectorSet {
    pub grid: PeriodicGrid,
    pub chi_kl: Vec<ErgodicSolution>,
    pub eta_k: Vec<ErgodicSolution>,
    pub nu: ErgodicSolution,
    pub chi_klm: Vec<ErgodicSolution>,
    pub eta_kl: Vec<ErgodicSolution>,
    pub nu_k: Vec<ErgodicSolution>,
    pub xi: ErgodicSolution,
}

impl CorrectorSet {
    pub fn dim(&self) -> usize {
        self.grid.dim
    }

    /// Largest sup-norm over every stored corrector.
    pub fn max_abs(&self) -> f64 {
        self.all()
            .flat_map(|s| s.chi.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn all(&self) -> impl Iterator<Item = &ErgodicSolution> {
        self.chi_kl
            .iter()
            .chain(&self.eta_k)
            .chain(std::iter::once(&self.nu))
            .chain(&self.chi_klm)
            .chain(&self.eta_kl)
            .chain(&self.nu_k)
            .chain(std::iter::once(&self.xi))
    }
}

/// Samples of the coefficients on the torus nodes.
struct NodalField {
    /// `a[i][j][node]`
    a: [[Vec<f64>; 2]; 2],
    b: [Vec<f64>; 2],
    c: Vec<f64>,
}

impl NodalField {
    fn new(field: &CoefficientField, grid: &PeriodicGrid) -> Self {
        let s = |f: &dyn Fn([f64; 2]) -> f64| grid.sample(f);
        let a11 = s(&|y| field.a(y).e[0][0]);
        let a12 = s(&|y| field.a(y).e[0][1]);
        let a22 = s(&|y| field.a(y).e[1][1]);
        Self {
            a: [[a11, a12.clone()], [a12, a22]],
            b: [s(&|y| field.b(y)[0]), s(&|y| field.b(y)[1])],
            c: s(&|y| field.c(y)),
        }
    }

    /// `Σ_i w_i(y) ∂_i g(y)` for a weight vector given per axis.
    fn dot_grad(weights: [&[f64]; 2], grad: &[Vec<f64>; 2], dim: usize) -> Vec<f64> {
        let n = grad[0].len();
        (0..n)
            .map(|k| (0..dim).map(|i| weights[i][k] * grad[i][k]).sum())
            .collect()
    }

    /// `2 a_{*m} · D g`
    fn two_a_col_dot(&self, m: usize, grad: &[Vec<f64>; 2], dim: usize) -> Vec<f64> {
        let w = [&self.a[0][m][..], &self.a[1][m][..]];
        Self::dot_grad(w, grad, dim).into_iter().map(|v| 2.0 * v).collect()
    }

    fn b_dot(&self, grad: &[Vec<f64>; 2], dim: usize) -> Vec<f64> {
        Self::dot_grad([&self.b[0], &self.b[1]], grad, dim)
    }
}

fn add(mut x: Vec<f64>, y: &[f64]) -> Vec<f64> {
    for (a, b) in x.iter_mut().zip(y) {
        *a += b;
    }
    x
}

/// Solves the first-round problems (for `ā`, `b̄`, `c̄`) and the second-round problems
/// (third-order constants) that consume their gradients. All correctors are anchored at
/// the grid origin.
pub fn build_corrector_set(spec: &LinearOperatorSpec, grid: &PeriodicGrid) -> Result<CorrectorSet> {
    let field = &spec.field;
    let d = grid.dim;
    let op = assemble_torus_diffusion(field, grid)?;
    let solver = CellSolver::new(&op)?;
    let nodal = NodalField::new(field, grid);
    let norm = Normalization::AnchorAtOrigin;
    let solve = |f: &[f64], label: String| solver.solve(f, norm).map_err(|e| e.context(label));

    // first round
    let mut chi_kl = vec![ErgodicSolution::zero(grid.len()); d * d];
    let sym_pairs: Vec<(usize, usize)> = (0..d).flat_map(|k| (k..d).map(move |l| (k, l))).collect();
    let solved: Vec<_> = sym_pairs
        .par_iter()
        .map(|&(k, l)| solve(&nodal.a[k][l], format!("cell problem chi^{}{}", k + 1, l + 1)))
        .collect::<Result<_>>()?;
    for (&(k, l), s) in sym_pairs.iter().zip(solved) {
        chi_kl[l * d + k] = s.clone();
        chi_kl[k * d + l] = s;
    }
    let eta_k: Vec<_> = (0..d)
        .into_par_iter()
        .map(|k| solve(&nodal.b[k], format!("cell problem eta^{}", k + 1)))
        .collect::<Result<_>>()?;
    let nu = solve(&nodal.c, "cell problem nu".into())?;

    // second round
    let g_chi: Vec<[Vec<f64>; 2]> = chi_kl.iter().map(|s| torus_gradient(grid, &s.chi)).collect();
    let g_eta: Vec<[Vec<f64>; 2]> = eta_k.iter().map(|s| torus_gradient(grid, &s.chi)).collect();
    let g_nu = torus_gradient(grid, &nu.chi);

    let chi_klm: Vec<_> = (0..d * d * d)
        .into_par_iter()
        .map(|idx| {
            let (kl, m) = (idx / d, idx % d);
            let f = nodal.two_a_col_dot(m, &g_chi[kl], d);
            solve(&f, format!("cell problem chi^{}{}{}", kl / d + 1, kl % d + 1, m + 1))
        })
        .collect::<Result<_>>()?;
    let eta_kl: Vec<_> = (0..d * d)
        .into_par_iter()
        .map(|kl| {
            let (k, l) = (kl / d, kl % d);
            let f = add(nodal.two_a_col_dot(k, &g_eta[l], d), &nodal.b_dot(&g_chi[kl], d));
            solve(&f, format!("cell problem eta^{}{}", k + 1, l + 1))
        })
        .collect::<Result<_>>()?;
    let nu_k: Vec<_> = (0..d)
        .into_par_iter()
        .map(|k| {
            let f = add(nodal.two_a_col_dot(k, &g_nu, d), &nodal.b_dot(&g_eta[k], d));
            solve(&f, format!("cell problem nu^{}", k + 1))
        })
        .collect::<Result<_>>()?;
    let xi = solve(&nodal.b_dot(&g_nu, d), "cell problem xi".into())?;

    Ok(CorrectorSet {
        grid: *grid,
        chi_kl,
        eta_k,
        nu,
        chi_klm,
        eta_kl,
        nu_k,
        xi,
    })
}

/// Constant-coefficient effective operator and the third-order constants of the expansion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectiveLinear {
    pub a_bar: Vec<Vec<f64>>,
    pub b_bar: Vec<f64>,
    pub c_bar: f64,
    /// Flattened as `(k*d + l)*d + m`.
    pub a_bar_klm: Vec<f64>,
    pub b_bar_kl: Vec<f64>,
    pub c_bar_k: Vec<f64>,
    pub d_bar: f64,
    /// `max |γ_kl − γ_lk|` before symmetrization.
    pub asymmetry: f64,
}

impl EffectiveLinear {
    pub fn dim(&self) -> usize {
        self.b_bar.len()
    }

    pub fn a_mat(&self) -> Mat {
        Mat::from_rows(&self.a_bar).expect("effective matrix is 1x1 or 2x2")
    }

    /// Effective operator with no third-order data (e.g. from a constant field).
    pub fn from_constants(a: &Mat, b: &[f64], c: f64) -> Self {
        let d = a.dim;
        Self {
            a_bar: (0..d).map(|i| (0..d).map(|j| a.e[i][j]).collect()).collect(),
            b_bar: b[..d].to_vec(),
            c_bar: c,
            a_bar_klm: vec![0.0; d * d * d],
            b_bar_kl: vec![0.0; d * d],
            c_bar_k: vec![0.0; d],
            d_bar: 0.0,
            asymmetry: 0.0,
        }
    }

    /// The effective operator as a linear spec with constant coefficients.
    pub fn as_spec(&self, lambda_ell: f64, big_lambda_ell: f64) -> Result<LinearOperatorSpec> {
        let field = CoefficientField::constant(self.a_mat(), &self.b_bar, self.c_bar)?;
        let c1 = self.b_bar.iter().map(|v| v * v).sum::<f64>().sqrt().max(self.c_bar.abs());
        LinearOperatorSpec::new(field, lambda_ell, big_lambda_ell, c1, 0.0)
    }
}

/// Packages the ergodic constants; `ā` is symmetrized as `(γ_kl + γ_lk)/2`.
pub fn effective_linear(correctors: &CorrectorSet) -> EffectiveLinear {
    let d = correctors.dim();
    let g = |s: &ErgodicSolution| s.gamma;
    let mut a_bar = vec![vec![0.0; d]; d];
    let mut asymmetry = 0.0f64;
    for k in 0..d {
        for l in 0..d {
            let (x, y) = (g(&correctors.chi_kl[k * d + l]), g(&correctors.chi_kl[l * d + k]));
            a_bar[k][l] = 0.5 * (x + y);
            asymmetry = asymmetry.max((x - y).abs());
        }
    }
    EffectiveLinear {
        a_bar,
        b_bar: correctors.eta_k.iter().map(g).collect(),
        c_bar: correctors.nu.gamma,
        a_bar_klm: correctors.chi_klm.iter().map(g).collect(),
        b_bar_kl: correctors.eta_kl.iter().map(g).collect(),
        c_bar_k: correctors.nu_k.iter().map(g).collect(),
        d_bar: correctors.xi.gamma,
        asymmetry,
    }
}

/// Builds the correctors and packages the constants in one call.
pub fn homogenize(spec: &LinearOperatorSpec, grid: &PeriodicGrid) -> Result<(CorrectorSet, EffectiveLinear)> {
    let set = build_corrector_set(spec, grid)?;
    let eff = effective_linear(&set);
    Ok((set, eff))
}

/// Default tolerance for Bellman cell problems.
pub const NONLINEAR_CELL_TOL: f64 = 1e-10;

/// `M ↦ F̄(M)` for a convex Bellman operator, with the control matrices assembled once.
#[derive(Clone, Debug)]
pub struct EffectiveMap {
    ops: ControlOperators,
    tol: f64,
}

impl EffectiveMap {
    pub fn new(spec: &BellmanSpec, grid: &PeriodicGrid, tol: f64) -> Result<Self> {
        Ok(Self {
            ops: ControlOperators::new(spec, grid)?,
            tol,
        })
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.ops.grid
    }

    pub fn operators(&self) -> &ControlOperators {
        &self.ops
    }

    pub fn cell(&self, m: &Mat) -> Result<NonlinearCell> {
        solve_nonlinear_cell_with(&self.ops, m, self.tol)
    }

    pub fn eval(&self, m: &Mat) -> Result<f64> {
        Ok(self.cell(m)?.solution.gamma)
    }

    /// Centered-difference derivative `∂F̄/∂M_ij`, symmetrized (off-diagonal perturbations
    /// move both `M_ij` and `M_ji`, so their quotient is halved).
    pub fn linearize(&self, m: &Mat, step: Option<f64>) -> Result<Mat> {
        let d = m.dim;
        let t = step.unwrap_or(1e-4 * (1.0 + m.norm()));
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::Differentiation(format!("invalid step {t}")));
        }
        let mut out = Mat::zeros(d);
        for i in 0..d {
            for j in i..d {
                let mut e = Mat::zeros(d);
                e.e[i][j] = 1.0;
                e.e[j][i] = 1.0;
                let plus = self.eval(&m.add(&e.scale(t)))?;
                let minus = self.eval(&m.sub(&e.scale(t)))?;
                let mut q = (plus - minus) / (2.0 * t);
                if i != j {
                    q *= 0.5;
                }
                if !q.is_finite() {
                    return Err(Error::Differentiation(format!(
                        "nonfinite derivative at entry ({i},{j}) of M = {:?}",
                        m.e
                    )));
                }
                out.e[i][j] = q;
                out.e[j][i] = q;
            }
        }
        Ok(out)
    }
}

/// `F̄(M)`: the ergodic constant of the Bellman cell problem at `M`.
pub fn effective_nonlinear(spec: &BellmanSpec, m: &Mat, grid: &PeriodicGrid, tol: f64) -> Result<f64> {
    EffectiveMap::new(spec, grid, tol)?.eval(m)
}

/// `D_M F̄` by centered differences with step `step` (default `1e-4·(1 + |M|)`).
pub fn linearize_effective(spec: &BellmanSpec, m: &Mat, grid: &PeriodicGrid, step: Option<f64>) -> Result<Mat> {
    EffectiveMap::new(spec, grid, NONLINEAR_CELL_TOL)?.linearize(m, step)
}

/// Effective Bellman operator as a list of constant-coefficient controls.
///
/// In 1D `F̄(M) = max(F̄(1)·M, −F̄(−1)·M)` exactly, by 1-homogeneity. In 2D `F̄` is
/// replaced by the maximum of its supporting planes `Tr(D F̄(Mⱼ) M)` at `directions`
/// unit matrices spread over the sphere of symmetric matrices.
pub fn effective_bellman(
    spec: &BellmanSpec,
    grid: &PeriodicGrid,
    tol: f64,
    directions: usize,
) -> Result<(BellmanSpec, EffectiveMap)> {
    let map = EffectiveMap::new(spec, grid, tol)?;
    let (lo, hi) = (spec.lambda_ell(), spec.big_lambda_ell());
    let constant = |a: Mat| -> Result<LinearOperatorSpec> {
        LinearOperatorSpec::new(CoefficientField::constant(a, &vec![0.0; a.dim], 0.0)?, lo, hi, 0.0, 0.0)
    };
    let mut controls = Vec::new();
    if spec.dim() == 1 {
        let up = map.eval(&Mat::scalar(1.0))?;
        let down = -map.eval(&Mat::scalar(-1.0))?;
        controls.push(constant(Mat::scalar(up))?);
        if (up - down).abs() > 1e-14 * up.abs() {
            controls.push(constant(Mat::scalar(down))?);
        }
    } else {
        // Fibonacci points on the unit sphere of (M11, √2 M12, M22)
        let count = directions.max(6);
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        for j in 0..count {
            let z = 1.0 - 2.0 * (j as f64 + 0.5) / count as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * j as f64;
            let m = Mat::sym2(r * phi.cos(), z / 2f64.sqrt(), r * phi.sin());
            let a = map.linearize(&m, None)?;
            if !controls
                .iter()
                .any(|c: &LinearOperatorSpec| c.field.a([0.0, 0.0]).sub(&a).norm() < 1e-9)
            {
                controls.push(constant(a)?);
            }
        }
    }
    Ok((BellmanSpec::new(controls)?, map))
}
