//! Periodic coefficient fields and operator specifications.
//!
//! A [`CoefficientField`] holds the maps `y ↦ a(y), b(y), c(y)` on the unit torus. Linear
//! operators wrap a field with ellipticity data; Bellman operators are finite lists of
//! linear controls combined by a pointwise maximum.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::{frac, periodic_cubic};

/// Point of the unit torus (second coordinate ignored in 1D).
pub type TorusPoint = [f64; 2];

/// Small dense matrix of size 1×1 or 2×2 (stored in the top-left corner).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    pub dim: usize,
    pub e: [[f64; 2]; 2],
}

impl Mat {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            e: [[0.0; 2]; 2],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            dim: 1,
            e: [[v, 0.0], [0.0, 0.0]],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.e[i][i] = 1.0;
        }
        m
    }

    pub fn sym2(a11: f64, a12: f64, a22: f64) -> Self {
        Self {
            dim: 2,
            e: [[a11, a12], [a12, a22]],
        }
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len());
        for (i, v) in values.iter().enumerate() {
            m.e[i][i] = *v;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if !(1..=2).contains(&dim) || rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Input(format!("expected a 1x1 or 2x2 matrix, got {rows:?}")));
        }
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                m.e[i][j] = rows[i][j];
            }
        }
        Ok(m)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.e[i][j]
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.e[i][i]).sum()
    }

    /// `Tr(self · other)`.
    pub fn frobenius(&self, other: &Mat) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                s += self.e[i][j] * other.e[j][i];
            }
        }
        s
    }

    pub fn norm(&self) -> f64 {
        self.frobenius(&self.transpose()).sqrt()
    }

    pub fn transpose(&self) -> Mat {
        let mut t = *self;
        t.e[0][1] = self.e[1][0];
        t.e[1][0] = self.e[0][1];
        t
    }

    pub fn scale(&self, s: f64) -> Mat {
        let mut m = *self;
        for row in m.e.iter_mut() {
            for v in row.iter_mut() {
                *v *= s;
            }
        }
        m
    }

    pub fn add(&self, other: &Mat) -> Mat {
        let mut m = *self;
        for i in 0..2 {
            for j in 0..2 {
                m.e[i][j] += other.e[i][j];
            }
        }
        m
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        self.add(&other.scale(-1.0))
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.dim == 1 || (self.e[0][1] - self.e[1][0]).abs() <= tol * (1.0 + self.norm())
    }

    /// Eigenvalues of the symmetric part, ascending.
    pub fn sym_eigenvalues(&self) -> Vec<f64> {
        if self.dim == 1 {
            return vec![self.e[0][0]];
        }
        let a = self.e[0][0];
        let d = self.e[1][1];
        let b = 0.5 * (self.e[0][1] + self.e[1][0]);
        let mean = 0.5 * (a + d);
        let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
        vec![mean - rad, mean + rad]
    }
}

/// Sign of a Pucci extremal operator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PucciSign {
    Plus,
    Minus,
}

/// Kind of a single trigonometric term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Wave {
    Sin,
    Cos,
}

/// `amp · wave(2π (k₁y₁ + k₂y₂))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrigTerm {
    pub amp: f64,
    #[serde(default = "unit_freq")]
    pub k: [i32; 2],
    pub wave: Wave,
}

fn unit_freq() -> [i32; 2] {
    [1, 0]
}

/// A 1-periodic scalar map on the torus.
#[derive(Clone, Debug, PartialEq)]
pub enum Periodic {
    Const(f64),
    Trig { mean: f64, terms: Vec<TrigTerm> },
    /// Samples on a regular `n` (or `n × n`) grid, interpolated by periodic cubics.
    Table { n: usize, dim: usize, values: Arc<Vec<f64>> },
}

impl Periodic {
    pub fn zero() -> Self {
        Periodic::Const(0.0)
    }

    pub fn one_plus_sin(delta: f64, axis: usize) -> Self {
        let mut k = [0, 0];
        k[axis] = 1;
        Periodic::Trig {
            mean: 1.0,
            terms: vec![TrigTerm {
                amp: delta,
                k,
                wave: Wave::Sin,
            }],
        }
    }

    pub fn eval(&self, y: TorusPoint) -> f64 {
        match self {
            Periodic::Const(v) => *v,
            Periodic::Trig { mean, terms } => {
                let mut s = *mean;
                for t in terms {
                    // reduce the phase before the trig call so y and y + e_k agree to rounding
                    let phase = frac(t.k[0] as f64 * y[0] + t.k[1] as f64 * y[1]);
                    let arg = 2.0 * PI * phase;
                    s += t.amp
                        * match t.wave {
                            Wave::Sin => arg.sin(),
                            Wave::Cos => arg.cos(),
                        };
                }
                s
            }
            Periodic::Table { n, dim, values } => periodic_cubic(values, *n, *dim, y),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Periodic::Const(v) => *v == 0.0,
            Periodic::Trig { mean, terms } => *mean == 0.0 && terms.iter().all(|t| t.amp == 0.0),
            Periodic::Table { values, .. } => values.iter().all(|v| *v == 0.0),
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            Periodic::Const(_) => true,
            Periodic::Trig { terms, .. } => terms.iter().all(|t| t.amp == 0.0),
            Periodic::Table { values, .. } => values.iter().all(|v| *v == values[0]),
        }
    }
}

/// Periodic coefficients `a(y) ∈ Sᵈ`, `b(y) ∈ ℝᵈ`, `c(y) ∈ ℝ` on the unit torus.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientField {
    pub dim: usize,
    /// Upper triangle of `a`: `a11, a12, a22` (only `a11` used in 1D).
    pub a: [Periodic; 3],
    pub b: [Periodic; 2],
    pub c: Periodic,
}

impl CoefficientField {
    pub fn new(dim: usize, a: [Periodic; 3], b: [Periodic; 2], c: Periodic) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::Input(format!("dimension must be 1 or 2, got {dim}")));
        }
        Ok(Self { dim, a, b, c })
    }

    /// Constant coefficients.
    pub fn constant(a: Mat, b: &[f64], c: f64) -> Result<Self> {
        if b.len() != a.dim || !a.is_symmetric(1e-12) {
            return Err(Error::Input("constant field: inconsistent a/b".into()));
        }
        let bb = [
            Periodic::Const(b[0]),
            Periodic::Const(b.get(1).copied().unwrap_or(0.0)),
        ];
        Self::new(
            a.dim,
            [
                Periodic::Const(a.e[0][0]),
                Periodic::Const(a.e[0][1]),
                Periodic::Const(a.e[1][1]),
            ],
            bb,
            Periodic::Const(c),
        )
    }

    /// Pure diffusion `a(y)` in 1D with `b = c = 0`.
    pub fn diffusion_1d(a: Periodic) -> Self {
        Self {
            dim: 1,
            a: [a, Periodic::zero(), Periodic::zero()],
            b: [Periodic::zero(), Periodic::zero()],
            c: Periodic::zero(),
        }
    }

    pub fn a(&self, y: TorusPoint) -> Mat {
        if self.dim == 1 {
            Mat::scalar(self.a[0].eval(y))
        } else {
            Mat::sym2(self.a[0].eval(y), self.a[1].eval(y), self.a[2].eval(y))
        }
    }

    pub fn b(&self, y: TorusPoint) -> [f64; 2] {
        if self.dim == 1 {
            [self.b[0].eval(y), 0.0]
        } else {
            [self.b[0].eval(y), self.b[1].eval(y)]
        }
    }

    pub fn c(&self, y: TorusPoint) -> f64 {
        self.c.eval(y)
    }

    /// `a_kl(y)`.
    pub fn a_entry(&self, k: usize, l: usize, y: TorusPoint) -> f64 {
        self.a(y).e[k][l]
    }

    pub fn has_drift(&self) -> bool {
        self.b[..self.dim].iter().any(|b| !b.is_zero())
    }

    pub fn has_potential(&self) -> bool {
        !self.c.is_zero()
    }

    pub fn is_constant(&self) -> bool {
        self.a.iter().all(Periodic::is_constant)
            && self.b.iter().all(Periodic::is_constant)
            && self.c.is_constant()
    }

    /// Value of the linear operator `Tr(a X) + b·p + c r` at `y`.
    pub fn apply(&self, y: TorusPoint, r: f64, p: [f64; 2], x: &Mat) -> f64 {
        let b = self.b(y);
        self.a(y).frobenius(x) + b[0] * p[0] + b[1] * p[1] + self.c(y) * r
    }

    /// Loads a tabulated field from CSV with columns `y1[,y2],a11[,a12,a22],b1[,b2],c`.
    ///
    /// The sample points must form a regular grid `k/n` (or `(i/n, j/n)`), in any order.
    pub fn from_csv(path: &Path, dim: usize) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_path(path)?;
        let ncols = if dim == 1 { 4 } else { 7 };
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != ncols {
                return Err(Error::Input(format!(
                    "{}: expected {ncols} columns, found {}",
                    path.display(),
                    rec.len()
                )));
            }
            let vals = rec
                .iter()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|e| Error::Input(format!("{}: bad number {s:?}: {e}", path.display())))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(vals);
        }
        Self::from_samples(dim, &rows)
    }

    fn from_samples(dim: usize, rows: &[Vec<f64>]) -> Result<Self> {
        let total = rows.len();
        let n = if dim == 1 {
            total
        } else {
            (total as f64).sqrt().round() as usize
        };
        if n < 4 || (dim == 2 && n * n != total) {
            return Err(Error::Input(format!(
                "tabulated field needs a regular grid with at least 4 points per axis, got {total} rows"
            )));
        }
        let ncoef = if dim == 1 { 3 } else { 6 };
        let mut tables = vec![vec![f64::NAN; total]; ncoef];
        for row in rows {
            let mut idx = 0usize;
            for axis in 0..dim {
                let s = frac(row[axis]) * n as f64;
                let k = s.round();
                if (s - k).abs() > 1e-6 {
                    return Err(Error::Input(format!(
                        "tabulated point {:?} is off the regular grid 1/{n}",
                        &row[..dim]
                    )));
                }
                let k = (k as usize) % n;
                idx += if axis == 0 { k } else { k * n };
            }
            for c in 0..ncoef {
                tables[c][idx] = row[dim + c];
            }
        }
        if tables.iter().flatten().any(|v| v.is_nan()) {
            return Err(Error::Input("tabulated field has duplicate or missing grid points".into()));
        }
        let tab = |v: Vec<f64>| Periodic::Table {
            n,
            dim,
            values: Arc::new(v),
        };
        let mut it = tables.into_iter();
        if dim == 1 {
            let a11 = tab(it.next().unwrap());
            let b1 = tab(it.next().unwrap());
            let c = tab(it.next().unwrap());
            Self::new(1, [a11, Periodic::zero(), Periodic::zero()], [b1, Periodic::zero()], c)
        } else {
            let a11 = tab(it.next().unwrap());
            let a12 = tab(it.next().unwrap());
            let a22 = tab(it.next().unwrap());
            let b1 = tab(it.next().unwrap());
            let b2 = tab(it.next().unwrap());
            let c = tab(it.next().unwrap());
            Self::new(2, [a11, a12, a22], [b1, b2], c)
        }
    }
}

/// Linear operator `Tr(a(y)X) + b(y)·p + c(y)r` with its structure constants.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearOperatorSpec {
    pub field: CoefficientField,
    pub lambda_ell: f64,
    pub big_lambda_ell: f64,
    /// Bound on the lower-order coefficients.
    pub c1: f64,
    /// Slow-variable modulus; kept for completeness, no assembly uses it.
    pub c2: f64,
}

impl LinearOperatorSpec {
    pub fn new(field: CoefficientField, lambda_ell: f64, big_lambda_ell: f64, c1: f64, c2: f64) -> Result<Self> {
        if !(lambda_ell > 0.0 && lambda_ell <= big_lambda_ell) {
            return Err(Error::Input(format!(
                "ellipticity constants must satisfy 0 < λ ≤ Λ, got λ={lambda_ell}, Λ={big_lambda_ell}"
            )));
        }
        if !(c1 >= 0.0 && c2 >= 0.0) {
            return Err(Error::Input("structure constants C1, C2 must be nonnegative".into()));
        }
        Ok(Self {
            field,
            lambda_ell,
            big_lambda_ell,
            c1,
            c2,
        })
    }

    pub fn dim(&self) -> usize {
        self.field.dim
    }

    pub fn eval(&self, y: TorusPoint, r: f64, p: [f64; 2], x: &Mat) -> f64 {
        self.field.apply(y, r, p, x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PucciSpec {
    pub lambda_ell: f64,
    pub big_lambda_ell: f64,
    pub sign: PucciSign,
}

impl PucciSpec {
    pub fn new(lambda_ell: f64, big_lambda_ell: f64, sign: PucciSign) -> Result<Self> {
        if !(lambda_ell > 0.0 && lambda_ell <= big_lambda_ell) {
            return Err(Error::Input(format!(
                "Pucci constants must satisfy 0 < λ ≤ Λ, got λ={lambda_ell}, Λ={big_lambda_ell}"
            )));
        }
        Ok(Self {
            lambda_ell,
            big_lambda_ell,
            sign,
        })
    }
}

/// Convex Bellman operator: pointwise maximum over a finite list of linear controls.
#[derive(Clone, Debug, PartialEq)]
pub struct BellmanSpec {
    controls: Vec<LinearOperatorSpec>,
}

impl BellmanSpec {
    pub fn new(controls: Vec<LinearOperatorSpec>) -> Result<Self> {
        let first = controls
            .first()
            .ok_or_else(|| Error::Config("Bellman operator needs at least one control".into()))?;
        let (dim, lo, hi) = (first.dim(), first.lambda_ell, first.big_lambda_ell);
        for c in &controls {
            if c.dim() != dim {
                return Err(Error::Config("Bellman controls must share the dimension".into()));
            }
            if c.lambda_ell != lo || c.big_lambda_ell != hi {
                return Err(Error::Config(
                    "Bellman controls must share the ellipticity interval".into(),
                ));
            }
        }
        Ok(Self { controls })
    }

    pub fn singleton(spec: LinearOperatorSpec) -> Self {
        Self {
            controls: vec![spec],
        }
    }

    pub fn controls(&self) -> &[LinearOperatorSpec] {
        &self.controls
    }

    pub fn dim(&self) -> usize {
        self.controls[0].dim()
    }

    pub fn lambda_ell(&self) -> f64 {
        self.controls[0].lambda_ell
    }

    pub fn big_lambda_ell(&self) -> f64 {
        self.controls[0].big_lambda_ell
    }

    pub fn has_lower_order(&self) -> bool {
        self.controls
            .iter()
            .any(|c| c.field.has_drift() || c.field.has_potential())
    }
}

/// Pucci extremal operator `M±(X)` in closed form from the eigenvalues of `X`.
pub fn eval_pucci(spec: &PucciSpec, x: &Mat) -> Result<f64> {
    if !x.is_symmetric(1e-10) {
        return Err(Error::Input(format!("Pucci operator needs a symmetric matrix, got {:?}", x.e)));
    }
    let (lo, hi) = match spec.sign {
        PucciSign::Plus => (spec.lambda_ell, spec.big_lambda_ell),
        PucciSign::Minus => (spec.big_lambda_ell, spec.lambda_ell),
    };
    Ok(x.sym_eigenvalues()
        .into_iter()
        .map(|e| if e > 0.0 { hi * e } else { lo * e })
        .sum())
}

/// `max_β Tr(a_β(y)X) + b_β(y)·p + c_β(y) r`.
pub fn eval_bellman(spec: &BellmanSpec, y: TorusPoint, r: f64, p: [f64; 2], x: &Mat) -> Result<f64> {
    if spec.controls.is_empty() {
        return Err(Error::Config("Bellman operator needs at least one control".into()));
    }
    if x.dim != spec.dim() {
        return Err(Error::Input("matrix dimension does not match the operator".into()));
    }
    Ok(spec
        .controls
        .iter()
        .map(|c| c.eval(y, r, p, x))
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Which structure condition a sample violated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Symmetry,
    Ellipticity,
    PucciBound,
    Homogeneity,
    Periodicity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub y: TorusPoint,
    /// Amount by which the condition fails.
    pub excess: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StructureReport {
    pub samples: usize,
    pub violations: Vec<Violation>,
}

impl StructureReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, kind: ViolationKind) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }
}

const STRUCTURE_TOL: f64 = 1e-10;

/// Samples the two-sided Pucci bound and positive 1-homogeneity of the operator value.
///
/// Deterministic: the sampler is seeded with `seed`.
pub fn validate_structure(spec: &LinearOperatorSpec, sample_count: usize, seed: u64) -> StructureReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = spec.dim();
    let mut report = StructureReport {
        samples: sample_count.max(1),
        violations: Vec::new(),
    };
    let pucci_hi = PucciSpec {
        lambda_ell: spec.lambda_ell,
        big_lambda_ell: spec.big_lambda_ell,
        sign: PucciSign::Plus,
    };
    let pucci_lo = PucciSpec {
        sign: PucciSign::Minus,
        ..pucci_hi
    };
    let sym = |rng: &mut ChaCha8Rng| {
        if dim == 1 {
            Mat::scalar(rng.gen_range(-3.0..3.0))
        } else {
            Mat::sym2(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0))
        }
    };
    for _ in 0..report.samples {
        let y = [rng.gen::<f64>(), if dim == 2 { rng.gen::<f64>() } else { 0.0 }];
        let a = spec.field.a(y);
        let scale = 1.0 + a.norm();
        if !a.is_symmetric(STRUCTURE_TOL) {
            report.violations.push(Violation {
                kind: ViolationKind::Symmetry,
                y,
                excess: (a.e[0][1] - a.e[1][0]).abs(),
            });
        }
        let eig = a.sym_eigenvalues();
        let below = spec.lambda_ell - eig[0];
        let above = eig[eig.len() - 1] - spec.big_lambda_ell;
        if below > STRUCTURE_TOL * scale || above > STRUCTURE_TOL * scale {
            report.violations.push(Violation {
                kind: ViolationKind::Ellipticity,
                y,
                excess: below.max(above),
            });
        }
        let mut shifted = y;
        shifted[0] += 1.0;
        if dim == 2 {
            shifted[1] -= 1.0;
        }
        let per = (spec.field.a(shifted).sub(&a).norm())
            + (spec.field.c(shifted) - spec.field.c(y)).abs()
            + (0..dim)
                .map(|k| (spec.field.b(shifted)[k] - spec.field.b(y)[k]).abs())
                .sum::<f64>();
        if per > 1e-9 * scale {
            report.violations.push(Violation {
                kind: ViolationKind::Periodicity,
                y,
                excess: per,
            });
        }

        let x = sym(&mut rng);
        let dx = sym(&mut rng);
        let r = rng.gen_range(-2.0..2.0);
        let s = rng.gen_range(-2.0..2.0);
        let mut p = [0.0; 2];
        let mut q = [0.0; 2];
        for k in 0..dim {
            p[k] = rng.gen_range(-2.0..2.0);
            q[k] = rng.gen_range(-2.0..2.0);
        }
        let base = spec.eval(y, r, p, &x);
        let moved = spec.eval(y, r + s, [p[0] + q[0], p[1] + q[1]], &x.add(&dx));
        let diff = moved - base;
        let lower_order = spec.c1 * ((q[0] * q[0] + q[1] * q[1]).sqrt() + s.abs());
        let upper = eval_pucci(&pucci_hi, &dx).unwrap() + lower_order;
        let lower = eval_pucci(&pucci_lo, &dx).unwrap() - lower_order;
        let tol = STRUCTURE_TOL * (1.0 + diff.abs());
        if diff > upper + tol || diff < lower - tol {
            report.violations.push(Violation {
                kind: ViolationKind::PucciBound,
                y,
                excess: (diff - upper).max(lower - diff),
            });
        }

        for alpha in [0.0, rng.gen_range(0.0..5.0)] {
            let scaled = spec.eval(y, alpha * r, [alpha * p[0], alpha * p[1]], &x.scale(alpha));
            let err = (scaled - alpha * base).abs();
            if err > STRUCTURE_TOL * (1.0 + alpha * base.abs()) {
                report.violations.push(Violation {
                    kind: ViolationKind::Homogeneity,
                    y,
                    excess: err,
                });
            }
        }
    }
    report
}

/// Serializable description of a coefficient field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldConfig {
    /// Constant `a` (1 entry in 1D, `[a11, a12, a22]` in 2D), `b`, `c`.
    Constant {
        a: Vec<f64>,
        #[serde(default)]
        b: Vec<f64>,
        #[serde(default)]
        c: f64,
    },
    /// 1D `a = 1 + δ sin 2πy`, optional `b = β cos 2πy`, `c = κ sin 2πy`.
    OnePlusDeltaSin {
        delta: f64,
        #[serde(default)]
        beta: f64,
        #[serde(default)]
        kappa: f64,
    },
    /// 2D `a = diag(1 + δ sin 2πy₁, 1 + δ sin 2πy₂)`, `b = c = 0`.
    SeparableSin { delta: f64 },
    /// General trigonometric polynomials per coefficient.
    Trig {
        dim: usize,
        a11: TrigConfig,
        #[serde(default)]
        a12: TrigConfig,
        #[serde(default)]
        a22: TrigConfig,
        #[serde(default)]
        b1: TrigConfig,
        #[serde(default)]
        b2: TrigConfig,
        #[serde(default)]
        c: TrigConfig,
    },
    Tabulated { path: String, dim: usize },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrigConfig {
    #[serde(default)]
    pub mean: f64,
    #[serde(default)]
    pub terms: Vec<TrigTerm>,
}

impl From<&TrigConfig> for Periodic {
    fn from(t: &TrigConfig) -> Self {
        if t.terms.is_empty() {
            Periodic::Const(t.mean)
        } else {
            Periodic::Trig {
                mean: t.mean,
                terms: t.terms.clone(),
            }
        }
    }
}

impl FieldConfig {
    pub fn build(&self) -> Result<CoefficientField> {
        match self {
            FieldConfig::Constant { a, b, c } => {
                let m = match a.len() {
                    1 => Mat::scalar(a[0]),
                    3 => Mat::sym2(a[0], a[1], a[2]),
                    n => return Err(Error::Config(format!("constant field: `a` needs 1 or 3 entries, got {n}"))),
                };
                let b = if b.is_empty() { vec![0.0; m.dim] } else { b.clone() };
                if b.len() != m.dim {
                    return Err(Error::Config("constant field: `b` length must equal the dimension".into()));
                }
                CoefficientField::constant(m, &b, *c)
            }
            FieldConfig::OnePlusDeltaSin { delta, beta, kappa } => {
                let wave = |amp: f64, wave: Wave| {
                    if amp == 0.0 {
                        Periodic::zero()
                    } else {
                        Periodic::Trig {
                            mean: 0.0,
                            terms: vec![TrigTerm { amp, k: [1, 0], wave }],
                        }
                    }
                };
                CoefficientField::new(
                    1,
                    [Periodic::one_plus_sin(*delta, 0), Periodic::zero(), Periodic::zero()],
                    [wave(*beta, Wave::Cos), Periodic::zero()],
                    wave(*kappa, Wave::Sin),
                )
            }
            FieldConfig::SeparableSin { delta } => CoefficientField::new(
                2,
                [
                    Periodic::one_plus_sin(*delta, 0),
                    Periodic::zero(),
                    Periodic::one_plus_sin(*delta, 1),
                ],
                [Periodic::zero(), Periodic::zero()],
                Periodic::zero(),
            ),
            FieldConfig::Trig {
                dim,
                a11,
                a12,
                a22,
                b1,
                b2,
                c,
            } => CoefficientField::new(
                *dim,
                [a11.into(), a12.into(), a22.into()],
                [b1.into(), b2.into()],
                c.into(),
            ),
            FieldConfig::Tabulated { path, dim } => CoefficientField::from_csv(Path::new(path), *dim),
        }
    }
}

/// Sampled bounds of `a`, `|b|` and `c` on an `n`-point grid; used to pick default structure constants.
pub fn sampled_bounds(field: &CoefficientField, n: usize) -> (f64, f64, f64, f64) {
    let (mut lo, mut hi, mut bmax, mut cmax) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64, 0.0f64);
    let pts = if field.dim == 1 { n } else { n * n };
    for k in 0..pts {
        let y = [(k % n) as f64 / n as f64, (k / n) as f64 / n as f64];
        let e = field.a(y).sym_eigenvalues();
        lo = lo.min(e[0]);
        hi = hi.max(e[e.len() - 1]);
        let b = field.b(y);
        bmax = bmax.max((b[0] * b[0] + b[1] * b[1]).sqrt());
        cmax = cmax.max(field.c(y).abs());
    }
    (lo, hi, bmax, cmax)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sin_a_spec() -> LinearOperatorSpec {
        LinearOperatorSpec::new(CoefficientField::diffusion_1d(Periodic::one_plus_sin(0.5, 0)), 0.5, 1.5, 0.0, 0.0)
            .unwrap()
    }

    #[test]
    fn pucci_trivial_values() {
        let id = PucciSpec::new(1.0, 1.0, PucciSign::Plus).unwrap();
        let x = Mat::sym2(0.3, -1.2, 2.0);
        assert!((eval_pucci(&id, &x).unwrap() - x.trace()).abs() < 1e-15);
        let plus = PucciSpec::new(1.0, 2.0, PucciSign::Plus).unwrap();
        let minus = PucciSpec::new(1.0, 2.0, PucciSign::Minus).unwrap();
        let d = Mat::diag(&[1.0, -1.0]);
        assert_eq!(eval_pucci(&plus, &d).unwrap(), 1.0);
        assert_eq!(eval_pucci(&minus, &d).unwrap(), -1.0);
    }

    #[test]
    fn pucci_rejects_nonsymmetric() {
        let plus = PucciSpec::new(1.0, 2.0, PucciSign::Plus).unwrap();
        let x = Mat {
            dim: 2,
            e: [[1.0, 2.0], [0.0, 1.0]],
        };
        assert!(matches!(eval_pucci(&plus, &x), Err(Error::Input(_))));
    }

    #[test]
    fn bellman_examples() {
        let single = BellmanSpec::singleton(sin_a_spec());
        let y = [0.3, 0.0];
        let x = Mat::scalar(-0.7);
        let lin = sin_a_spec().eval(y, 0.4, [0.0; 2], &x);
        assert_eq!(eval_bellman(&single, y, 0.4, [0.0; 2], &x).unwrap(), lin);

        let ctl = |a: f64, c: f64| {
            LinearOperatorSpec::new(
                CoefficientField::constant(Mat::scalar(a), &[0.0], c).unwrap(),
                0.5,
                2.0,
                1.0,
                0.0,
            )
            .unwrap()
        };
        let two = BellmanSpec::new(vec![ctl(1.0, 0.0), ctl(2.0, 0.0)]).unwrap();
        assert_eq!(eval_bellman(&two, y, 0.0, [0.0; 2], &Mat::scalar(-1.0)).unwrap(), -1.0);
        let pot = BellmanSpec::new(vec![ctl(1.0, 0.3), ctl(1.0, -0.1)]).unwrap();
        assert_eq!(eval_bellman(&pot, y, 1.0, [0.0; 2], &Mat::scalar(0.0)).unwrap(), 0.3);
        assert!(matches!(BellmanSpec::new(vec![]), Err(Error::Config(_))));
    }

    #[test]
    fn structure_of_catalog_fields() {
        let lap = LinearOperatorSpec::new(
            CoefficientField::constant(Mat::identity(2), &[0.0, 0.0], 0.0).unwrap(),
            1.0,
            1.0,
            0.0,
            0.0,
        )
        .unwrap();
        assert!(validate_structure(&lap, 200, 1).is_clean());
        assert!(validate_structure(&sin_a_spec(), 200, 2).is_clean());

        let mut bad = sin_a_spec();
        bad.big_lambda_ell = 1.2;
        let rep = validate_structure(&bad, 200, 3);
        assert!(rep.count(ViolationKind::Ellipticity) > 0);
    }

    #[test]
    fn drift_beyond_c1_breaks_the_pucci_bound() {
        let field = FieldConfig::OnePlusDeltaSin {
            delta: 0.5,
            beta: 1.0,
            kappa: 0.0,
        }
        .build()
        .unwrap();
        let ok = LinearOperatorSpec::new(field.clone(), 0.5, 1.5, 1.0, 0.0).unwrap();
        assert!(validate_structure(&ok, 500, 4).is_clean());
        let tight = LinearOperatorSpec::new(field, 0.5, 1.5, 0.0, 0.0).unwrap();
        assert!(validate_structure(&tight, 500, 4).count(ViolationKind::PucciBound) > 0);
    }

    #[test]
    fn tabulated_field_from_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("field.csv");
        let n = 32;
        let mut s = String::from("y1,a11,b1,c\n");
        for k in 0..n {
            let y = k as f64 / n as f64;
            s.push_str(&format!("{y},{},{},{}\n", 1.0 + 0.5 * (2.0 * PI * y).sin(), 0.0, 0.25));
        }
        std::fs::write(&path, s).unwrap();
        let f = CoefficientField::from_csv(&path, 1).unwrap();
        let exact = 1.0 + 0.5 * (2.0 * PI * 0.123f64).sin();
        assert!((f.a([0.123, 0.0]).e[0][0] - exact).abs() < 1e-4);
        assert!((f.c([0.7, 0.0]) - 0.25).abs() < 1e-14);
    }

    #[test]
    fn field_config_json() {
        let cfg: FieldConfig = serde_json::from_str(r#"{"kind":"one_plus_delta_sin","delta":0.5}"#).unwrap();
        let f = cfg.build().unwrap();
        assert!((f.a([0.25, 0.0]).e[0][0] - 1.5).abs() < 1e-15);
        assert!(!f.has_drift() && !f.has_potential());
    }
}
