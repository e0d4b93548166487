//! ε-sweeps over the problem catalog, log-log rate fits and report emission.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coeff::{sampled_bounds, BellmanSpec, CoefficientField, FieldConfig, LinearOperatorSpec, Mat, Periodic};
use crate::corrector::{align_eigenfunctions, inner, linear_expansion, nonlinear_expansion, pivot_with, sup_norm};
use crate::domain::{assemble_controls, assemble_effective, assemble_oscillatory, DirichletSolver, DomainGrid};
use crate::effective::{effective_bellman, homogenize, CorrectorSet, EffectiveLinear, EffectiveMap};
use crate::eigen::{bellman_eigen_with, EigenPair, PowerIteration};
use crate::error::{Error, Result};
use crate::linalg::SolverKind;
use crate::torus::PeriodicGrid;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "ERGODICA_THREADS";

/// Error columns at or below this level count as exact.
pub const EXACT_TOL: f64 = 1e-9;

/// Named catalog problems and user-supplied fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum ProblemSpec {
    /// 1D `a = 1 + δ sin 2πy`, `b = c = 0`.
    SinA {
        #[serde(default = "half")]
        delta: f64,
    },
    /// 1D `a = 1 + δ sin 2πy`, `b = β cos 2πy`, `c = κ sin 2πy`.
    SinAbc {
        #[serde(default = "half")]
        delta: f64,
        #[serde(default = "one")]
        beta: f64,
        #[serde(default = "one")]
        kappa: f64,
    },
    /// 2D `a = diag(1 + δ sin 2πy₁, 1 + δ sin 2πy₂)`.
    #[serde(rename = "sep-2d")]
    Sep2d {
        #[serde(default = "half")]
        delta: f64,
    },
    /// 1D maximal Pucci operator as two controls `λ(1 + δ sin 2πy)` and `Λ(1 + δ sin 2πy)`.
    #[serde(rename = "pucci-1d")]
    Pucci1d {
        #[serde(default = "half")]
        lambda_ell: f64,
        #[serde(default = "three_halves")]
        big_lambda_ell: f64,
        #[serde(default)]
        delta: f64,
    },
    /// 1D Bellman operator with controls `1 + δ sin 2πy` and the constant `a2`.
    #[serde(rename = "bellman-2ctl-1d")]
    Bellman2Ctl1d {
        #[serde(default = "half")]
        delta: f64,
        #[serde(default = "a2_default")]
        a2: f64,
    },
    /// Constant coefficients: `a` has 1 entry (1D) or `[a11, a12, a22]` (2D).
    Constant {
        a: Vec<f64>,
        #[serde(default)]
        b: Vec<f64>,
        #[serde(default)]
        c: f64,
    },
    Custom { field: FieldConfig },
    CustomBellman { controls: Vec<FieldConfig> },
}

fn half() -> f64 {
    0.5
}
fn one() -> f64 {
    1.0
}
fn three_halves() -> f64 {
    1.5
}
fn a2_default() -> f64 {
    1.2
}

/// A built problem: one linear operator or a family of controls.
#[derive(Clone, Debug)]
pub enum Problem {
    Linear(LinearOperatorSpec),
    Bellman(BellmanSpec),
}

impl Problem {
    pub fn dim(&self) -> usize {
        match self {
            Problem::Linear(s) => s.dim(),
            Problem::Bellman(s) => s.dim(),
        }
    }
}

/// Wraps a field with structure constants sampled from its values.
pub fn linear_spec(field: CoefficientField) -> Result<LinearOperatorSpec> {
    let (lo, hi, bmax, cmax) = sampled_bounds(&field, 256);
    if !(lo > 0.0) {
        return Err(Error::Config(format!(
            "diffusion matrix is not uniformly elliptic (smallest sampled eigenvalue {lo})"
        )));
    }
    LinearOperatorSpec::new(field, lo, hi, bmax.max(cmax), 0.0).map_err(config)
}

/// Controls sharing the union of their sampled structure constants.
pub fn bellman_spec(fields: Vec<CoefficientField>) -> Result<BellmanSpec> {
    let specs = fields.into_iter().map(linear_spec).collect::<Result<Vec<_>>>()?;
    let lo = specs.iter().map(|s| s.lambda_ell).fold(f64::INFINITY, f64::min);
    let hi = specs.iter().map(|s| s.big_lambda_ell).fold(0.0, f64::max);
    let c1 = specs.iter().map(|s| s.c1).fold(0.0, f64::max);
    let controls = specs
        .into_iter()
        .map(|s| LinearOperatorSpec::new(s.field, lo, hi, c1, 0.0))
        .collect::<Result<Vec<_>>>()
        .map_err(config)?;
    BellmanSpec::new(controls).map_err(config)
}

fn config(e: Error) -> Error {
    match e {
        Error::Input(m) => Error::Config(m),
        e => e,
    }
}

impl ProblemSpec {
    pub fn label(&self) -> &'static str {
        match self {
            ProblemSpec::SinA { .. } => "sin-a",
            ProblemSpec::SinAbc { .. } => "sin-abc",
            ProblemSpec::Sep2d { .. } => "sep-2d",
            ProblemSpec::Pucci1d { .. } => "pucci-1d",
            ProblemSpec::Bellman2Ctl1d { .. } => "bellman-2ctl-1d",
            ProblemSpec::Constant { .. } => "constant",
            ProblemSpec::Custom { .. } => "custom",
            ProblemSpec::CustomBellman { .. } => "custom-bellman",
        }
    }

    pub fn build(&self) -> Result<Problem> {
        let field = |f: FieldConfig| f.build().map_err(config);
        let scaled_sin = |scale: f64, delta: f64| -> Periodic {
            match Periodic::one_plus_sin(delta, 0) {
                Periodic::Trig { mean, terms } => Periodic::Trig {
                    mean: mean * scale,
                    terms: terms
                        .into_iter()
                        .map(|mut t| {
                            t.amp *= scale;
                            t
                        })
                        .collect(),
                },
                Periodic::Const(v) => Periodic::Const(v * scale),
                p => p,
            }
        };
        Ok(match self {
            ProblemSpec::SinA { delta } => Problem::Linear(linear_spec(field(FieldConfig::OnePlusDeltaSin {
                delta: *delta,
                beta: 0.0,
                kappa: 0.0,
            })?)?),
            ProblemSpec::SinAbc { delta, beta, kappa } => {
                Problem::Linear(linear_spec(field(FieldConfig::OnePlusDeltaSin {
                    delta: *delta,
                    beta: *beta,
                    kappa: *kappa,
                })?)?)
            }
            ProblemSpec::Sep2d { delta } => Problem::Linear(linear_spec(field(FieldConfig::SeparableSin { delta: *delta })?)?),
            ProblemSpec::Pucci1d {
                lambda_ell,
                big_lambda_ell,
                delta,
            } => {
                if !(*lambda_ell > 0.0 && lambda_ell <= big_lambda_ell) {
                    return Err(Error::Config(format!(
                        "pucci-1d needs 0 < lambda_ell ≤ big_lambda_ell, got {lambda_ell}, {big_lambda_ell}"
                    )));
                }
                Problem::Bellman(bellman_spec(
                    [*lambda_ell, *big_lambda_ell]
                        .iter()
                        .map(|s| CoefficientField::diffusion_1d(scaled_sin(*s, *delta)))
                        .collect(),
                )?)
            }
            ProblemSpec::Bellman2Ctl1d { delta, a2 } => {
                Problem::Bellman(bellman_spec(vec![
                    CoefficientField::diffusion_1d(Periodic::one_plus_sin(*delta, 0)),
                    CoefficientField::diffusion_1d(Periodic::Const(*a2)),
                ])?)
            }
            ProblemSpec::Constant { a, b, c } => Problem::Linear(linear_spec(field(FieldConfig::Constant {
                a: a.clone(),
                b: b.clone(),
                c: *c,
            })?)?),
            ProblemSpec::Custom { field: f } => Problem::Linear(linear_spec(field(f.clone())?)?),
            ProblemSpec::CustomBellman { controls } => {
                if controls.is_empty() {
                    return Err(Error::Config("custom-bellman needs at least one control".into()));
                }
                Problem::Bellman(bellman_spec(
                    controls.iter().map(|f| field(f.clone())).collect::<Result<Vec<_>>>()?,
                )?)
            }
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Linear,
    Bellman,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measurement {
    /// `|λ^ε − λ̄|`
    LambdaRate,
    /// `‖(1 + t_ε)u^ε − u‖∞` (Bellman mode: `‖u^ε − u‖∞`)
    EigfunRate,
    /// `‖z^ε‖∞`
    ZRate,
    /// `‖w^ε − u‖∞`
    PivotRate,
    /// `‖v^ε‖∞`
    VNorm,
    /// Residual of the two-scale expansion.
    ResidualSlope,
}

impl Measurement {
    pub const ALL: [Measurement; 6] = [
        Measurement::LambdaRate,
        Measurement::EigfunRate,
        Measurement::ZRate,
        Measurement::PivotRate,
        Measurement::VNorm,
        Measurement::ResidualSlope,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Measurement::LambdaRate => "lambda_rate",
            Measurement::EigfunRate => "eigfun_rate",
            Measurement::ZRate => "z_rate",
            Measurement::PivotRate => "pivot_rate",
            Measurement::VNorm => "v_norm",
            Measurement::ResidualSlope => "residual_slope",
        }
    }

    fn available(self, mode: Mode) -> bool {
        mode == Mode::Linear
            || matches!(
                self,
                Measurement::LambdaRate | Measurement::EigfunRate | Measurement::ResidualSlope
            )
    }

    /// The row column this measurement fits.
    pub fn column(self, row: &SweepRow) -> Option<f64> {
        match self {
            Measurement::LambdaRate => row.abs_err_lambda,
            Measurement::EigfunRate => row.eigfun_err,
            Measurement::ZRate => row.z_norm,
            Measurement::PivotRate => row.pivot_err,
            Measurement::VNorm => row.v_norm,
            Measurement::ResidualSlope => row.residual,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Collatz–Wielandt bracket width at which the power iteration stops.
    pub eigen: f64,
    pub max_iter: usize,
    /// Howard tolerance for nonlinear cell problems.
    pub cell: f64,
    /// Supporting planes used for the 2D effective Bellman operator.
    pub directions: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            eigen: 1e-10,
            max_iter: 5000,
            cell: 1e-10,
            directions: 24,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub problem: ProblemSpec,
    #[serde(default)]
    pub eps_list: Vec<f64>,
    /// Grid cells per period `ε` along each axis.
    #[serde(default = "default_q")]
    pub q: usize,
    /// Torus resolution for the cell problems; defaults to `q`, so that every domain node
    /// lands on a torus node.
    #[serde(default)]
    pub n_torus: Option<usize>,
    /// Cells per axis for single runs, overriding `q/ε`.
    #[serde(default)]
    pub n_domain: Option<usize>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub mode: Option<Mode>,
    /// Defaults to every measurement available in the mode.
    #[serde(default)]
    pub measurements: Option<Vec<Measurement>>,
    #[serde(default)]
    pub solver: SolverKind,
    /// Record wall-clock seconds per row; off keeps output byte-identical across runs.
    #[serde(default)]
    pub timings: bool,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub format: Format,
}

fn default_q() -> usize {
    64
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid sweep config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn mode(&self) -> Mode {
        self.mode.unwrap_or(match self.problem {
            ProblemSpec::Pucci1d { .. } | ProblemSpec::Bellman2Ctl1d { .. } | ProblemSpec::CustomBellman { .. } => Mode::Bellman,
            _ => Mode::Linear,
        })
    }

    pub fn n_torus(&self) -> usize {
        self.n_torus.unwrap_or(self.q)
    }

    pub fn measurements(&self) -> Vec<Measurement> {
        let mode = self.mode();
        let mut m = self
            .measurements
            .clone()
            .unwrap_or_else(|| Measurement::ALL.iter().copied().filter(|m| m.available(mode)).collect());
        m.sort();
        m.dedup();
        m
    }

    /// Cells per axis of the domain grid at `eps`.
    pub fn cells(&self, eps: f64) -> usize {
        (self.q as f64 / eps).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.q < 16 {
            return Err(Error::Config(format!("q must be at least 16, got {}", self.q)));
        }
        if self.n_torus() < 4 {
            return Err(Error::Config("n_torus must be at least 4".into()));
        }
        for (i, &e) in self.eps_list.iter().enumerate() {
            if !(e > 0.0 && e < 1.0) {
                return Err(Error::Config(format!("eps_list[{i}] = {e} is outside (0, 1)")));
            }
            let m = 1.0 / e;
            if (m - m.round()).abs() > 1e-9 * m {
                return Err(Error::Config(format!(
                    "eps_list[{i}] = {e} is not the reciprocal of an integer"
                )));
            }
            if i > 0 && !(e < self.eps_list[i - 1]) {
                return Err(Error::Config("eps_list must be strictly decreasing".into()));
            }
        }
        let mode = self.mode();
        for m in self.measurements() {
            if !m.available(mode) {
                return Err(Error::Config(format!("measurement {} is not available in {mode:?} mode", m.name())));
            }
        }
        if !(self.tolerances.eigen > 0.0 && self.tolerances.cell > 0.0 && self.tolerances.max_iter > 0) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// One ε of a sweep. Columns not requested (or not defined in the mode) stay empty.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub eps: f64,
    /// Cells per axis.
    pub n: usize,
    pub lambda_eps: Option<f64>,
    pub lambda_bar: Option<f64>,
    pub abs_err_lambda: Option<f64>,
    pub eigfun_err: Option<f64>,
    pub eigfun_err_l2: Option<f64>,
    pub pivot_err: Option<f64>,
    pub t_eps: Option<f64>,
    pub z_norm: Option<f64>,
    /// `|(z^ε, u^ε)|` after alignment.
    pub orthogonality: Option<f64>,
    pub v_norm: Option<f64>,
    pub residual: Option<f64>,
    pub cw_lower: Option<f64>,
    pub cw_upper: Option<f64>,
    pub seconds: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub constant: f64,
    pub r2: f64,
    pub points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum FitOutcome {
    Fitted(RateFit),
    /// Every value is at rounding level; no rate is defined.
    Exact,
    Insufficient { reason: String },
}

impl FitOutcome {
    pub fn fit(&self) -> Option<&RateFit> {
        match self {
            FitOutcome::Fitted(f) => Some(f),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EffectiveSummary {
    Linear {
        a_bar: Vec<Vec<f64>>,
        b_bar: Vec<f64>,
        c_bar: f64,
    },
    /// Constant-coefficient controls of the effective operator.
    Bellman { controls: Vec<Vec<Vec<f64>>> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub problem: String,
    pub mode: Mode,
    pub dim: usize,
    pub q: usize,
    pub n_torus: usize,
    pub eps_list: Vec<f64>,
    pub measurements: Vec<Measurement>,
    pub effective: Option<EffectiveSummary>,
    pub rows: Vec<SweepRow>,
    pub fits: BTreeMap<String, FitOutcome>,
}

impl SweepReport {
    pub fn fit(&self, m: Measurement) -> Option<&RateFit> {
        self.fits.get(m.name()).and_then(FitOutcome::fit)
    }
}

/// Least squares on `(log ε, log e)`: slope, `C = exp(intercept)` and `r²`.
/// Nonpositive or nonfinite errors are dropped.
pub fn fit_rate(eps: &[f64], errors: &[f64]) -> Result<RateFit> {
    if eps.len() != errors.len() {
        return Err(Error::Input("eps and error lists differ in length".into()));
    }
    let pts: Vec<(f64, f64)> = eps
        .iter()
        .zip(errors)
        .filter(|(e, v)| **e > 0.0 && **v > 0.0 && v.is_finite())
        .map(|(e, v)| (e.ln(), v.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::Input(format!("rate fit needs 3 positive points, got {}", pts.len())));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::Input("rate fit needs distinct eps values".into()));
    }
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Ok(RateFit {
        slope,
        constant: (my - slope * mx).exp(),
        r2,
        points: pts.len(),
    })
}

fn fit_column(eps: &[f64], values: &[Option<f64>]) -> FitOutcome {
    let (e, v): (Vec<f64>, Vec<f64>) = eps
        .iter()
        .zip(values)
        .filter_map(|(e, v)| v.map(|v| (*e, v)))
        .unzip();
    if v.len() >= 3 && v.iter().all(|x| x.abs() <= EXACT_TOL) {
        return FitOutcome::Exact;
    }
    match fit_rate(&e, &v) {
        Ok(f) => FitOutcome::Fitted(f),
        Err(err) => FitOutcome::Insufficient { reason: err.to_string() },
    }
}

/// Worker count from `ERGODICA_THREADS` (unset or invalid: rayon's default).
pub fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|n| *n > 0)
}

/// Runs `f` inside a pool capped by `ERGODICA_THREADS`.
pub fn with_thread_cap<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_cap() {
        b = b.num_threads(n);
    }
    let pool = b.build().map_err(|e| Error::Solver(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

enum Context {
    Linear {
        spec: LinearOperatorSpec,
        set: CorrectorSet,
        eff: EffectiveLinear,
    },
    Bellman {
        spec: BellmanSpec,
        eff: BellmanSpec,
        map: EffectiveMap,
    },
}

fn build_context(cfg: &SweepConfig) -> Result<Context> {
    let problem = cfg.problem.build()?;
    let tgrid = PeriodicGrid::new(problem.dim(), cfg.n_torus())?;
    Ok(match (cfg.mode(), problem) {
        (Mode::Linear, Problem::Linear(spec)) => {
            let (set, eff) = homogenize(&spec, &tgrid)?;
            Context::Linear { spec, set, eff }
        }
        (Mode::Linear, Problem::Bellman(_)) => {
            return Err(Error::Config(format!("{} is a Bellman problem; use mode \"bellman\"", cfg.problem.label())))
        }
        (Mode::Bellman, problem) => {
            let spec = match problem {
                Problem::Linear(s) => BellmanSpec::singleton(s),
                Problem::Bellman(s) => s,
            };
            let (eff, map) = effective_bellman(&spec, &tgrid, cfg.tolerances.cell, cfg.tolerances.directions)?;
            Context::Bellman { spec, eff, map }
        }
    })
}

fn summary(ctx: &Context) -> EffectiveSummary {
    let rows = |m: &Mat| (0..m.dim).map(|i| (0..m.dim).map(|j| m.e[i][j]).collect()).collect();
    match ctx {
        Context::Linear { eff, .. } => EffectiveSummary::Linear {
            a_bar: eff.a_bar.clone(),
            b_bar: eff.b_bar.clone(),
            c_bar: eff.c_bar,
        },
        Context::Bellman { eff, .. } => EffectiveSummary::Bellman {
            controls: eff.controls().iter().map(|c| rows(&c.field.a([0.0, 0.0]))).collect(),
        },
    }
}

/// Runs the sweep; per-ε failures are recorded in their row and the sweep continues.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepReport> {
    cfg.validate()?;
    let measurements = cfg.measurements();
    let dim = cfg.problem.build()?.dim();
    let mut report = SweepReport {
        problem: cfg.problem.label().to_string(),
        mode: cfg.mode(),
        dim,
        q: cfg.q,
        n_torus: cfg.n_torus(),
        eps_list: cfg.eps_list.clone(),
        measurements: measurements.clone(),
        effective: None,
        rows: Vec::new(),
        fits: BTreeMap::new(),
    };
    if measurements.is_empty() {
        return Ok(report);
    }
    if cfg.eps_list.is_empty() {
        return Err(Error::Config("a sweep needs a nonempty eps_list".into()));
    }
    let (ctx, rows) = with_thread_cap(|| -> Result<(Context, Vec<SweepRow>)> {
        let ctx = build_context(cfg).map_err(|e| e.context("effective problem"))?;
        let rows = cfg
            .eps_list
            .par_iter()
            .map(|&eps| {
                let start = Instant::now();
                let n = cfg.cells(eps);
                let mut row = match sweep_row(&ctx, cfg, &measurements, eps, n) {
                    Ok(r) => r,
                    Err(e) => SweepRow {
                        eps,
                        n,
                        failure: Some(e.to_string()),
                        ..SweepRow::default()
                    },
                };
                if cfg.timings {
                    row.seconds = Some(start.elapsed().as_secs_f64());
                }
                row
            })
            .collect();
        Ok((ctx, rows))
    })??;
    report.effective = Some(summary(&ctx));
    report.rows = rows;
    for m in &measurements {
        let values: Vec<Option<f64>> = report.rows.iter().map(|r| m.column(r)).collect();
        report.fits.insert(m.name().to_string(), fit_column(&cfg.eps_list, &values));
    }
    Ok(report)
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

fn sweep_row(ctx: &Context, cfg: &SweepConfig, ms: &[Measurement], eps: f64, n: usize) -> Result<SweepRow> {
    let want = |m: Measurement| ms.contains(&m);
    let tol = &cfg.tolerances;
    let power = PowerIteration::new()
        .with_tolerance(tol.eigen)
        .with_max_iterations(tol.max_iter)
        .with_solver(cfg.solver);
    let mut row = SweepRow {
        eps,
        n,
        ..SweepRow::default()
    };
    match ctx {
        Context::Linear { spec, set, eff } => {
            let grid = DomainGrid::new(spec.dim(), [0.0; 2], [1.0; 2], [n, n])?;
            let op_bar = assemble_effective(eff, &grid)?;
            let u: EigenPair = power.run(&op_bar).map_err(|e| e.context("effective eigenpair"))?;
            let op = assemble_oscillatory(spec, eps, &grid)?;
            let solver = DirichletSolver::new(&op, op.proper_shift(), cfg.solver)?;
            let ue = power.run_with(&op, &solver).map_err(|e| e.context("oscillatory eigenpair"))?;
            row.lambda_eps = Some(ue.lambda);
            row.lambda_bar = Some(u.lambda);
            row.abs_err_lambda = Some((ue.lambda - u.lambda).abs());
            row.cw_lower = Some(ue.cw_lower);
            row.cw_upper = Some(ue.cw_upper);
            if want(Measurement::EigfunRate) || want(Measurement::ZRate) || want(Measurement::PivotRate) {
                let w = pivot_with(&solver, &u.phi, u.lambda).map_err(|e| e.context("pivot problem"))?;
                let (t, z) = align_eigenfunctions(&grid, &w, &ue.phi)?;
                let diff: Vec<f64> = ue.phi.iter().zip(&u.phi).map(|(a, b)| (1.0 + t) * a - b).collect();
                row.t_eps = Some(t);
                row.eigfun_err = Some(sup_norm(&diff));
                row.eigfun_err_l2 = Some(inner(&grid, &diff, &diff).sqrt());
                row.pivot_err = Some(sup_diff(&w, &u.phi));
                row.z_norm = Some(sup_norm(&z));
                row.orthogonality = Some(inner(&grid, &z, &ue.phi).abs());
            }
            if want(Measurement::VNorm) || want(Measurement::ResidualSlope) {
                let ex = linear_expansion(spec, set, eff, &u.phi, u.lambda, &op).map_err(|e| e.context("corrector expansion"))?;
                row.v_norm = Some(ex.result.sup_norm_v);
                row.residual = Some(ex.residual);
            }
        }
        Context::Bellman { spec, eff, map } => {
            let grid = DomainGrid::new(spec.dim(), [0.0; 2], [1.0; 2], [n, n])?;
            let bar = bellman_eigen_with(&assemble_controls(eff, 0.0, &grid)?, tol.eigen, None)
                .map_err(|e| e.context("effective Bellman eigenpair"))?;
            let osc = bellman_eigen_with(&assemble_controls(spec, eps, &grid)?, tol.eigen, None)
                .map_err(|e| e.context("oscillatory Bellman eigenpair"))?;
            let (u, ue) = (&bar.pair, &osc.pair);
            row.lambda_eps = Some(ue.lambda);
            row.lambda_bar = Some(u.lambda);
            row.abs_err_lambda = Some((ue.lambda - u.lambda).abs());
            row.cw_lower = Some(ue.cw_lower);
            row.cw_upper = Some(ue.cw_upper);
            if want(Measurement::EigfunRate) {
                let diff: Vec<f64> = ue.phi.iter().zip(&u.phi).map(|(a, b)| a - b).collect();
                row.eigfun_err = Some(sup_norm(&diff));
                row.eigfun_err_l2 = Some(inner(&grid, &diff, &diff).sqrt());
            }
            if want(Measurement::ResidualSlope) {
                let ex = nonlinear_expansion(spec, map, &u.phi, u.lambda, eps, &grid)
                    .map_err(|e| e.context("nonlinear expansion"))?;
                row.residual = Some(ex.residual);
            }
        }
    }
    Ok(row)
}

/// CSV columns, in order.
pub const CSV_COLUMNS: [&str; 8] = [
    "eps",
    "lambda_eps",
    "lambda_bar",
    "abs_err_lambda",
    "eigfun_err",
    "z_norm",
    "v_norm",
    "seconds",
];

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_csv<W: Write>(report: &SweepReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for r in &report.rows {
        w.write_record([
            r.eps.to_string(),
            cell(r.lambda_eps),
            cell(r.lambda_bar),
            cell(r.abs_err_lambda),
            cell(r.eigfun_err),
            cell(r.z_norm),
            cell(r.v_norm),
            cell(r.seconds),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn to_csv(report: &SweepReport) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(report, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

pub fn to_json(report: &SweepReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(report)?)
}

/// Writes `sweep.csv` or `sweep.json` into `dir` and returns the path.
pub fn emit_report(report: &SweepReport, format: Format, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let (path, body) = match format {
        Format::Csv => (dir.join("sweep.csv"), to_csv(report)?),
        Format::Json => (dir.join("sweep.json"), to_json(report)?),
    };
    std::fs::write(&path, body)?;
    Ok(path)
}
