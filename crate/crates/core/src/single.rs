//! Single runs behind the `effective`, `eigen` and `corrector` commands.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corrector::{linear_expansion, nonlinear_expansion};
use crate::domain::{assemble_controls, assemble_effective, assemble_oscillatory, DomainGrid};
use crate::effective::{effective_bellman, homogenize, EffectiveLinear};
use crate::eigen::{bellman_eigen_with, EigenPair, PowerIteration};
use crate::error::{Error, Result};
use crate::sweep::{EffectiveSummary, Mode, Problem, SweepConfig};
use crate::torus::PeriodicGrid;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectiveReport {
    pub problem: String,
    pub n_torus: usize,
    pub summary: EffectiveSummary,
    /// Full set of constants for linear problems.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linear: Option<EffectiveLinear>,
}

pub fn effective_report(cfg: &SweepConfig) -> Result<EffectiveReport> {
    let problem = cfg.problem.build()?;
    let tgrid = PeriodicGrid::new(problem.dim(), cfg.n_torus()).map_err(|e| Error::Config(e.to_string()))?;
    let (summary, linear) = match (cfg.mode(), problem) {
        (Mode::Linear, Problem::Linear(spec)) => {
            let (_, eff) = homogenize(&spec, &tgrid)?;
            (
                EffectiveSummary::Linear {
                    a_bar: eff.a_bar.clone(),
                    b_bar: eff.b_bar.clone(),
                    c_bar: eff.c_bar,
                },
                Some(eff),
            )
        }
        (_, problem) => {
            let spec = match problem {
                Problem::Linear(s) => crate::coeff::BellmanSpec::singleton(s),
                Problem::Bellman(s) => s,
            };
            let (eff, _) = effective_bellman(&spec, &tgrid, cfg.tolerances.cell, cfg.tolerances.directions)?;
            let controls = eff
                .controls()
                .iter()
                .map(|c| {
                    let a = c.field.a([0.0; 2]);
                    (0..a.dim).map(|i| (0..a.dim).map(|j| a.e[i][j]).collect()).collect()
                })
                .collect();
            (EffectiveSummary::Bellman { controls }, None)
        }
    };
    Ok(EffectiveReport {
        problem: cfg.problem.label().to_string(),
        n_torus: cfg.n_torus(),
        summary,
        linear,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenReport {
    pub problem: String,
    /// `None` for the effective problem.
    pub eps: Option<f64>,
    pub n: usize,
    pub lambda: f64,
    pub cw_lower: f64,
    pub cw_upper: f64,
    pub residual: f64,
    pub iterations: usize,
    #[serde(skip)]
    pub grid: Option<DomainGrid>,
    #[serde(skip)]
    pub phi: Vec<f64>,
}

fn single_grid(cfg: &SweepConfig, dim: usize, eps: Option<f64>) -> Result<DomainGrid> {
    let n = match (cfg.n_domain, eps) {
        (Some(n), _) => n,
        (None, Some(e)) => cfg.cells(e),
        (None, None) => return Err(Error::Config("set n_domain or pass an eps".into())),
    };
    DomainGrid::new(dim, [0.0; 2], [1.0; 2], [n, n]).map_err(|e| Error::Config(e.to_string()))
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("eps must lie in (0, 1), got {eps}")))
    }
}

/// Principal eigenpair of `L^ε` (or of the effective operator when `eps` is `None`).
pub fn eigen_report(cfg: &SweepConfig, eps: Option<f64>) -> Result<EigenReport> {
    if let Some(e) = eps {
        check_eps(e)?;
    }
    let problem = cfg.problem.build()?;
    let grid = single_grid(cfg, problem.dim(), eps)?;
    let tol = &cfg.tolerances;
    let power = PowerIteration::new()
        .with_tolerance(tol.eigen)
        .with_max_iterations(tol.max_iter)
        .with_solver(cfg.solver);
    let tgrid = PeriodicGrid::new(problem.dim(), cfg.n_torus()).map_err(|e| Error::Config(e.to_string()))?;
    let pair: EigenPair = match (cfg.mode(), problem, eps) {
        (Mode::Linear, Problem::Linear(spec), Some(e)) => power.run(&assemble_oscillatory(&spec, e, &grid)?)?,
        (Mode::Linear, Problem::Linear(spec), None) => {
            let (_, eff) = homogenize(&spec, &tgrid)?;
            power.run(&assemble_effective(&eff, &grid)?)?
        }
        (Mode::Linear, Problem::Bellman(_), _) => return Err(Error::Config("Bellman problems need mode \"bellman\"".into())),
        (Mode::Bellman, problem, eps) => {
            let spec = match problem {
                Problem::Linear(s) => crate::coeff::BellmanSpec::singleton(s),
                Problem::Bellman(s) => s,
            };
            let ops = match eps {
                Some(e) => assemble_controls(&spec, e, &grid)?,
                None => {
                    let (eff, _) = effective_bellman(&spec, &tgrid, tol.cell, tol.directions)?;
                    assemble_controls(&eff, 0.0, &grid)?
                }
            };
            bellman_eigen_with(&ops, tol.eigen, None)?.pair
        }
    };
    Ok(EigenReport {
        problem: cfg.problem.label().to_string(),
        eps,
        n: grid.n[0],
        lambda: pair.lambda,
        cw_lower: pair.cw_lower,
        cw_upper: pair.cw_upper,
        residual: pair.residual,
        iterations: pair.iterations,
        grid: Some(grid),
        phi: pair.phi,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectorReport {
    pub problem: String,
    pub eps: f64,
    pub n: usize,
    pub lambda_bar: f64,
    /// `‖v^ε‖∞` (linear) or `‖ε w₁ + ε² w₂‖∞` (Bellman).
    pub sup_norm_v: f64,
    /// `(ε, residual)` pair for slope fits across runs.
    pub residual_slope_inputs: (f64, f64),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell_residual: Option<f64>,
    #[serde(skip)]
    pub grid: Option<DomainGrid>,
    /// Named full-grid fields for CSV dumps.
    #[serde(skip)]
    pub fields: Vec<(String, Vec<f64>)>,
}

/// Runs the corrector chain at one `ε` around the effective eigenpair.
pub fn corrector_report(cfg: &SweepConfig, eps: f64) -> Result<CorrectorReport> {
    check_eps(eps)?;
    let problem = cfg.problem.build()?;
    let grid = single_grid(cfg, problem.dim(), Some(eps))?;
    let tol = &cfg.tolerances;
    let power = PowerIteration::new()
        .with_tolerance(tol.eigen)
        .with_max_iterations(tol.max_iter)
        .with_solver(cfg.solver);
    let tgrid = PeriodicGrid::new(problem.dim(), cfg.n_torus()).map_err(|e| Error::Config(e.to_string()))?;
    let mut report = CorrectorReport {
        problem: cfg.problem.label().to_string(),
        eps,
        n: grid.n[0],
        lambda_bar: 0.0,
        sup_norm_v: 0.0,
        residual_slope_inputs: (eps, 0.0),
        cell_residual: None,
        grid: Some(grid),
        fields: Vec::new(),
    };
    match (cfg.mode(), problem) {
        (Mode::Linear, Problem::Linear(spec)) => {
            let (set, eff) = homogenize(&spec, &tgrid)?;
            let u = power.run(&assemble_effective(&eff, &grid)?)?;
            let op = assemble_oscillatory(&spec, eps, &grid)?;
            let ex = linear_expansion(&spec, &set, &eff, &u.phi, u.lambda, &op)?;
            report.lambda_bar = u.lambda;
            report.sup_norm_v = ex.result.sup_norm_v;
            report.residual_slope_inputs.1 = ex.residual;
            report.fields = vec![
                ("u".into(), u.phi),
                ("psi1".into(), ex.result.psi1),
                ("w2".into(), ex.result.w2_trace),
                ("v".into(), ex.result.v_eps),
            ];
        }
        (Mode::Linear, Problem::Bellman(_)) => return Err(Error::Config("Bellman problems need mode \"bellman\"".into())),
        (Mode::Bellman, problem) => {
            let spec = match problem {
                Problem::Linear(s) => crate::coeff::BellmanSpec::singleton(s),
                Problem::Bellman(s) => s,
            };
            let (eff, map) = effective_bellman(&spec, &tgrid, tol.cell, tol.directions)?;
            let u = bellman_eigen_with(&assemble_controls(&eff, 0.0, &grid)?, tol.eigen, None)?.pair;
            let ex = nonlinear_expansion(&spec, &map, &u.phi, u.lambda, eps, &grid)?;
            let v: Vec<f64> = ex.expansion.iter().zip(&u.phi).map(|(a, b)| a - b).collect();
            report.lambda_bar = u.lambda;
            report.sup_norm_v = crate::corrector::sup_norm(&v);
            report.residual_slope_inputs.1 = ex.residual;
            report.cell_residual = Some(ex.cell_residual);
            report.fields = vec![
                ("u".into(), u.phi),
                ("w1".into(), ex.w1),
                ("w2".into(), ex.w2_trace),
                ("v".into(), v),
            ];
        }
    }
    Ok(report)
}

/// Writes node coordinates followed by the named fields as CSV.
pub fn write_fields_csv<W: Write>(grid: &DomainGrid, fields: &[(String, Vec<f64>)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (0..grid.dim).map(|k| format!("x{}", k + 1)).collect();
    header.extend(fields.iter().map(|(n, _)| n.clone()));
    w.write_record(&header)?;
    for k in 0..grid.full_len() {
        let p = grid.point(k);
        let mut rec: Vec<String> = (0..grid.dim).map(|a| p[a].to_string()).collect();
        rec.extend(fields.iter().map(|(_, f)| f[k].to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
