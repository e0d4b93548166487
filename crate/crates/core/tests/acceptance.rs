//! Acceptance run: one pass/fail line per criterion.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use ergodica::domain::{assemble_controls, assemble_effective, assemble_oscillatory, frozen_operator, DomainGrid};
use ergodica::effective::{build_corrector_set, effective_linear, homogenize};
use ergodica::eigen::{bellman_eigen_with, principal_eigenpair, PowerIteration};
use ergodica::sweep::{run_sweep, FitOutcome, Measurement, Problem, ProblemSpec, SweepConfig, SweepReport};
use ergodica::{EffectiveLinear, PeriodicGrid};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn harmonic_mean_oracle(a: impl Fn(f64) -> f64) -> f64 {
    // composite Simpson on 1/a over one period
    let m = 20_000;
    let h = 1.0 / m as f64;
    let mut s = 1.0 / a(0.0) + 1.0 / a(1.0);
    for k in 1..m {
        s += if k % 2 == 1 { 4.0 } else { 2.0 } / a(k as f64 * h);
    }
    1.0 / (s * h / 3.0)
}

/// Smallest real part of the spectrum of `−L` by a dense eigensolve.
fn dense_principal(op: &ergodica::DiscreteOperator) -> f64 {
    let n = op.matrix.dim();
    let d = op.matrix.to_dense();
    let m = DMatrix::from_fn(n, n, |i, j| -d[i][j]);
    m.complex_eigenvalues().iter().map(|z| z.re).fold(f64::INFINITY, f64::min)
}

fn sweep(problem: &str, eps: &[f64], q: usize, extra: &str) -> SweepReport {
    let text = format!(r#"{{"problem": {problem}, "eps_list": {eps:?}, "q": {q}{extra}}}"#);
    run_sweep(&SweepConfig::from_json(&text).unwrap()).unwrap()
}

fn slope(r: &SweepReport, m: Measurement) -> (f64, f64) {
    match r.fits.get(m.name()) {
        Some(FitOutcome::Fitted(f)) => (f.slope, f.r2),
        other => panic!("no fit for {}: {other:?}", m.name()),
    }
}

fn rows_ok(r: &SweepReport) -> bool {
    r.rows.iter().all(|row| row.failure.is_none())
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let Problem::Linear(spec) = (ProblemSpec::SinA { delta: 0.5 }).build().unwrap() else { unreachable!() };
    let (_, eff) = homogenize(&spec, &PeriodicGrid::new(1, 512).unwrap()).unwrap();
    let took = start.elapsed();
    let oracle = harmonic_mean_oracle(|y| 1.0 + 0.5 * (2.0 * PI * y).sin());
    let a = eff.a_bar[0][0];
    let exact = 3f64.sqrt() / 2.0;
    outcome(
        (a - exact).abs() <= 1e-6 && (oracle - exact).abs() <= 1e-6 && took < Duration::from_secs(1),
        format!("a_bar = {a:.10}, quadrature = {oracle:.10}, |a_bar - sqrt(3)/2| = {:.2e}, {took:.2?}", (a - exact).abs()),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let a = 3f64.sqrt() / 2.0;
    let eff = EffectiveLinear::from_constants(&ergodica::Mat::scalar(a), &[0.0], 0.0);
    let big = principal_eigenpair(&assemble_effective(&eff, &DomainGrid::unit(1, 2048).unwrap()).unwrap(), 1e-10, 5000).unwrap();
    let took = start.elapsed();
    let small_op = assemble_effective(&eff, &DomainGrid::unit(1, 64).unwrap()).unwrap();
    let small = principal_eigenpair(&small_op, 1e-12, 5000).unwrap();
    let dense = dense_principal(&small_op);
    let target = a * PI * PI;
    outcome(
        (big.lambda - target).abs() <= 1e-3 && (small.lambda - dense).abs() <= 1e-9 && took < Duration::from_secs(5),
        format!(
            "lambda_bar(n=2048) = {:.6}, |err| = {:.2e}; n=64 power vs dense = {:.2e}; {took:.2?}",
            big.lambda,
            (big.lambda - target).abs(),
            (small.lambda - dense).abs()
        ),
    )
}

fn criteria_3_to_6(r: &SweepReport, took: Duration) -> Vec<Outcome> {
    let ok = rows_ok(r);
    let (s, r2) = slope(r, Measurement::LambdaRate);
    let c3 = outcome(
        ok && s >= 0.9 && r2 >= 0.95 && took < Duration::from_secs(120),
        format!("|lambda_eps - lambda_bar| slope = {s:.3}, r2 = {r2:.4}, {took:.2?}"),
    );
    let (se, _) = slope(r, Measurement::EigfunRate);
    let (sz, _) = slope(r, Measurement::ZRate);
    let c4 = outcome(
        ok && se >= 0.9 && sz >= 0.9 && took < Duration::from_secs(180),
        format!("eigenfunction slope = {se:.3}, z slope = {sz:.3}"),
    );
    let (sp, _) = slope(r, Measurement::PivotRate);
    let c5 = outcome(ok && sp >= 0.9, format!("|w - u| slope = {sp:.3}"));
    let ratios: Vec<f64> = r.rows.iter().map(|row| row.v_norm.unwrap() / row.eps).collect();
    let sup = ratios.iter().fold(0.0f64, |m, x| m.max(*x));
    let c6 = outcome(
        ok && sup <= 10.0 * ratios[0],
        format!("max |v|/eps = {sup:.4e}, at largest eps = {:.4e}", ratios[0]),
    );
    vec![c3, c4, c5, c6]
}

fn criterion_7() -> (Outcome, Vec<SweepReport>) {
    let eps = [0.125, 0.0625, 0.03125, 0.015625];
    let b = sweep(r#"{"name": "bellman-2ctl-1d"}"#, &eps, 64, "");
    let (s, _) = slope(&b, Measurement::LambdaRate);

    let lin = sweep(r#"{"name": "sin-a"}"#, &eps, 64, r#", "measurements": ["lambda_rate"]"#);
    let single = sweep(r#"{"name": "sin-a"}"#, &eps, 64, r#", "mode": "bellman", "measurements": ["lambda_rate"]"#);
    let singleton_gap = lin
        .rows
        .iter()
        .zip(&single.rows)
        .map(|(a, b)| (a.lambda_eps.unwrap() - b.lambda_eps.unwrap()).abs())
        .fold(0.0f64, f64::max);

    // exhaustive policy enumeration on 8 interior nodes
    let Problem::Bellman(spec) = (ProblemSpec::Bellman2Ctl1d { delta: 0.5, a2: 1.2 }).build().unwrap() else { unreachable!() };
    let grid = DomainGrid::unit(1, 9).unwrap();
    let ops = assemble_controls(&spec, 1.0 / 3.0, &grid).unwrap();
    let howard = bellman_eigen_with(&ops, 1e-13, None).unwrap().pair.lambda;
    let brute = (0..1usize << 8)
        .map(|mask| {
            let policy: Vec<usize> = (0..8).map(|i| (mask >> i) & 1).collect();
            principal_eigenpair(&frozen_operator(&ops, &policy), 1e-13, 5000).unwrap().lambda
        })
        .fold(f64::INFINITY, f64::min);
    let ok = rows_ok(&b) && rows_ok(&lin) && rows_ok(&single);
    (
        outcome(
            ok && s >= 0.9 && singleton_gap <= 1e-10 && (howard - brute).abs() <= 1e-9,
            format!(
                "bellman slope = {s:.3}; singleton vs linear max gap = {singleton_gap:.2e}; policy iteration vs 256-policy enumeration = {:.2e}",
                (howard - brute).abs()
            ),
        ),
        vec![b, lin, single],
    )
}

fn criterion_8(reports: &[&SweepReport]) -> Outcome {
    let mut worst_width = 0.0f64;
    let mut inside = true;
    let mut count = 0;
    for r in reports {
        for row in &r.rows {
            if let (Some(l), Some(lo), Some(hi)) = (row.lambda_eps, row.cw_lower, row.cw_upper) {
                inside &= lo <= l && l <= hi;
                worst_width = worst_width.max(hi - lo);
                count += 1;
            }
        }
    }
    let Problem::Linear(spec) = (ProblemSpec::SinAbc {
        delta: 0.5,
        beta: 1.0,
        kappa: 1.0,
    })
    .build()
    .unwrap() else {
        unreachable!()
    };
    let grid = DomainGrid::unit(1, 512).unwrap();
    let op = assemble_oscillatory(&spec, 0.125, &grid).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let lambdas: Vec<f64> = (0..10)
        .map(|_| {
            let start: Vec<f64> = (0..grid.interior_len()).map(|_| rng.gen_range(0.01..1.0)).collect();
            PowerIteration::new().with_start(start).run(&op).unwrap().lambda
        })
        .collect();
    let spread = lambdas.iter().fold(f64::NEG_INFINITY, |m, x| m.max(*x)) - lambdas.iter().fold(f64::INFINITY, |m, x| m.min(*x));
    outcome(
        inside && worst_width <= 1e-8 && spread <= 1e-10,
        format!("{count} eigenpairs bracketed, widest bracket = {worst_width:.2e}; 10 random restarts spread = {spread:.2e}"),
    )
}

fn criterion_9() -> Outcome {
    let mut worst_corr = 0.0f64;
    let mut worst_a = 0.0f64;
    for (dim, a) in [(1usize, vec![1.7]), (2, vec![1.3, 0.2, 0.9])] {
        let Problem::Linear(spec) = (ProblemSpec::Constant {
            a: a.clone(),
            b: vec![0.4; dim],
            c: 0.3,
        })
        .build()
        .unwrap() else {
            unreachable!()
        };
        let set = build_corrector_set(&spec, &PeriodicGrid::new(dim, 16).unwrap()).unwrap();
        worst_corr = worst_corr.max(set.max_abs());
        let eff = effective_linear(&set);
        let given = spec.field.a([0.0; 2]);
        for i in 0..dim {
            for j in 0..dim {
                worst_a = worst_a.max((eff.a_bar[i][j] - given.e[i][j]).abs());
            }
        }
    }
    let eps = [0.5, 0.25, 0.125, 0.0625];
    let r1 = sweep(r#"{"name": "constant", "a": [1.7], "b": [0.4], "c": 0.3}"#, &eps, 16, "");
    let r2 = sweep(
        r#"{"name": "constant", "a": [1.3, 0.2, 0.9], "b": [0.4, 0.4], "c": 0.3}"#,
        &[0.5, 0.25],
        16,
        r#", "measurements": ["lambda_rate"]"#,
    );
    let gap = r1
        .rows
        .iter()
        .chain(&r2.rows)
        .map(|r| r.abs_err_lambda.unwrap_or(f64::INFINITY))
        .fold(0.0f64, f64::max);
    outcome(
        worst_corr <= 1e-12 && worst_a <= 1e-12 && gap <= 1e-9 && r1.fits["lambda_rate"] == FitOutcome::Exact,
        format!("max |a_bar - a| = {worst_a:.2e}, max |corrector| = {worst_corr:.2e}, max |lambda_eps - lambda_bar| = {gap:.2e}"),
    )
}

fn criterion_10() -> Outcome {
    let start = Instant::now();
    let r = sweep(r#"{"name": "sep-2d"}"#, &[0.25, 0.125, 0.0625], 16, r#", "measurements": ["lambda_rate"]"#);
    let took = start.elapsed();
    let errs: Vec<f64> = r.rows.iter().map(|row| row.abs_err_lambda.unwrap_or(f64::NAN)).collect();
    let monotone = errs.windows(2).all(|w| w[1] < w[0]);
    outcome(
        rows_ok(&r) && monotone && errs[2] < errs[0] && took < Duration::from_secs(600),
        format!(
            "|lambda_eps - lambda_bar| = [{}], {took:.2?}",
            errs.iter().map(|e| format!("{e:.3e}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn main() {
    let mut results: Vec<(usize, Outcome)> = Vec::new();
    results.push((1, criterion_1()));
    results.push((2, criterion_2()));

    let start = Instant::now();
    let abc = sweep(r#"{"name": "sin-abc"}"#, &[0.125, 0.0625, 0.03125, 0.015625], 64, "");
    let took = start.elapsed();
    for (k, o) in criteria_3_to_6(&abc, took).into_iter().enumerate() {
        results.push((3 + k, o));
    }
    let (c7, bellman) = criterion_7();
    results.push((7, c7));
    let mut all: Vec<&SweepReport> = vec![&abc];
    all.extend(bellman.iter());
    results.push((8, criterion_8(&all)));
    results.push((9, criterion_9()));
    results.push((10, criterion_10()));

    let mut failed = 0;
    for (k, o) in &results {
        println!("criterion {k:>2}: {} | {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
