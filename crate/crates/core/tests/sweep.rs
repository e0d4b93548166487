use ergodica::sweep::{emit_report, fit_rate, to_csv, to_json, FitOutcome, Format, Measurement, SweepReport, CSV_COLUMNS};
use ergodica::{run_sweep, SweepConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(problem: &str, eps: &[f64], extra: &str) -> SweepConfig {
    SweepConfig::from_json(&format!(r#"{{"problem": {problem}, "eps_list": {eps:?}, "q": 16{extra}}}"#)).unwrap()
}

#[test]
fn noisy_power_law_recovers_the_rate() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let eps: Vec<f64> = (2..8).map(|k| 0.5f64.powi(k)).collect();
    let errs: Vec<f64> = eps.iter().map(|e| 0.7 * e * (1.0 + rng.gen_range(-0.05..0.05))).collect();
    let f = fit_rate(&eps, &errs).unwrap();
    assert!((0.9..=1.1).contains(&f.slope), "{f:?}");
    assert!(f.r2 >= 0.98);
    assert_eq!(f.points, 6);
}

#[test]
fn fit_needs_three_points() {
    assert!(fit_rate(&[0.5, 0.25], &[1.0, 0.5]).is_err());
    assert!(fit_rate(&[0.5, 0.25, 0.125], &[1.0, 0.5]).is_err());
    assert!(fit_rate(&[0.5, 0.5, 0.5], &[1.0, 0.5, 0.2]).is_err());
}

#[test]
fn sin_a_sweep_refines_monotonically() {
    let cfg = config(r#"{"name": "sin-a"}"#, &[0.25, 0.125, 0.0625, 0.03125], r#", "measurements": ["lambda_rate"]"#);
    let report = run_sweep(&cfg).unwrap();
    let errs: Vec<f64> = report.rows.iter().map(|r| r.abs_err_lambda.unwrap()).collect();
    assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
    for r in &report.rows {
        assert!(r.failure.is_none());
        let (lo, hi, l) = (r.cw_lower.unwrap(), r.cw_upper.unwrap(), r.lambda_eps.unwrap());
        assert!(lo <= l + 1e-9 && l <= hi + 1e-9);
    }
    let fit = report.fit(Measurement::LambdaRate).unwrap();
    assert!(fit.slope > 1.8, "{fit:?}");
}

#[test]
fn reports_round_trip_through_json() {
    let cfg = config(r#"{"name": "sin-abc"}"#, &[0.25, 0.125, 0.0625], "");
    let report = run_sweep(&cfg).unwrap();
    let back: SweepReport = serde_json::from_str(&to_json(&report).unwrap()).unwrap();
    assert_eq!(back, report);
    assert_eq!(back.measurements, Measurement::ALL.to_vec());
}

#[test]
fn csv_has_the_documented_header_and_one_row_per_eps() {
    let eps = [0.25, 0.125, 0.0625];
    let report = run_sweep(&config(r#"{"name": "sin-a"}"#, &eps, "")).unwrap();
    let text = to_csv(&report).unwrap();
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), CSV_COLUMNS.to_vec());
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 3);
    for (row, e) in rows.iter().zip(eps) {
        assert_eq!(row[0].parse::<f64>().unwrap(), e);
        let lambda: f64 = row[1].parse().unwrap();
        assert!(lambda > 0.0);
        // timings are off by default
        assert_eq!(&row[7], "");
    }
}

#[test]
fn sweeps_are_deterministic() {
    let cfg = config(r#"{"name": "bellman-2ctl-1d"}"#, &[0.25, 0.125, 0.0625], "");
    let a = to_json(&run_sweep(&cfg).unwrap()).unwrap();
    let b = to_json(&run_sweep(&cfg).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn constant_problem_reports_exact_fits() {
    let report = run_sweep(&config(r#"{"name": "constant", "a": [1.3]}"#, &[0.25, 0.125, 0.0625], r#", "measurements": ["lambda_rate", "z_rate"]"#)).unwrap();
    assert!(matches!(report.fits["lambda_rate"], FitOutcome::Exact));
    assert!(matches!(report.fits["z_rate"], FitOutcome::Exact));
}

#[test]
fn emit_report_writes_files_and_reports_io_errors() {
    let report = run_sweep(&config(r#"{"name": "sin-a"}"#, &[0.25], r#", "measurements": ["lambda_rate"]"#)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let csv = emit_report(&report, Format::Csv, dir.path()).unwrap();
    assert!(csv.ends_with("sweep.csv") && csv.exists());
    let json = emit_report(&report, Format::Json, dir.path()).unwrap();
    assert!(json.ends_with("sweep.json"));
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    assert!(emit_report(&report, Format::Csv, &blocker.join("sub")).is_err());
}

#[test]
fn invalid_configs_are_config_errors() {
    for text in [
        r#"{"problem": {"name": "sin-a"}, "q": 16, "bogus": 1}"#,
        r#"{"problem": {"name": "nope"}}"#,
        r#"{"problem": {"name": "sin-a", "delta": 1.5}, "eps_list": [0.25], "q": 16}"#,
    ] {
        let err = SweepConfig::from_json(text).and_then(|c| run_sweep(&c).map(|_| ()));
        assert!(err.as_ref().is_err_and(|e| e.is_config()), "{text}: {err:?}");
    }
}

proptest! {
    #[test]
    fn exact_power_laws_are_recovered(p in 0.5..3.0f64, c in 1e-3..1e3f64) {
        let eps = [0.5f64, 0.25, 0.125, 0.0625];
        let errs: Vec<f64> = eps.iter().map(|e| c * e.powf(p)).collect();
        let f = fit_rate(&eps, &errs).unwrap();
        prop_assert!((f.slope - p).abs() < 1e-10);
        prop_assert!((f.constant - c).abs() < 1e-8 * c);
        prop_assert!(f.r2 > 1.0 - 1e-12);
    }
}
