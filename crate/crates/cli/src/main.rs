use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ergodica::single::{corrector_report, effective_report, eigen_report, write_fields_csv};
use ergodica::sweep::{emit_report, to_csv, to_json, with_thread_cap, Format, THREADS_ENV};
use ergodica::{run_sweep, Error, Result, SweepConfig};

#[derive(Parser)]
#[command(name = "ergodica", version, about = "Homogenized principal eigenpairs, correctors and ε-rate sweeps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; results go to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    format: Option<OutFormat>,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutFormat {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Effective coefficients from the cell problems.
    Effective {
        #[command(flatten)]
        common: Common,
    },
    /// Principal eigenpair of the oscillatory or the effective operator.
    Eigen {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        eps: Option<f64>,
        /// Solve the effective problem instead.
        #[arg(long, conflicts_with = "eps")]
        effective: bool,
    },
    /// Corrector chain and expansion residual at one ε.
    Corrector {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        eps: f64,
    },
    /// ε-sweep with rate fits.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Run a single ε instead of the configured list.
        #[arg(long)]
        eps: Option<f64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}

fn check_threads() -> Result<()> {
    match std::env::var(THREADS_ENV) {
        Ok(v) if !matches!(v.trim().parse::<usize>(), Ok(n) if n > 0) => {
            Err(Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))
        }
        _ => Ok(()),
    }
}

fn load(common: &Common) -> Result<SweepConfig> {
    let cfg = SweepConfig::load(&common.config)?;
    if cfg.q < 1 {
        return Err(Error::Config("q must be positive".into()));
    }
    Ok(cfg)
}

fn format_of(common: &Common, cfg: &SweepConfig) -> Format {
    match common.format {
        Some(OutFormat::Csv) => Format::Csv,
        Some(OutFormat::Json) => Format::Json,
        None => cfg.format,
    }
}

fn out_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::Config(format!("cannot create {}: {e}", path.display())))
}

fn write_json<T: serde::Serialize>(value: &T, dir: Option<&Path>, name: &str) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match dir {
        Some(d) => {
            out_dir(d)?;
            std::fs::write(d.join(name), text + "\n")?;
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn write_fields(dir: &Path, name: &str, grid: &ergodica::DomainGrid, fields: &[(String, Vec<f64>)]) -> Result<()> {
    out_dir(dir)?;
    write_fields_csv(grid, fields, BufWriter::new(File::create(dir.join(name))?))
}

fn run(cli: Cli) -> Result<()> {
    check_threads()?;
    with_thread_cap(move || match cli.command {
        Command::Effective { common } => {
            let cfg = load(&common)?;
            write_json(&effective_report(&cfg)?, common.out.as_deref(), "effective.json")
        }
        Command::Eigen { common, eps, effective } => {
            let cfg = load(&common)?;
            if eps.is_none() && !effective {
                return Err(Error::Config("eigen needs --eps or --effective".into()));
            }
            let r = eigen_report(&cfg, eps)?;
            write_json(&r, common.out.as_deref(), "eigen.json")?;
            if let (Some(dir), Some(grid), Format::Csv) = (&common.out, &r.grid, format_of(&common, &cfg)) {
                write_fields(dir, "eigenfunction.csv", grid, &[("phi".to_string(), r.phi.clone())])?;
            }
            Ok(())
        }
        Command::Corrector { common, eps } => {
            let cfg = load(&common)?;
            let r = corrector_report(&cfg, eps)?;
            write_json(&r, common.out.as_deref(), "corrector.json")?;
            if let (Some(dir), Some(grid), Format::Csv) = (&common.out, &r.grid, format_of(&common, &cfg)) {
                write_fields(dir, "fields.csv", grid, &r.fields)?;
            }
            Ok(())
        }
        Command::Sweep { common, eps } => {
            let mut cfg = load(&common)?;
            if let Some(e) = eps {
                cfg.eps_list = vec![e];
            }
            let format = format_of(&common, &cfg);
            let dir = common.out.clone().or_else(|| cfg.out_dir.clone());
            let report = run_sweep(&cfg)?;
            for row in &report.rows {
                if let Some(f) = &row.failure {
                    eprintln!("eps = {}: {f}", row.eps);
                }
            }
            match dir {
                Some(d) => {
                    out_dir(&d)?;
                    emit_report(&report, format, &d)?;
                }
                None => match format {
                    Format::Csv => print!("{}", to_csv(&report)?),
                    Format::Json => println!("{}", to_json(&report)?),
                },
            }
            if !report.rows.is_empty() && report.rows.iter().all(|r| r.failure.is_some()) {
                return Err(Error::Solver("every ε of the sweep failed".into()));
            }
            Ok(())
        }
    })?
}
