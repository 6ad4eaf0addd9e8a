//! `homlab` — command line front end for the homogenization laboratory.
//!
//! Verbs: `cell` (correctors + homogenized tensors), `solve` (one Neumann
//! solve), `sweep` (convergence study), `validate` (coefficient checks).
//! Exit codes: 0 success, 1 validation failure, 2 solver failure, 3 I/O.

use clap::{Args, Parser, Subcommand};
use homlab_core::cell::build_corrector_set;
use homlab_core::config::build_volume_data;
use homlab_core::fields::validate_coefficients;
use homlab_core::harness::{dump_grid_csv, emit_report, run_convergence_sweep};
use homlab_core::solver::solve_oscillating;
use homlab_core::{HomlabError, ProblemData, SweepConfig};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "homlab", version, about = "Periodic homogenization laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// JSON sweep configuration (periodic_fields format)
    #[arg(long)]
    config: PathBuf,
    /// override the config's eps list (comma separated, descending)
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    /// override cells-per-eps factor q (grid n = q / eps)
    #[arg(long)]
    cells_per_eps: Option<usize>,
    /// override the phi strategy: single | double | steklov
    #[arg(long)]
    phi: Option<String>,
    /// output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// report formats (comma separated subset of csv,json,svg)
    #[arg(long, value_delimiter = ',')]
    format: Option<Vec<String>>,
    /// concurrent eps rows
    #[arg(long)]
    workers: Option<usize>,
    /// per-iteration solver logs on standard error
    #[arg(long)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the cell correctors and print the homogenized tensors
    Cell(CommonArgs),
    /// One oscillating Neumann solve at the first (or only) eps
    Solve(CommonArgs),
    /// Full convergence sweep with rate fits and reports
    Sweep(CommonArgs),
    /// Validate the coefficient set against the structural assumptions
    Validate(CommonArgs),
}

fn load_config(args: &CommonArgs) -> Result<SweepConfig, HomlabError> {
    let mut cfg = SweepConfig::from_path(&args.config)?;
    if let Some(eps) = &args.eps {
        cfg.eps = eps.clone();
    }
    if let Some(q) = args.cells_per_eps {
        cfg.cells_per_eps = q;
    }
    if let Some(phi) = &args.phi {
        cfg.phi = phi.clone();
    }
    if let Some(out) = &args.out {
        cfg.out_dir = Some(out.display().to_string());
    }
    if let Some(formats) = &args.format {
        cfg.formats = formats.clone();
    }
    if let Some(workers) = args.workers {
        cfg.workers = workers;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_cell(args: &CommonArgs) -> Result<(), HomlabError> {
    let cfg = load_config(args)?;
    let cs = cfg.coeff.build()?;
    let (correctors, hom) = build_corrector_set(&cs, cfg.cell_tol)?;
    let max_resid = correctors
        .residual_norms
        .iter()
        .fold(0.0f64, |acc, &r| acc.max(r));
    eprintln!(
        "cell: {} correctors solved, max residual {max_resid:.3e}",
        correctors.chi.len()
    );
    let text = serde_json::to_string_pretty(&hom)?;
    println!("{text}");
    if let Some(dir) = &cfg.out_dir {
        let dir = Path::new(dir);
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("homogenized.json"), text)?;
    }
    Ok(())
}

fn run_solve(args: &CommonArgs) -> Result<(), HomlabError> {
    let cfg = load_config(args)?;
    let cs = cfg.coeff.build()?;
    let eps = cfg.eps[0];
    let n = cfg.grid_n(eps)?;
    let big_f = build_volume_data(&cfg.data, cs.d, n, cs.m)?;
    let data = ProblemData {
        big_f: Some(big_f),
        ..Default::default()
    };
    let res = solve_oscillating(&cs, eps, &data, n, false, cfg.solve_tol, args.verbose)?;
    let compat = res
        .compatibility_residual
        .iter()
        .fold(0.0f64, |acc, &v| acc.max(v.abs()));
    println!(
        "solve: eps = {eps}, n = {n}, iterations = {}, residual = {:.3e}, compat = {compat:.3e}",
        res.iterations, res.relative_residual
    );
    if let Some(dir) = &cfg.out_dir {
        let dir = Path::new(dir);
        std::fs::create_dir_all(dir)?;
        dump_grid_csv(&dir.join("u_eps.csv"), &res.u)?;
    }
    Ok(())
}

fn run_sweep(args: &CommonArgs) -> Result<(), HomlabError> {
    let cfg = load_config(args)?;
    let report = run_convergence_sweep(&cfg, args.verbose)?;
    if let Some(slopes) = &report.slopes {
        println!(
            "sweep: {} rows, slopes l2_diff = {:.3}, h1_w = {:.3}, l2_w = {:.3}",
            report.rows.len(),
            slopes.l2_diff.slope,
            slopes.h1_w.slope,
            slopes.l2_w.slope
        );
    } else {
        println!("sweep: {} rows, too few for rate fits", report.rows.len());
    }
    for failure in &report.failures {
        eprintln!("sweep: row failed: {failure}");
    }
    if let Some(dir) = &cfg.out_dir {
        let written = emit_report(&report, Path::new(dir))?;
        for path in written {
            println!("wrote {}", path.display());
        }
    } else {
        println!("{}", serde_json::to_string_pretty(&report)?);
    }
    if report.partial {
        return Err(HomlabError::SolverStagnation {
            residual: f64::NAN,
            iterations: 0,
        });
    }
    Ok(())
}

fn run_validate(args: &CommonArgs) -> Result<(), HomlabError> {
    let cfg = load_config(args)?;
    let cs = cfg.coeff.build()?;
    let report = validate_coefficients(&cs);
    println!("{}", serde_json::to_string_pretty(&report)?);
    if !report.ok {
        return Err(HomlabError::CoefficientInvalid(
            "structural assumptions violated; see margins above".into(),
        ));
    }
    Ok(())
}

fn exit_code_for(err: &HomlabError) -> u8 {
    match err {
        HomlabError::Io(_) => 3,
        HomlabError::SolverStagnation { .. }
        | HomlabError::CellNoConvergence { .. }
        | HomlabError::CoercivityFailure { .. }
        | HomlabError::NonzeroMean { .. }
        | HomlabError::CompatibilityDefect(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Cell(args) => run_cell(args),
        Command::Solve(args) => run_solve(args),
        Command::Sweep(args) => run_sweep(args),
        Command::Validate(args) => run_validate(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("homlab: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
