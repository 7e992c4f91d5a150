//! Command line front end: benchmark and config-file runs with CSV, mesh,
//! and indicator emissions.

use crate::adapt::{adaptive_solve, AdaptOptions, ConvergenceRecord, EstimatorKind, StopReason};
use crate::estimator::write_indicator_csv;
use crate::fem::{error_representation, ErrorComparison, SolveStrategy};
use crate::mesh::write_mesh;
use crate::problems::{from_file, kellogg_problem, lshape_problem, ProblemSpec};

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "crafem", version, about = "Adaptive Crouzeix-Raviart solver for interface problems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Run the adaptive loop and write convergence artifacts.
    Run(RunArgs),
    /// Print the resolved problem and settings without solving.
    Describe(DescribeArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimatorArg {
    Standard,
    Modified,
    Tangential,
}

impl From<EstimatorArg> for EstimatorKind {
    fn from(e: EstimatorArg) -> Self {
        match e {
            EstimatorArg::Standard => EstimatorKind::Standard,
            EstimatorArg::Modified => EstimatorKind::Modified,
            EstimatorArg::Tangential => EstimatorKind::Tangential,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EmitArg {
    Csv,
    Mesh,
    Indicators,
    Plotdata,
}

#[derive(Args)]
pub struct RunArgs {
    /// kellogg, lshape, or file:<path> to a problem description.
    #[arg(long)]
    pub problem: String,
    #[arg(long, value_enum, default_value = "standard")]
    pub estimator: EstimatorArg,
    /// Bulk marking fraction, in (0, 1].
    #[arg(long, default_value_t = 0.2)]
    pub theta: f64,
    /// Target relative error.
    #[arg(long, default_value_t = 0.1)]
    pub tol: f64,
    #[arg(long = "max-steps", default_value_t = 400)]
    pub max_steps: usize,
    /// Output directory for emitted files.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Comma separated list of artifacts to write.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "csv")]
    pub emit: Vec<EmitArg>,
    /// Grading depth for quadrature near singular points.
    #[arg(long = "quad-grading", default_value_t = crate::fem::DEFAULT_GRADING)]
    pub quad_grading: u32,
    /// Zero the comparison interpolant on Dirichlet edges in the final
    /// error-representation diagnostic.
    #[arg(long = "dirichlet-zero-clement")]
    pub dirichlet_zero_clement: bool,
}

#[derive(Args)]
pub struct DescribeArgs {
    /// kellogg, lshape, or file:<path> to a problem description.
    #[arg(long)]
    pub problem: String,
    #[arg(long, value_enum, default_value = "standard")]
    pub estimator: EstimatorArg,
    #[arg(long, default_value_t = 0.2)]
    pub theta: f64,
    #[arg(long, default_value_t = 0.1)]
    pub tol: f64,
}

pub fn resolve_problem(name: &str) -> Result<ProblemSpec, String> {
    match name {
        "kellogg" => Ok(kellogg_problem()),
        "lshape" => Ok(lshape_problem()),
        other => {
            let path = other.strip_prefix("file:").unwrap_or(other);
            let path = Path::new(path);
            if !path.exists() {
                return Err(format!("unknown problem {other:?} (not kellogg, lshape, or a readable file)"));
            }
            from_file(path).map_err(|e| format!("failed to load {}: {e}", path.display()))
        }
    }
}

fn estimator_name(e: EstimatorArg) -> &'static str {
    match e {
        EstimatorArg::Standard => "standard",
        EstimatorArg::Modified => "modified",
        EstimatorArg::Tangential => "tangential",
    }
}

/// 17 significant digits, round-trip safe.
fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(v) => fmt(v),
        None => "nan".to_string(),
    }
}

pub const CSV_HEADER: &str =
    "step,elements,dofs,true_error,rel_err,eta,eta_tilde,eff_eta,eff_eta_tilde,marked";

fn csv_row(r: &ConvergenceRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{}",
        r.step,
        r.elements,
        r.dofs,
        fmt_opt(r.true_error),
        fmt_opt(r.rel_err),
        fmt(r.eta),
        fmt(r.eta_tilde),
        fmt_opt(r.eff_eta),
        fmt_opt(r.eff_eta_tilde),
        r.marked
    )
}

pub fn describe(args: &DescribeArgs) -> Result<String, String> {
    let spec = resolve_problem(&args.problem)?;
    let mut s = spec.describe();
    s.push_str(&format!(
        "estimator: {}\ntheta: {}\ntol: {}\n",
        estimator_name(args.estimator),
        args.theta,
        args.tol
    ));
    Ok(s)
}

pub fn run(args: &RunArgs) -> i32 {
    match try_run(args) {
        Ok(StopReason::Converged) => 0,
        Ok(StopReason::MaxSteps) => 2,
        Err(msg) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

fn try_run(args: &RunArgs) -> Result<StopReason, String> {
    if !(args.theta > 0.0 && args.theta <= 1.0) {
        return Err("theta out of range (expected 0 < theta <= 1)".to_string());
    }
    if !(args.tol > 0.0) {
        return Err("tol must be positive".to_string());
    }
    let spec = resolve_problem(&args.problem)?;
    fs::create_dir_all(&args.out)
        .map_err(|e| format!("cannot create output directory {}: {e}", args.out.display()))?;

    let emit = |what: EmitArg| args.emit.contains(&what);
    let opts = AdaptOptions {
        estimator: args.estimator.into(),
        theta: args.theta,
        tol: args.tol,
        max_steps: args.max_steps,
        grading: args.quad_grading,
        solver_tol: 1e-10,
        strategy: SolveStrategy::Auto,
    };

    let csv_path = args.out.join("convergence.csv");
    let mut csv = BufWriter::new(
        File::create(&csv_path).map_err(|e| format!("cannot write {}: {e}", csv_path.display()))?,
    );
    writeln!(csv, "{CSV_HEADER}").map_err(|e| e.to_string())?;

    let mut io_err: Option<String> = None;
    let mut steps_done = 0usize;
    let outcome = adaptive_solve(&spec, &opts, |r, mesh, report| {
        steps_done = r.step;
        let mut step_io = || -> std::io::Result<()> {
            writeln!(csv, "{}", csv_row(r))?;
            csv.flush()?;
            if emit(EmitArg::Mesh) {
                fs::write(args.out.join(format!("mesh_{}.txt", r.step)), write_mesh(mesh))?;
            }
            if emit(EmitArg::Indicators) {
                let f = File::create(args.out.join(format!("indicators_{}.csv", r.step)))?;
                let mut w = BufWriter::new(f);
                write_indicator_csv(&mut w, mesh, report)?;
                w.flush()?;
            }
            Ok(())
        };
        if io_err.is_none() {
            if let Err(e) = step_io() {
                io_err = Some(e.to_string());
            }
        }
        println!(
            "step {:3}: elements {:7}, dofs {:7}, eta {:.6e}, eta_tilde {:.6e}{}, marked {}",
            r.step,
            r.elements,
            r.dofs,
            r.eta,
            r.eta_tilde,
            match r.rel_err {
                Some(e) => format!(", rel_err {e:.6e}"),
                None => String::new(),
            },
            r.marked
        );
    })
    .map_err(|e| format!("solver failed at step {steps_done}: {e}"))?;
    if let Some(e) = io_err {
        return Err(format!("writing artifacts failed: {e}"));
    }

    if emit(EmitArg::Plotdata) {
        let path = args.out.join("plot_loglog.csv");
        let mut w = BufWriter::new(
            File::create(&path).map_err(|e| format!("cannot write {}: {e}", path.display()))?,
        );
        let mut plot_io = || -> std::io::Result<()> {
            writeln!(w, "log10_dofs,log10_true_error,log10_eta,log10_eta_tilde")?;
            for r in &outcome.records {
                writeln!(
                    w,
                    "{},{},{},{}",
                    fmt((r.dofs as f64).log10()),
                    fmt_opt(r.true_error.map(f64::log10)),
                    fmt(r.eta.log10()),
                    fmt(r.eta_tilde.log10())
                )?;
            }
            w.flush()
        };
        plot_io().map_err(|e| format!("writing plot data failed: {e}"))?;
    }

    if spec.exact.is_some() {
        let comparison = ErrorComparison::Clement {
            dirichlet_zero: args.dirichlet_zero_clement,
        };
        match error_representation(&outcome.mesh, &spec, &outcome.solution, comparison, opts.grading)
        {
            Ok(parts) => println!(
                "error representation on final mesh: energy^2 {:.6e}, rhs {:.6e}, gap {:.2e}",
                parts.energy_sq,
                parts.rhs(),
                (parts.energy_sq - parts.rhs()).abs() / parts.energy_sq.max(f64::MIN_POSITIVE)
            ),
            Err(e) => eprintln!("error representation diagnostic failed: {e}"),
        }
    }

    let last = outcome.records.last().expect("at least one record");
    match outcome.reason {
        StopReason::Converged => println!(
            "converged after {} steps: {} elements, {} dofs",
            last.step, last.elements, last.dofs
        ),
        StopReason::MaxSteps => println!(
            "stopped at max steps ({}): {} elements, {} dofs",
            last.step, last.elements, last.dofs
        ),
    }
    Ok(outcome.reason)
}

/// Parse arguments and dispatch; returns the process exit code.
pub fn main_entry() -> i32 {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => run(&args),
        Command::Describe(args) => match describe(&args) {
            Ok(text) => {
                print!("{text}");
                0
            }
            Err(msg) => {
                eprintln!("error: {msg}");
                1
            }
        },
    }
}
