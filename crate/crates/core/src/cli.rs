//! Command-line front end behind the `sqdp` binary.
//!
//! Exit codes: 0 success, 1 input or configuration error, 2 iteration cap or
//! node budget reached, 3 solver failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::bench::{read_grid, run_comparison, write_csv as write_bench_csv, BenchOptions};
use crate::error::{Error, Result};
use crate::io::{objective_from_str, read_instance, to_json_string};
use crate::model::Vector;
use crate::oracle::{solve_extensive, subtree_value, DEFAULT_NODE_BUDGET};
use crate::qcsc::{
    default_max_iter, run_algorithm, Algorithm, PiecewiseQuadratic, QcscRun, RunStatus,
};
use crate::sqdp::{run, CutMode, SolverConfig, TerminationStatus};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_CAP: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "sqdp",
    version,
    about = "Quadratic-cut decomposition and cutting-plane solvers"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Minimize a piecewise-quadratic objective with Kelley or QCSC.
    Qcsc(QcscArgs),
    /// Solve a multistage instance with SQDP or SDDP.
    Solve(SolveArgs),
    /// Evaluate the scenario-tree reference values of an instance.
    Oracle(OracleArgs),
    /// Run an SQDP-vs-SDDP benchmark grid.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct QcscArgs {
    /// `paper-1d` or the path of an objective JSON file.
    #[arg(long)]
    pub objective: String,
    /// Starting point, comma separated.
    #[arg(
        long,
        required = true,
        value_delimiter = ',',
        allow_negative_numbers = true
    )]
    pub x0: Vec<f64>,
    #[arg(long, default_value_t = 1e-3)]
    pub eps: f64,
    #[arg(long, default_value = "qcsc")]
    pub alg: Algorithm,
    /// Defaults to ten times the complexity bound when constants are known.
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Run JSON; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-iteration CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub ub_window: Option<usize>,
    #[arg(long)]
    pub forward_scenarios: Option<usize>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub cut_mode: Option<CutMode>,
    /// Value of every empty stage model.
    #[arg(long, allow_negative_numbers = true)]
    pub floor: Option<f64>,
    #[arg(long)]
    pub qp_tol: Option<f64>,
    /// Confidence multiplier added to the upper bound.
    #[arg(long)]
    pub z: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Write every stage QP into this directory.
    #[arg(long)]
    pub dump_qp: Option<PathBuf>,
    /// Report JSON; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-iteration CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long, default_value_t = DEFAULT_NODE_BUDGET)]
    pub max_nodes: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub query: OracleQuery,
}

#[derive(Debug, Subcommand)]
pub enum OracleQuery {
    /// Optimal value of the whole tree and the stage-1 decision.
    Extensive,
    /// Cost-to-go `Q_t(x)`.
    Subtree {
        #[arg(long)]
        t: usize,
        #[arg(
            long,
            required = true,
            value_delimiter = ',',
            allow_negative_numbers = true
        )]
        x: Vec<f64>,
    },
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// JSON list of benchmark parameter rows.
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub with_oracle: bool,
    #[arg(long, default_value_t = DEFAULT_NODE_BUDGET)]
    pub max_nodes: usize,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

/// Exit code for an error, looking through stage wrappers.
pub fn exit_code(err: &Error) -> i32 {
    match err.root() {
        Error::BudgetExceeded { .. } => EXIT_CAP,
        Error::NonConvergence { .. }
        | Error::Infeasible(_)
        | Error::Unbounded(_)
        | Error::Contract(_)
        | Error::Oracle(_) => EXIT_SOLVER,
        _ => EXIT_INPUT,
    }
}

fn provenance(argv: &[String]) -> Value {
    json!({
        "argv": argv,
        "version": env!("CARGO_PKG_VERSION"),
    })
}

fn with_provenance<T: Serialize>(value: &T, argv: &[String]) -> Result<Value> {
    let mut v = serde_json::to_value(value)?;
    match &mut v {
        Value::Object(map) => {
            map.insert("provenance".into(), provenance(argv));
        }
        _ => {
            v = json!({ "result": v, "provenance": provenance(argv) });
        }
    }
    Ok(v)
}

fn emit(value: &Value, out: Option<&Path>) -> Result<()> {
    let text = to_json_string(value)?;
    match out {
        Some(path) => fs::write(path, text + "\n")?,
        None => {
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "{text}")?;
        }
    }
    Ok(())
}

fn load_objective(spec: &str) -> Result<PiecewiseQuadratic> {
    if spec == "paper-1d" {
        return Ok(PiecewiseQuadratic::kinked_1d());
    }
    let text = fs::read_to_string(spec)
        .map_err(|e| Error::InvalidInput(format!("objective '{spec}': {e}")))?;
    objective_from_str(&text)
}

fn write_qcsc_csv(run: &QcscRun, path: &Path) -> Result<()> {
    let n = run.iterates.first().map_or(0, Vec::len);
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![
        "k".to_string(),
        "incumbent".into(),
        "model_value".into(),
        "gap".into(),
    ];
    header.extend((1..=n).map(|i| format!("x_{i}")));
    w.write_record(&header)?;
    for k in 0..run.iterations() {
        let mut rec = vec![
            (k + 1).to_string(),
            format!("{:.16e}", run.incumbent_values[k]),
            format!("{:.16e}", run.model_values[k]),
            format!("{:.16e}", run.gaps[k]),
        ];
        rec.extend(run.iterates[k + 1].iter().map(|v| format!("{v:.16e}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_qcsc(args: &QcscArgs, argv: &[String]) -> Result<i32> {
    let objective = load_objective(&args.objective)?;
    let x0 = Vector::from_column_slice(&args.x0);
    if !(args.eps > 0.0) {
        return Err(Error::InvalidInput(format!(
            "--eps must be positive, got {}",
            args.eps
        )));
    }
    let max_iter = args
        .max_iter
        .unwrap_or_else(|| default_max_iter(&objective, args.eps));
    let run = run_algorithm(args.alg, &objective, &x0, args.eps, max_iter)?;
    emit(&with_provenance(&run, argv)?, args.out.as_deref())?;
    if let Some(path) = &args.csv {
        write_qcsc_csv(&run, path)?;
    }
    Ok(match run.status {
        RunStatus::Converged => EXIT_OK,
        RunStatus::IterationLimit => EXIT_CAP,
    })
}

fn solve_config(args: &SolveArgs) -> SolverConfig {
    let mut c = SolverConfig::default();
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {
            $(if let Some(v) = args.$flag.clone() { c.$field = v; })*
        };
    }
    set!(eps => eps, ub_window => ub_window, forward_scenarios => forward_scenarios_per_iter,
         max_iter => max_iter, seed => seed, cut_mode => cut_mode, floor => floor,
         qp_tol => qp_tol, z => z);
    c.jobs = args.jobs;
    c.dump_qp_dir = args.dump_qp.clone();
    c
}

fn cmd_solve(args: &SolveArgs, argv: &[String]) -> Result<i32> {
    let instance = read_instance(&args.instance)?;
    let config = solve_config(args);
    config.validate()?;
    if let Some(dir) = &config.dump_qp_dir {
        fs::create_dir_all(dir)?;
    }
    let report = run(&instance, &config)?;
    emit(&with_provenance(&report, argv)?, args.out.as_deref())?;
    if let Some(path) = &args.csv {
        report.write_csv(fs::File::create(path)?)?;
    }
    Ok(match report.status {
        TerminationStatus::Converged => EXIT_OK,
        TerminationStatus::IterationLimit => EXIT_CAP,
    })
}

fn cmd_oracle(args: &OracleArgs, argv: &[String]) -> Result<i32> {
    let instance = read_instance(&args.instance)?;
    let out = match &args.query {
        OracleQuery::Extensive => {
            let sol = solve_extensive(&instance, 1, instance.x0(), args.max_nodes)?;
            json!({
                "value": sol.value,
                "root_decision": sol.root_decision().as_slice(),
                "nodes": sol.tree.len(),
            })
        }
        OracleQuery::Subtree { t, x } => {
            let xv = Vector::from_column_slice(x);
            let value = subtree_value(&instance, *t, &xv, args.max_nodes)?;
            json!({ "t": t, "x": x, "value": value })
        }
    };
    emit(&with_provenance(&out, argv)?, args.out.as_deref())?;
    Ok(EXIT_OK)
}

fn cmd_bench(args: &BenchArgs, argv: &[String]) -> Result<i32> {
    let grid = read_grid(&args.grid)?;
    fs::create_dir_all(&args.out_dir).map_err(|e| {
        Error::InvalidInput(format!("output directory {}: {e}", args.out_dir.display()))
    })?;
    let opts = BenchOptions {
        with_oracle: args.with_oracle,
        node_budget: Some(args.max_nodes),
        instance_dir: Some(args.out_dir.join("instances")),
        jobs: args.jobs,
    };
    let rows = run_comparison(&grid, &opts)?;
    write_bench_csv(&rows, fs::File::create(args.out_dir.join("results.csv"))?)?;
    let report = json!({ "grid": grid, "rows": rows });
    emit(
        &with_provenance(&report, argv)?,
        Some(&args.out_dir.join("report.json")),
    )?;
    Ok(if rows.iter().any(|r| r.error.is_some()) {
        EXIT_SOLVER
    } else if rows.iter().any(|r| !r.converged) {
        EXIT_CAP
    } else {
        EXIT_OK
    })
}

pub fn execute(cli: &Cli, argv: &[String]) -> Result<i32> {
    match &cli.command {
        Command::Qcsc(a) => cmd_qcsc(a, argv),
        Command::Solve(a) => cmd_solve(a, argv),
        Command::Oracle(a) => cmd_oracle(a, argv),
        Command::Bench(a) => cmd_bench(a, argv),
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code. Messages go to stderr.
pub fn main_with_args(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli, &argv) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
