use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use afem_core::afem::{
    run_inexact_afem, AfemError, AfemRun, RunOptions, SolverKind, StopRule, StoppingConfig, Target,
};
use afem_core::problems::BenchmarkProblem;
use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

const CSV_HELP: &str = "\
Output files (comma separated, header row, 17 significant digits, empty cell = not available):
  trace.csv         level,k,res_norm,rho,rho_hat,du_norm_a,eta_a,eta_d,alg_error,total_error
  cycles.csv        level,dof,elements,eta_d,eta_a,stop_iter,stop_reason,error,rel_error,effectivity
  indicators_<m>.csv element,eta_d
  mesh_<m>.txt      ntri nvert / vertex lines / triangle lines / boundary flags
  compare.csv       mode,r,effectivity,cycles,dof,rel_error   (compare only)

Environment: AFEM_STOP_THREADS caps the number of worker threads.
Exit codes: 0 success, 2 usage error, 3 numerical failure.";

#[derive(Parser)]
#[command(name = "afem-stop", version, about = "Adaptive FEM with estimator-driven solver stopping", after_help = CSV_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one (inexact or exact) adaptive computation.
    #[command(after_help = CSV_HELP)]
    Run(RunArgs),
    /// Run inexact and exact AFEM on the same problem and compare them.
    #[command(after_help = CSV_HELP)]
    Compare(CompareArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum StopArg {
    Estimator,
    Relres,
}

#[derive(Args, Clone)]
struct Common {
    /// example1, example2 or kellogg
    #[arg(long)]
    problem: String,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    tol_rho: Option<f64>,
    /// Evaluate the stopping test every this many iterations.
    #[arg(long)]
    check_every: Option<usize>,
    /// Solve directly on levels with fewer free DoF than this.
    #[arg(long)]
    dof_exact: Option<usize>,
    /// Dörfler bulk fraction.
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    max_cycles: Option<usize>,
    #[arg(long)]
    max_iterations: Option<usize>,
    /// Stop refining at this relative energy error.
    #[arg(long)]
    target_rel_error: Option<f64>,
    /// Require the observed rate to have settled before stopping.
    #[arg(long)]
    rate_condition: Option<bool>,
    /// Also compute direct-solve references and report true errors per iteration.
    #[arg(long)]
    track_errors: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// mg-v11, sgs or direct
    #[arg(long)]
    solver: Option<String>,
    #[arg(long, value_enum, default_value_t = StopArg::Estimator)]
    stop: StopArg,
    /// Relative residual threshold for `--stop relres`.
    #[arg(long, default_value_t = 1e-7)]
    relres: f64,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: Common,
    /// Problem for the exact run; must equal --problem.
    #[arg(long)]
    exact_problem: Option<String>,
    /// Iterative solver for the inexact run.
    #[arg(long, default_value = "mg-v11")]
    solver: String,
    /// Levels below this DoF count are excluded from the comparison.
    #[arg(long, default_value_t = 320)]
    start_dof: usize,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Numerical(#[from] AfemError),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Numerical(AfemError::Config(_)) => 2,
            CliError::Usage(_) | CliError::Io { .. } => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> CliError + '_ {
    move |e| CliError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    }
}

/// Problem-specific defaults: the smooth examples are single-level solver
/// tests using only the first stopping condition, checked every iteration.
fn preset(problem: &str) -> Result<(BenchmarkProblem, StoppingConfig, SolverKind, Target), CliError> {
    let p = BenchmarkProblem::by_name(problem).map_err(|e| CliError::Usage(e.to_string()))?;
    let base = StoppingConfig::default();
    Ok(match problem {
        "kellogg" => (
            p,
            StoppingConfig {
                max_cycles: 60,
                ..base
            },
            SolverKind::MgV11,
            Target::RelativeError(0.01),
        ),
        _ => {
            let cfg = StoppingConfig {
                max_cycles: 1,
                check_every: 1,
                rate_condition: false,
                ..base
            };
            let solver = if problem == "example2" { SolverKind::Sgs } else { SolverKind::MgV11 };
            (p, cfg, solver, Target::None)
        }
    })
}

fn configure(c: &Common) -> Result<(BenchmarkProblem, StoppingConfig, SolverKind, Target), CliError> {
    let (p, mut cfg, solver, mut target) = preset(&c.problem)?;
    if let Some(v) = c.tol {
        cfg.tol = v;
    }
    if let Some(v) = c.tol_rho {
        cfg.tol_rho = v;
    }
    if let Some(v) = c.check_every {
        cfg.check_every = v;
    }
    if let Some(v) = c.dof_exact {
        cfg.exact_solve_dof_threshold = v;
    }
    if let Some(v) = c.theta {
        cfg.dorfler_theta = v;
    }
    if let Some(v) = c.max_cycles {
        cfg.max_cycles = v;
    }
    if let Some(v) = c.max_iterations {
        cfg.max_iterations_per_level = v;
    }
    if let Some(v) = c.rate_condition {
        cfg.rate_condition = v;
    }
    if let Some(v) = c.target_rel_error {
        if !(v > 0.0) {
            return Err(CliError::Usage("--target-rel-error must be positive".into()));
        }
        target = Target::RelativeError(v);
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok((p, cfg, solver, target))
}

fn parse_solver(s: &str) -> Result<SolverKind, CliError> {
    s.parse().map_err(CliError::Usage)
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt).unwrap_or_default()
}

fn write_run(run: &AfemRun, dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;

    let path = dir.join("trace.csv");
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    w.write_record([
        "level", "k", "res_norm", "rho", "rho_hat", "du_norm_a", "eta_a", "eta_d", "alg_error", "total_error",
    ])
    .map_err(csv_err(&path))?;
    for r in &run.trace {
        w.write_record([
            r.level.to_string(),
            r.k.to_string(),
            fmt(r.res_norm),
            opt(r.rho),
            opt(r.rho_hat),
            opt(r.du_norm_a),
            opt(r.eta_a),
            opt(r.eta_d),
            opt(r.alg_error),
            opt(r.total_error),
        ])
        .map_err(csv_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;

    let path = dir.join("cycles.csv");
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    w.write_record([
        "level", "dof", "elements", "eta_d", "eta_a", "stop_iter", "stop_reason", "error", "rel_error", "effectivity",
    ])
    .map_err(csv_err(&path))?;
    for c in &run.cycles {
        w.write_record([
            c.level.to_string(),
            c.dof.to_string(),
            c.elements.to_string(),
            fmt(c.eta_d),
            opt(c.eta_a),
            c.stop_iter.map(|k| k.to_string()).unwrap_or_default(),
            c.stop_reason.to_string(),
            opt(c.error),
            opt(c.rel_error),
            opt(c.effectivity),
        ])
        .map_err(csv_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;

    for (m, level) in run.levels.iter().enumerate() {
        let path = dir.join(format!("indicators_{m}.csv"));
        let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
        w.write_record(["element", "eta_d"]).map_err(csv_err(&path))?;
        for (t, eta) in level.indicators.iter().enumerate() {
            w.write_record([t.to_string(), fmt(*eta)]).map_err(csv_err(&path))?;
        }
        w.flush().map_err(io_err(&path))?;

        let path = dir.join(format!("mesh_{m}.txt"));
        let file = fs::File::create(&path).map_err(io_err(&path))?;
        let mut bw = BufWriter::new(file);
        level.mesh.write_text(&mut bw).map_err(io_err(&path))?;
        bw.flush().map_err(io_err(&path))?;
    }
    Ok(())
}

fn print_cycles(run: &AfemRun) {
    println!(
        "{:>5} {:>8} {:>12} {:>12} {:>6} {:>12} {:>10} {:>8} {:>9}",
        "m", "DoF", "eta_d", "eta_a", "k", "error", "rel", "eff", "time[s]"
    );
    for c in &run.cycles {
        let cell = |x: Option<f64>| x.map(|v| format!("{v:.4e}")).unwrap_or_else(|| "-".into());
        println!(
            "{:>5} {:>8} {:>12.4e} {:>12} {:>6} {:>12} {:>10} {:>8} {:>9.3}",
            c.level,
            c.dof,
            c.eta_d,
            cell(c.eta_a),
            c.stop_iter.map(|k| k.to_string()).unwrap_or_else(|| "-".into()),
            cell(c.error),
            cell(c.rel_error),
            c.effectivity.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into()),
            c.wall_time,
        );
    }
}

fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    let (problem, cfg, default_solver, target) = configure(&args.common)?;
    let solver = match &args.solver {
        Some(s) => parse_solver(s)?,
        None => default_solver,
    };
    let stop = match args.stop {
        StopArg::Estimator => StopRule::Estimator,
        StopArg::Relres => StopRule::RelativeResidual(args.relres),
    };
    let opts = RunOptions {
        solver,
        stop,
        target,
        seed: args.common.seed,
        track_errors: args.common.track_errors,
    };
    let run = run_inexact_afem(&problem, &cfg, &opts)?;
    write_run(&run, &args.common.out)?;
    println!("problem {}  solver {solver}  seed {}", problem.name, opts.seed);
    print_cycles(&run);
    Ok(())
}

struct Summary {
    rate: Option<f64>,
    effectivity: Option<f64>,
    cycles: usize,
    dof: usize,
    rel_error: Option<f64>,
}

fn summarize(run: &AfemRun, start_dof: usize) -> Summary {
    let first = run.cycles.iter().position(|c| c.dof >= start_dof).unwrap_or(0);
    let last = run.final_cycle();
    Summary {
        rate: run.convergence_rate_from(first).ok(),
        effectivity: last.effectivity,
        cycles: run.cycles.len() - first,
        dof: last.dof,
        rel_error: last.rel_error,
    }
}

fn cmd_compare(args: CompareArgs) -> Result<(), CliError> {
    if let Some(other) = &args.exact_problem {
        if other != &args.common.problem {
            return Err(CliError::Usage(format!(
                "compare needs the same problem for both runs, got `{}` and `{other}`",
                args.common.problem
            )));
        }
    }
    let (problem, cfg, _, target) = configure(&args.common)?;
    let inexact_solver = parse_solver(&args.solver)?;
    if inexact_solver == SolverKind::Direct {
        return Err(CliError::Usage("the inexact run needs an iterative solver".into()));
    }
    let out = &args.common.out;
    let mut rows = Vec::new();
    for (mode, solver) in [("inexact", inexact_solver), ("exact", SolverKind::Direct)] {
        let opts = RunOptions {
            solver,
            stop: StopRule::Estimator,
            target,
            seed: args.common.seed,
            track_errors: args.common.track_errors,
        };
        let run = run_inexact_afem(&problem, &cfg, &opts)?;
        write_run(&run, &out.join(mode))?;
        rows.push((mode, summarize(&run, args.start_dof)));
    }

    let path = out.join("compare.csv");
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    w.write_record(["mode", "r", "effectivity", "cycles", "dof", "rel_error"])
        .map_err(csv_err(&path))?;
    println!("{:>8} {:>8} {:>8} {:>6} {:>8} {:>10}", "mode", "r", "eff", "m", "DoF", "rel");
    for (mode, s) in &rows {
        w.write_record([
            mode.to_string(),
            opt(s.rate),
            opt(s.effectivity),
            s.cycles.to_string(),
            s.dof.to_string(),
            opt(s.rel_error),
        ])
        .map_err(csv_err(&path))?;
        let cell = |x: Option<f64>, p: usize| x.map(|v| format!("{v:.p$}")).unwrap_or_else(|| "-".into());
        println!(
            "{:>8} {:>8} {:>8} {:>6} {:>8} {:>10}",
            mode,
            cell(s.rate, 5),
            cell(s.effectivity, 4),
            s.cycles,
            s.dof,
            cell(s.rel_error, 6)
        );
    }
    w.flush().map_err(io_err(&path))?;
    Ok(())
}

fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("AFEM_STOP_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("AFEM_STOP_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_threads().and_then(|_| match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Compare(a) => cmd_compare(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
