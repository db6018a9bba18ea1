//! Command line front end: forward solves, optimal control solves, and
//! refinement studies, configured through a TOML file.
//!
//! Exit codes: 0 on success, 2 on configuration or validation errors, 3 on
//! solver failures.

use clap::{Args, Parser, Subcommand};
use heatbc::assembly::assemble;
use heatbc::config::Config;
use heatbc::control::{ControlBounds, ControlError, ControlProblem, SolveOptions};
use heatbc::io;
use heatbc::mesh::unit_square_mesh;
use heatbc::parabolic::{solve_state, BoundaryData, ProblemData};
use heatbc::study::{
    control_benchmark_target, manufactured_state_problem, run_control_convergence,
    run_state_convergence, Axis, ProblemId,
};
use heatbc::timegrid::TimeGrid;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "heatbc",
    version,
    about = "DG(0)-CG(1) heat equation and Dirichlet boundary control solver"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file
    #[arg(long, short)]
    config: PathBuf,
    /// Override output.dir from the config
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the state equation of a manufactured problem
    SolveState {
        #[command(flatten)]
        common: Common,
        /// Also write the mesh in plain-text form
        #[arg(long)]
        dump_mesh: bool,
    },
    /// Solve the boundary control benchmark problem
    SolveControl {
        #[command(flatten)]
        common: Common,
    },
    /// Run a refinement study
    Study {
        #[command(flatten)]
        common: Common,
        /// Override study.axis from the config (space, time or coupled)
        #[arg(long)]
        axis: Option<String>,
    },
}

enum CliError {
    /// config/validation problems -> exit 2
    Validation(String),
    /// solver failures -> exit 3
    Solver(String),
}

impl From<heatbc::config::ConfigError> for CliError {
    fn from(e: heatbc::config::ConfigError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Validation(format!("io: {e}"))
    }
}

impl From<heatbc::io::IoError> for CliError {
    fn from(e: heatbc::io::IoError) -> Self {
        CliError::Validation(e.to_string())
    }
}

fn output_dir(cfg: &Config, common: &Common) -> Result<PathBuf, CliError> {
    match &common.output {
        Some(dir) => Ok(dir.clone()),
        None => Ok(cfg.output_dir()?),
    }
}

fn solve_state_cmd(common: &Common, dump_mesh: bool) -> Result<(), CliError> {
    let cfg = Config::from_path(&common.config)?;
    let n = cfg.domain_n()?;
    let m = cfg.time_m()?;
    let t_final = cfg.time_horizon()?;
    let id = cfg.problem_id()?;
    let dir = output_dir(&cfg, common)?;

    let problem = match id {
        ProblemId::BoundaryControl => {
            return Err(CliError::Validation(
                "problem.id: solve-state needs a manufactured problem \
                 (smooth-inhomogeneous or rough-boundary)"
                    .into(),
            ))
        }
        other => {
            manufactured_state_problem(other).map_err(|e| CliError::Validation(e.to_string()))?
        }
    };

    let mesh = unit_square_mesh(n).map_err(|e| CliError::Validation(e.to_string()))?;
    let ops = assemble(&mesh).map_err(|e| CliError::Solver(e.to_string()))?;
    let grid = TimeGrid::uniform(m, t_final);

    let exact = |t: f64, x: f64, y: f64| problem.exact(t, x, y);
    let source = |t: f64, x: f64, y: f64| problem.source(t, x, y);
    let initial = |x: f64, y: f64| problem.initial(x, y);
    let data = ProblemData {
        source: Some(&source),
        initial: Some(&initial),
        boundary: BoundaryData::Function(&exact),
    };
    let y = solve_state(&data, &mesh, &grid, &ops).map_err(|e| CliError::Solver(e.to_string()))?;

    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("state.csv"), io::space_time_csv(&y, &grid))?;
    if dump_mesh {
        std::fs::write(dir.join("mesh.txt"), mesh.dump())?;
    }
    let error = heatbc::study::state_error_vs_exact(&mesh, &grid, &y, exact);
    let summary = serde_json::json!({
        "problem": id.to_string(),
        "n": n,
        "M": m,
        "T": t_final,
        "error_exact": error,
        "version": io::version_string(),
        "config": cfg.echo(),
    });
    std::fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).unwrap(),
    )?;
    println!("state solve written to {}", dir.display());
    Ok(())
}

fn solve_control_cmd(common: &Common) -> Result<(), CliError> {
    let cfg = Config::from_path(&common.config)?;
    let n = cfg.domain_n()?;
    let m = cfg.time_m()?;
    let t_final = cfg.time_horizon()?;
    let alpha = cfg.control_alpha()?;
    let bounds = cfg
        .control_bounds()?
        .map(|(a, b)| ControlBounds::new(a, b))
        .unwrap_or_else(ControlBounds::unconstrained);
    let dir = output_dir(&cfg, common)?;

    let mesh = unit_square_mesh(n).map_err(|e| CliError::Validation(e.to_string()))?;
    let ops = assemble(&mesh).map_err(|e| CliError::Solver(e.to_string()))?;
    let grid = TimeGrid::uniform(m, t_final);

    let problem = ControlProblem::new(
        &mesh,
        &grid,
        &ops,
        alpha,
        bounds,
        None,
        None,
        &control_benchmark_target,
    )
    .map_err(|e| CliError::Solver(e.to_string()))?;
    let opts = SolveOptions {
        tol: cfg.control.as_ref().and_then(|c| c.tol),
        max_iters: cfg
            .control
            .as_ref()
            .and_then(|c| c.max_iters)
            .unwrap_or(2000),
    };
    match problem.solve(&opts) {
        Ok(result) => {
            io::write_result(&dir, &result, &mesh, &grid, Some(&cfg.echo()))?;
            println!(
                "control solve converged: cost {:.6e}, residual {:.3e}, {} iterations",
                result.cost, result.residual, result.iterations
            );
            Ok(())
        }
        Err(ControlError::MaxIterations {
            best,
            iterations,
            residual,
            tol,
        }) => {
            // Persist the best iterate so the failure is inspectable.
            io::write_result(&dir, &best, &mesh, &grid, Some(&cfg.echo()))?;
            Err(CliError::Solver(format!(
                "no convergence in {iterations} iterations: best residual {residual:e} > tol {tol:e}"
            )))
        }
        Err(e) => Err(CliError::Solver(e.to_string())),
    }
}

fn study_cmd(common: &Common, axis: Option<String>) -> Result<(), CliError> {
    let cfg = Config::from_path(&common.config)?;
    let axis_override = match axis {
        Some(a) => Some(
            a.parse::<Axis>()
                .map_err(|e| CliError::Validation(format!("--axis: {e}")))?,
        ),
        None => None,
    };
    let spec = cfg.study_spec(axis_override)?;
    spec.validate()
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let dir = output_dir(&cfg, common)?;

    let report = if spec.problem == ProblemId::BoundaryControl {
        run_control_convergence(&spec)
    } else {
        run_state_convergence(&spec)
    }
    .map_err(|e| match e {
        heatbc::study::StudyError::UnknownProblem(_)
        | heatbc::study::StudyError::BadLevels(_)
        | heatbc::study::StudyError::Grid(_) => CliError::Validation(e.to_string()),
        other => CliError::Solver(other.to_string()),
    })?;

    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("study.csv"), report.csv())?;
    let mut summary = report.to_json();
    summary["config"] = cfg.echo();
    std::fs::write(
        dir.join("study.json"),
        serde_json::to_string_pretty(&summary).unwrap(),
    )?;
    print!("{}", report.csv());
    println!(
        "fitted order: {:.3}{}",
        report.fitted_order_state,
        report
            .fitted_order_control
            .map(|o| format!(" (state), {o:.3} (control)"))
            .unwrap_or_default()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::SolveState { common, dump_mesh } => solve_state_cmd(common, *dump_mesh),
        Command::SolveControl { common } => solve_control_cmd(common),
        Command::Study { common, axis } => study_cmd(common, axis.clone()),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Solver(msg)) => {
            eprintln!("solver error: {msg}");
            ExitCode::from(3)
        }
    }
}
