//! Command-line front end: load a MATPOWER case, partition it, solve it
//! centrally or with the distributed consensus algorithm, and check
//! derivatives.
//!
//! Exit codes: 0 success, 2 iteration limit reached, 3 solver failure,
//! 4 bad input or configuration.

pub mod trace;

use std::ffi::OsString;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use radial_opf::acopf::{build_centralized, build_region, gap, shared_quantities, ConsensusEntry,
    ConsensusParams, OpfProblem};
use radial_opf::dica::{self, ConsensusState, DicaError, DicaParams, DicaStatus};
use radial_opf::matpower::{load_case, CaseError};
use radial_opf::network::Network;
use radial_opf::nlp::{
    check_derivatives, ExternalSolver, InteriorPoint, NlpSolver, SolveOptions, SolveStatus,
    StartPoint,
};
use radial_opf::partition::{
    radial_partition, region_closures, verify_radial, Graph, Partition, PartitionError, StartRule,
};

pub use trace::{write_trace, write_trace_to, TraceError, TRACE_HEADER};

pub const EXIT_OK: i32 = 0;
pub const EXIT_MAX_ITER: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_CONFIG: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Solver(String),
    #[error(transparent)]
    Case(#[from] CaseError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Solver(_) => EXIT_SOLVER,
            _ => EXIT_CONFIG,
        }
    }
}

impl From<DicaError> for CliError {
    fn from(e: DicaError) -> Self {
        match e {
            DicaError::SubproblemFailure { .. } | DicaError::Acopf(_) => {
                CliError::Solver(e.to_string())
            }
            DicaError::Partition(p) => CliError::Partition(p),
            other => CliError::Config(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "radial-opf", version, about = "Radial partitioning and distributed AC-OPF")]
pub struct RunConfig {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the centralized OPF.
    Solve(SolveArgs),
    /// Print a radial partition as JSON.
    Partition(PartitionArgs),
    /// Run the distributed consensus algorithm.
    Dica(DicaArgs),
    /// Compare analytic derivatives with finite differences.
    Check(CheckArgs),
    /// Act as an external solver over stdin/stdout.
    #[command(hide = true)]
    ServeSolver,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SolverChoice {
    Builtin,
    External(String),
}

impl SolverChoice {
    fn solver(&self) -> Box<dyn NlpSolver> {
        match self {
            SolverChoice::Builtin => Box::new(InteriorPoint),
            SolverChoice::External(cmd) => {
                Box::new(ExternalSolver::from_command_line(cmd).expect("validated at parse time"))
            }
        }
    }
}

fn parse_solver(s: &str) -> Result<SolverChoice, String> {
    match s.split_once(':') {
        None if s == "builtin" => Ok(SolverChoice::Builtin),
        Some(("external", cmd)) if !cmd.trim().is_empty() => {
            Ok(SolverChoice::External(cmd.to_string()))
        }
        _ => Err(format!("expected `builtin` or `external:<cmd>`, got `{s}`")),
    }
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// MATPOWER case file.
    #[arg(long)]
    pub case: PathBuf,
    /// `builtin` or `external:<cmd>`.
    #[arg(long, default_value = "builtin", value_parser = parse_solver)]
    pub solver: SolverChoice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StartRuleArg {
    Lowest,
    Random,
}

#[derive(Debug, Args)]
pub struct PartitionOpts {
    /// Start node rule; `--seed` alone implies `random`.
    #[arg(long, value_enum)]
    pub start_rule: Option<StartRuleArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Use the regions in this JSON file instead of partitioning.
    #[arg(long)]
    pub partition_file: Option<PathBuf>,
}

impl PartitionOpts {
    fn rule(&self) -> StartRule {
        match (self.start_rule, self.seed) {
            (Some(StartRuleArg::Lowest), _) | (None, None) => StartRule::Lowest,
            (_, seed) => StartRule::Random {
                seed: seed.unwrap_or(0),
            },
        }
    }

    fn partition(&self, net: &Network) -> Result<Partition, CliError> {
        match &self.partition_file {
            Some(path) => Ok(Partition::from_json(&read(path)?, net)?),
            None => Ok(radial_partition(&Graph::from_network(net), self.rule())?),
        }
    }
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Also print the solver iteration count.
    #[arg(long)]
    pub report_iters: bool,
    /// Write the solution as JSON.
    #[arg(long)]
    pub solution: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PartitionArgs {
    #[arg(long)]
    pub case: PathBuf,
    #[arg(long, value_enum)]
    pub start_rule: Option<StartRuleArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write the JSON here instead of stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DicaArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub partition: PartitionOpts,
    #[arg(long, allow_negative_numbers = true)]
    pub rho: f64,
    #[arg(long, default_value_t = 1e-4, allow_negative_numbers = true)]
    pub eps: f64,
    #[arg(long, default_value_t = 2000)]
    pub max_iter: usize,
    /// Per-iteration CSV trace.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Centralized objective for the GAP.
    #[arg(long, conflicts_with = "reference")]
    pub reference_obj: Option<f64>,
    /// Solve the centralized problem to obtain the GAP reference.
    #[arg(long)]
    pub reference: bool,
    /// Solve regions one after another.
    #[arg(long)]
    pub sequential: bool,
    /// Start every region solve from the flat start.
    #[arg(long)]
    pub cold_start: bool,
    /// Resume from a consensus state snapshot.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Write the final consensus state snapshot.
    #[arg(long)]
    pub state_out: Option<PathBuf>,
    /// Write the stitched solution as JSON.
    #[arg(long)]
    pub solution: Option<PathBuf>,
}

impl DicaArgs {
    fn params(&self) -> Result<DicaParams, CliError> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(CliError::Config(format!("--rho must be positive, got {}", self.rho)));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(CliError::Config(format!("--eps must be positive, got {}", self.eps)));
        }
        if self.max_iter == 0 {
            return Err(CliError::Config("--max-iter must be at least 1".into()));
        }
        let mut p = DicaParams::new(self.rho)?;
        p.eps = self.eps;
        p.max_iter = self.max_iter;
        p.parallel = !self.sequential;
        p.warm_start = !self.cold_start;
        Ok(p)
    }
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long)]
    pub case: PathBuf,
    #[command(flatten)]
    pub partition: PartitionOpts,
    /// Random interior points in addition to the flat start.
    #[arg(long, default_value_t = 5)]
    pub points: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,
    /// Seed for the random points.
    #[arg(long, default_value_t = 0)]
    pub point_seed: u64,
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let config = match RunConfig::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(err, "{text}")
            } else {
                write!(out, "{text}")
            };
            return code;
        }
    };
    match execute(&config, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(config: &RunConfig, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, CliError> {
    match &config.command {
        Command::Solve(a) => solve(a, out),
        Command::Partition(a) => partition(a, out, err),
        Command::Dica(a) => run_dica(a, out),
        Command::Check(a) => check(a, out),
        Command::ServeSolver => {
            let input = BufReader::new(std::io::stdin());
            radial_opf::nlp::external::serve(input, std::io::stdout(), &InteriorPoint)
                .map_err(|e| CliError::Solver(e.to_string()))?;
            Ok(EXIT_OK)
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn emit(out: &mut dyn Write, line: std::fmt::Arguments) -> Result<(), CliError> {
    writeln!(out, "{line}").map_err(|source| CliError::Io {
        path: PathBuf::from("<stdout>"),
        source,
    })
}

fn status_name(s: SolveStatus) -> &'static str {
    match s {
        SolveStatus::Optimal => "optimal",
        SolveStatus::Acceptable => "acceptable",
        SolveStatus::MaxIter => "max_iter",
        SolveStatus::Infeasible => "infeasible",
        SolveStatus::NumericalFailure => "numerical_failure",
    }
}

struct Centralized {
    objective: f64,
    status: SolveStatus,
    iterations: usize,
    x: Vec<f64>,
}

fn solve_centralized(net: &Network, solver: &dyn NlpSolver) -> Result<Centralized, CliError> {
    let problem = build_centralized(net);
    let r = solver
        .solve(&problem, &StartPoint::cold(problem.flat_start()), &SolveOptions::default())
        .map_err(|e| CliError::Solver(e.to_string()))?;
    Ok(Centralized {
        objective: problem.generation_cost(&r.x),
        status: r.status,
        iterations: r.iterations,
        x: r.x,
    })
}

#[derive(Serialize)]
struct BusSolution {
    bus: usize,
    vm: f64,
    va_deg: f64,
}

#[derive(Serialize)]
struct GenSolution {
    bus: usize,
    pg_mw: f64,
    qg_mvar: f64,
}

#[derive(Serialize)]
struct SolutionFile<'a> {
    status: &'a str,
    objective: f64,
    buses: Vec<BusSolution>,
    generators: Vec<GenSolution>,
}

fn solution_json(net: &Network, problem: &OpfProblem, x: &[f64], status: &str, objective: f64) -> String {
    let l = problem.layout();
    let buses = net
        .buses
        .iter()
        .map(|b| BusSolution {
            bus: b.id,
            vm: x[l.v(b.index).unwrap()],
            va_deg: x[l.theta(b.index).unwrap()].to_degrees(),
        })
        .collect();
    let generators = net
        .generators
        .iter()
        .enumerate()
        .map(|(g, gen)| GenSolution {
            bus: net.buses[gen.bus].id,
            pg_mw: x[l.pg(g).unwrap()] * net.base_mva,
            qg_mvar: x[l.qg(g).unwrap()] * net.base_mva,
        })
        .collect();
    serde_json::to_string_pretty(&SolutionFile {
        status,
        objective,
        buses,
        generators,
    })
    .expect("solution serializes")
}

fn solve(a: &SolveArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let net = load_case(&a.common.case)?;
    let solver = a.common.solver.solver();
    let c = solve_centralized(&net, solver.as_ref())?;
    let mut line = format!("status={} objective={:.6}", status_name(c.status), c.objective);
    if a.report_iters {
        line.push_str(&format!(" iterations={}", c.iterations));
    }
    emit(out, format_args!("{line}"))?;
    if let Some(path) = &a.solution {
        let problem = build_centralized(&net);
        write_file(path, &solution_json(&net, &problem, &c.x, status_name(c.status), c.objective))?;
    }
    Ok(match c.status {
        s if s.is_success() => EXIT_OK,
        SolveStatus::MaxIter => EXIT_MAX_ITER,
        _ => EXIT_SOLVER,
    })
}

fn partition(a: &PartitionArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, CliError> {
    let net = load_case(&a.case)?;
    let opts = PartitionOpts {
        start_rule: a.start_rule,
        seed: a.seed,
        partition_file: None,
    };
    let graph = Graph::from_network(&net);
    let p = opts.partition(&net)?;
    let report = verify_radial(&graph, &p);
    let json = p.to_json(&net);
    match &a.output {
        Some(path) => write_file(path, &json)?,
        None => emit(out, format_args!("{json}"))?,
    }
    let _ = writeln!(
        err,
        "regions={} radial={}",
        p.num_regions(),
        if report.is_radial() { "yes" } else { "no" }
    );
    Ok(EXIT_OK)
}

fn run_dica(a: &DicaArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let params = a.params()?;
    let net = load_case(&a.common.case)?;
    let p = a.partition.partition(&net)?;
    let resume = match &a.resume {
        Some(path) => Some(ConsensusState::from_json(&read(path)?).map_err(CliError::from)?),
        None => None,
    };
    let solver = a.common.solver.solver();
    let reference = match (a.reference_obj, a.reference) {
        (Some(v), _) => Some(v),
        (None, true) => Some(solve_centralized(&net, solver.as_ref())?.objective),
        (None, false) => None,
    };
    let outcome = dica::run_with(&net, &p, &params, solver.as_ref(), resume, &mut ())?;

    if let Some(path) = &a.trace {
        write_trace(&outcome.trace, path)?;
    }
    if let Some(path) = &a.state_out {
        write_file(path, &outcome.state.to_json())?;
    }
    let status = match outcome.status {
        DicaStatus::Converged => "converged",
        DicaStatus::MaxIter => "max_iter",
    };
    if let Some(path) = &a.solution {
        let problem = build_centralized(&net);
        write_file(path, &solution_json(&net, &problem, &outcome.solution, status, outcome.objective))?;
    }
    let mut line = format!(
        "status={status} iterations={} objective={:.6} regions={} mean_subproblem_iters={:.2}",
        outcome.iterations(),
        outcome.objective,
        p.num_regions(),
        outcome.mean_solver_iterations()
    );
    if let Some(r) = reference {
        match gap(outcome.objective, r) {
            Ok(g) => line.push_str(&format!(" reference={r:.6} gap={g:.3e}")),
            Err(e) => line.push_str(&format!(" gap=undefined ({e})")),
        }
    }
    emit(out, format_args!("{line}"))?;
    Ok(match outcome.status {
        DicaStatus::Converged => EXIT_OK,
        DicaStatus::MaxIter => EXIT_MAX_ITER,
    })
}

fn check(a: &CheckArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    if !(a.step > 0.0) {
        return Err(CliError::Config(format!("--step must be positive, got {}", a.step)));
    }
    let net = load_case(&a.case)?;
    let p = a.partition.partition(&net)?;
    let (closures, map) = region_closures(&net, &p)?;
    let mut problems: Vec<(String, OpfProblem)> = vec![("centralized".into(), build_centralized(&net))];
    for c in &closures {
        // Nonzero β and y so the penalty terms are exercised too.
        let entries = shared_quantities(c, &map)
            .into_iter()
            .enumerate()
            .map(|(k, q)| ConsensusEntry {
                quantity: q,
                beta: 0.01 * (k % 7) as f64,
                y: 0.5 - 0.1 * (k % 11) as f64,
                rho: 400.0,
            })
            .collect();
        let problem = build_region(&net, c, &map, ConsensusParams { entries })
            .map_err(|e| CliError::Solver(e.to_string()))?;
        problems.push((format!("region {}", c.id), problem));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.point_seed);
    let mut worst = 0.0f64;
    for (name, problem) in &problems {
        let mut points = vec![problem.flat_start()];
        points.extend((0..a.points).map(|_| problem.sample_point(&mut rng)));
        let mut max = 0.0f64;
        for x in &points {
            max = max.max(check_derivatives(problem, x, a.step).max_rel_error);
        }
        worst = worst.max(max);
        emit(out, format_args!("{name}: max_rel_error={max:.3e}"))?;
    }
    let ok = worst <= a.tol;
    emit(
        out,
        format_args!("{} max_rel_error={worst:.3e} tol={:.1e}", if ok { "pass" } else { "fail" }, a.tol),
    )?;
    Ok(if ok { EXIT_OK } else { EXIT_SOLVER })
}
