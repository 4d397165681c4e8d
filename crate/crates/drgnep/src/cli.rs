//! Command-line driver: the library's operations over files.
//!
//! Subcommands
//!   solve      problem file -> equilibrium report (JSON)
//!   check      problem file + point file -> certification report (JSON)
//!   casestudy  charging-station market experiments
//!     table1     nine-row parameter table (JSON)
//!     sweep      symmetric-market price vs station count (CSV)
//!     validate   out-of-sample violation estimate at the equilibrium (JSON)
//!
//! Exit codes: 0 equilibrium found / point certified / experiment done;
//! 1 usage, file, or data error; 2 no equilibrium at the search's
//! resolution (or point not certified, or validation above budget);
//! 3 search inconclusive.
//!
//! Reports go to `--out` or stdout. Identical invocations write identical
//! bytes: floats carry nine significant digits and timing fields are zero
//! unless `--timings` is passed.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::casestudy::{
    closed_form_ne, monte_carlo_violation, run_sweep, run_table1, CsMarketParams,
};
use crate::drcc::radius_hint;
use crate::error::Error;
use crate::game::GnepProblem;
use crate::io;
use crate::reformulation::assemble;
use crate::solver::{certify, solve, EquilibriumStatus, SolverOptions};
use crate::Result;

#[derive(Debug, Parser)]
#[command(
    name = "drgnep",
    version,
    about = "Generalized Nash equilibria under a shared Wasserstein-robust chance constraint"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Suppress the status line on stderr.
    #[arg(long, global = true)]
    pub quiet: bool,
    /// Keep real wall-clock times in reports (default: zeroed so identical
    /// runs produce identical bytes).
    #[arg(long, global = true)]
    pub timings: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Find an equilibrium of a problem file.
    Solve(SolveArgs),
    /// Certify a candidate point of a problem file.
    Check(CheckArgs),
    /// Charging-station pricing market experiments.
    #[command(subcommand)]
    Casestudy(CasestudyCmd),
}

/// Solver knobs shared by every subcommand.
#[derive(Debug, Clone, Copy, Args)]
pub struct SolverFlags {
    /// Equilibrium residual tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Multistart points per deactivation pattern.
    #[arg(long)]
    pub max_starts: Option<usize>,
    /// Sample count up to which patterns are fully enumerated.
    #[arg(long)]
    pub enum_threshold: Option<usize>,
    /// Pattern cap beyond the exhaustive regime (hitting it makes the
    /// search inconclusive).
    #[arg(long)]
    pub max_nodes: Option<usize>,
    /// Seed for start points (and market sample generation).
    #[arg(long)]
    pub seed: Option<u64>,
}

impl SolverFlags {
    fn apply(self, mut opts: SolverOptions) -> SolverOptions {
        if let Some(t) = self.tol {
            opts.tol_eq = t;
        }
        if let Some(s) = self.max_starts {
            opts.max_starts = s;
        }
        if let Some(e) = self.enum_threshold {
            opts.enum_threshold = e;
        }
        if let Some(n) = self.max_nodes {
            opts.max_nodes = n;
        }
        if let Some(s) = self.seed {
            opts.seed = s;
        }
        opts
    }
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Problem JSON file.
    #[arg(long)]
    pub problem: PathBuf,
    /// Samples text file (replaces any samples embedded in the problem).
    #[arg(long)]
    pub samples: Option<PathBuf>,
    /// Override the chance level of the problem file.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Override the Wasserstein radius of the problem file.
    #[arg(long)]
    pub theta: Option<f64>,
    #[command(flatten)]
    pub solver: SolverFlags,
    /// Report file (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    /// Problem JSON file.
    #[arg(long)]
    pub problem: PathBuf,
    /// Samples text file (replaces any samples embedded in the problem).
    #[arg(long)]
    pub samples: Option<PathBuf>,
    /// Candidate point: whitespace-separated floats.
    #[arg(long)]
    pub point: PathBuf,
    /// Override the chance level of the problem file.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Override the Wasserstein radius of the problem file.
    #[arg(long)]
    pub theta: Option<f64>,
    /// Certification residual tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Report file (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Market overrides shared by the case-study subcommands.
#[derive(Debug, Clone, Copy, Args)]
pub struct MarketFlags {
    /// Chance level of the demand-floor constraint.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Wasserstein radius.
    #[arg(long)]
    pub theta: Option<f64>,
}

impl MarketFlags {
    fn apply(self, mut p: CsMarketParams, seed: Option<u64>) -> CsMarketParams {
        if let Some(e) = self.epsilon {
            p.epsilon = e;
        }
        if let Some(t) = self.theta {
            p.theta = t;
        }
        if let Some(s) = seed {
            p.seed = s;
        }
        p
    }
}

#[derive(Debug, Subcommand)]
pub enum CasestudyCmd {
    /// Nine-row table: onsite vehicles, demand floor, violation budget.
    Table1(Table1Args),
    /// Symmetric-market equilibrium price per station count (CSV).
    Sweep(SweepArgs),
    /// Solve the market, then estimate the violation rate of its
    /// equilibrium out of sample (radius from the concentration hint
    /// unless --theta is given).
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct Table1Args {
    #[command(flatten)]
    pub market: MarketFlags,
    #[command(flatten)]
    pub solver: SolverFlags,
    /// Report file (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Station counts, comma-separated.
    #[arg(long = "I", value_delimiter = ',', default_value = "3,5,10,25,50")]
    pub stations: Vec<usize>,
    #[command(flatten)]
    pub market: MarketFlags,
    #[command(flatten)]
    pub solver: SolverFlags,
    /// CSV file (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub market: MarketFlags,
    #[command(flatten)]
    pub solver: SolverFlags,
    /// Monte Carlo draws.
    #[arg(long, default_value_t = 100_000)]
    pub draws: usize,
    /// Report file (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parse `args` (including the program name) and run. Returns the process
/// exit code; never exits or panics on bad input.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let quiet = cli.quiet;
    let timings = cli.timings;
    let outcome = match cli.command {
        Command::Solve(a) => cmd_solve(a, quiet, timings),
        Command::Check(a) => cmd_check(a, quiet),
        Command::Casestudy(CasestudyCmd::Table1(a)) => cmd_table1(a, quiet, timings),
        Command::Casestudy(CasestudyCmd::Sweep(a)) => cmd_sweep(a, quiet, timings),
        Command::Casestudy(CasestudyCmd::Validate(a)) => cmd_validate(a, quiet),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn status_code(status: EquilibriumStatus) -> u8 {
    match status {
        EquilibriumStatus::Gne => 0,
        EquilibriumStatus::NonExistence => 2,
        EquilibriumStatus::Inconclusive => 3,
    }
}

/// Write a report to `out`, or to stdout when no path was given.
fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => Ok(std::fs::write(path, text)?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_problem(
    problem: &Path,
    samples: Option<&Path>,
    epsilon: Option<f64>,
    theta: Option<f64>,
) -> Result<GnepProblem> {
    let samples = samples.map(io::read_samples).transpose()?;
    io::override_drcc(io::read_problem(problem, samples)?, epsilon, theta)
}

fn cmd_solve(a: SolveArgs, quiet: bool, timings: bool) -> Result<u8> {
    let problem = load_problem(&a.problem, a.samples.as_deref(), a.epsilon, a.theta)?;
    let opts = a.solver.apply(SolverOptions::default());
    let res = solve(&problem, &opts)?;
    emit(a.out.as_deref(), &io::result_to_json(&res, timings))?;
    if !quiet {
        eprintln!(
            "status: {}  residual: {:.3e}  nodes: {}",
            res.status, res.residual, res.nodes_examined
        );
    }
    Ok(status_code(res.status))
}

fn cmd_check(a: CheckArgs, quiet: bool) -> Result<u8> {
    let problem = load_problem(&a.problem, a.samples.as_deref(), a.epsilon, a.theta)?;
    let x = io::read_point(&a.point)?;
    if x.len() != problem.total_dim() {
        return Err(Error::DimensionMismatch(format!(
            "point has {} entries; the problem stacks {} decision variables",
            x.len(),
            problem.total_dim()
        )));
    }
    let system = assemble(&problem, None)?;
    let rep = certify(&problem, &system, &x, a.tol.unwrap_or(SolverOptions::default().tol_eq))?;
    emit(a.out.as_deref(), &io::certify_to_json(&rep, &problem, &x))?;
    if !quiet {
        eprintln!(
            "certified: {}  residual: {:.3e}  drcc: {}  local: {}",
            rep.certified, rep.residual, rep.drcc_ok, rep.local_ok
        );
    }
    Ok(if rep.certified { 0 } else { 2 })
}

fn cmd_table1(a: Table1Args, quiet: bool, timings: bool) -> Result<u8> {
    let params = a.market.apply(CsMarketParams::default(), a.solver.seed);
    let opts = a.solver.apply(SolverOptions::default());
    let report = run_table1(&params, &opts)?;
    emit(a.out.as_deref(), &io::table1_to_json(&report, timings))?;
    if !quiet {
        for row in &report.rows {
            eprintln!("{:<14} {}", row.label, row.status);
        }
    }
    Ok(0)
}

fn cmd_sweep(a: SweepArgs, quiet: bool, timings: bool) -> Result<u8> {
    if a.stations.is_empty() {
        return Err(Error::InvalidData("sweep needs at least one station count".into()));
    }
    let params = a.market.apply(CsMarketParams::default(), a.solver.seed);
    let opts = a.solver.apply(SolverOptions::default());
    let rows = run_sweep(&a.stations, &params, &opts)?;
    emit(a.out.as_deref(), &io::sweep_to_csv(&rows, timings))?;
    if !quiet {
        eprintln!("swept {} market sizes", rows.len());
    }
    Ok(0)
}

fn cmd_validate(a: ValidateArgs, quiet: bool) -> Result<u8> {
    let mut params = a.market.apply(CsMarketParams::default(), a.solver.seed);
    if a.market.theta.is_none() {
        // Concentration-style radius for scalar perturbations; mass
        // comparisons scale it by K internally.
        params.theta = radius_hint(params.epsilon, params.k, 1.0, 1);
    }
    let samples = params.samples()?;
    let problem = crate::casestudy::build_gnep(&params, &samples)?;
    let opts = a.solver.apply(SolverOptions::default());
    let res = solve(&problem, &opts)?;
    let Some(x) = res.x.as_ref() else {
        if !quiet {
            eprintln!("status: {} — nothing to validate", res.status);
        }
        emit(a.out.as_deref(), &io::result_to_json(&res, false))?;
        return Ok(status_code(res.status));
    };
    let est = monte_carlo_violation(x, &params, &params.sampler.clone(), a.draws, params.seed)?;
    // Three standard errors of a rate at the chance level.
    let margin = 3.0 * (params.epsilon * (1.0 - params.epsilon) / a.draws as f64).sqrt();
    let ok = est.rate <= params.epsilon + margin;
    emit(
        a.out.as_deref(),
        &io::violation_to_json(params.epsilon, params.theta, x, &est, margin, ok),
    )?;
    if !quiet {
        let oracle = closed_form_ne(&params)?
            .map_or_else(|| "none".to_owned(), |c| format!("{:.6}", c[0]));
        eprintln!(
            "violation rate: {:.5} (budget {}, margin {margin:.2e}, interior oracle {oracle})",
            est.rate, params.epsilon
        );
    }
    Ok(if ok { 0 } else { 2 })
}
