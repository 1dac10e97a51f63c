use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, ValueEnum};
use mpgn::experiment::{run_experiment, ExperimentConfig, SolverChoice, StartMode, XStarMode};
use mpgn::pgd::StepRule;
use mpgn::powerflow::VoltageBounds;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Solver {
    Mpgn,
    Pgd,
    Both,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Start {
    Random,
    Flat,
}

/// Recover a power-flow operating point with MPG-N and/or projected gradient
/// descent, writing per-iteration traces and a summary.
#[derive(Debug, Parser)]
#[command(name = "mpgn-bench", version)]
struct Args {
    /// MATPOWER case file.
    #[arg(long)]
    case: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    solver: Solver,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Stop once ‖F(x)‖ falls to this value.
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    /// Outer iteration cap.
    #[arg(long, default_value_t = 5000)]
    max_iters: usize,
    /// Separate iteration cap for projected gradient (defaults to --max-iters).
    #[arg(long)]
    pgd_max_iters: Option<usize>,
    /// Descent margin of the MPG-N line search.
    #[arg(long, default_value_t = 1e-4)]
    delta: f64,
    /// Floor for the MPG-N regularization.
    #[arg(long, default_value_t = 1e-4)]
    l0: f64,
    /// First MPG-N regularization tried.
    #[arg(long, default_value_t = 1.0)]
    m0: f64,
    /// Reference point: `flat`, `random`, or a file with u₁..u_N θ₁..θ_N.
    #[arg(long, default_value = "random")]
    xstar: String,
    #[arg(long, value_enum, default_value = "random")]
    start: Start,
    /// Random angles are drawn from [-spread, spread] (radians).
    #[arg(long, default_value_t = mpgn::experiment::DEFAULT_ANGLE_SPREAD)]
    angle_spread: f64,
    /// Uniform voltage band replacing the case-file limits (needs --umax too).
    #[arg(long, requires = "umax")]
    umin: Option<f64>,
    #[arg(long, requires = "umin")]
    umax: Option<f64>,
    /// Fixed projected-gradient step instead of backtracking.
    #[arg(long)]
    pgd_step: Option<f64>,
    /// First backtracking step (default 1/‖∇F(x₀)‖²).
    #[arg(long, conflicts_with = "pgd_step")]
    pgd_initial: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    pgd_shrink: f64,
    #[arg(long, default_value_t = 1e-4)]
    pgd_c: f64,
    /// Record wall-clock times (makes output non-reproducible).
    #[arg(long)]
    timing: bool,
    /// Output directory for traces and summaries.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Args {
    fn into_config(self) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(self.case);
        cfg.solver = match self.solver {
            Solver::Mpgn => SolverChoice::Mpgn,
            Solver::Pgd => SolverChoice::Pgd,
            Solver::Both => SolverChoice::Both,
        };
        cfg.seed = self.seed;
        cfg.xstar = match self.xstar.as_str() {
            "flat" => XStarMode::Flat,
            "random" => XStarMode::Random,
            path => XStarMode::File(PathBuf::from(path)),
        };
        cfg.start = match self.start {
            Start::Random => StartMode::Random,
            Start::Flat => StartMode::Flat,
        };
        cfg.merit_tol = self.tol;
        cfg.max_outer = self.max_iters;
        cfg.pgd_max_outer = self.pgd_max_iters;
        cfg.delta = self.delta;
        cfg.l0 = self.l0;
        cfg.m0 = self.m0;
        cfg.pgd_step = match self.pgd_step {
            Some(alpha) => StepRule::Fixed(alpha),
            None => StepRule::Backtracking {
                initial: self.pgd_initial,
                shrink: self.pgd_shrink,
                c: self.pgd_c,
            },
        };
        if let (Some(lo), Some(hi)) = (self.umin, self.umax) {
            cfg.voltage_bounds = VoltageBounds::Uniform(lo, hi);
        }
        cfg.angle_spread = self.angle_spread;
        cfg.timing = self.timing;
        cfg.out_dir = self.out;
        cfg
    }
}

fn run() -> Result<()> {
    let cfg = Args::parse().into_config();
    let case = cfg.case_path.display().to_string();
    let report = run_experiment(&cfg).with_context(|| format!("experiment on {case} failed"))?;
    print!("{}", report.to_text());
    println!("{}", report.to_record());
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
