//! Recovery experiments on power-flow cases: pick a voltage profile `x*`,
//! build the injections it produces, and check whether the solvers find their
//! way back to zero residual from a random feasible start.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::case_io::{read_matpower_case, write_trace_csv};
use crate::error::{Error, Result};
use crate::feasible::BoxSet;
use crate::kl::{fit_kl_rate, RateFit, Regime};
use crate::mpgn::{solve_mpgn, MpgnConfig};
use crate::pgd::{solve_pgd, PgdConfig, StepRule};
use crate::powerflow::{
    as_residual_model, make_target, PowerFlowModel, PowerSystem, VoltageBounds, VoltageState,
};
use crate::trace::{SolveResult, SolveStatus};

/// Interval used for coordinates of an unbounded set when sampling.
pub const DEFAULT_SAMPLING_FALLBACK: (f64, f64) = (-1.0, 1.0);

/// Default half-width (radians) of the angle band random states are drawn from.
pub const DEFAULT_ANGLE_SPREAD: f64 = std::f64::consts::FRAC_PI_6;

/// Tail fraction handed to the rate classifier.
pub const RATE_FIT_TAIL: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverChoice {
    Mpgn,
    Pgd,
    Both,
}

impl SolverChoice {
    fn runs_mpgn(self) -> bool {
        matches!(self, SolverChoice::Mpgn | SolverChoice::Both)
    }

    fn runs_pgd(self) -> bool {
        matches!(self, SolverChoice::Pgd | SolverChoice::Both)
    }
}

/// How the reference voltage profile is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum XStarMode {
    /// `u = 1`, `θ = 0` on every bus.
    Flat,
    /// Uniform feasible sample on a generator stream separate from the start.
    Random,
    /// Whitespace- or comma-separated `u₁..u_N θ₁..θ_N`.
    File(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartMode {
    Random,
    Flat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub case_path: PathBuf,
    pub solver: SolverChoice,
    pub seed: u64,
    pub xstar: XStarMode,
    pub start: StartMode,
    pub merit_tol: f64,
    pub max_outer: usize,
    /// Iteration budget for the gradient baseline; `None` uses `max_outer`.
    pub pgd_max_outer: Option<usize>,
    pub delta: f64,
    pub l0: f64,
    pub m0: f64,
    pub pgd_step: StepRule,
    pub voltage_bounds: VoltageBounds,
    /// Random angles (for both `x*` and the start) are drawn from
    /// `[−spread, spread]`; the solvers still see the full `[−π, π]` box.
    pub angle_spread: f64,
    /// Record wall-clock times. Off by default so that reruns are
    /// byte-identical.
    pub timing: bool,
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(case_path: impl Into<PathBuf>) -> Self {
        let mpgn = MpgnConfig::default();
        Self {
            case_path: case_path.into(),
            solver: SolverChoice::Both,
            seed: 1,
            xstar: XStarMode::Random,
            start: StartMode::Random,
            merit_tol: mpgn.merit_tol,
            max_outer: mpgn.max_outer,
            pgd_max_outer: None,
            delta: mpgn.delta,
            l0: mpgn.l0,
            m0: mpgn.m_init,
            pgd_step: PgdConfig::default().step,
            voltage_bounds: VoltageBounds::FromCase,
            angle_spread: DEFAULT_ANGLE_SPREAD,
            timing: false,
            out_dir: None,
        }
    }

    pub fn mpgn_config(&self) -> MpgnConfig {
        MpgnConfig {
            delta: self.delta,
            l0: self.l0,
            m_init: self.m0,
            merit_tol: self.merit_tol,
            max_outer: self.max_outer,
            ..MpgnConfig::default()
        }
    }

    pub fn pgd_config(&self) -> PgdConfig {
        PgdConfig {
            step: self.pgd_step,
            merit_tol: self.merit_tol,
            max_outer: self.pgd_max_outer.unwrap_or(self.max_outer),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.angle_spread > 0.0) {
            return Err(Error::InvalidConfig("angle_spread must be positive".into()));
        }
        self.mpgn_config().validate()?;
        self.pgd_config().validate()
    }
}

fn sample_with(rng: &mut ChaCha8Rng, set: &BoxSet, fallback: (f64, f64)) -> DVector<f64> {
    DVector::from_fn(set.dim(), |i, _| {
        let lo = if set.lower()[i].is_finite() {
            set.lower()[i]
        } else {
            fallback.0
        };
        let hi = if set.upper()[i].is_finite() {
            set.upper()[i]
        } else {
            fallback.1
        };
        let (lo, hi) = (lo.max(set.lower()[i]), hi.min(set.upper()[i]));
        if lo < hi {
            rng.random_range(lo..=hi)
        } else {
            lo.min(set.upper()[i]).max(set.lower()[i])
        }
    })
}

/// Uniform sample of `set`, coordinate by coordinate; unbounded coordinates
/// are drawn from `fallback` (clipped to whichever bound is finite).
pub fn sample_feasible(seed: u64, set: &BoxSet, fallback: (f64, f64)) -> DVector<f64> {
    sample_with(&mut ChaCha8Rng::seed_from_u64(seed), set, fallback)
}

/// Like [`sample_feasible`] on an independent generator stream.
fn sample_feasible_on_stream(
    seed: u64,
    stream: u64,
    set: &BoxSet,
    fallback: (f64, f64),
) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    sample_with(&mut rng, set, fallback)
}

fn read_state_file(path: &Path, buses: usize) -> Result<VoltageState> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut values = Vec::with_capacity(2 * buses);
    for (line_no, line) in text.lines().enumerate() {
        let line = line.split(['#', '%']).next().unwrap_or("");
        for tok in line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
        {
            let v = tok
                .parse::<f64>()
                .map_err(|_| Error::parse(line_no + 1, format!("not a number: {tok:?}")))?;
            values.push(v);
        }
    }
    if values.len() != 2 * buses {
        return Err(Error::DimensionMismatch {
            expected: 2 * buses,
            got: values.len(),
        });
    }
    VoltageState::from_flat(&DVector::from_vec(values))
}

/// A case prepared for one recovery run.
#[derive(Debug, Clone)]
pub struct RecoveryProblem {
    pub model: PowerFlowModel,
    pub set: BoxSet,
    pub x_star: DVector<f64>,
    pub x0: DVector<f64>,
}

/// Loads the case and draws `x*` and the start according to `cfg`.
pub fn prepare_problem(cfg: &ExperimentConfig) -> Result<RecoveryProblem> {
    cfg.validate()?;
    let case = read_matpower_case(&cfg.case_path)?;
    let sys = PowerSystem::from_case(&case, cfg.voltage_bounds)?;
    let n = sys.buses();
    let set = sys.feasible_set();
    let sampling = set.restricted(n..2 * n, -cfg.angle_spread, cfg.angle_spread)?;

    let x_star = match &cfg.xstar {
        XStarMode::Flat => VoltageState::flat(n),
        XStarMode::Random => VoltageState::from_flat(&sample_feasible_on_stream(
            cfg.seed,
            1,
            &sampling,
            DEFAULT_SAMPLING_FALLBACK,
        ))?,
        XStarMode::File(path) => read_state_file(path, n)?,
    };
    let target = make_target(&sys, &x_star)?;
    let model = as_residual_model(&sys, &target)?;
    let x0 = match cfg.start {
        StartMode::Flat => VoltageState::flat(n).to_flat(),
        StartMode::Random => sample_feasible(cfg.seed, &sampling, DEFAULT_SAMPLING_FALLBACK),
    };
    Ok(RecoveryProblem {
        model,
        set,
        x_star: x_star.to_flat(),
        x0,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSummary {
    pub status: SolveStatus,
    pub iterations: usize,
    pub final_merit: f64,
    /// Zero unless timing was requested.
    pub wall_ms: f64,
    pub total_doublings: usize,
    pub mean_doublings: f64,
    pub rate: RateFit,
}

impl SolverSummary {
    fn from_result(res: &SolveResult, wall_ms: f64) -> Self {
        let iterations = res.trace.iterations();
        let total_doublings = res.trace.total_doublings();
        Self {
            status: res.status,
            iterations,
            final_merit: res.final_merit(),
            wall_ms,
            total_doublings,
            mean_doublings: if iterations == 0 {
                0.0
            } else {
                total_doublings as f64 / iterations as f64
            },
            rate: fit_kl_rate(&res.trace.merit_values(), 0.0, RATE_FIT_TAIL),
        }
    }

    pub fn converged(&self) -> bool {
        self.status == SolveStatus::MeritConverged
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryReport {
    pub case: String,
    pub buses: usize,
    pub seed: u64,
    pub mpgn: Option<SolverSummary>,
    pub pgd: Option<SolverSummary>,
}

impl SummaryReport {
    /// PGD iterations over MPG-N iterations, when both ran.
    pub fn iteration_ratio(&self) -> Option<f64> {
        match (&self.mpgn, &self.pgd) {
            (Some(m), Some(p)) => Some(p.iterations as f64 / m.iterations.max(1) as f64),
            _ => None,
        }
    }

    /// Multi-line human-readable report.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "case {} ({} buses), seed {}",
            self.case, self.buses, self.seed
        );
        for (name, s) in [("mpgn", &self.mpgn), ("pgd", &self.pgd)] {
            let Some(s) = s else { continue };
            let _ = writeln!(
                out,
                "{name:>5}: {} after {} iterations, |F| = {:.3e}, {:.1} ms, {} line-search steps ({:.2}/iter), tail {}",
                s.status,
                s.iterations,
                s.final_merit,
                s.wall_ms,
                s.total_doublings,
                s.mean_doublings,
                describe_rate(&s.rate),
            );
        }
        if let Some(ratio) = self.iteration_ratio() {
            let _ = writeln!(out, "iteration ratio pgd/mpgn = {ratio:.2}");
        }
        out
    }

    /// Single-line `key=value` record. Keys always appear in this order:
    /// `case buses seed`, then for each solver that ran `<s>_status <s>_iters
    /// <s>_merit <s>_wall_ms <s>_doublings <s>_regime <s>_rate`, then `ratio`
    /// when both ran. A rate of `-` means no fit was made.
    pub fn to_record(&self) -> String {
        let mut fields = vec![
            format!("case={}", self.case),
            format!("buses={}", self.buses),
            format!("seed={}", self.seed),
        ];
        for (name, s) in [("mpgn", &self.mpgn), ("pgd", &self.pgd)] {
            let Some(s) = s else { continue };
            fields.push(format!("{name}_status={}", s.status));
            fields.push(format!("{name}_iters={}", s.iterations));
            fields.push(format!("{name}_merit={:e}", s.final_merit));
            fields.push(format!("{name}_wall_ms={:.3}", s.wall_ms));
            fields.push(format!("{name}_doublings={}", s.total_doublings));
            fields.push(format!("{name}_regime={}", s.rate.regime.as_str()));
            fields.push(match s.rate.rate {
                Some(rate) => format!("{name}_rate={rate:e}"),
                None => format!("{name}_rate=-"),
            });
        }
        if let Some(ratio) = self.iteration_ratio() {
            fields.push(format!("ratio={ratio:e}"));
        }
        fields.join(" ")
    }
}

fn describe_rate(fit: &RateFit) -> String {
    match fit.regime {
        Regime::Linear | Regime::Sublinear => {
            let what = if fit.regime == Regime::Linear {
                "factor"
            } else {
                "exponent"
            };
            format!(
                "{} ({what} {:.3}, r² {:.3})",
                fit.regime.as_str(),
                fit.rate.unwrap_or(f64::NAN),
                fit.r2.unwrap_or(f64::NAN)
            )
        }
        other => other.as_str().to_string(),
    }
}

/// Full outcome of [`run_experiment_detailed`].
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub problem: RecoveryProblem,
    pub mpgn: Option<SolveResult>,
    pub pgd: Option<SolveResult>,
    pub report: SummaryReport,
}

fn timed<T>(timing: bool, f: impl FnOnce() -> T) -> (T, f64) {
    let clock = Instant::now();
    let out = f();
    let ms = if timing {
        clock.elapsed().as_secs_f64() * 1e3
    } else {
        0.0
    };
    (out, ms)
}

fn strip_times(res: &mut SolveResult) {
    for r in &mut res.trace.records {
        r.time_ms = 0.0;
    }
}

/// Runs the configured solvers (concurrently when both are selected) and
/// writes traces and summaries to `cfg.out_dir` if set.
pub fn run_experiment_detailed(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let problem = prepare_problem(cfg)?;
    let (mpgn_cfg, pgd_cfg) = (cfg.mpgn_config(), cfg.pgd_config());
    let (model, set, x0) = (&problem.model, &problem.set, &problem.x0);

    let (mpgn, pgd) = std::thread::scope(|scope| {
        let pgd_handle = cfg
            .solver
            .runs_pgd()
            .then(|| scope.spawn(|| timed(cfg.timing, || solve_pgd(model, set, x0, &pgd_cfg))));
        let mpgn = cfg
            .solver
            .runs_mpgn()
            .then(|| timed(cfg.timing, || solve_mpgn(model, set, x0, &mpgn_cfg)));
        let pgd = pgd_handle.map(|h| h.join().expect("gradient solver thread panicked"));
        (mpgn, pgd)
    });

    let finish =
        |run: Option<(Result<SolveResult>, f64)>| -> Result<Option<(SolveResult, SolverSummary)>> {
            run.map(|(res, ms)| {
                let mut res = res?;
                if !cfg.timing {
                    strip_times(&mut res);
                }
                let summary = SolverSummary::from_result(&res, ms);
                Ok((res, summary))
            })
            .transpose()
        };
    let mpgn = finish(mpgn)?;
    let pgd = finish(pgd)?;

    let case = cfg
        .case_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let report = SummaryReport {
        case,
        buses: problem.model.system.buses(),
        seed: cfg.seed,
        mpgn: mpgn.as_ref().map(|(_, s)| s.clone()),
        pgd: pgd.as_ref().map(|(_, s)| s.clone()),
    };

    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        if let Some((res, _)) = &mpgn {
            write_trace_csv(&res.trace.records, dir.join("mpgn_trace.csv"))?;
        }
        if let Some((res, _)) = &pgd {
            write_trace_csv(&res.trace.records, dir.join("pgd_trace.csv"))?;
        }
        let text_path = dir.join("summary.txt");
        std::fs::write(&text_path, report.to_text()).map_err(|e| Error::io(&text_path, e))?;
        let record_path = dir.join("summary.record");
        std::fs::write(&record_path, report.to_record() + "\n")
            .map_err(|e| Error::io(&record_path, e))?;
    }

    Ok(ExperimentOutcome {
        problem,
        mpgn: mpgn.map(|(r, _)| r),
        pgd: pgd.map(|(r, _)| r),
        report,
    })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<SummaryReport> {
    run_experiment_detailed(cfg).map(|o| o.report)
}
