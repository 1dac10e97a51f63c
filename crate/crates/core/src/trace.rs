//! Per-iteration records shared by the outer solvers.

use nalgebra::DVector;

/// One row of an iterate trace.
///
/// Row `k` describes the iterate `x_k` and the step `x_{k-1} → x_k` that
/// produced it; row 0 is the starting point and carries zero step data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    /// `‖F(x_k)‖`.
    pub f: f64,
    pub step_norm: f64,
    /// Accepted regularization. For projected gradient this is `1/α`.
    pub reg: f64,
    pub ls_doublings: usize,
    pub sub_gap: f64,
    pub sub_iters: usize,
    pub stat_surrogate: f64,
    /// Wall time since the start of the solve.
    pub time_ms: f64,
}

impl IterationRecord {
    pub fn start(f: f64, reg: f64) -> Self {
        Self {
            iter: 0,
            f,
            step_norm: 0.0,
            reg,
            ls_doublings: 0,
            sub_gap: 0.0,
            sub_iters: 0,
            stat_surrogate: 0.0,
            time_ms: 0.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterateTrace {
    pub records: Vec<IterationRecord>,
    /// The supplied start was infeasible and was projected onto the set.
    pub projected_start: bool,
}

impl IterateTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Number of outer iterations performed (rows minus the start row).
    pub fn iterations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn merit_values(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.f).collect()
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    /// Total line-search doublings over the run.
    pub fn total_doublings(&self) -> usize {
        self.records.iter().map(|r| r.ls_doublings).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolveStatus {
    MeritConverged,
    StepConverged,
    MaxIters,
    SubproblemFailure,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::MeritConverged => "merit-converged",
            SolveStatus::StepConverged => "step-converged",
            SolveStatus::MaxIters => "max-iters",
            SolveStatus::SubproblemFailure => "subproblem-failure",
        }
    }
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub x_final: DVector<f64>,
    pub status: SolveStatus,
    pub trace: IterateTrace,
    /// Projected gradient only: the step size underflowed before any stopping
    /// test fired.
    pub step_underflow: bool,
}

impl SolveResult {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::MeritConverged
    }

    pub fn final_merit(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |r| r.f)
    }
}

/// A violated per-step descent inequality found by [`audit_descent`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescentViolation {
    pub iter: usize,
    /// `(δ/2)‖x_{k} − x_{k−1}‖² − (f_{k−1} − f_k)`.
    pub excess: f64,
}

/// Checks `(δ/2)‖x_k − x_{k−1}‖² ≤ f_{k−1} − f_k + slack` and
/// `f_k ≤ f_{k−1} + 1e−12` on every row.
pub fn audit_descent(
    records: &[IterationRecord],
    delta: f64,
    slack: f64,
) -> Result<(), DescentViolation> {
    for pair in records.windows(2) {
        let (prev, cur) = (&pair[0], &pair[1]);
        let decrease = prev.f - cur.f;
        let required = 0.5 * delta * cur.step_norm * cur.step_norm;
        if required > decrease + slack || cur.f > prev.f + 1e-12 {
            return Err(DescentViolation {
                iter: cur.iter,
                excess: required - decrease,
            });
        }
    }
    Ok(())
}
