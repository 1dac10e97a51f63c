//! Projected gradient descent on `g(x) = ½‖F(x)‖²` over a box, the baseline
//! the Gauss-Newton method is compared against.

use std::time::Instant;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::feasible::BoxSet;
use crate::linalg::spectral_norm;
use crate::residual::{check_finite, ResidualModel};
use crate::trace::{IterateTrace, IterationRecord, SolveResult, SolveStatus};

/// Step-size rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    Fixed(f64),
    /// Backtracking on the projected sufficient-decrease test
    /// `g(x⁺) ≤ g(x) − (c/α)‖x⁺ − x‖²`, halving by `shrink`; the step is
    /// doubled again after each accepted iteration. Without an `initial`
    /// step the first trial is `1/‖∇F(x₀)‖₂²`, the curvature scale of
    /// `½‖F‖²` at the start.
    Backtracking {
        initial: Option<f64>,
        shrink: f64,
        c: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgdConfig {
    pub step: StepRule,
    pub merit_tol: f64,
    pub max_outer: usize,
}

impl Default for PgdConfig {
    fn default() -> Self {
        Self {
            step: StepRule::Backtracking {
                initial: None,
                shrink: 0.5,
                c: 1e-4,
            },
            merit_tol: 1e-3,
            max_outer: 5000,
        }
    }
}

impl PgdConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = match self.step {
            StepRule::Fixed(alpha) => alpha > 0.0,
            StepRule::Backtracking { initial, shrink, c } => {
                initial.is_none_or(|a| a > 0.0)
                    && shrink > 0.0
                    && shrink < 1.0
                    && c > 0.0
                    && c < 1.0
            }
        };
        if !ok {
            return Err(Error::InvalidConfig(format!(
                "invalid step rule {:?}",
                self.step
            )));
        }
        if !(self.merit_tol > 0.0) {
            return Err(Error::InvalidConfig("merit_tol must be positive".into()));
        }
        Ok(())
    }
}

const MIN_STEP: f64 = 1e-16;

/// `Π_C(x − α ∇F(x)ᵀF(x))`.
pub fn pgd_step<M: ResidualModel + ?Sized>(
    model: &M,
    set: &BoxSet,
    x: &DVector<f64>,
    alpha: f64,
) -> Result<DVector<f64>> {
    let r = model.residual(x);
    check_finite(&r)?;
    let grad = model.jacobian(x).tr_mul(&r);
    set.project(&(x - grad * alpha))
}

/// Runs projected gradient descent from `x0`. An infeasible start is projected
/// onto `set` first.
pub fn solve_pgd<M: ResidualModel + ?Sized>(
    model: &M,
    set: &BoxSet,
    x0: &DVector<f64>,
    cfg: &PgdConfig,
) -> Result<SolveResult> {
    cfg.validate()?;
    let clock = Instant::now();
    let mut trace = IterateTrace::default();
    let mut x = set.project(x0)?;
    trace.projected_start = x != *x0;

    let mut r = model.residual(&x);
    check_finite(&r)?;
    let mut g = 0.5 * r.norm_squared();
    let mut alpha = match cfg.step {
        StepRule::Fixed(a) => a,
        StepRule::Backtracking {
            initial: Some(a), ..
        } => a,
        StepRule::Backtracking { initial: None, .. } => {
            let norm = spectral_norm(&model.jacobian(&x));
            if norm > 0.0 {
                1.0 / (norm * norm)
            } else {
                1.0
            }
        }
    };
    trace
        .records
        .push(IterationRecord::start(r.norm(), 1.0 / alpha));
    let mut step_underflow = false;

    let status = loop {
        if r.norm() <= cfg.merit_tol {
            break SolveStatus::MeritConverged;
        }
        if trace.iterations() == cfg.max_outer {
            break SolveStatus::MaxIters;
        }
        let grad = model.jacobian(&x).tr_mul(&r);
        let mut halvings = 0;
        let (x_next, r_next, g_next) = loop {
            let mut cand = &x - &grad * alpha;
            set.project_in_place(&mut cand);
            let r_cand = model.residual(&cand);
            let g_cand = 0.5 * r_cand.norm_squared();
            match cfg.step {
                StepRule::Fixed(_) => break (cand, r_cand, g_cand),
                StepRule::Backtracking { shrink, c, .. } => {
                    let moved = (&cand - &x).norm_squared();
                    if g_cand.is_finite() && g_cand <= g - c / alpha * moved {
                        break (cand, r_cand, g_cand);
                    }
                    alpha *= shrink;
                    halvings += 1;
                    if alpha < MIN_STEP {
                        step_underflow = true;
                        break (x.clone(), r.clone(), g);
                    }
                }
            }
        };
        if step_underflow {
            break SolveStatus::MaxIters;
        }
        check_finite(&r_next)?;

        let step_norm = (&x_next - &x).norm();
        trace.records.push(IterationRecord {
            iter: trace.records.len(),
            f: r_next.norm(),
            step_norm,
            reg: 1.0 / alpha,
            ls_doublings: halvings,
            sub_gap: 0.0,
            sub_iters: 0,
            stat_surrogate: step_norm / alpha,
            time_ms: clock.elapsed().as_secs_f64() * 1e3,
        });
        x = x_next;
        r = r_next;
        g = g_next;
        if step_norm == 0.0 {
            // Projected stationary point of g.
            break SolveStatus::StepConverged;
        }
        if let StepRule::Backtracking { .. } = cfg.step {
            alpha *= 2.0;
        }
    };

    Ok(SolveResult {
        x_final: x,
        status,
        trace,
        step_underflow,
    })
}
