//! The regularized linearized subproblem solved at every outer step:
//!
//! ```text
//! T_M(x) = argmin_{y ∈ C} Ψ_M(y; x),   Ψ_M(y; x) = ‖r + J(y − x)‖ + (M/2)‖y − x‖²
//! ```
//!
//! with `r = F(x)` and `J = ∇F(x)`. Writing the norm as `max_{‖s‖≤1} ⟨s, ·⟩`
//! and swapping min and max gives the concave dual
//!
//! ```text
//! φ(s) = ⟨s, r + J(y*(s) − x)⟩ + (M/2)‖y*(s) − x‖²,   y*(s) = Π_C(x − Jᵀs / M)
//! ```
//!
//! over the unit ball. `φ` is differentiable with gradient `r + J(y*(s) − x)`,
//! which is `‖J‖₂²/M`-Lipschitz, so projected gradient ascent with step
//! `M/‖J‖₂²` increases `φ` monotonically. At any dual point the primal point
//! `y*(s)` is feasible and the duality gap reduces to `‖g‖ − ⟨s, g⟩` with
//! `g = r + J(y*(s) − x)`, which certifies the accuracy of the returned
//! iterate.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::feasible::{project_onto_ball, BoxSet};
use crate::linalg::spectral_norm;

/// One instance of the subproblem at base point `base` with regularization
/// `reg` (the `M` above).
#[derive(Debug, Clone, Copy)]
pub struct SubproblemInstance<'a> {
    pub residual: &'a DVector<f64>,
    pub jacobian: &'a DMatrix<f64>,
    pub base: &'a DVector<f64>,
    pub reg: f64,
    pub set: &'a BoxSet,
}

impl<'a> SubproblemInstance<'a> {
    pub fn new(
        residual: &'a DVector<f64>,
        jacobian: &'a DMatrix<f64>,
        base: &'a DVector<f64>,
        reg: f64,
        set: &'a BoxSet,
    ) -> Result<Self> {
        if !(reg > 0.0 && reg.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "regularization must be positive and finite, got {reg}"
            )));
        }
        let (m, n) = jacobian.shape();
        for (expected, got) in [(m, residual.len()), (n, base.len()), (n, set.dim())] {
            if expected != got {
                return Err(Error::DimensionMismatch { expected, got });
            }
        }
        Ok(Self {
            residual,
            jacobian,
            base,
            reg,
            set,
        })
    }

    pub fn with_reg(&self, reg: f64) -> Result<Self> {
        Self::new(self.residual, self.jacobian, self.base, reg, self.set)
    }
}

/// `Ψ_M(y; x) = ‖r + J(y − x)‖ + (M/2)‖y − x‖²`.
pub fn primal_value(inst: &SubproblemInstance<'_>, y: &DVector<f64>) -> f64 {
    let d = y - inst.base;
    let lin = inst.residual + inst.jacobian * &d;
    lin.norm() + 0.5 * inst.reg * d.norm_squared()
}

/// Inner minimizer `y*(s) = Π_C(x − Jᵀs / M)`.
pub fn dual_map(inst: &SubproblemInstance<'_>, s: &DVector<f64>) -> DVector<f64> {
    let mut y = inst.base - inst.jacobian.tr_mul(s) / inst.reg;
    inst.set.project_in_place(&mut y);
    y
}

/// Dual objective `φ(s)`, the inner minimum evaluated at `y*(s)`.
pub fn dual_value(inst: &SubproblemInstance<'_>, s: &DVector<f64>) -> f64 {
    let d = dual_map(inst, s) - inst.base;
    let lin = inst.residual + inst.jacobian * &d;
    s.dot(&lin) + 0.5 * inst.reg * d.norm_squared()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubproblemOptions {
    /// Relative duality-gap tolerance; the solve stops once
    /// `gap ≤ gap_tol · max(1, ‖r‖)`.
    pub gap_tol: f64,
    pub max_inner: usize,
    /// Use FISTA-style momentum with function-value restart.
    pub accelerated: bool,
    /// Every this many ascent steps try a Newton step on the dual (see
    /// [`newton_polish`]); 0 disables it.
    pub polish_every: usize,
}

impl Default for SubproblemOptions {
    fn default() -> Self {
        Self {
            gap_tol: 1e-10,
            max_inner: 10_000,
            accelerated: false,
            polish_every: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemSolution {
    /// Primal point `y*(s)`, always feasible.
    pub y: DVector<f64>,
    /// Dual point, `‖s‖ ≤ 1`.
    pub s: DVector<f64>,
    pub primal_value: f64,
    pub dual_value: f64,
    pub gap: f64,
    pub inner_iters: usize,
    /// `false` when `max_inner` ran out before the gap tolerance was met.
    pub converged: bool,
}

/// Scratch buffers and the evaluation of everything derived from one dual
/// point.
struct Workspace<'a> {
    inst: &'a SubproblemInstance<'a>,
    jts: DVector<f64>,
    y: DVector<f64>,
    d: DVector<f64>,
    g: DVector<f64>,
}

#[derive(Debug, Clone, Copy)]
struct DualEval {
    lin_norm: f64,
    s_dot_g: f64,
    quad: f64,
}

impl DualEval {
    fn primal(&self) -> f64 {
        self.lin_norm + self.quad
    }
    fn dual(&self) -> f64 {
        self.s_dot_g + self.quad
    }
    fn gap(&self) -> f64 {
        self.lin_norm - self.s_dot_g
    }
}

impl<'a> Workspace<'a> {
    fn new(inst: &'a SubproblemInstance<'a>) -> Self {
        let (m, n) = inst.jacobian.shape();
        Self {
            inst,
            jts: DVector::zeros(n),
            y: DVector::zeros(n),
            d: DVector::zeros(n),
            g: DVector::zeros(m),
        }
    }

    /// Fills `y = y*(s)`, `d = y − x`, `g = r + J d`.
    fn eval(&mut self, s: &DVector<f64>) -> DualEval {
        let inst = self.inst;
        self.jts.gemv_tr(1.0, inst.jacobian, s, 0.0);
        self.y.copy_from(inst.base);
        self.y.axpy(-1.0 / inst.reg, &self.jts, 1.0);
        inst.set.project_in_place(&mut self.y);
        self.d.copy_from(&self.y);
        self.d -= inst.base;
        self.g.copy_from(inst.residual);
        self.g.gemv(1.0, inst.jacobian, &self.d, 1.0);
        DualEval {
            lin_norm: self.g.norm(),
            s_dot_g: s.dot(&self.g),
            quad: 0.5 * inst.reg * self.d.norm_squared(),
        }
    }
}

/// Solve the subproblem by projected gradient ascent on the dual.
pub fn solve_subproblem(
    inst: &SubproblemInstance<'_>,
    opts: &SubproblemOptions,
) -> SubproblemSolution {
    solve_subproblem_with_norm(inst, opts, spectral_norm(inst.jacobian))
}

/// Same as [`solve_subproblem`] with a precomputed `‖J‖₂`, so that repeated
/// solves at one base point (the line search) share a single power iteration.
pub fn solve_subproblem_with_norm(
    inst: &SubproblemInstance<'_>,
    opts: &SubproblemOptions,
    jac_norm: f64,
) -> SubproblemSolution {
    let r_norm = inst.residual.norm();
    let tol = opts.gap_tol * r_norm.max(1.0);
    let mut ws = Workspace::new(inst);

    if jac_norm == 0.0 {
        // The linear term is constant: y = Π_C(x) and s = r/‖r‖ closes the gap.
        let s = if r_norm > 0.0 {
            inst.residual / r_norm
        } else {
            DVector::zeros(inst.residual.len())
        };
        let ev = ws.eval(&s);
        return finish(ws, s, ev, 0, true);
    }

    let step = inst.reg / (jac_norm * jac_norm);
    let s0 = inst.residual / r_norm.max(1.0);
    if opts.accelerated {
        accelerated_ascent(ws, s0, step, tol, opts)
    } else {
        plain_ascent(ws, s0, step, tol, opts)
    }
}

fn polish_due(opts: &SubproblemOptions, iters: usize) -> bool {
    opts.polish_every > 0 && iters > 0 && iters.is_multiple_of(opts.polish_every)
}

fn plain_ascent(
    mut ws: Workspace<'_>,
    mut s: DVector<f64>,
    step: f64,
    tol: f64,
    opts: &SubproblemOptions,
) -> SubproblemSolution {
    let mut iters = 0;
    let mut ev = ws.eval(&s);
    loop {
        if ev.gap() > tol && polish_due(opts, iters) {
            if let Some((s_new, ev_new)) = newton_polish(&mut ws, &s, &ev, tol) {
                s = s_new;
                ev = ev_new;
            }
        }
        if ev.gap() <= tol {
            return finish(ws, s, ev, iters, true);
        }
        if iters == opts.max_inner {
            return finish(ws, s, ev, iters, false);
        }
        s.axpy(step, &ws.g, 1.0);
        project_onto_ball(&mut s, 1.0);
        ev = ws.eval(&s);
        iters += 1;
    }
}

/// Newton steps on the dual with the active set of `y*(s)` frozen.
///
/// With the clamped coordinates `A` held at their bounds, `y*(s)` is affine in
/// `s` on the free coordinates `F`, and the dual is the concave quadratic
/// `⟨s, c⟩ − ½ sᵀHs + const`, `H = J_F J_Fᵀ / M`, `c = r + J_A d_A`. Its
/// maximizer over the unit ball solves `(H + λI) s = c` with `λ ≥ 0` and
/// `λ(1 − ‖s‖) = 0`, which is computed exactly in the eigenbasis of `H`.
/// Plain ascent approaches the same point at a rate set by the smallest
/// eigenvalue of `H`, hopeless for small `M` when `J` is ill-conditioned or
/// rank deficient. A step is kept only if it increases `φ`, so the overall
/// ascent stays monotone; steps repeat while the active set keeps changing.
/// On return `ws` holds the evaluation of the returned point, or of `s` when
/// nothing improved.
fn newton_polish(
    ws: &mut Workspace<'_>,
    s: &DVector<f64>,
    ev: &DualEval,
    tol: f64,
) -> Option<(DVector<f64>, DualEval)> {
    const MAX_STEPS: usize = 8;
    let inst = ws.inst;
    let (m, n) = inst.jacobian.shape();
    let mut best: Option<(DVector<f64>, DualEval)> = None;
    let mut current = (s.clone(), *ev);

    for _ in 0..MAX_STEPS {
        let lower = inst.set.lower();
        let upper = inst.set.upper();
        let free: Vec<usize> = (0..n)
            .filter(|&i| ws.y[i] > lower[i] && ws.y[i] < upper[i])
            .collect();
        let mut c = inst.residual.clone();
        let mut j_free = DMatrix::zeros(m, free.len());
        let mut next_free = free.iter().peekable();
        for i in 0..n {
            if next_free.peek() == Some(&&i) {
                next_free.next();
            } else if ws.d[i] != 0.0 {
                c.axpy(ws.d[i], &inst.jacobian.column(i), 1.0);
            }
        }
        for (col, &i) in free.iter().enumerate() {
            j_free.set_column(col, &inst.jacobian.column(i));
        }
        let h = (&j_free * j_free.transpose()) / inst.reg;
        let eig = h.symmetric_eigen();
        let coeffs = eig.eigenvectors.tr_mul(&c);
        let lam_max = eig.eigenvalues.amax();
        let cutoff = lam_max * 1e-13 * m as f64;
        let lams: Vec<f64> = eig
            .eigenvalues
            .iter()
            .map(|&l| if l > cutoff { l } else { 0.0 })
            .collect();

        let norm_at = |shift: f64| -> f64 {
            coeffs
                .iter()
                .zip(&lams)
                .map(|(&ck, &lk)| {
                    let den = lk + shift;
                    if den > 0.0 {
                        (ck / den).powi(2)
                    } else if ck.abs() > 1e-300 {
                        f64::INFINITY
                    } else {
                        0.0
                    }
                })
                .sum::<f64>()
                .sqrt()
        };
        // Smallest multiplier keeping the maximizer inside the ball.
        let shift = if norm_at(0.0) <= 1.0 {
            0.0
        } else {
            let (mut lo, mut hi) = (0.0, c.norm().max(f64::MIN_POSITIVE));
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if norm_at(mid) > 1.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            hi
        };
        let scaled = DVector::from_fn(m, |k, _| {
            let den = lams[k] + shift;
            if den > 0.0 {
                coeffs[k] / den
            } else {
                0.0
            }
        });
        let mut target = &eig.eigenvectors * scaled;
        project_onto_ball(&mut target, 1.0);

        // The quadratic model is exact only while the active set is unchanged;
        // backtrack along the segment toward its maximizer otherwise.
        let dir = &target - &current.0;
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let s_new = &current.0 + &dir * t;
            let ev_new = ws.eval(&s_new);
            if ev_new.dual() > current.1.dual() {
                accepted = Some((s_new, ev_new));
                break;
            }
            t *= 0.5;
        }
        let Some((s_new, ev_new)) = accepted else {
            break;
        };
        current = (s_new, ev_new);
        best = Some(current.clone());
        if ev_new.gap() <= tol {
            break;
        }
    }
    match &best {
        Some((s_best, _)) => {
            ws.eval(s_best);
        }
        None => {
            ws.eval(s);
        }
    }
    best
}

fn accelerated_ascent(
    mut ws: Workspace<'_>,
    mut s: DVector<f64>,
    step: f64,
    tol: f64,
    opts: &SubproblemOptions,
) -> SubproblemSolution {
    let mut z = s.clone();
    let mut t = 1.0f64;
    let mut iters = 0;
    let mut ev = ws.eval(&s);
    loop {
        if ev.gap() > tol && polish_due(opts, iters) {
            ws.eval(&s);
            if let Some((s_new, ev_new)) = newton_polish(&mut ws, &s, &ev, tol) {
                s = s_new;
                ev = ev_new;
                z.copy_from(&s);
                t = 1.0;
            }
        }
        if ev.gap() <= tol {
            ws.eval(&s);
            return finish(ws, s, ev, iters, true);
        }
        if iters == opts.max_inner {
            ws.eval(&s);
            return finish(ws, s, ev, iters, false);
        }
        ws.eval(&z);
        let mut next = z.clone();
        next.axpy(step, &ws.g, 1.0);
        project_onto_ball(&mut next, 1.0);
        let next_ev = ws.eval(&next);
        iters += 1;

        if next_ev.dual() < ev.dual() {
            // Momentum overshot: restart from the better point.
            t = 1.0;
            z.copy_from(&s);
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        z.copy_from(&next);
        z.axpy(beta, &next, 1.0);
        z.axpy(-beta, &s, 1.0);
        t = t_next;
        s = next;
        ev = next_ev;
    }
}

fn finish(
    ws: Workspace<'_>,
    s: DVector<f64>,
    ev: DualEval,
    inner_iters: usize,
    converged: bool,
) -> SubproblemSolution {
    SubproblemSolution {
        y: ws.y,
        s,
        primal_value: ev.primal(),
        dual_value: ev.dual(),
        gap: ev.gap(),
        inner_iters,
        converged,
    }
}
