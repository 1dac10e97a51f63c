//! Residual maps `F: ℝⁿ → ℝᵐ`, the merit `‖F(x)‖` and derivative checks.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::feasible::BoxSet;
use crate::linalg::spectral_norm;

/// A smooth residual map together with its Jacobian.
///
/// Implementations are stateless evaluators and may be queried concurrently.
pub trait ResidualModel {
    /// Variable dimension `n`.
    fn n(&self) -> usize;

    /// Residual dimension `m`.
    fn m(&self) -> usize;

    fn residual(&self, x: &DVector<f64>) -> DVector<f64>;

    /// `m × n` Jacobian of [`ResidualModel::residual`] at `x`.
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;

    /// Known Lipschitz constant of the Jacobian, if any.
    fn lipschitz_hint(&self) -> Option<f64> {
        None
    }
}

impl<T: ResidualModel + ?Sized> ResidualModel for &T {
    fn n(&self) -> usize {
        (**self).n()
    }
    fn m(&self) -> usize {
        (**self).m()
    }
    fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        (**self).residual(x)
    }
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (**self).jacobian(x)
    }
    fn lipschitz_hint(&self) -> Option<f64> {
        (**self).lipschitz_hint()
    }
}

/// Merit value `‖F(x)‖`.
pub fn merit_value<M: ResidualModel + ?Sized>(model: &M, x: &DVector<f64>) -> Result<f64> {
    if x.len() != model.n() {
        return Err(Error::DimensionMismatch {
            expected: model.n(),
            got: x.len(),
        });
    }
    let r = model.residual(x);
    check_finite(&r)?;
    Ok(r.norm())
}

pub(crate) fn check_finite(r: &DVector<f64>) -> Result<()> {
    match r.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

/// Central-difference Jacobian with step `h`.
pub fn fd_jacobian<M: ResidualModel + ?Sized>(model: &M, x: &DVector<f64>, h: f64) -> DMatrix<f64> {
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut jac = DMatrix::zeros(model.m(), model.n());
    let mut probe = x.clone();
    for j in 0..model.n() {
        probe[j] = x[j] + h;
        let fwd = model.residual(&probe);
        probe[j] = x[j] - h;
        let bwd = model.residual(&probe);
        probe[j] = x[j];
        let col = (fwd - bwd) / (2.0 * h);
        jac.set_column(j, &col);
    }
    jac
}

/// Outcome of comparing an analytic Jacobian to finite differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JacobianCheckReport {
    pub max_abs_error: f64,
    /// Entrywise error divided by `max(1, |fd entry|)`.
    pub max_rel_error: f64,
    /// `(row, column)` of the largest relative error.
    pub worst_entry: (usize, usize),
    pub tol: f64,
}

impl JacobianCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tol
    }
}

pub fn jacobian_check<M: ResidualModel + ?Sized>(
    model: &M,
    x: &DVector<f64>,
    h: f64,
    tol: f64,
) -> JacobianCheckReport {
    let analytic = model.jacobian(x);
    let numeric = fd_jacobian(model, x, h);
    let mut report = JacobianCheckReport {
        max_abs_error: 0.0,
        max_rel_error: 0.0,
        worst_entry: (0, 0),
        tol,
    };
    for j in 0..numeric.ncols() {
        for i in 0..numeric.nrows() {
            let abs = (analytic[(i, j)] - numeric[(i, j)]).abs();
            let rel = abs / numeric[(i, j)].abs().max(1.0);
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_entry = (i, j);
            }
        }
    }
    report
}

/// Empirical lower bound on the Jacobian's Lipschitz constant over `set`.
///
/// Draws `samples` points uniformly from the set (coordinates with infinite
/// bounds are sampled from `[-1, 1]` around the finite bound or the origin)
/// and returns the largest `‖∇F(x) − ∇F(y)‖₂ / ‖x − y‖` over consecutive
/// pairs.
pub fn estimate_lipschitz<M: ResidualModel + ?Sized>(
    model: &M,
    set: &BoxSet,
    samples: usize,
    seed: u64,
) -> f64 {
    assert!(samples >= 2, "need at least two samples");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| {
        DVector::from_iterator(
            set.dim(),
            set.lower()
                .iter()
                .zip(set.upper().iter())
                .map(|(&lo, &hi)| {
                    let (lo, hi) = match (lo.is_finite(), hi.is_finite()) {
                        (true, true) => (lo, hi),
                        (true, false) => (lo, lo + 2.0),
                        (false, true) => (hi - 2.0, hi),
                        (false, false) => (-1.0, 1.0),
                    };
                    if lo == hi {
                        lo
                    } else {
                        rng.random_range(lo..=hi)
                    }
                }),
        )
    };
    let mut best = 0.0f64;
    let mut prev = draw(&mut rng);
    let mut prev_jac = model.jacobian(&prev);
    for _ in 1..samples {
        let next = draw(&mut rng);
        let next_jac = model.jacobian(&next);
        let dist = (&next - &prev).norm();
        if dist > 0.0 {
            best = best.max(spectral_norm(&(&next_jac - &prev_jac)) / dist);
        }
        prev = next;
        prev_jac = next_jac;
    }
    best
}

/// Affine residual `F(x) = A x − b`.
#[derive(Debug, Clone)]
pub struct LinearModel {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl LinearModel {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if a.nrows() != b.len() {
            return Err(Error::DimensionMismatch {
                expected: a.nrows(),
                got: b.len(),
            });
        }
        Ok(Self { a, b })
    }
}

impl ResidualModel for LinearModel {
    fn n(&self) -> usize {
        self.a.ncols()
    }
    fn m(&self) -> usize {
        self.a.nrows()
    }
    fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x - &self.b
    }
    fn jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.a.clone()
    }
    fn lipschitz_hint(&self) -> Option<f64> {
        Some(0.0)
    }
}

type ResidualFn = Box<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
type JacobianFn = Box<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Residual model assembled from closures.
pub struct FnModel {
    n: usize,
    m: usize,
    residual: ResidualFn,
    jacobian: JacobianFn,
    lipschitz: Option<f64>,
}

impl FnModel {
    pub fn new(
        n: usize,
        m: usize,
        residual: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        jacobian: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            n,
            m,
            residual: Box::new(residual),
            jacobian: Box::new(jacobian),
            lipschitz: None,
        }
    }

    /// Attach a known Lipschitz constant of the Jacobian. Must be positive.
    pub fn with_lipschitz(mut self, lipschitz: f64) -> Result<Self> {
        if !(lipschitz > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "Lipschitz hint must be positive, got {lipschitz}"
            )));
        }
        self.lipschitz = Some(lipschitz);
        Ok(self)
    }
}

impl std::fmt::Debug for FnModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FnModel")
            .field("n", &self.n)
            .field("m", &self.m)
            .field("lipschitz", &self.lipschitz)
            .finish_non_exhaustive()
    }
}

impl ResidualModel for FnModel {
    fn n(&self) -> usize {
        self.n
    }
    fn m(&self) -> usize {
        self.m
    }
    fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.residual)(x)
    }
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.jacobian)(x)
    }
    fn lipschitz_hint(&self) -> Option<f64> {
        self.lipschitz
    }
}
