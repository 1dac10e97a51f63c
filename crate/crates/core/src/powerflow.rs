//! AC power-flow residuals in polar coordinates.
//!
//! For bus voltages `v_i = u_i e^{jθ_i}` and admittance `Y = G + jB` the
//! injections are
//!
//! ```text
//! p_i = Σ_k u_i u_k (G_ik cos θ_ik + B_ik sin θ_ik)
//! q_i = Σ_k u_i u_k (G_ik sin θ_ik − B_ik cos θ_ik),   θ_ik = θ_i − θ_k
//! ```
//!
//! i.e. `p + jq = diag(v vᴴ Yᴴ)`. Every bus keeps both `u` and `θ` free
//! inside the box `u ∈ [u_min, u_max]`, `θ ∈ [−π, π]`; there is no slack/PV/PQ
//! typing. Variables are flattened as `x = (u₁..u_N, θ₁..θ_N)` and the residual
//! is `F(x) = (p(x) − s_R; q(x) − s_I)`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::case_io::{build_admittance, CaseData};
use crate::error::{Error, Result};
use crate::feasible::BoxSet;
use crate::residual::ResidualModel;

/// Voltage band used for buses whose case data carries no bounds.
pub const DEFAULT_VOLTAGE_BAND: (f64, f64) = (0.9, 1.1);

/// Where per-bus voltage-magnitude bounds come from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VoltageBounds {
    /// Case-file `Vmin`/`Vmax` where present, [`DEFAULT_VOLTAGE_BAND`] elsewhere.
    FromCase,
    /// The same band on every bus.
    Uniform(f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerSystem {
    pub g: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub u_min: DVector<f64>,
    pub u_max: DVector<f64>,
}

impl PowerSystem {
    pub fn new(
        g: DMatrix<f64>,
        b: DMatrix<f64>,
        u_min: DVector<f64>,
        u_max: DVector<f64>,
    ) -> Result<Self> {
        let n = g.nrows();
        for (expected, got) in [
            (n, g.ncols()),
            (n, b.nrows()),
            (n, b.ncols()),
            (n, u_min.len()),
            (n, u_max.len()),
        ] {
            if expected != got {
                return Err(Error::DimensionMismatch { expected, got });
            }
        }
        for i in 0..n {
            if !(u_min[i] > 0.0 && u_min[i] <= u_max[i]) {
                return Err(Error::InvalidBounds {
                    index: i,
                    lower: u_min[i],
                    upper: u_max[i],
                });
            }
        }
        Ok(Self { g, b, u_min, u_max })
    }

    pub fn from_case(case: &CaseData, bounds: VoltageBounds) -> Result<Self> {
        let (g, b) = build_admittance(case)?;
        let n = case.buses.len();
        let (lo, hi): (Vec<f64>, Vec<f64>) = case
            .buses
            .iter()
            .map(|bus| match bounds {
                VoltageBounds::Uniform(lo, hi) => (lo, hi),
                VoltageBounds::FromCase => bus.voltage_bounds.unwrap_or(DEFAULT_VOLTAGE_BAND),
            })
            .unzip();
        Self::new(g, b, DVector::from_vec(lo), DVector::from_vec(hi)).inspect(|sys| {
            debug_assert_eq!(sys.buses(), n);
        })
    }

    /// Bus count `N`.
    pub fn buses(&self) -> usize {
        self.g.nrows()
    }

    /// Box `u ∈ [u_min, u_max]`, `θ ∈ [−π, π]` over the flattened state.
    pub fn feasible_set(&self) -> BoxSet {
        let n = self.buses();
        let lower = DVector::from_fn(2 * n, |i, _| if i < n { self.u_min[i] } else { -PI });
        let upper = DVector::from_fn(2 * n, |i, _| if i < n { self.u_max[i] } else { PI });
        BoxSet::new(lower, upper).expect("bounds validated at construction")
    }

    /// Largest asymmetry `max |G − Gᵀ|, |B − Bᵀ|`.
    pub fn asymmetry(&self) -> f64 {
        (&self.g - self.g.transpose())
            .amax()
            .max((&self.b - self.b.transpose()).amax())
    }
}

/// Voltage magnitudes and angles (radians).
#[derive(Debug, Clone, PartialEq)]
pub struct VoltageState {
    pub u: DVector<f64>,
    pub theta: DVector<f64>,
}

impl VoltageState {
    pub fn flat(n: usize) -> Self {
        Self {
            u: DVector::from_element(n, 1.0),
            theta: DVector::zeros(n),
        }
    }

    /// Splits a flattened `(u; θ)` vector of even length.
    pub fn from_flat(x: &DVector<f64>) -> Result<Self> {
        if !x.len().is_multiple_of(2) {
            return Err(Error::DimensionMismatch {
                expected: x.len() + 1,
                got: x.len(),
            });
        }
        let n = x.len() / 2;
        Ok(Self {
            u: x.rows(0, n).into_owned(),
            theta: x.rows(n, n).into_owned(),
        })
    }

    pub fn to_flat(&self) -> DVector<f64> {
        let n = self.u.len();
        DVector::from_fn(
            2 * n,
            |i, _| if i < n { self.u[i] } else { self.theta[i - n] },
        )
    }

    pub fn buses(&self) -> usize {
        self.u.len()
    }
}

/// Complex power target `s = s_R + j s_I`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerTarget {
    pub s_r: DVector<f64>,
    pub s_i: DVector<f64>,
}

fn check_state(sys: &PowerSystem, u: &[f64], theta: &[f64]) -> Result<()> {
    for got in [u.len(), theta.len()] {
        if got != sys.buses() {
            return Err(Error::DimensionMismatch {
                expected: sys.buses(),
                got,
            });
        }
    }
    Ok(())
}

/// Active and reactive injections `(p, q)`.
pub fn eval_power(sys: &PowerSystem, state: &VoltageState) -> Result<(DVector<f64>, DVector<f64>)> {
    check_state(sys, state.u.as_slice(), state.theta.as_slice())?;
    Ok(injections(sys, state.u.as_slice(), state.theta.as_slice()))
}

fn injections(sys: &PowerSystem, u: &[f64], theta: &[f64]) -> (DVector<f64>, DVector<f64>) {
    let n = sys.buses();
    let mut p = DVector::zeros(n);
    let mut q = DVector::zeros(n);
    for i in 0..n {
        let (mut pi, mut qi) = (0.0, 0.0);
        for k in 0..n {
            let (g, b) = (sys.g[(i, k)], sys.b[(i, k)]);
            if g == 0.0 && b == 0.0 {
                continue;
            }
            let (s, c) = (theta[i] - theta[k]).sin_cos();
            pi += u[k] * (g * c + b * s);
            qi += u[k] * (g * s - b * c);
        }
        p[i] = u[i] * pi;
        q[i] = u[i] * qi;
    }
    (p, q)
}

/// `2N × 2N` Jacobian with row blocks `[∂p/∂u, ∂p/∂θ; ∂q/∂u, ∂q/∂θ]`.
///
/// With `a_ik = G_ik cos θ_ik + B_ik sin θ_ik` and
/// `b_ik = G_ik sin θ_ik − B_ik cos θ_ik`:
///
/// ```text
/// ∂p_i/∂u_i = 2u_i G_ii + Σ_{k≠i} u_k a_ik      ∂p_i/∂u_k = u_i a_ik
/// ∂p_i/∂θ_i = −Σ_{k≠i} u_i u_k b_ik             ∂p_i/∂θ_k = u_i u_k b_ik
/// ∂q_i/∂u_i = −2u_i B_ii + Σ_{k≠i} u_k b_ik     ∂q_i/∂u_k = u_i b_ik
/// ∂q_i/∂θ_i = Σ_{k≠i} u_i u_k a_ik              ∂q_i/∂θ_k = −u_i u_k a_ik
/// ```
pub fn eval_power_jacobian(sys: &PowerSystem, state: &VoltageState) -> Result<DMatrix<f64>> {
    check_state(sys, state.u.as_slice(), state.theta.as_slice())?;
    Ok(jacobian(sys, state.u.as_slice(), state.theta.as_slice()))
}

fn jacobian(sys: &PowerSystem, u: &[f64], theta: &[f64]) -> DMatrix<f64> {
    let n = sys.buses();
    let mut jac = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        let (mut dp_dui, mut dp_dthi, mut dq_dui, mut dq_dthi) = (0.0, 0.0, 0.0, 0.0);
        for k in 0..n {
            if k == i {
                continue;
            }
            let (g, b) = (sys.g[(i, k)], sys.b[(i, k)]);
            if g == 0.0 && b == 0.0 {
                continue;
            }
            let (s, c) = (theta[i] - theta[k]).sin_cos();
            let a_ik = g * c + b * s;
            let b_ik = g * s - b * c;
            let uu = u[i] * u[k];

            jac[(i, k)] = u[i] * a_ik;
            jac[(i, n + k)] = uu * b_ik;
            jac[(n + i, k)] = u[i] * b_ik;
            jac[(n + i, n + k)] = -uu * a_ik;

            dp_dui += u[k] * a_ik;
            dp_dthi -= uu * b_ik;
            dq_dui += u[k] * b_ik;
            dq_dthi += uu * a_ik;
        }
        jac[(i, i)] = 2.0 * u[i] * sys.g[(i, i)] + dp_dui;
        jac[(i, n + i)] = dp_dthi;
        jac[(n + i, i)] = -2.0 * u[i] * sys.b[(i, i)] + dq_dui;
        jac[(n + i, n + i)] = dq_dthi;
    }
    jac
}

/// Target injections generated by a feasible state: `s_R = p(x*)`,
/// `s_I = q(x*)`.
pub fn make_target(sys: &PowerSystem, x_star: &VoltageState) -> Result<PowerTarget> {
    if !sys.feasible_set().contains(&x_star.to_flat(), 0.0) {
        return Err(Error::Infeasible);
    }
    let (s_r, s_i) = eval_power(sys, x_star)?;
    Ok(PowerTarget { s_r, s_i })
}

/// Residual model `F(x) = (p(x) − s_R; q(x) − s_I)` over the flattened state.
#[derive(Debug, Clone)]
pub struct PowerFlowModel {
    pub system: PowerSystem,
    pub target: PowerTarget,
}

impl PowerFlowModel {
    pub fn feasible_set(&self) -> BoxSet {
        self.system.feasible_set()
    }
}

pub fn as_residual_model(sys: &PowerSystem, target: &PowerTarget) -> Result<PowerFlowModel> {
    for got in [target.s_r.len(), target.s_i.len()] {
        if got != sys.buses() {
            return Err(Error::DimensionMismatch {
                expected: sys.buses(),
                got,
            });
        }
    }
    Ok(PowerFlowModel {
        system: sys.clone(),
        target: target.clone(),
    })
}

impl ResidualModel for PowerFlowModel {
    fn n(&self) -> usize {
        2 * self.system.buses()
    }

    fn m(&self) -> usize {
        2 * self.system.buses()
    }

    fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = self.system.buses();
        let (u, theta) = x.as_slice().split_at(n);
        let (p, q) = injections(&self.system, u, theta);
        DVector::from_fn(2 * n, |i, _| {
            if i < n {
                p[i] - self.target.s_r[i]
            } else {
                q[i - n] - self.target.s_i[i - n]
            }
        })
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = self.system.buses();
        let (u, theta) = x.as_slice().split_at(n);
        jacobian(&self.system, u, theta)
    }
}
