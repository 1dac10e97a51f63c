//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use mpgn::powerflow::VoltageState;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("data")
        .join(name)
}

pub const CASES: [&str; 4] = ["case14.m", "case39.m", "case57.m", "case118.m"];

/// `p + jq = diag(v vᴴ Yᴴ)`, i.e. `s_i = v_i · conj(Σ_k Y_ik v_k)`, evaluated
/// with complex arithmetic and no trigonometric expansion.
pub fn complex_power(
    g: &DMatrix<f64>,
    b: &DMatrix<f64>,
    state: &VoltageState,
) -> (DVector<f64>, DVector<f64>) {
    let n = state.buses();
    let v: Vec<Complex64> = (0..n)
        .map(|i| Complex64::from_polar(state.u[i], state.theta[i]))
        .collect();
    let mut p = DVector::zeros(n);
    let mut q = DVector::zeros(n);
    for i in 0..n {
        let mut current = Complex64::new(0.0, 0.0);
        for k in 0..n {
            current += Complex64::new(g[(i, k)], b[(i, k)]) * v[k];
        }
        let s = v[i] * current.conj();
        p[i] = s.re;
        q[i] = s.im;
    }
    (p, q)
}

/// Regular grid over `[lo, hi]` with spacing at most `h`, both ends included.
pub fn grid_axis(lo: f64, hi: f64, h: f64) -> Vec<f64> {
    if hi <= lo {
        return vec![lo];
    }
    let steps = ((hi - lo) / h).ceil() as usize;
    (0..=steps)
        .map(|k| lo + (hi - lo) * k as f64 / steps as f64)
        .collect()
}

/// Minimum of `f` over a grid of at most two dimensions; returns the value and
/// the minimizing node.
pub fn grid_min(axes: &[Vec<f64>], f: impl Fn(&[f64]) -> f64) -> (f64, Vec<f64>) {
    let mut best = (f64::INFINITY, Vec::new());
    match axes {
        [a] => {
            for &x in a {
                let v = f(&[x]);
                if v < best.0 {
                    best = (v, vec![x]);
                }
            }
        }
        [a, b] => {
            for &x in a {
                for &y in b {
                    let v = f(&[x, y]);
                    if v < best.0 {
                        best = (v, vec![x, y]);
                    }
                }
            }
        }
        _ => panic!("grid oracle handles one or two dimensions"),
    }
    best
}

/// Grid search at resolution `h` over `[lo, hi]`, followed by two zoomed grids
/// (×100 finer each) around the best node. Valid for convex `f`.
pub fn zoomed_grid_min(
    lo: &[f64],
    hi: &[f64],
    h: f64,
    f: impl Fn(&[f64]) -> f64,
) -> (f64, Vec<f64>) {
    let axes: Vec<Vec<f64>> = lo
        .iter()
        .zip(hi)
        .map(|(&l, &u)| grid_axis(l, u, h))
        .collect();
    let mut best = grid_min(&axes, &f);
    let mut width = h;
    for _ in 0..2 {
        let fine = width / 100.0;
        let axes: Vec<Vec<f64>> = best
            .1
            .iter()
            .zip(lo.iter().zip(hi))
            .map(|(&c, (&l, &u))| {
                grid_axis((c - 2.0 * width).max(l), (c + 2.0 * width).min(u), fine)
            })
            .collect();
        let refined = grid_min(&axes, &f);
        if refined.0 < best.0 {
            best = refined;
        }
        width = fine;
    }
    best
}
