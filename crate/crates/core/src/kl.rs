//! Empirical rate classification of merit traces.
//!
//! Under a Kurdyka-Lojasiewicz inequality with exponent `q` the gap
//! `δ_k = f_k − f_*` of a descent method decays linearly (`q ≥ 1`) or like
//! `k^{−q/(2−q)}`. [`fit_kl_rate`] fits both shapes to the tail of a trace and
//! reports the better one. It describes what a trace looks like; it does not
//! certify any exponent.

use std::ops::Range;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Linear,
    Sublinear,
    Stalled,
    Inconclusive,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Linear => "linear",
            Regime::Sublinear => "sublinear",
            Regime::Stalled => "stalled",
            Regime::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateFit {
    pub regime: Regime,
    /// Contraction factor per iteration for [`Regime::Linear`], decay exponent
    /// for [`Regime::Sublinear`].
    pub rate: Option<f64>,
    /// Coefficient of determination of the better fit, when one was made.
    pub r2: Option<f64>,
    /// Indices of `values` used for the fit.
    pub window: Range<usize>,
}

impl RateFit {
    fn without_fit(regime: Regime, window: Range<usize>) -> Self {
        Self {
            regime,
            rate: None,
            r2: None,
            window,
        }
    }
}

/// Ordinary least squares `y ≈ a + b t`, returning `(b, r²)`.
fn regress(t: &[f64], y: &[f64]) -> (f64, f64) {
    let n = t.len() as f64;
    let mean_t = t.iter().sum::<f64>() / n;
    let mean_y = y.iter().sum::<f64>() / n;
    let (mut stt, mut sty, mut syy) = (0.0, 0.0, 0.0);
    for (&ti, &yi) in t.iter().zip(y) {
        stt += (ti - mean_t) * (ti - mean_t);
        sty += (ti - mean_t) * (yi - mean_y);
        syy += (yi - mean_y) * (yi - mean_y);
    }
    let slope = sty / stt;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        sty * sty / (stt * syy)
    };
    (slope, r2)
}

/// Minimum tail points for a fit.
pub const MIN_TAIL_POINTS: usize = 5;

/// Classifies the decay of `values[k] − f_star` on the last `tail_fraction` of
/// the sequence.
///
/// Element `k` is treated as iteration `k + 1` in the power model so that a
/// trace starting at iteration 0 can be fitted in log-log coordinates.
/// Points with `δ_k ≤ 0` are dropped.
pub fn fit_kl_rate(values: &[f64], f_star: f64, tail_fraction: f64) -> RateFit {
    assert!(
        tail_fraction > 0.0 && tail_fraction <= 1.0,
        "tail_fraction must lie in (0, 1]"
    );
    let len = values.len();
    let tail = ((len as f64) * tail_fraction).ceil() as usize;
    let window = len - tail.min(len)..len;

    let points: Vec<(f64, f64)> = window
        .clone()
        .filter_map(|k| {
            let gap = values[k] - f_star;
            (gap > 0.0 && gap.is_finite()).then_some(((k + 1) as f64, gap))
        })
        .collect();
    if points.len() < MIN_TAIL_POINTS {
        return RateFit::without_fit(Regime::Inconclusive, window);
    }

    let (first, last) = (points[0].1, points[points.len() - 1].1);
    if last >= 0.99 * first {
        return RateFit::without_fit(Regime::Stalled, window);
    }

    let k: Vec<f64> = points.iter().map(|p| p.0).collect();
    let log_k: Vec<f64> = k.iter().map(|t| t.ln()).collect();
    let log_gap: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();

    let (lin_slope, lin_r2) = regress(&k, &log_gap);
    let (pow_slope, pow_r2) = regress(&log_k, &log_gap);

    if lin_r2 < 0.9 && pow_r2 < 0.9 {
        return RateFit {
            regime: Regime::Inconclusive,
            rate: None,
            r2: Some(lin_r2.max(pow_r2)),
            window,
        };
    }
    let (regime, rate, r2) = if lin_r2 >= pow_r2 {
        (Regime::Linear, lin_slope.exp(), lin_r2)
    } else {
        (Regime::Sublinear, -pow_slope, pow_r2)
    };
    let sane = match regime {
        Regime::Linear => rate > 0.0 && rate < 1.0,
        _ => rate > 0.0,
    };
    if !sane {
        return RateFit {
            regime: Regime::Inconclusive,
            rate: None,
            r2: Some(r2),
            window,
        };
    }
    RateFit {
        regime,
        rate: Some(rate),
        r2: Some(r2),
        window,
    }
}
