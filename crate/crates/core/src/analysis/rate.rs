//! Log-log rate fits of the error ledger.

use serde::{Deserialize, Serialize};

use crate::engine::Trace;
use crate::error::{Error, Result};

/// Minimum number of usable points for a fit.
pub const MIN_FIT_POINTS: usize = 10;
/// Fits with `r² < this` are flagged as poor (not power-law shaped).
pub const DEFAULT_R2_THRESHOLD: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    /// Least-squares slope of `ln e_t` against `ln(t+1)`.
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub n_points: usize,
    pub t_lo: usize,
    pub t_hi: usize,
    /// First `t` in the window with `e_t <= 0`; the fit stops before it.
    pub truncated_at: Option<usize>,
    pub poor_fit: bool,
}

/// Default window `[T/10, T]`, clipped to start at 1.
pub fn default_window(iterations: usize) -> (usize, usize) {
    ((iterations / 10).max(1), iterations)
}

/// Fits `errors[t]` over `t ∈ [t_lo, t_hi]`.
pub fn fit_rate_errors(
    errors: &[f64],
    t_lo: usize,
    t_hi: usize,
    r2_threshold: f64,
) -> Result<RateFit> {
    if t_lo < 1 || t_hi <= t_lo {
        return Err(Error::param(
            "window",
            format!("need 1 <= t_lo < t_hi, got [{t_lo}, {t_hi}]"),
        ));
    }
    if t_hi >= errors.len() {
        return Err(Error::param(
            "window",
            format!(
                "t_hi = {t_hi} beyond trace end t = {}",
                errors.len().saturating_sub(1)
            ),
        ));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut truncated_at = None;
    for (t, &e) in errors.iter().enumerate().take(t_hi + 1).skip(t_lo) {
        if !(e > 0.0) {
            truncated_at = Some(t);
            break;
        }
        xs.push(((t + 1) as f64).ln());
        ys.push(e.ln());
    }
    let n = xs.len();
    if n < MIN_FIT_POINTS {
        return Err(Error::InsufficientData {
            needed: MIN_FIT_POINTS,
            got: n,
        });
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(&ys) {
        let dx = x - mx;
        let dy = y - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    // A flat series is fit exactly by slope 0.
    let r2 = if syy <= f64::EPSILON * f64::EPSILON * nf * my.abs().max(1.0) {
        1.0
    } else {
        (sxy * sxy) / (sxx * syy)
    };
    Ok(RateFit {
        slope,
        intercept,
        r2,
        n_points: n,
        t_lo,
        t_hi,
        truncated_at,
        poor_fit: r2 < r2_threshold,
    })
}

pub fn fit_rate(trace: &Trace, window: (usize, usize)) -> Result<RateFit> {
    fit_rate_errors(&trace.errors(), window.0, window.1, DEFAULT_R2_THRESHOLD)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_power_laws() {
        for p in [1.0, 2.0, 3.0] {
            let e: Vec<f64> = (0..=10_000)
                .map(|t| 2.5 / ((t + 1) as f64).powf(p))
                .collect();
            let fit = fit_rate_errors(&e, 100, 10_000, DEFAULT_R2_THRESHOLD).unwrap();
            assert!((fit.slope + p).abs() < 1e-6, "p={p}: {fit:?}");
            assert!(fit.r2 > 0.999_999);
            assert!(!fit.poor_fit);
        }
    }

    #[test]
    fn constant_trace_has_zero_slope() {
        let e = vec![0.7; 200];
        let fit = fit_rate_errors(&e, 1, 199, DEFAULT_R2_THRESHOLD).unwrap();
        assert!(fit.slope.abs() < 1e-12);
    }

    #[test]
    fn geometric_sequence_is_flagged() {
        let e: Vec<f64> = (0..=2000).map(|t| 0.9_f64.powi(t)).collect();
        let short = fit_rate_errors(&e, 100, 1000, DEFAULT_R2_THRESHOLD).unwrap();
        let long = fit_rate_errors(&e, 100, 2000, DEFAULT_R2_THRESHOLD).unwrap();
        assert!(long.slope < short.slope, "slope should keep steepening");
        assert!(long.poor_fit);
    }

    #[test]
    fn zeros_truncate_and_short_windows_fail() {
        let mut e: Vec<f64> = (0..100).map(|t| 1.0 / (t + 1) as f64).collect();
        e[50] = 0.0;
        let fit = fit_rate_errors(&e, 10, 99, DEFAULT_R2_THRESHOLD).unwrap();
        assert_eq!(fit.truncated_at, Some(50));
        assert_eq!(fit.n_points, 40);
        assert!(matches!(
            fit_rate_errors(&e, 45, 99, DEFAULT_R2_THRESHOLD),
            Err(Error::InsufficientData { got: 5, .. })
        ));
        assert!(fit_rate_errors(&e, 0, 10, DEFAULT_R2_THRESHOLD).is_err());
        assert!(fit_rate_errors(&e, 10, 100, DEFAULT_R2_THRESHOLD).is_err());
    }
}
