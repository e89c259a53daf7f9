//! Least-squares rate fits.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("abscissae span a factor {spread:.3}, need at least 2")]
    DegenerateFit { spread: f64 },
    #[error("{found} samples inside the window, need at least 3")]
    TooFewPoints { found: usize },
    #[error("sample ({x}, {y}) is not positive")]
    NonPositive { x: f64, y: f64 },
}

/// Fitted slope with its standard error, the RMS residual of the fit and
/// the window that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
    pub residual: f64,
    pub window: [f64; 2],
    pub n: usize,
}

fn in_window(samples: &[(f64, f64)], window: Option<[f64; 2]>) -> Vec<(f64, f64)> {
    samples
        .iter()
        .copied()
        .filter(|(x, _)| window.is_none_or(|[a, b]| *x >= a && *x <= b))
        .collect()
}

/// Ordinary least squares `y = a + s x`.
fn ols(pts: &[(f64, f64)]) -> (f64, f64, f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let stderr = if pts.len() > 2 { (ssr / (n - 2.0) / sxx).sqrt() } else { f64::NAN };
    (slope, intercept, stderr, (ssr / n).sqrt())
}

/// Slope of `log y` against `log x` over the samples with `x` in `window`.
pub fn fit_loglog_rate(samples: &[(f64, f64)], window: Option<[f64; 2]>) -> Result<Fit, FitError> {
    let pts = in_window(samples, window);
    if pts.len() < 3 {
        return Err(FitError::TooFewPoints { found: pts.len() });
    }
    if let Some(&(x, y)) = pts.iter().find(|(x, y)| !(*x > 0.0 && *y > 0.0)) {
        return Err(FitError::NonPositive { x, y });
    }
    let lo = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = pts.iter().map(|p| p.0).fold(0.0, f64::max);
    if hi / lo < 2.0 {
        return Err(FitError::DegenerateFit { spread: hi / lo });
    }
    let logs: Vec<(f64, f64)> = pts.iter().map(|(x, y)| (x.ln(), y.ln())).collect();
    let (slope, intercept, stderr, residual) = ols(&logs);
    Ok(Fit {
        slope,
        intercept,
        stderr,
        residual,
        window: window.unwrap_or([lo, hi]),
        n: pts.len(),
    })
}

/// Slope of `log y` against `t`: the exponential rate of `y`.
pub fn fit_exponential_rate(samples: &[(f64, f64)], window: Option<[f64; 2]>) -> Result<Fit, FitError> {
    let pts = in_window(samples, window);
    if pts.len() < 3 {
        return Err(FitError::TooFewPoints { found: pts.len() });
    }
    if let Some(&(x, y)) = pts.iter().find(|(_, y)| !(*y > 0.0)) {
        return Err(FitError::NonPositive { x, y });
    }
    let lo = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(FitError::DegenerateFit { spread: 1.0 });
    }
    let logs: Vec<(f64, f64)> = pts.iter().map(|(x, y)| (*x, y.ln())).collect();
    let (slope, intercept, stderr, residual) = ols(&logs);
    Ok(Fit {
        slope,
        intercept,
        stderr,
        residual,
        window: window.unwrap_or([lo, hi]),
        n: pts.len(),
    })
}

/// Trapezoidal rule over `(t, f)` samples.
pub fn trapezoid(samples: &[(f64, f64)]) -> f64 {
    samples.windows(2).map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1)).sum()
}
