use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitPoint {
    pub t: f64,
    pub y: f64,
    pub y_stderr: f64,
}

impl FitPoint {
    pub fn new(t: f64, y: f64, y_stderr: f64) -> Self {
        FitPoint { t, y, y_stderr }
    }
}

/// Straight line through `(log t, log y)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub r_squared: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub n_points: usize,
}

fn log_points(points: &[FitPoint]) -> Result<Vec<(f64, f64)>> {
    if points.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} points, an exponent fit needs at least 3",
            points.len()
        )));
    }
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if !(p.y > 0.0) {
                Err(Error::NonPositive(i))
            } else if !(p.t > 0.0) {
                Err(Error::invalid(format!("fit point {i} has nonpositive t = {}", p.t)))
            } else {
                Ok((p.t.ln(), p.y.ln()))
            }
        })
        .collect()
}

fn t_range(points: &[FitPoint]) -> (f64, f64) {
    points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.t), hi.max(p.t)))
}

/// Weighted least squares; `residual_scale` switches between the
/// residual-based slope error and the one implied by the weights alone.
fn least_squares(xy: &[(f64, f64)], w: &[f64], residual_scale: bool) -> Result<(f64, f64, f64, f64)> {
    let sw: f64 = w.iter().sum();
    let xbar = xy.iter().zip(w).map(|((x, _), w)| w * x).sum::<f64>() / sw;
    let ybar = xy.iter().zip(w).map(|((_, y), w)| w * y).sum::<f64>() / sw;
    let sxx: f64 = xy.iter().zip(w).map(|((x, _), w)| w * (x - xbar).powi(2)).sum();
    let sxy: f64 = xy.iter().zip(w).map(|((x, y), w)| w * (x - xbar) * (y - ybar)).sum();
    let syy: f64 = xy.iter().zip(w).map(|((_, y), w)| w * (y - ybar).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::InsufficientData("all fit points share one t".into()));
    }
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let rss: f64 = xy
        .iter()
        .zip(w)
        .map(|((x, y), w)| w * (y - intercept - slope * x).powi(2))
        .sum();
    let n = xy.len() as f64;
    let slope_var = if residual_scale { rss / (n - 2.0) / sxx } else { 1.0 / sxx };
    let r_squared = if syy > 0.0 { 1.0 - rss / syy } else { 1.0 };
    Ok((slope, intercept, slope_var.sqrt(), r_squared))
}

/// Ordinary least squares on `(log t, log y)`; the slope error comes from
/// the residuals.
pub fn fit_exponent(points: &[FitPoint]) -> Result<FitResult> {
    let xy = log_points(points)?;
    let (slope, intercept, slope_stderr, r_squared) = least_squares(&xy, &vec![1.0; xy.len()], true)?;
    let (t_min, t_max) = t_range(points);
    Ok(FitResult {
        slope,
        intercept,
        slope_stderr,
        r_squared,
        t_min,
        t_max,
        n_points: points.len(),
    })
}

/// Least squares on logs weighted by `(y / y_stderr)^2`, the inverse
/// variance of `log y` to first order. The slope error is the one implied by
/// the error bars.
pub fn fit_exponent_weighted(points: &[FitPoint]) -> Result<FitResult> {
    let xy = log_points(points)?;
    let w = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if p.y_stderr > 0.0 {
                Ok((p.y / p.y_stderr).powi(2))
            } else {
                Err(Error::invalid(format!("fit point {i} needs a positive standard error")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let (slope, intercept, slope_stderr, r_squared) = least_squares(&xy, &w, false)?;
    let (t_min, t_max) = t_range(points);
    Ok(FitResult {
        slope,
        intercept,
        slope_stderr,
        r_squared,
        t_min,
        t_max,
        n_points: points.len(),
    })
}
