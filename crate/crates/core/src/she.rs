//! Explicit finite differences for `dZ = nu Z'' dt - (lambda/nu) sigma Z dW`
//! on `[-X, X]` with zero-flux ends, and the Hopf-Cole height
//! `h = -(nu/lambda) log Z`.

use std::io::Write;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::stats::{Batched, CheckRecord, Estimate, MomentAccumulator};

/// Largest `nu dt / dx^2` accepted.
pub const MAX_COURANT: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SheParams {
    pub nu: f64,
    pub lambda: f64,
    pub sigma: f64,
    pub dx: f64,
    pub dt: f64,
    pub half_width: f64,
    pub t_end: f64,
    /// Sign in front of the noise term; `-1` as in the equation above.
    pub noise_sign: f64,
}

impl SheParams {
    pub fn new(nu: f64, lambda: f64, sigma: f64, dx: f64, dt: f64, half_width: f64, t_end: f64) -> Result<Self> {
        for (name, v) in [("nu", nu), ("lambda", lambda), ("dx", dx), ("dt", dt), ("half_width", half_width)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!("sigma must be nonnegative, got {sigma}")));
        }
        if !(t_end >= 0.0 && t_end.is_finite()) {
            return Err(Error::invalid(format!("t_end must be nonnegative, got {t_end}")));
        }
        let courant = nu * dt / (dx * dx);
        if courant > MAX_COURANT * (1.0 + 1e-12) {
            return Err(Error::invalid(format!(
                "nu dt / dx^2 = {courant} exceeds the stability bound {MAX_COURANT}"
            )));
        }
        let cells = half_width / dx;
        if (cells - cells.round()).abs() > 1e-9 * cells.max(1.0) {
            return Err(Error::invalid(format!("half_width {half_width} is not a multiple of dx {dx}")));
        }
        Ok(SheParams {
            nu,
            lambda,
            sigma,
            dx,
            dt,
            half_width,
            t_end,
            noise_sign: -1.0,
        })
    }

    /// `nu = lambda = 1/2`, `sigma = 1`.
    pub fn matched(dx: f64, dt: f64, half_width: f64, t_end: f64) -> Result<Self> {
        Self::new(0.5, 0.5, 1.0, dx, dt, half_width, t_end)
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn with_noise_sign(mut self, sign: f64) -> Self {
        self.noise_sign = sign.signum();
        self
    }

    pub fn is_matched(&self) -> bool {
        self.nu == 0.5 && self.lambda == 0.5 && self.sigma == 1.0
    }

    pub fn half_cells(&self) -> usize {
        (self.half_width / self.dx).round() as usize
    }

    pub fn n_cells(&self) -> usize {
        2 * self.half_cells() + 1
    }

    /// Grid index of `x`, rounded to the nearest cell.
    pub fn index_of(&self, x: f64) -> Result<usize> {
        let j = (x / self.dx).round() as i64 + self.half_cells() as i64;
        if j < 0 || j >= self.n_cells() as i64 {
            return Err(Error::invalid(format!("x = {x} is outside [-{0}, {0}]", self.half_width)));
        }
        Ok(j as usize)
    }

    pub fn x_of(&self, j: usize) -> f64 {
        (j as f64 - self.half_cells() as f64) * self.dx
    }

    pub fn courant(&self) -> f64 {
        self.nu * self.dt / (self.dx * self.dx)
    }

    /// `beta = lambda sigma / nu`.
    pub fn beta(&self) -> f64 {
        self.lambda * self.sigma / self.nu
    }

    pub fn n_steps(&self, t: f64) -> u64 {
        (t / self.dt).round() as u64
    }

    /// Variance per unit length of the stationary Brownian height, `sigma^2 / 2 nu`.
    pub fn height_variance_rate(&self) -> f64 {
        self.sigma * self.sigma / (2.0 * self.nu)
    }

    /// Variance per unit length of `B = log Z(0, .)`.
    pub fn log_variance_rate(&self) -> f64 {
        (self.lambda / self.nu).powi(2) * self.height_variance_rate()
    }

    /// `window + 8 sqrt(nu t_end) + 10`.
    pub fn required_half_width(&self, window: f64) -> f64 {
        window + 8.0 * (self.nu * self.t_end).sqrt() + 10.0
    }

    pub fn check_buffer(&self, window: f64) -> Result<()> {
        let need = self.required_half_width(window);
        if self.half_width + 1e-9 < need {
            return Err(Error::BufferViolation(format!(
                "SHE half-width {} < {need} required for window {window} up to t = {}",
                self.half_width, self.t_end
            )));
        }
        Ok(())
    }
}

/// `Z` on the grid at one time.
#[derive(Clone, Debug, PartialEq)]
pub struct SheGrid {
    z: Vec<f64>,
    scratch: Vec<f64>,
    time: f64,
    steps: u64,
    negative: bool,
}

impl SheGrid {
    pub fn from_fn(params: &SheParams, f: impl Fn(f64) -> f64) -> Self {
        let z: Vec<f64> = (0..params.n_cells()).map(|j| f(params.x_of(j))).collect();
        let negative = z.iter().any(|&v| !(v > 0.0));
        SheGrid {
            scratch: vec![0.0; z.len()],
            z,
            time: 0.0,
            steps: 0,
            negative,
        }
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Set once some `Z` has become nonpositive; the replica is then invalid.
    pub fn negativity_flag(&self) -> bool {
        self.negative
    }

    /// Columns `x,Z,h`; `h` is empty where `Z <= 0`.
    pub fn write_csv<W: Write>(&self, params: &SheParams, mut out: W) -> Result<()> {
        writeln!(out, "x,Z,h")?;
        let scale = params.nu / params.lambda;
        for (j, &z) in self.z.iter().enumerate() {
            if z > 0.0 {
                writeln!(out, "{},{},{}", params.x_of(j), z, -scale * z.ln())?;
            } else {
                writeln!(out, "{},{},", params.x_of(j), z)?;
            }
        }
        Ok(())
    }
}

/// `Z = exp(B)` with `B(0) = 0` and independent Gaussian increments of
/// variance `log_variance_rate * dx`, drawn outwards: first to the right,
/// then to the left.
pub fn brownian_initial(params: &SheParams, stream: &mut RngStream) -> SheGrid {
    let n = params.half_cells();
    let sd = (params.log_variance_rate() * params.dx).sqrt();
    let mut b = vec![0.0; params.n_cells()];
    for j in n + 1..b.len() {
        let xi: f64 = StandardNormal.sample(stream);
        b[j] = b[j - 1] + sd * xi;
    }
    for j in (0..n).rev() {
        let xi: f64 = StandardNormal.sample(stream);
        b[j] = b[j + 1] + sd * xi;
    }
    let z: Vec<f64> = b.iter().map(|v| v.exp()).collect();
    SheGrid {
        scratch: vec![0.0; z.len()],
        z,
        time: 0.0,
        steps: 0,
        negative: false,
    }
}

/// One explicit step with one standard normal per cell.
pub fn step(grid: &mut SheGrid, params: &SheParams, stream: &mut RngStream) {
    let r = params.courant();
    let amp = params.noise_sign * params.beta() * (params.dt / params.dx).sqrt();
    let z = &grid.z;
    let next = &mut grid.scratch;
    let n = z.len();
    let mut negative = false;
    for j in 0..n {
        let left = z[j.saturating_sub(1)];
        let right = z[(j + 1).min(n - 1)];
        let mut v = z[j] + r * (left - 2.0 * z[j] + right);
        if amp != 0.0 {
            let xi: f64 = StandardNormal.sample(stream);
            v += amp * z[j] * xi;
        }
        negative |= !(v > 0.0);
        next[j] = v;
    }
    std::mem::swap(&mut grid.z, &mut grid.scratch);
    grid.negative |= negative;
    grid.steps += 1;
    grid.time = grid.steps as f64 * params.dt;
}

/// Steps until `time >= t` (to the nearest step). Stops early once the grid
/// is flagged; returns whether it is still valid.
pub fn evolve(grid: &mut SheGrid, params: &SheParams, stream: &mut RngStream, t: f64) -> bool {
    let target = params.n_steps(t);
    while grid.steps < target && !grid.negative {
        step(grid, params, stream);
    }
    !grid.negative
}

/// `h = -(nu/lambda) log Z` on the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct HopfColeField {
    pub h: Vec<f64>,
    pub dx: f64,
    pub time: f64,
}

impl HopfColeField {
    pub fn origin(&self) -> usize {
        self.h.len() / 2
    }

    /// `h` at `x`, rounded to the nearest cell.
    pub fn at(&self, x: f64) -> f64 {
        self.h[(self.origin() as i64 + (x / self.dx).round() as i64) as usize]
    }

    /// Restricts to the cells with `|x| <= window`.
    pub fn restrict(&self, window: f64) -> HopfColeField {
        let k = ((window / self.dx).round() as usize).min(self.origin());
        let o = self.origin();
        HopfColeField {
            h: self.h[o - k..=o + k].to_vec(),
            dx: self.dx,
            time: self.time,
        }
    }
}

pub fn hopf_cole(grid: &SheGrid, params: &SheParams) -> Result<HopfColeField> {
    if let Some(j) = grid.z.iter().position(|&z| !(z > 0.0)) {
        return Err(Error::NonPositive(j));
    }
    let scale = params.nu / params.lambda;
    Ok(HopfColeField {
        h: grid.z.iter().map(|z| -scale * z.ln()).collect(),
        dx: params.dx,
        time: grid.time,
    })
}

/// `N(t, x) = h(t, x) - h(0, x)`, `M(t, x) = h(t, x) - h(t, 0)` and `M(0, x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CurrentMass {
    pub n: Vec<f64>,
    pub m_t: Vec<f64>,
    pub m_0: Vec<f64>,
}

impl CurrentMass {
    /// `max_x |(N(t,x) - N(t,0)) - (M(t,x) - M(0,x))|`.
    pub fn conservation_residual(&self) -> f64 {
        let o = self.n.len() / 2;
        (0..self.n.len())
            .map(|j| ((self.n[j] - self.n[o]) - (self.m_t[j] - self.m_0[j])).abs())
            .fold(0.0, f64::max)
    }
}

pub fn current_mass(h0: &HopfColeField, ht: &HopfColeField) -> Result<CurrentMass> {
    if h0.h.len() != ht.h.len() || h0.dx != ht.dx || h0.h.len().is_multiple_of(2) {
        return Err(Error::GridMismatch(format!(
            "fields with {} and {} cells",
            h0.h.len(),
            ht.h.len()
        )));
    }
    let o = h0.origin();
    Ok(CurrentMass {
        n: ht.h.iter().zip(&h0.h).map(|(a, b)| a - b).collect(),
        m_t: ht.h.iter().map(|a| a - ht.h[o]).collect(),
        m_0: h0.h.iter().map(|a| a - h0.h[o]).collect(),
    })
}

/// Per-`x` results of the covariance suite.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CovRow {
    pub x: f64,
    pub var_h: Estimate,
    pub cov_n: Estimate,
    /// `Var h(t,x) - c|x| - Cov(N(t,0), N(t,x))`.
    pub residual: Estimate,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CovReport {
    pub t: f64,
    pub n_replicas: usize,
    pub rows: Vec<CovRow>,
}

fn covariance(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / (n - 1.0)
}

/// Minimum ensemble for the covariance suite.
pub const MIN_COV_REPLICAS: usize = 100;

/// `Var h(t,x)` and `Cov(N(t,0), N(t,x))` across replicas at each `x`, with
/// batch standard errors; `c` is the stationary variance rate of `h`.
pub fn cov_suite(replicas: &[(HopfColeField, HopfColeField)], xs: &[f64], c: f64, n_batches: usize) -> Result<CovReport> {
    if replicas.len() < MIN_COV_REPLICAS {
        return Err(Error::InsufficientData(format!(
            "{} replicas, the covariance suite needs at least {MIN_COV_REPLICAS}",
            replicas.len()
        )));
    }
    let t = replicas[0].1.time;
    let mut cols: Vec<[f64; 3]> = Vec::with_capacity(replicas.len() * xs.len());
    for (h0, ht) in replicas {
        let cm = current_mass(h0, ht)?;
        let o = h0.origin() as i64;
        for &x in xs {
            let j = o + (x / h0.dx).round() as i64;
            if j < 0 || j >= h0.h.len() as i64 {
                return Err(Error::GridMismatch(format!("x = {x} is outside the stored fields")));
            }
            let j = j as usize;
            cols.push([ht.h[j], cm.n[o as usize], cm.n[j]]);
        }
    }
    let nx = xs.len();
    let per_replica: Vec<&[[f64; 3]]> = cols.chunks(nx).collect();
    let stats = Batched::from_records(&per_replica, n_batches, |chunk| {
        Ok((0..nx)
            .map(|i| {
                let h: Vec<f64> = chunk.iter().map(|r| r[i][0]).collect();
                let n0: Vec<f64> = chunk.iter().map(|r| r[i][1]).collect();
                let nx_: Vec<f64> = chunk.iter().map(|r| r[i][2]).collect();
                (covariance(&h, &h), covariance(&n0, &nx_))
            })
            .collect::<Vec<_>>())
    })?;
    let rows = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| CovRow {
            x,
            var_h: stats.estimate(|s| s[i].0),
            cov_n: stats.estimate(|s| s[i].1),
            residual: stats.estimate(|s| s[i].0 - c * x.abs() - s[i].1),
        })
        .collect();
    Ok(CovReport {
        t,
        n_replicas: replicas.len(),
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IncrementReport {
    pub delta: f64,
    pub expected: f64,
    pub var_initial: Estimate,
    pub var_final: Estimate,
    /// Correlation of two adjacent disjoint increments at the final time.
    pub adjacent_correlation: Estimate,
    pub checks: Vec<CheckRecord>,
}

/// Per-replica averages of `D^2`, `D_0^2` and `D D'` over disjoint
/// increments of length `delta` inside `|x| <= window`.
fn increment_moments(h0: &HopfColeField, ht: &HopfColeField, delta: f64, window: f64) -> Result<[f64; 3]> {
    let step = (delta / h0.dx).round() as usize;
    let o = h0.origin();
    let k = (window / h0.dx).round() as usize;
    if step == 0 || k < step || k > o {
        return Err(Error::invalid(format!("delta {delta} does not fit the window {window}")));
    }
    let starts: Vec<usize> = (o - k..=o + k - step).step_by(step).collect();
    let inc = |f: &HopfColeField, j: usize| f.h[j + step] - f.h[j];
    let m = starts.len() as f64;
    let sq_t = starts.iter().map(|&j| inc(ht, j).powi(2)).sum::<f64>() / m;
    let sq_0 = starts.iter().map(|&j| inc(h0, j).powi(2)).sum::<f64>() / m;
    let cross = starts.windows(2).map(|w| inc(ht, w[0]) * inc(ht, w[1])).sum::<f64>() / (m - 1.0).max(1.0);
    Ok([sq_t, sq_0, cross])
}

/// Spatial increments of `h` against their stationary variance `delta`, at
/// the start and at the final time, plus whiteness of adjacent increments.
pub fn increment_check(
    params: &SheParams,
    replicas: &[(HopfColeField, HopfColeField)],
    delta: f64,
    window: f64,
    rel_tol: f64,
    k: f64,
) -> Result<IncrementReport> {
    if !params.is_matched() {
        return Err(Error::invalid(
            "the increment check is defined for nu = lambda = 1/2, sigma = 1",
        ));
    }
    if replicas.len() < 2 {
        return Err(Error::InsufficientData("increment check needs at least 2 replicas".into()));
    }
    let mut acc = [MomentAccumulator::new(); 3];
    for (h0, ht) in replicas {
        let m = increment_moments(h0, ht, delta, window)?;
        for (a, v) in acc.iter_mut().zip(m) {
            a.accumulate(v);
        }
    }
    let expected = params.height_variance_rate() * delta;
    let var_final = Estimate::mean_of(&acc[0])?;
    let var_initial = Estimate::mean_of(&acc[1])?;
    let cross = Estimate::mean_of(&acc[2])?;
    let adjacent_correlation = Estimate::new(cross.value / var_final.value, cross.stderr / var_final.value);
    let checks = vec![
        CheckRecord::within("increment_variance_t0", var_initial.value, expected, var_initial.stderr, k),
        CheckRecord::within(
            "increment_variance_t",
            var_final.value,
            expected,
            var_final.stderr + rel_tol * expected / k,
            k,
        ),
        CheckRecord::within(
            "increment_adjacent_correlation",
            adjacent_correlation.value,
            0.0,
            adjacent_correlation.stderr,
            k,
        ),
    ];
    Ok(IncrementReport {
        delta,
        expected,
        var_initial,
        var_final,
        adjacent_correlation,
        checks,
    })
}

/// Largest deviation of the noiseless scheme from the exact heat flow of a
/// unit-variance Gaussian bump, `Z(t, x) = (1 + 2 nu t)^{-1/2} exp(-x^2 / 2(1 + 2 nu t))`,
/// at time `t`.
///
/// The grid spans ten standard deviations of the bump at `t`, so the
/// truncated tails sit far below the discretization error and the initial
/// data never underflows to zero.
pub fn heat_bump_error(nu: f64, dx: f64, dt: f64, t: f64) -> Result<f64> {
    let half_width = (10.0 * (1.0 + 2.0 * nu * t).sqrt() / dx).ceil() * dx;
    let p = SheParams::new(nu, 1.0, 0.0, dx, dt, half_width, t)?;
    let exact = |x: f64, t: f64| {
        let s = 1.0 + 2.0 * nu * t;
        (-x * x / (2.0 * s)).exp() / s.sqrt()
    };
    let mut g = SheGrid::from_fn(&p, |x| exact(x, 0.0));
    // the noise amplitude is zero, so the stream is never drawn from
    evolve(&mut g, &p, &mut crate::rng::derive_stream(0, 0), t);
    Ok(g.z
        .iter()
        .enumerate()
        .map(|(j, z)| (z - exact(p.x_of(j), g.time)).abs())
        .fold(0.0, f64::max))
}

/// Coefficients after `h -> gamma^alpha h(gamma^beta t, gamma x)`.
pub fn rescale_params(alpha: f64, beta: f64, gamma: f64, lambda: f64, nu: f64, sigma: f64) -> Result<(f64, f64, f64)> {
    if !(gamma > 0.0) {
        return Err(Error::invalid(format!("gamma must be positive, got {gamma}")));
    }
    Ok((
        gamma.powf(alpha - beta + 2.0) * lambda,
        gamma.powf(-beta + 2.0) * nu,
        gamma.powf((-beta + 1.0 - 2.0 * alpha) / 2.0) * sigma,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_stream;

    fn matched(x: f64, t: f64) -> SheParams {
        SheParams::matched(0.1, 0.0025, x, t).unwrap()
    }

    #[test]
    fn params_validation() {
        assert!(SheParams::matched(0.1, 0.0025, 20.0, 4.0).is_ok());
        assert!((matched(20.0, 4.0).courant() - 0.125).abs() < 1e-15);
        assert!(SheParams::matched(0.1, 0.006, 20.0, 4.0).is_err());
        assert!(SheParams::matched(0.1, 0.0025, 20.05, 4.0).is_err());
        assert!(SheParams::new(0.5, 0.5, -1.0, 0.1, 0.001, 5.0, 1.0).is_err());
        assert!(SheParams::new(0.0, 0.5, 1.0, 0.1, 0.001, 5.0, 1.0).is_err());
        let p = matched(20.0, 4.0);
        assert_eq!(p.n_cells(), 401);
        assert_eq!(p.index_of(0.0).unwrap(), 200);
        assert!((p.x_of(0) + 20.0).abs() < 1e-12);
        assert!(p.index_of(20.1).is_err());
        assert_eq!(p.n_steps(4.0), 1600);
        assert_eq!(p.height_variance_rate(), 1.0);
        assert_eq!(p.log_variance_rate(), 1.0);
    }

    #[test]
    fn buffer_rule() {
        let p = matched(42.0, 4.0);
        assert!(p.check_buffer(20.0).is_ok());
        let p = matched(30.0, 4.0);
        assert!(matches!(p.check_buffer(20.0), Err(Error::BufferViolation(_))));
    }

    #[test]
    fn brownian_start() {
        let p = matched(5.0, 1.0);
        let g = brownian_initial(&p, &mut derive_stream(1, 0));
        assert_eq!(g.z()[p.index_of(0.0).unwrap()], 1.0);
        assert!(!g.negativity_flag());
        let h = hopf_cole(&g, &p).unwrap();
        assert_eq!(h.at(0.0), 0.0);
    }

    #[test]
    fn brownian_variance_and_independence() {
        let p = SheParams::new(0.5, 1.0, 1.0, 0.1, 0.0025, 5.0, 1.0).unwrap();
        let n = 20_000;
        let (mut v, mut prod, mut inc2) = (MomentAccumulator::new(), MomentAccumulator::new(), MomentAccumulator::new());
        let (j3, j4) = (p.index_of(3.0).unwrap(), p.index_of(4.0).unwrap());
        for i in 0..n {
            let g = brownian_initial(&p, &mut derive_stream(2, i));
            let b3 = g.z()[j3].ln();
            let inc = g.z()[j4].ln() - b3;
            v.accumulate(b3 * b3);
            prod.accumulate(b3 * inc);
            inc2.accumulate(inc * inc);
        }
        let rate = p.log_variance_rate();
        assert_eq!(rate, 4.0);
        let e = Estimate::mean_of(&v).unwrap();
        assert!((e.value - rate * 3.0).abs() < 4.0 * e.stderr, "{e:?}");
        let c = Estimate::mean_of(&prod).unwrap();
        assert!(c.value.abs() < 4.0 * c.stderr, "{c:?}");
        let d = Estimate::mean_of(&inc2).unwrap();
        assert!((d.value - rate).abs() < 4.0 * d.stderr);
    }

    #[test]
    fn constant_field_is_stationary_without_noise() {
        let p = matched(3.0, 1.0).with_sigma(0.0);
        let mut g = SheGrid::from_fn(&p, |_| 1.0);
        let mut rng = derive_stream(0, 0);
        assert!(evolve(&mut g, &p, &mut rng, 1.0));
        assert!(g.z().iter().all(|&z| z == 1.0));
        assert_eq!(g.steps(), 400);
        assert!((g.time() - 1.0).abs() < 1e-12);
    }

    /// `sqrt(s0 / s) exp(-x^2 / 2 s)` with `s = s0 + 2 nu t`.
    fn heat_kernel(nu: f64, s0: f64, t: f64, x: f64) -> f64 {
        let s = s0 + 2.0 * nu * t;
        (s0 / s).sqrt() * (-x * x / (2.0 * s)).exp()
    }

    fn bump_error(dx: f64, dt: f64) -> f64 {
        let (nu, s0, t) = (0.5, 1.0, 1.0);
        let p = SheParams::new(nu, 0.5, 0.0, dx, dt, 15.0, t).unwrap();
        let mut g = SheGrid::from_fn(&p, |x| heat_kernel(nu, s0, 0.0, x));
        evolve(&mut g, &p, &mut derive_stream(0, 0), t);
        g.z()
            .iter()
            .enumerate()
            .map(|(j, z)| (z - heat_kernel(nu, s0, t, p.x_of(j))).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn heat_kernel_refinement() {
        let coarse = bump_error(0.1, 0.0025);
        let fine = bump_error(0.05, 0.000625);
        assert!(coarse < 1e-3, "{coarse}");
        let ratio = coarse / fine;
        assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
        let lib = heat_bump_error(0.5, 0.1, 0.0025, 1.0).unwrap();
        assert!((lib - coarse).abs() < 1e-12, "{lib} vs {coarse}");
    }

    #[test]
    fn hopf_cole_transform() {
        let p = matched(1.0, 1.0);
        let g = SheGrid::from_fn(&p, |_| 1.0);
        assert!(hopf_cole(&g, &p).unwrap().h.iter().all(|&h| h == 0.0));
        let g = SheGrid::from_fn(&p, |_| (-2.0f64).exp());
        assert!(hopf_cole(&g, &p).unwrap().h.iter().all(|&h| (h - 2.0).abs() < 1e-15));
        let q = SheParams::new(0.5, 0.25, 1.0, 0.1, 0.0025, 1.0, 1.0).unwrap();
        let mut rng = derive_stream(3, 0);
        let g = brownian_initial(&q, &mut rng);
        let h = hopf_cole(&g, &q).unwrap();
        for (j, &z) in g.z().iter().enumerate() {
            assert!((h.h[j] + 2.0 * z.ln()).abs() < 1e-15);
        }
        let bad = SheGrid::from_fn(&p, |x| if x > 0.5 { -1.0 } else { 1.0 });
        assert!(bad.negativity_flag());
        assert!(matches!(hopf_cole(&bad, &p), Err(Error::NonPositive(_))));
    }

    #[test]
    fn current_mass_fields() {
        let p = matched(4.0, 0.5);
        let mut rng = derive_stream(4, 0);
        let mut g = brownian_initial(&p, &mut rng);
        let h0 = hopf_cole(&g, &p).unwrap();
        let same = current_mass(&h0, &h0).unwrap();
        assert!(same.n.iter().all(|&n| n == 0.0));
        evolve(&mut g, &p, &mut rng, 0.5);
        let ht = hopf_cole(&g, &p).unwrap();
        let cm = current_mass(&h0, &ht).unwrap();
        let o = h0.origin();
        assert_eq!(cm.m_t[o], 0.0);
        assert_eq!(cm.n[o], ht.h[o]);
        assert!(cm.conservation_residual() <= 1e-9);
        let short = h0.restrict(2.0);
        assert!(current_mass(&short, &ht).is_err());
    }

    #[test]
    fn restriction_keeps_origin() {
        let p = matched(4.0, 0.5);
        let h = hopf_cole(&brownian_initial(&p, &mut derive_stream(5, 1)), &p).unwrap();
        let r = h.restrict(1.0);
        assert_eq!(r.h.len(), 21);
        assert_eq!(r.at(0.0), 0.0);
        assert_eq!(r.at(0.7), h.at(0.7));
    }

    #[test]
    fn mean_z_follows_deterministic_flow() {
        // the noise has zero conditional mean, so E Z solves the noiseless scheme
        let p = matched(6.0, 0.5);
        let det = p.with_sigma(0.0);
        let j = p.index_of(0.0).unwrap();
        let mut acc = MomentAccumulator::new();
        for i in 0..400 {
            let g0 = brownian_initial(&p, &mut derive_stream(6, i));
            let mut a = g0.clone();
            let mut b = g0;
            evolve(&mut a, &p, &mut derive_stream(7, i), 0.5);
            evolve(&mut b, &det, &mut derive_stream(7, i), 0.5);
            acc.accumulate(a.z()[j] - b.z()[j]);
        }
        let e = Estimate::mean_of(&acc).unwrap();
        assert!(e.value.abs() < 4.0 * e.stderr, "{e:?}");
    }

    #[test]
    fn noise_sign_does_not_change_log_variance() {
        let p = matched(6.0, 0.5);
        let flipped = p.with_noise_sign(1.0);
        let j = p.index_of(0.0).unwrap();
        let run = |q: &SheParams, salt: u64| -> MomentAccumulator {
            (0..600)
                .map(|i| {
                    let mut g = brownian_initial(q, &mut derive_stream(salt, i));
                    evolve(&mut g, q, &mut derive_stream(salt + 1, i), 0.5);
                    g.z()[j].ln()
                })
                .collect()
        };
        let a = run(&p, 10);
        let b = run(&flipped, 20);
        // variance of a sample variance is about 2 sigma^4 / n for near-Gaussian data
        let (va, vb) = (a.variance().unwrap(), b.variance().unwrap());
        let se = (2.0 * va * va / 600.0 + 2.0 * vb * vb / 600.0).sqrt();
        assert!((va - vb).abs() < 4.0 * se, "{va} vs {vb}");
    }

    #[test]
    fn cov_suite_at_time_zero() {
        let p = matched(8.0, 0.0);
        let reps: Vec<_> = (0..600)
            .map(|i| {
                let h = hopf_cole(&brownian_initial(&p, &mut derive_stream(8, i)), &p).unwrap();
                (h.clone(), h)
            })
            .collect();
        let xs = [0.0, 1.0, 3.0];
        let rep = cov_suite(&reps, &xs, 1.0, 30).unwrap();
        for row in &rep.rows {
            // N vanishes at t = 0, so Var h(0, x) = |x| in law
            assert_eq!(row.cov_n.value, 0.0);
            assert!((row.var_h.value - row.x.abs()).abs() < 4.0 * row.var_h.stderr + 1e-12, "{row:?}");
        }
        assert!(cov_suite(&reps[..50], &xs, 1.0, 30).is_err());
    }

    #[test]
    fn cov_suite_at_origin_is_exact() {
        let p = matched(6.0, 0.2);
        let reps: Vec<_> = (0..120)
            .map(|i| {
                let mut g = brownian_initial(&p, &mut derive_stream(9, i));
                let h0 = hopf_cole(&g, &p).unwrap();
                evolve(&mut g, &p, &mut derive_stream(9, 1000 + i), 0.2);
                (h0, hopf_cole(&g, &p).unwrap())
            })
            .collect();
        let rep = cov_suite(&reps, &[0.0], 1.0, 30).unwrap();
        let row = &rep.rows[0];
        assert!((row.var_h.value - row.cov_n.value).abs() < 1e-12);
        assert!(row.residual.value.abs() < 1e-12);
    }

    #[test]
    fn increment_check_requires_matched_normalisation() {
        let p = SheParams::new(1.0, 0.5, 1.0, 0.1, 0.0025, 5.0, 1.0).unwrap();
        let h = hopf_cole(&brownian_initial(&p, &mut derive_stream(1, 1)), &p).unwrap();
        let reps = vec![(h.clone(), h.clone()), (h.clone(), h)];
        assert!(increment_check(&p, &reps, 1.0, 4.0, 0.05, 3.0).is_err());
    }

    #[test]
    fn increments_at_time_zero() {
        let p = matched(8.0, 0.0);
        let reps: Vec<_> = (0..400)
            .map(|i| {
                let h = hopf_cole(&brownian_initial(&p, &mut derive_stream(11, i)), &p).unwrap();
                (h.clone(), h)
            })
            .collect();
        let rep = increment_check(&p, &reps, 1.0, 6.0, 0.05, 4.0).unwrap();
        assert!(rep.checks.iter().all(|c| c.pass), "{rep:?}");
        assert_eq!(rep.var_initial, rep.var_final);
    }

    #[test]
    fn rescaling() {
        let (l, n, s) = rescale_params(0.3, 1.1, 1.0, 0.5, 0.7, 1.3).unwrap();
        assert_eq!((l, n, s), (0.5, 0.7, 1.3));
        let (l, n, s) = rescale_params(0.5, 1.5, 4.0, 1.0, 1.0, 1.0).unwrap();
        assert!((l - 4.0).abs() < 1e-12);
        assert!((n - 2.0).abs() < 1e-12);
        assert!((s - 4f64.powf(-0.75)).abs() < 1e-12);
        for gamma in [0.1, 2.0, 37.0] {
            let (_, n, _) = rescale_params(0.0, 2.0, gamma, 1.0, 0.8, 1.0).unwrap();
            assert!((n - 0.8).abs() < 1e-12);
        }
        assert!(rescale_params(0.5, 1.5, 0.0, 1.0, 1.0, 1.0).is_err());
    }
}
