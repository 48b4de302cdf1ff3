//! Stationary height and second-class ensembles on the configured time grid,
//! and the estimators and checks shared by the sweep and the identity suite.

use super::config::ExperimentConfig;
use super::ensemble::{run_coupled, run_heights, CoupledSample, HeightSample, InvalidCount, LatticePlan, StreamRange};
use super::estimates::{CoupledStats, HeightStats, SweepRow};
use super::RunOutput;
use crate::error::Result;
use crate::replicas::Execution;
use crate::rng::{derive_stream, stream_id, StreamFamily};
use crate::stats::{fit_exponent, CheckRecord, FitPoint, FitResult, Histogram};

/// Bootstrap resamples behind each histogram symmetry check.
pub const BOOTSTRAP_RESAMPLES: usize = 200;

/// `points` positive sites spread evenly over `(0, window]`.
pub fn grid_points(window: usize, points: usize) -> Vec<i64> {
    let mut xs: Vec<i64> = (1..=points)
        .map(|j| (j as f64 * window as f64 / points as f64).round() as i64)
        .filter(|&x| x > 0)
        .collect();
    xs.dedup();
    xs
}

/// First bond at which currents are expected to be uncorrelated with the
/// origin by micro time `t`: `4 (p + q) t + 10 sqrt(t)`.
pub fn decay_bond(eps: f64, t: f64) -> i64 {
    (4.0 * (1.0 + eps.sqrt()) * t + 10.0 * t.sqrt()).ceil() as i64
}

/// Lattice half-width that keeps `bond` free of boundary effects up to `t`.
fn decay_reach(eps: f64, bond: i64, t: f64) -> usize {
    bond as usize + (3.0 * (1.0 + eps.sqrt()) * t).ceil() as usize + (10.0 * t.sqrt()).ceil() as usize
}

/// Which ensembles a lattice run needs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Needs {
    pub heights: bool,
    pub coupled: bool,
    /// Monitor currents at the per-x grid and at the decay bond.
    pub monitor: bool,
}

pub struct LatticeRun {
    pub plan: LatticePlan,
    pub t_grid: Vec<f64>,
    /// Positive per-x grid in lattice units.
    pub xs: Vec<i64>,
    /// Bonds whose currents are recorded: 0, then `xs`, then the decay bond.
    pub monitored: Vec<i64>,
    pub decay_bond: Option<i64>,
    pub heights: Vec<HeightSample>,
    pub coupled: Vec<CoupledSample>,
}

impl LatticeRun {
    pub fn execute(cfg: &ExperimentConfig, exec: Execution, needs: Needs, out: &mut RunOutput) -> Result<Self> {
        let eps = cfg.eps;
        let micro: Vec<f64> = cfg.t_grid.iter().map(|t| t / (eps * eps)).collect();
        let ov = &cfg.engine_overrides;
        let decay = needs.monitor.then(|| decay_bond(eps, micro[0]));
        let reach = decay.map_or(0, |b| decay_reach(eps, b, micro[0]));
        let plan = LatticePlan::new(eps, cfg.rho, micro, ov.window, ov.half_width, cfg.buffer_multiplier(), reach)?;
        let xs = grid_points(plan.window, cfg.suite.x_points);
        let mut monitored = vec![0];
        if needs.monitor {
            monitored.extend(&xs);
            monitored.extend(decay);
        }
        let conserved: Vec<i64> = xs.iter().rev().map(|x| -x).chain([0]).chain(xs.iter().copied()).collect();
        let n = cfg.replicas as u64;
        let heights = if needs.heights {
            out.streams.push(StreamRange::new("wasep_heights", StreamFamily::Wasep, 0, n));
            run_heights(&plan, &monitored, &conserved, cfg.master_seed, StreamFamily::Wasep, 0, n, exec)?
        } else {
            Vec::new()
        };
        let coupled = if needs.coupled {
            let guard = ov.guard.unwrap_or(plan.window);
            out.streams.push(StreamRange::new("second_class", StreamFamily::Coupled, 0, n));
            let c = run_coupled(&plan, guard, cfg.master_seed, StreamFamily::Coupled, 0, n, exec)?;
            let invalid = InvalidCount {
                ensemble: "second_class".into(),
                reason: "second-class particle left the guard band",
                invalid: c.iter().filter(|s| !s.valid).count() as u64,
                total: n,
            };
            invalid.check()?;
            out.invalid.push(invalid);
            c
        } else {
            Vec::new()
        };
        Ok(LatticeRun {
            plan,
            t_grid: cfg.t_grid.clone(),
            xs,
            monitored,
            decay_bond: decay,
            heights,
            coupled,
        })
    }

    /// Index of bond `x` in each replica's current rows.
    pub fn bond_index(&self, x: i64) -> usize {
        self.monitored.iter().position(|&b| b == x).expect("bond is monitored")
    }

    pub fn slices(&self, batches: usize) -> Result<Vec<TimeSlice<'_>>> {
        let eps = self.plan.params.eps;
        self.t_grid
            .iter()
            .enumerate()
            .map(|(ti, &t)| {
                Ok(TimeSlice {
                    t,
                    ti,
                    heights: if self.heights.is_empty() {
                        None
                    } else {
                        Some(HeightStats::new(&self.heights, ti, eps, t, batches)?)
                    },
                    coupled: if self.coupled.is_empty() {
                        None
                    } else {
                        Some(CoupledStats::new(&self.coupled, ti, eps, t, batches)?)
                    },
                })
            })
            .collect()
    }

    pub fn conservation_violations(&self) -> u64 {
        self.heights.iter().map(|s| s.conservation_violations as u64).sum()
    }
}

/// Estimators at one grid time.
pub struct TimeSlice<'a> {
    pub t: f64,
    pub ti: usize,
    pub heights: Option<HeightStats<'a>>,
    pub coupled: Option<CoupledStats>,
}

fn row(cfg: &ExperimentConfig, t: f64, n: usize, name: &str, e: crate::stats::Estimate) -> SweepRow {
    SweepRow {
        eps: cfg.eps,
        rho: cfg.rho,
        t_macro: t,
        n_replicas: n,
        estimator: name.into(),
        value: e.value,
        stderr: e.stderr,
    }
}

/// Sweep rows ordered by time, then estimator.
pub fn sweep_rows(cfg: &ExperimentConfig, slices: &[TimeSlice]) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for s in slices {
        if let Some(h) = &s.heights {
            rows.push(row(cfg, s.t, h.n(), "mean_h0", h.mean_h0()));
            rows.push(row(cfg, s.t, h.n(), "var_h0", h.var_h0()));
        }
        if let Some(c) = &s.coupled {
            rows.push(row(cfg, s.t, c.n, "s_abs_moment", c.moment(1.0)?));
            rows.push(row(cfg, s.t, c.n, "s_second_moment", c.moment(2.0)?));
            rows.push(row(cfg, s.t, c.n, "diffusivity", c.diffusivity()?));
        }
    }
    Ok(rows)
}

/// Log-log fit of one estimator across the time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct FitRow {
    pub estimator: String,
    pub fit: FitResult,
}

pub const FITTED: [&str; 2] = ["var_h0", "diffusivity"];

pub fn fit_rows(rows: &[SweepRow]) -> Result<Vec<FitRow>> {
    let mut fits = Vec::new();
    for name in FITTED {
        let points: Vec<FitPoint> = rows
            .iter()
            .filter(|r| r.estimator == name)
            .map(|r| FitPoint::new(r.t_macro, r.value, r.stderr))
            .collect();
        if points.len() >= 3 {
            fits.push(FitRow {
                estimator: name.into(),
                fit: fit_exponent(&points)?,
            });
        }
    }
    Ok(fits)
}

/// Full-sample histograms keyed by macroscopic time.
pub fn histograms(slices: &[TimeSlice]) -> Vec<(f64, Histogram)> {
    slices
        .iter()
        .filter_map(|s| s.coupled.as_ref().map(|c| (s.t, c.histograms.full.clone())))
        .collect()
}

/// Applies the power gate to a statistical record.
pub fn gate(r: CheckRecord, n: usize, min: usize) -> CheckRecord {
    if n < min {
        r.underpowered()
    } else {
        r
    }
}

/// Mean height and pathwise bookkeeping.
pub fn height_checks(cfg: &ExperimentConfig, run: &LatticeRun, slices: &[TimeSlice]) -> Vec<CheckRecord> {
    let mut out = vec![CheckRecord::exact(
        "height_conservation",
        run.conservation_violations() as f64,
        0.0,
        0.0,
    )];
    if cfg.rho == 0.5 {
        for s in slices {
            if let Some(h) = &s.heights {
                let m = h.mean_h0();
                out.push(gate(
                    CheckRecord::within(
                        format!("mean_h0[t={}]", s.t),
                        m.value,
                        s.t / 24.0,
                        m.stderr,
                        cfg.suite.mean_tolerance_k,
                    ),
                    h.n(),
                    cfg.suite.min_replicas,
                ));
            }
        }
    }
    out
}

/// Normalization, symmetry and monotone second moment of the histograms.
pub fn s_structure_checks(cfg: &ExperimentConfig, slices: &[TimeSlice]) -> Result<Vec<CheckRecord>> {
    let k = cfg.tolerance_k;
    let min = cfg.suite.min_replicas;
    let mut out = Vec::new();
    let mut previous: Option<(f64, crate::stats::Estimate)> = None;
    for s in slices {
        let Some(c) = &s.coupled else { continue };
        let h = &c.histograms.full;
        out.push(CheckRecord::exact(format!("s_integral[t={}]", s.t), h.integral(), 1.0, 1e-12));
        let tv = h.tv_distance(&h.reflect())?;
        let mut rng = derive_stream(cfg.master_seed, stream_id(StreamFamily::Bootstrap, 0, s.ti as u64));
        let boot = h.bootstrap_tv_error(BOOTSTRAP_RESAMPLES, &mut rng)?;
        out.push(gate(
            CheckRecord::at_most(format!("s_tv_symmetry[t={}]", s.t), tv, 0.0, boot, k),
            c.n,
            min,
        ));
        let m2 = c.moment(2.0)?;
        if let Some((t0, prev)) = previous {
            out.push(gate(
                CheckRecord::at_least(
                    format!("s_second_moment_monotone[t={}->{}]", t0, s.t),
                    m2.value,
                    prev.value,
                    m2.stderr.hypot(prev.stderr),
                    k,
                ),
                c.n,
                min,
            ));
        }
        previous = Some((s.t, m2));
    }
    Ok(out)
}
