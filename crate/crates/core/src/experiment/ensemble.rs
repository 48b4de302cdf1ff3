//! Replica ensembles for the three engines.

use serde::Serialize;

use crate::coupling::{advance_coupled, characteristic_speed, init_discrepancy};
use crate::error::{Error, Result};
use crate::replicas::{map_replicas, Execution};
use crate::rng::{derive_stream, stream_id, StreamFamily};
use crate::she::{brownian_initial, evolve, hopf_cole, HopfColeField, SheGrid, SheParams};
use crate::wasep::{
    advance, advance_nested, buffer_half_width, height, height_profile, init_bernoulli, restrict_state,
    CurrentLedger, WasepParams,
};

/// Window default: about six standard deviations of the second-class
/// particle at the largest time, plus its drift.
pub fn default_window(eps: f64, rho: f64, horizon: f64) -> usize {
    (12.0 * horizon.sqrt()).ceil() as usize + 50 + (characteristic_speed(rho, eps).abs() * horizon).ceil() as usize
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LatticePlan {
    pub params: WasepParams,
    pub window: usize,
    pub micro_times: Vec<f64>,
}

impl LatticePlan {
    /// `reach` is an extra half-width the lattice must cover, e.g. for a
    /// bond monitored outside the window.
    pub fn new(
        eps: f64,
        rho: f64,
        micro_times: Vec<f64>,
        window: Option<usize>,
        half_width: Option<usize>,
        multiplier: f64,
        reach: usize,
    ) -> Result<Self> {
        let horizon = micro_times
            .last()
            .copied()
            .ok_or(Error::EmptyInput("time grid"))?;
        let window = window.unwrap_or_else(|| default_window(eps, rho, horizon));
        let need = buffer_half_width(window, eps, horizon).max(reach);
        let half_width = match half_width {
            Some(l) if l < need => {
                return Err(Error::BufferViolation(format!(
                    "half-width {l} < {need} required for window {window} up to micro time {horizon}"
                )))
            }
            Some(l) => l,
            None => (need as f64 * multiplier).ceil() as usize,
        };
        Ok(LatticePlan {
            params: WasepParams::new(eps, rho, half_width)?,
            window,
            micro_times,
        })
    }

    pub fn horizon(&self) -> f64 {
        *self.micro_times.last().unwrap_or(&0.0)
    }
}

/// Identifies one ensemble inside a run, for the manifest.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StreamRange {
    pub ensemble: String,
    pub family: u8,
    pub sub: u16,
    pub first_stream_id: u64,
    pub last_stream_id: u64,
    pub replicas: u64,
}

impl StreamRange {
    pub fn new(ensemble: impl Into<String>, family: StreamFamily, sub: u16, replicas: u64) -> Self {
        StreamRange {
            ensemble: ensemble.into(),
            family: family as u8,
            sub,
            first_stream_id: stream_id(family, sub, 0),
            last_stream_id: stream_id(family, sub, replicas.saturating_sub(1)),
            replicas,
        }
    }
}

/// Heights and currents of one stationary WASEP replica.
#[derive(Clone, Debug, PartialEq)]
pub struct HeightSample {
    /// `zeta(T, k)` for `k` in `[-W, W]`, one row per grid time.
    pub profiles: Vec<Vec<i32>>,
    /// `N(T, x)` at the monitored bonds, one row per grid time.
    pub currents: Vec<Vec<i64>>,
    /// Sites where `zeta(T, x) - zeta(0, x) != -2 N(T, x)` or the particle
    /// count changed.
    pub conservation_violations: u32,
}

impl HeightSample {
    pub fn origin(&self, ti: usize) -> i64 {
        let p = &self.profiles[ti];
        p[p.len() / 2] as i64
    }

    pub fn at(&self, ti: usize, k: i64) -> i64 {
        let p = &self.profiles[ti];
        p[((p.len() / 2) as i64 + k) as usize] as i64
    }
}

fn run_height_replica(
    plan: &LatticePlan,
    monitored: &[i64],
    conserved: &[i64],
    stream: u64,
    seed: u64,
) -> Result<HeightSample> {
    let p = &plan.params;
    let mut rng = derive_stream(seed, stream);
    let mut state = init_bernoulli(p, &mut rng, None)?;
    let mut bonds: Vec<i64> = monitored.iter().chain(conserved).copied().collect();
    bonds.push(0);
    let mut ledger = CurrentLedger::new(p.half_width, &bonds)?;
    let w = plan.window;
    let zeta0: Vec<i64> = conserved.iter().map(|&x| height(&state, &ledger, x)).collect::<Result<_>>()?;
    let count0 = state.particle_count();
    let mut profiles = Vec::with_capacity(plan.micro_times.len());
    let mut currents = Vec::with_capacity(plan.micro_times.len());
    let mut violations = 0u32;
    for &t in &plan.micro_times {
        advance(p, &mut state, &mut ledger, &mut rng, t, None)?;
        let prof = height_profile(&state, &ledger, w)?;
        profiles.push(prof.iter().map(|&z| z as i32).collect());
        currents.push(monitored.iter().map(|&x| ledger.current(x)).collect::<Result<_>>()?);
        for (&x, &z0) in conserved.iter().zip(&zeta0) {
            if height(&state, &ledger, x)? - z0 != -2 * ledger.current(x)? {
                violations += 1;
            }
        }
        if state.particle_count() != count0 {
            violations += 1;
        }
    }
    Ok(HeightSample {
        profiles,
        currents,
        conservation_violations: violations,
    })
}

/// Stationary Bernoulli(rho) replicas observed at every grid time.
///
/// `conserved` lists sites where the pathwise height bookkeeping is checked.
#[allow(clippy::too_many_arguments)]
pub fn run_heights(
    plan: &LatticePlan,
    monitored: &[i64],
    conserved: &[i64],
    seed: u64,
    family: StreamFamily,
    sub: u16,
    replicas: u64,
    exec: Execution,
) -> Result<Vec<HeightSample>> {
    if plan.window > i32::MAX as usize / 4 {
        return Err(Error::invalid("window too large"));
    }
    map_replicas(replicas, exec, |i| {
        run_height_replica(plan, monitored, conserved, stream_id(family, sub, i), seed)
    })
    .into_iter()
    .collect()
}

/// Second-class positions of one replica at every grid time.
#[derive(Clone, Debug, PartialEq)]
pub struct CoupledSample {
    pub positions: Vec<i64>,
    pub valid: bool,
}

#[allow(clippy::too_many_arguments)]
pub fn run_coupled(
    plan: &LatticePlan,
    guard: usize,
    seed: u64,
    family: StreamFamily,
    sub: u16,
    replicas: u64,
    exec: Execution,
) -> Result<Vec<CoupledSample>> {
    map_replicas(replicas, exec, |i| {
        let mut rng = derive_stream(seed, stream_id(family, sub, i));
        let mut pair = init_discrepancy(&plan.params, &mut rng)?.with_guard(guard);
        let mut positions = Vec::with_capacity(plan.micro_times.len());
        for &t in &plan.micro_times {
            advance_coupled(&mut pair, &mut rng, t)?;
            positions.push(pair.second_class_pos());
        }
        Ok(CoupledSample {
            positions,
            valid: pair.is_valid(),
        })
    })
    .into_iter()
    .collect()
}

/// `zeta(T, 0)` on a lattice and on its centre half, driven by one stream.
#[derive(Clone, Debug, PartialEq)]
pub struct NestedSample {
    pub inner: Vec<i64>,
    pub outer: Vec<i64>,
}

/// The inner lattice is `plan`'s; the outer one is twice as wide.
pub fn run_nested(plan: &LatticePlan, seed: u64, sub: u16, replicas: u64, exec: Execution) -> Result<Vec<NestedSample>> {
    let inner_p = plan.params;
    let outer_p = WasepParams::new(inner_p.eps, inner_p.rho, 2 * inner_p.half_width)?;
    map_replicas(replicas, exec, |i| {
        let mut rng = derive_stream(seed, stream_id(StreamFamily::BufferCheck, sub, i));
        let mut outer = init_bernoulli(&outer_p, &mut rng, None)?;
        let mut inner = restrict_state(&outer, inner_p.half_width)?;
        let mut outer_ledger = CurrentLedger::new(outer_p.half_width, &[0])?;
        let mut inner_ledger = CurrentLedger::new(inner_p.half_width, &[0])?;
        let mut sample = NestedSample {
            inner: Vec::new(),
            outer: Vec::new(),
        };
        for &t in &plan.micro_times {
            advance_nested(
                &outer_p,
                &mut outer,
                &mut outer_ledger,
                &mut inner,
                &mut inner_ledger,
                &mut rng,
                t,
            )?;
            sample.inner.push(height(&inner, &inner_ledger, 0)?);
            sample.outer.push(height(&outer, &outer_ledger, 0)?);
        }
        Ok(sample)
    })
    .into_iter()
    .collect()
}

/// Hopf-Cole fields of one SHE replica, restricted to the window.
#[derive(Clone, Debug, PartialEq)]
pub struct SheSample {
    pub h0: HopfColeField,
    /// One field per grid time; empty once the replica turned negative.
    pub ht: Vec<HopfColeField>,
    /// Largest conservation-law residual over times and sites.
    pub conservation_residual: f64,
    pub negative: bool,
    /// Full final grid, kept for replica 0 only.
    pub snapshot: Option<SheGrid>,
}

pub fn run_she(
    params: &SheParams,
    window: f64,
    times: &[f64],
    seed: u64,
    sub: u16,
    replicas: u64,
    exec: Execution,
) -> Result<Vec<SheSample>> {
    map_replicas(replicas, exec, |i| {
        let mut rng = derive_stream(seed, stream_id(StreamFamily::She, sub, i));
        let mut grid = brownian_initial(params, &mut rng);
        let full0 = hopf_cole(&grid, params)?;
        let mut sample = SheSample {
            h0: full0.restrict(window),
            ht: Vec::with_capacity(times.len()),
            conservation_residual: 0.0,
            negative: false,
            snapshot: None,
        };
        for &t in times {
            if !evolve(&mut grid, params, &mut rng, t) {
                sample.negative = true;
                sample.ht.clear();
                break;
            }
            let full = hopf_cole(&grid, params)?;
            let cm = crate::she::current_mass(&full0, &full)?;
            sample.conservation_residual = sample.conservation_residual.max(cm.conservation_residual());
            sample.ht.push(full.restrict(window));
        }
        if i == 0 {
            sample.snapshot = Some(grid);
        }
        Ok(sample)
    })
    .into_iter()
    .collect()
}

/// Invalid replicas of one ensemble.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InvalidCount {
    pub ensemble: String,
    pub reason: &'static str,
    pub invalid: u64,
    pub total: u64,
}

impl InvalidCount {
    /// Fails when more than 1% of the replicas are invalid.
    pub fn check(&self) -> Result<()> {
        if self.invalid * 100 > self.total {
            return Err(Error::TooManyInvalid {
                invalid: self.invalid,
                total: self.total,
                reason: self.reason,
            });
        }
        Ok(())
    }
}
