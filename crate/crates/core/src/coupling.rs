//! Basic coupling of two exclusion processes with a single discrepancy.
//!
//! Both processes are driven by the same proposals. Their difference is one
//! second-class particle, stored directly in a three-state site array: a
//! right proposal at bond `(b, b+1)` swaps the two sites iff the left one
//! has strictly higher priority (first class > second class > empty), and a
//! left proposal swaps them iff the right one does.

use rand::distr::{Bernoulli, Distribution};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::stats::Histogram;
use crate::wasep::{EventClock, LatticeState, WasepParams};

/// Site content ordered by jump priority.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum Site {
    Empty = 0,
    Second = 1,
    First = 2,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoupledPair {
    params: WasepParams,
    sites: Vec<Site>,
    second_class_pos: i64,
    micro_time: f64,
    guard: i64,
    boundary_hit: bool,
}

/// Lower and upper processes start from the same Bernoulli(rho) sites away
/// from the origin; the origin holds the second-class particle.
///
/// Sites are drawn from `-L` upwards with the same draws as
/// [`crate::wasep::init_bernoulli`], so the upper marginal equals that
/// function's output with the origin conditioned occupied.
pub fn init_discrepancy(params: &WasepParams, stream: &mut RngStream) -> Result<CoupledPair> {
    let coin = Bernoulli::new(params.rho)
        .map_err(|_| Error::invalid(format!("rho must lie in [0, 1], got {}", params.rho)))?;
    let mut sites: Vec<Site> = (0..params.n_sites())
        .map(|_| if coin.sample(stream) { Site::First } else { Site::Empty })
        .collect();
    sites[params.half_width] = Site::Second;
    Ok(CoupledPair {
        params: *params,
        sites,
        second_class_pos: 0,
        micro_time: 0.0,
        guard: params.half_width as i64 - 1,
        boundary_hit: false,
    })
}

impl CoupledPair {
    /// Flags the replica once the second-class particle leaves `[-guard, guard]`.
    pub fn with_guard(mut self, guard: usize) -> Self {
        self.guard = guard.min(self.params.half_width - 1) as i64;
        self
    }

    pub fn params(&self) -> &WasepParams {
        &self.params
    }

    pub fn second_class_pos(&self) -> i64 {
        self.second_class_pos
    }

    pub fn micro_time(&self) -> f64 {
        self.micro_time
    }

    /// False once the second-class particle has reached the guard band.
    pub fn is_valid(&self) -> bool {
        !self.boundary_hit
    }

    pub fn site(&self, x: i64) -> Result<Site> {
        let l = self.params.half_width as i64;
        if x < -l || x > l {
            return Err(Error::OutsideLattice {
                site: x,
                half_width: self.params.half_width,
            });
        }
        Ok(self.sites[(x + l) as usize])
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn first_class_count(&self) -> usize {
        self.sites.iter().filter(|&&s| s == Site::First).count()
    }

    /// The process in which the second-class particle counts as a particle.
    pub fn upper(&self) -> LatticeState {
        self.collapse(true)
    }

    /// The process in which the second-class particle counts as a hole.
    pub fn lower(&self) -> LatticeState {
        self.collapse(false)
    }

    fn collapse(&self, second_as_particle: bool) -> LatticeState {
        let l = self.params.half_width as i64;
        let mut s = LatticeState::from_fn(self.params.half_width, |x| match self.sites[(x + l) as usize] {
            Site::First => true,
            Site::Second => second_as_particle,
            Site::Empty => false,
        });
        s.set_micro_time(self.micro_time);
        s
    }

    /// Exactly one second-class particle, at the tracked position.
    pub fn invariant_holds(&self) -> bool {
        let l = self.params.half_width as i64;
        let mut seconds = self.sites.iter().enumerate().filter(|(_, &s)| s == Site::Second);
        matches!(
            (seconds.next(), seconds.next()),
            (Some((i, _)), None) if i as i64 - l == self.second_class_pos
        )
    }
}

/// Runs the coupled dynamics up to `horizon`. Returns whether the replica is
/// still valid (the second-class particle never left the guard band).
pub fn advance_coupled(pair: &mut CoupledPair, stream: &mut RngStream, horizon: f64) -> Result<bool> {
    if horizon < pair.micro_time {
        return Err(Error::invalid(format!(
            "cannot advance backwards from {} to {}",
            pair.micro_time, horizon
        )));
    }
    let clock = EventClock::for_params(&pair.params);
    let l = pair.params.half_width as i64;
    let guard = pair.guard;
    let sites = &mut pair.sites;
    let mut pos = pair.second_class_pos;
    let mut hit = pair.boundary_hit;
    let mut t = pair.micro_time;
    loop {
        let next = t + clock.next_gap(stream);
        if next > horizon {
            break;
        }
        t = next;
        let (b, right) = clock.next_target(stream);
        let (a, c) = (sites[b], sites[b + 1]);
        let swap = if right { a > c } else { c > a };
        if swap {
            sites[b] = c;
            sites[b + 1] = a;
            if a == Site::Second || c == Site::Second {
                pos = if a == Site::Second { b as i64 + 1 - l } else { b as i64 - l };
                hit |= pos.abs() > guard;
            }
        }
    }
    pair.second_class_pos = pos;
    pair.boundary_hit = hit;
    pair.micro_time = horizon;
    Ok(!hit)
}

/// `H_eps(rho) = -sqrt(eps) rho (1 - rho)`.
pub fn flux(rho: f64, eps: f64) -> f64 {
    -eps.sqrt() * rho * (1.0 - rho)
}

/// `V_eps(rho) = H_eps'(rho) = -sqrt(eps) (1 - 2 rho)`.
pub fn characteristic_speed(rho: f64, eps: f64) -> f64 {
    -eps.sqrt() * (1.0 - 2.0 * rho)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DisplacementSample {
    pub t_micro: f64,
    pub position: i64,
    /// `position - V t_micro`.
    pub centered: f64,
}

impl DisplacementSample {
    pub fn new(t_micro: f64, position: i64, speed: f64) -> Self {
        DisplacementSample {
            t_micro,
            position,
            centered: position as f64 - speed * t_micro,
        }
    }
}

fn check_common_time(samples: &[DisplacementSample]) -> Result<f64> {
    let t = samples.first().ok_or(Error::EmptyInput("displacement samples"))?.t_micro;
    if samples.iter().any(|s| s.t_micro != t) {
        return Err(Error::invalid("displacement samples taken at different times"));
    }
    Ok(t)
}

/// Sample mean of `|x(t) - V t|^m` and its standard error across replicas.
pub fn displacement_moment(samples: &[DisplacementSample], m: f64) -> Result<(f64, f64)> {
    check_common_time(samples)?;
    if !(m >= 1.0) {
        return Err(Error::invalid(format!("moment order must be >= 1, got {m}")));
    }
    let mut acc = crate::stats::MomentAccumulator::new();
    for s in samples {
        acc.accumulate(s.centered.abs().powf(m));
    }
    Ok((acc.mean(), acc.standard_error().unwrap_or(0.0)))
}

/// Empirical `S_eps(t, .)`: the law of `eps x(eps^{-2} t)` as a histogram
/// with bins of width `eps` centred on `eps Z`.
pub fn estimate_s(samples: &[DisplacementSample], eps: f64, t_macro: f64, rho: f64) -> Result<Histogram> {
    if rho != 0.5 {
        return Err(Error::DensityNotHalf(rho));
    }
    let t = check_common_time(samples)?;
    let expect = t_macro / (eps * eps);
    if (t - expect).abs() > 1e-9 * expect.max(1.0) {
        return Err(Error::invalid(format!(
            "samples taken at micro time {t}, expected {expect} for t = {t_macro}"
        )));
    }
    Histogram::from_indices(eps, samples.iter().map(|s| s.position))
}
