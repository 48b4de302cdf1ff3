//! Weakly asymmetric simple exclusion on the segment `[-L, L]`.
//!
//! Particles attempt jumps right at rate `p = 1/2` and left at rate
//! `q = 1/2 + sqrt(eps)`. The dynamics are realized by uniformization: a
//! Poisson stream of rate `(p + q) * #bonds` proposes a uniform bond and a
//! direction, and the proposal is executed iff the exclusion rule allows it.
//! Jumps off the segment ends are never proposed (blocked boundaries).

use std::io::Write;

use rand::distr::{Bernoulli, Distribution};
use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Rate of right jump attempts.
pub const P_RIGHT: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WasepParams {
    pub eps: f64,
    pub rho: f64,
    pub half_width: usize,
}

impl WasepParams {
    pub fn new(eps: f64, rho: f64, half_width: usize) -> Result<Self> {
        if !(eps > 0.0 && eps < 0.25) {
            return Err(Error::invalid(format!("eps must lie in (0, 1/4), got {eps}")));
        }
        if !(0.0..=1.0).contains(&rho) {
            return Err(Error::invalid(format!("rho must lie in [0, 1], got {rho}")));
        }
        if half_width == 0 {
            return Err(Error::invalid("half_width must be positive"));
        }
        Ok(WasepParams {
            eps,
            rho,
            half_width,
        })
    }

    /// Same as [`WasepParams::new`] with the half-width chosen by the buffer
    /// rule for an observation window `window` and horizon `horizon`.
    pub fn with_buffer(eps: f64, rho: f64, window: usize, horizon: f64) -> Result<Self> {
        Self::new(eps, rho, 1)?;
        Self::new(eps, rho, buffer_half_width(window, eps, horizon))
    }

    pub fn p(&self) -> f64 {
        P_RIGHT
    }

    pub fn q(&self) -> f64 {
        P_RIGHT + self.eps.sqrt()
    }

    pub fn n_sites(&self) -> usize {
        2 * self.half_width + 1
    }

    pub fn n_bonds(&self) -> usize {
        2 * self.half_width
    }

    /// Microscopic time corresponding to macroscopic time `t_macro`.
    pub fn micro_time(&self, t_macro: f64) -> f64 {
        t_macro / (self.eps * self.eps)
    }

    /// Fails unless the lattice is wide enough for `window` up to `horizon`.
    pub fn check_buffer(&self, window: usize, horizon: f64) -> Result<()> {
        let need = buffer_half_width(window, self.eps, horizon);
        if self.half_width < need {
            return Err(Error::BufferViolation(format!(
                "half-width {} < {} required for window {} up to micro time {}",
                self.half_width, need, window, horizon
            )));
        }
        Ok(())
    }
}

/// `window + ceil(3 (p+q) T) + ceil(10 sqrt(T))`.
pub fn buffer_half_width(window: usize, eps: f64, horizon: f64) -> usize {
    let speed = P_RIGHT + P_RIGHT + eps.sqrt();
    window + (3.0 * speed * horizon).ceil() as usize + (10.0 * horizon.sqrt()).ceil() as usize
}

/// Height velocity `v_eps = eps^{-3/2}/2 - eps^{-1/2}/24`.
pub fn height_velocity(eps: f64) -> f64 {
    0.5 * eps.powf(-1.5) - eps.powf(-0.5) / 24.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Right,
    Left,
}

impl Direction {
    pub fn as_char(self) -> char {
        match self {
            Direction::Right => 'R',
            Direction::Left => 'L',
        }
    }

    fn is_right(self) -> bool {
        self == Direction::Right
    }

    fn from_right(right: bool) -> Self {
        if right {
            Direction::Right
        } else {
            Direction::Left
        }
    }
}

/// Proposal generator shared by every exclusion engine in the crate.
///
/// One call to [`EventClock::next_gap`] followed by one call to
/// [`EventClock::next_target`] consumes the randomness of one event; the
/// coupled engine and the replay oracles rely on this exact draw order.
#[derive(Clone, Copy, Debug)]
pub struct EventClock {
    n_bonds: u64,
    total_rate: f64,
    right_threshold: u64,
}

impl EventClock {
    pub fn new(p: f64, q: f64, n_bonds: usize) -> Self {
        let frac = p / (p + q);
        EventClock {
            n_bonds: n_bonds as u64,
            total_rate: (p + q) * n_bonds as f64,
            right_threshold: (frac * 18_446_744_073_709_551_616.0) as u64,
        }
    }

    pub fn for_params(params: &WasepParams) -> Self {
        Self::new(params.p(), params.q(), params.n_bonds())
    }

    pub fn total_rate(&self) -> f64 {
        self.total_rate
    }

    /// Exponential waiting time to the next proposal.
    #[inline]
    pub fn next_gap<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let e: f64 = rng.sample(Exp1);
        e / self.total_rate
    }

    /// Uniform bond index in `0..n_bonds` and whether the proposal is a
    /// right jump (probability `p/(p+q)`), from a single 64-bit draw.
    #[inline]
    pub fn next_target<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, bool) {
        let wide = (rng.next_u64() as u128) * (self.n_bonds as u128);
        let bond = (wide >> 64) as usize;
        let frac = wide as u64;
        (bond, frac < self.right_threshold)
    }
}

/// Occupations of `[-L, L]`, one bit per site.
#[derive(Clone, Debug, PartialEq)]
pub struct LatticeState {
    half_width: usize,
    words: Vec<u64>,
    micro_time: f64,
}

impl LatticeState {
    pub fn empty(half_width: usize) -> Self {
        let n = 2 * half_width + 1;
        LatticeState {
            half_width,
            words: vec![0; n.div_ceil(64)],
            micro_time: 0.0,
        }
    }

    pub fn from_fn(half_width: usize, mut occupied: impl FnMut(i64) -> bool) -> Self {
        let mut s = Self::empty(half_width);
        let l = half_width as i64;
        for x in -l..=l {
            if occupied(x) {
                s.set_index((x + l) as usize, true);
            }
        }
        s
    }

    pub fn half_width(&self) -> usize {
        self.half_width
    }

    pub fn n_sites(&self) -> usize {
        2 * self.half_width + 1
    }

    pub fn micro_time(&self) -> f64 {
        self.micro_time
    }

    pub fn set_micro_time(&mut self, t: f64) {
        self.micro_time = t;
    }

    fn index(&self, x: i64) -> Result<usize> {
        let l = self.half_width as i64;
        if x < -l || x > l {
            return Err(Error::OutsideLattice {
                site: x,
                half_width: self.half_width,
            });
        }
        Ok((x + l) as usize)
    }

    #[inline]
    fn bit(&self, i: usize) -> bool {
        (self.words[i >> 6] >> (i & 63)) & 1 == 1
    }

    fn set_index(&mut self, i: usize, v: bool) {
        let m = 1u64 << (i & 63);
        if v {
            self.words[i >> 6] |= m;
        } else {
            self.words[i >> 6] &= !m;
        }
    }

    pub fn is_occupied(&self, x: i64) -> Result<bool> {
        Ok(self.bit(self.index(x)?))
    }

    pub fn set(&mut self, x: i64, occupied: bool) -> Result<()> {
        let i = self.index(x)?;
        self.set_index(i, occupied);
        Ok(())
    }

    /// `2 eta - 1` at site `x`.
    pub fn eta_hat(&self, x: i64) -> Result<i64> {
        Ok(if self.is_occupied(x)? { 1 } else { -1 })
    }

    /// Occupations from `-L` to `L`.
    pub fn occupations(&self) -> Vec<u8> {
        (0..self.n_sites()).map(|i| self.bit(i) as u8).collect()
    }

    pub fn particle_count(&self) -> u64 {
        self.words.iter().map(|w| w.count_ones() as u64).sum()
    }

    /// Number of particles on sites `lo < y <= hi`.
    pub fn count_between(&self, lo: i64, hi: i64) -> Result<u64> {
        if hi <= lo {
            return Ok(0);
        }
        let a = self.index(lo + 1)?;
        let b = self.index(hi)? + 1;
        Ok(self.count_range(a, b))
    }

    fn count_range(&self, a: usize, b: usize) -> u64 {
        // bits [a, b)
        let (wa, wb) = (a >> 6, b >> 6);
        let lo_mask = !0u64 << (a & 63);
        if wa == wb {
            let hi_mask = (1u64 << (b & 63)) - 1;
            return (self.words[wa] & lo_mask & hi_mask).count_ones() as u64;
        }
        let mut c = (self.words[wa] & lo_mask).count_ones() as u64;
        for w in &self.words[wa + 1..wb] {
            c += w.count_ones() as u64;
        }
        if b & 63 != 0 {
            c += (self.words[wb] & ((1u64 << (b & 63)) - 1)).count_ones() as u64;
        }
        c
    }

    /// Applies a proposal at bond index `bond` (sites `bond`, `bond + 1` in
    /// array coordinates). Returns whether the jump was executed.
    #[inline]
    pub fn try_jump(&mut self, bond: usize, right: bool) -> bool {
        let o = bond & 63;
        if o < 63 {
            let w = bond >> 6;
            let pair = (self.words[w] >> o) & 3;
            // bit 0: source side of a right jump, bit 1: its target
            let want = 2 - right as u64;
            let hit = pair == want;
            self.words[w] ^= (3u64 << o) & (hit as u64).wrapping_neg();
            hit
        } else {
            let a = self.bit(bond);
            let c = self.bit(bond + 1);
            if a != c && a == right {
                self.set_index(bond, c);
                self.set_index(bond + 1, a);
                return true;
            }
            false
        }
    }
}

/// Signed jump counters `N(t, x)` across monitored bonds `(x, x+1)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CurrentLedger {
    half_width: usize,
    bonds: Vec<i64>,
    counters: Vec<i64>,
    mask: Vec<u64>,
}

impl CurrentLedger {
    pub fn new(half_width: usize, monitored: &[i64]) -> Result<Self> {
        let l = half_width as i64;
        let mut bonds = monitored.to_vec();
        bonds.sort_unstable();
        bonds.dedup();
        let n_bonds = 2 * half_width;
        let mut mask = vec![0u64; n_bonds.div_ceil(64).max(1)];
        for &x in &bonds {
            if x < -l || x >= l {
                return Err(Error::OutsideLattice {
                    site: x,
                    half_width,
                });
            }
            let i = (x + l) as usize;
            mask[i >> 6] |= 1 << (i & 63);
        }
        let counters = vec![0; bonds.len()];
        Ok(CurrentLedger {
            half_width,
            bonds,
            counters,
            mask,
        })
    }

    pub fn monitored(&self) -> &[i64] {
        &self.bonds
    }

    pub fn current(&self, x: i64) -> Result<i64> {
        self.bonds
            .binary_search(&x)
            .map(|k| self.counters[k])
            .map_err(|_| Error::UnmonitoredBond(x))
    }

    #[inline]
    fn record(&mut self, bond: usize, right: bool) {
        if (self.mask[bond >> 6] >> (bond & 63)) & 1 == 1 {
            let x = bond as i64 - self.half_width as i64;
            if let Ok(k) = self.bonds.binary_search(&x) {
                self.counters[k] += if right { 1 } else { -1 };
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoggedEvent {
    pub time: f64,
    /// Bond `(bond, bond + 1)` in site coordinates.
    pub bond: i64,
    pub direction: Direction,
    pub executed: bool,
}

/// Every proposal of a run, executed or not.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrajectoryLog {
    pub events: Vec<LoggedEvent>,
}

impl TrajectoryLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// CSV with columns `event_index,time,bond,direction,executed`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "event_index,time,bond,direction,executed")?;
        for (i, e) in self.events.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{},{}",
                i,
                e.time,
                e.bond,
                e.direction.as_char(),
                e.executed as u8
            )?;
        }
        Ok(())
    }
}

trait EventSink {
    fn push(&mut self, time: f64, bond: usize, right: bool, executed: bool);
}

struct NoLog;

impl EventSink for NoLog {
    #[inline(always)]
    fn push(&mut self, _: f64, _: usize, _: bool, _: bool) {}
}

struct WithLog<'a> {
    log: &'a mut TrajectoryLog,
    half_width: i64,
}

impl EventSink for WithLog<'_> {
    fn push(&mut self, time: f64, bond: usize, right: bool, executed: bool) {
        self.log.events.push(LoggedEvent {
            time,
            bond: bond as i64 - self.half_width,
            direction: Direction::from_right(right),
            executed,
        });
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OriginCondition {
    Empty,
    Occupied,
}

/// I.i.d. Bernoulli(rho) occupations, drawn from site `-L` upwards.
pub fn init_bernoulli(
    params: &WasepParams,
    stream: &mut RngStream,
    condition_origin: Option<OriginCondition>,
) -> Result<LatticeState> {
    let coin = Bernoulli::new(params.rho)
        .map_err(|_| Error::invalid(format!("rho must lie in [0, 1], got {}", params.rho)))?;
    let mut state = LatticeState::from_fn(params.half_width, |_| coin.sample(stream));
    if let Some(c) = condition_origin {
        state.set(0, c == OriginCondition::Occupied)?;
    }
    Ok(state)
}

/// Runs the exclusion dynamics from `state.micro_time()` up to `horizon`.
///
/// The next event time is drawn before the event is applied; the first one
/// falling past `horizon` is discarded.
pub fn advance(
    params: &WasepParams,
    state: &mut LatticeState,
    ledger: &mut CurrentLedger,
    stream: &mut RngStream,
    horizon: f64,
    log: Option<&mut TrajectoryLog>,
) -> Result<()> {
    if state.half_width != params.half_width || ledger.half_width != params.half_width {
        return Err(Error::invalid("state, ledger and params disagree on the half-width"));
    }
    if horizon < state.micro_time {
        return Err(Error::invalid(format!(
            "cannot advance backwards from {} to {}",
            state.micro_time, horizon
        )));
    }
    let clock = EventClock::for_params(params);
    match log {
        None => run_events(&clock, state, ledger, stream, horizon, &mut NoLog),
        Some(log) => {
            let mut sink = WithLog {
                log,
                half_width: params.half_width as i64,
            };
            run_events(&clock, state, ledger, stream, horizon, &mut sink)
        }
    }
    Ok(())
}

#[inline]
fn run_events<S: EventSink>(
    clock: &EventClock,
    state: &mut LatticeState,
    ledger: &mut CurrentLedger,
    rng: &mut RngStream,
    horizon: f64,
    sink: &mut S,
) {
    let mut t = state.micro_time;
    loop {
        let next = t + clock.next_gap(rng);
        if next > horizon {
            break;
        }
        t = next;
        let (bond, right) = clock.next_target(rng);
        let executed = state.try_jump(bond, right);
        if executed {
            ledger.record(bond, right);
        }
        sink.push(t, bond, right, executed);
    }
    state.micro_time = horizon;
}

/// Runs a lattice and a narrower copy of its centre on one event stream.
///
/// Events are drawn for the outer lattice; those falling on a bond of the
/// inner lattice are applied to it as well. This thinning gives the inner
/// lattice its own exact dynamics, so any difference between the two is the
/// influence of the inner boundary.
#[allow(clippy::too_many_arguments)]
pub fn advance_nested(
    outer_params: &WasepParams,
    outer: &mut LatticeState,
    outer_ledger: &mut CurrentLedger,
    inner: &mut LatticeState,
    inner_ledger: &mut CurrentLedger,
    stream: &mut RngStream,
    horizon: f64,
) -> Result<()> {
    if inner.half_width > outer.half_width
        || outer.half_width != outer_params.half_width
        || inner_ledger.half_width != inner.half_width
        || outer_ledger.half_width != outer.half_width
    {
        return Err(Error::invalid("nested lattices must share a centre and fit inside each other"));
    }
    if horizon < outer.micro_time || inner.micro_time != outer.micro_time {
        return Err(Error::invalid("nested lattices must start at the same time and advance forwards"));
    }
    let clock = EventClock::for_params(outer_params);
    let offset = outer.half_width - inner.half_width;
    let inner_bonds = 2 * inner.half_width;
    let mut t = outer.micro_time;
    loop {
        let next = t + clock.next_gap(stream);
        if next > horizon {
            break;
        }
        t = next;
        let (bond, right) = clock.next_target(stream);
        if outer.try_jump(bond, right) {
            outer_ledger.record(bond, right);
        }
        if let Some(b) = bond.checked_sub(offset).filter(|&b| b < inner_bonds) {
            if inner.try_jump(b, right) {
                inner_ledger.record(b, right);
            }
        }
    }
    outer.micro_time = horizon;
    inner.micro_time = horizon;
    Ok(())
}

/// Copies the sites `[-half_width, half_width]` of `state`.
pub fn restrict_state(state: &LatticeState, half_width: usize) -> Result<LatticeState> {
    if half_width > state.half_width {
        return Err(Error::invalid("cannot restrict to a wider lattice"));
    }
    let l = state.half_width as i64;
    let mut inner = LatticeState::from_fn(half_width, |x| state.bit((x + l) as usize));
    inner.micro_time = state.micro_time;
    Ok(inner)
}

/// `zeta(t, x)`; the ledger must monitor bond 0.
pub fn height(state: &LatticeState, ledger: &CurrentLedger, x: i64) -> Result<i64> {
    let n0 = ledger.current(0)?;
    state.index(x)?;
    Ok(signed_mass(state, x)? - 2 * n0)
}

/// `sum_{0<y<=x} eta_hat(y)` for `x > 0`, `-sum_{x<y<=0} eta_hat(y)` for `x < 0`.
fn signed_mass(state: &LatticeState, x: i64) -> Result<i64> {
    Ok(match x.cmp(&0) {
        std::cmp::Ordering::Greater => 2 * state.count_between(0, x)? as i64 - x,
        std::cmp::Ordering::Equal => 0,
        std::cmp::Ordering::Less => -(2 * state.count_between(x, 0)? as i64 + x),
    })
}

/// `zeta(t, x)` for `x in [-k, k]`, indexed by `x + k`.
pub fn height_profile(state: &LatticeState, ledger: &CurrentLedger, k: usize) -> Result<Vec<i64>> {
    let n0 = ledger.current(0)?;
    let ki = k as i64;
    state.index(ki)?;
    let mut out = vec![0i64; 2 * k + 1];
    out[k] = -2 * n0;
    for x in 1..=ki {
        let up = out[(k as i64 + x - 1) as usize] + state.eta_hat(x)?;
        out[(k as i64 + x) as usize] = up;
        // zeta(-x) = zeta(-x+1) - eta_hat(-x+1)
        let down = out[(k as i64 - x + 1) as usize] - state.eta_hat(-x + 1)?;
        out[(k as i64 - x) as usize] = down;
    }
    Ok(out)
}

/// `h_eps(t, x) = eps^{1/2} (zeta(eps^{-2} t, [x/eps]) - v_eps t)`.
pub fn scaled_height(
    params: &WasepParams,
    t_macro: f64,
    x_macro: f64,
    state: &LatticeState,
    ledger: &CurrentLedger,
) -> Result<f64> {
    let site = closest_integer(x_macro / params.eps);
    let z = height(state, ledger, site)?;
    Ok(params.eps.sqrt() * (z as f64 - height_velocity(params.eps) * t_macro))
}

/// `[x] = floor(x + 1/2)`.
pub fn closest_integer(x: f64) -> i64 {
    (x + 0.5).floor() as i64
}

/// `|x|_eps = |eps [x / eps]|`.
pub fn discrete_abs(x: f64, eps: f64) -> f64 {
    (eps * closest_integer(x / eps) as f64).abs()
}

/// `Delta_eps f(x) = eps^{-2} (f(x+eps) - 2 f(x) + f(x-eps)) / 2`.
pub fn discrete_laplacian(f: impl Fn(f64) -> f64, x: f64, eps: f64) -> f64 {
    0.5 * (f(x + eps) - 2.0 * f(x) + f(x - eps)) / (eps * eps)
}

/// Replays a log on a copy of `state0`, checking timestamps, bonds and
/// executed flags. Returns the final state and the net current across every
/// bond `(x, x+1)` indexed by `x + L`.
pub fn replay(log: &TrajectoryLog, state0: &LatticeState) -> Result<(LatticeState, Vec<i64>)> {
    let l = state0.half_width as i64;
    let mut state = state0.clone();
    let mut currents = vec![0i64; 2 * state0.half_width];
    let mut last = f64::NEG_INFINITY;
    for (i, e) in log.events.iter().enumerate() {
        if !(e.time > last) {
            return Err(Error::MalformedLog(format!("event {i}: time not increasing")));
        }
        last = e.time;
        if e.bond < -l || e.bond >= l {
            return Err(Error::MalformedLog(format!("event {i}: bond {} off lattice", e.bond)));
        }
        let b = (e.bond + l) as usize;
        let executed = state.try_jump(b, e.direction.is_right());
        if executed != e.executed {
            return Err(Error::MalformedLog(format!(
                "event {i}: executed flag {} contradicts exclusion rule",
                e.executed
            )));
        }
        if executed {
            currents[b] += if e.direction.is_right() { 1 } else { -1 };
        }
    }
    if let Some(e) = log.events.last() {
        state.micro_time = state.micro_time.max(e.time);
    }
    Ok((state, currents))
}

/// Outcome of the particle-hole reflection check.
#[derive(Clone, Debug, PartialEq)]
pub struct ReflectionCheck {
    pub reflected: TrajectoryLog,
    /// Current of the reflected process across bond `(0, 1)`.
    pub reflected_current: i64,
    /// Current of the original process across bond `(-1, 0)`.
    pub original_current: i64,
    pub holds: bool,
}

/// Builds the trajectory of `eta~(t, k) = 1 - eta(t, -k)` from a logged
/// trajectory and checks pathwise that its current across `(0, 1)` equals
/// the original current across `(-1, 0)`.
///
/// A particle jump across bond `x` is a hole jump in the opposite
/// direction, which the reflection turns into a particle jump across bond
/// `-x - 1` in the original direction.
pub fn reflect_trajectory(log: &TrajectoryLog, state0: &LatticeState) -> Result<ReflectionCheck> {
    let l = state0.half_width as i64;
    let (final_state, currents) = replay(log, state0)?;

    let flip = |s: &LatticeState| LatticeState::from_fn(s.half_width, |k| !s.bit((l - k) as usize));
    let mirror0 = flip(state0);
    let reflected = TrajectoryLog {
        events: log
            .events
            .iter()
            .map(|e| LoggedEvent {
                bond: -e.bond - 1,
                ..*e
            })
            .collect(),
    };
    // the replay itself verifies executed flags agree event by event
    let (mirror_final, mirror_currents) = replay(&reflected, &mirror0)?;

    let reflected_current = mirror_currents[l as usize];
    let original_current = if l >= 1 { currents[(l - 1) as usize] } else { 0 };
    let holds = reflected_current == original_current
        && mirror_final.words == flip(&final_state).words
        && (0..2 * l as usize).all(|b| mirror_currents[b] == currents[2 * l as usize - 1 - b]);
    Ok(ReflectionCheck {
        reflected,
        reflected_current,
        original_current,
        holds,
    })
}
