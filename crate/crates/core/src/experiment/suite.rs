//! The identity suite: every check of the height, second-class and SHE
//! identities, plus the pathwise and lattice-doubling diagnostics.

use serde_json::json;

use super::config::{ExperimentConfig, SheSuiteConfig};
use super::ensemble::{run_coupled, run_heights, run_nested, run_she, InvalidCount, LatticePlan, StreamRange};
use super::sweep::{gate, LatticeRun, TimeSlice};
use super::RunOutput;
use crate::coupling::{advance_coupled, characteristic_speed, init_discrepancy};
use crate::error::{Error, Result};
use crate::replicas::{map_replicas, Execution};
use crate::rng::{derive_stream, stream_id, StreamFamily};
use crate::she::{cov_suite, heat_bump_error, increment_check, HopfColeField, SheParams, MIN_COV_REPLICAS};
use crate::stats::{
    identity_laplacian, moment_of_histogram, reconstruct_var_from_s, weighted_var_integral, Batched, CheckRecord,
    Estimate, MomentAccumulator,
};
use crate::wasep::{advance, init_bernoulli, reflect_trajectory, replay, CurrentLedger, OriginCondition, TrajectoryLog, WasepParams};

/// Exponents of the weighted variance integrals.
pub const WEIGHT_EXPONENTS: [f64; 3] = [1.5, 2.0, 2.5];

fn covariance(pairs: impl Iterator<Item = (f64, f64)>) -> f64 {
    let v: Vec<(f64, f64)> = pairs.collect();
    let n = v.len() as f64;
    let mx = v.iter().map(|p| p.0).sum::<f64>() / n;
    let my = v.iter().map(|p| p.1).sum::<f64>() / n;
    v.iter().map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / (n - 1.0)
}

/// Height/second-class identities at every grid time.
pub fn lattice_identity_checks(cfg: &ExperimentConfig, run: &LatticeRun, slices: &[TimeSlice]) -> Result<Vec<CheckRecord>> {
    let k = cfg.tolerance_k;
    let eps = cfg.eps;
    let min = cfg.suite.min_replicas;
    let w = run.plan.window as i64;
    let block = ((2 * w - 1) as f64 / (2 * cfg.suite.x_points + 1) as f64).ceil() as usize;
    let mut out = Vec::new();
    for s in slices {
        let (Some(h), Some(c)) = (&s.heights, &s.coupled) else { continue };
        let n = h.n().min(c.n);
        let ti = s.ti;
        let t = s.t;
        let var = h.var_profile()?;

        out.push(gate(
            CheckRecord::independent(format!("v0_identity[t={t}]"), h.var_h0(), c.moment(1.0)?, k),
            n,
            min,
        ));

        for &x in &run.xs {
            let xm = eps * x as f64;
            let lhs = var.estimate(|v| v.var(x).unwrap());
            let rhs = c.histograms.try_estimate(|hist| reconstruct_var_from_s(xm, hist))?;
            out.push(gate(
                CheckRecord::independent(format!("reconstruction[t={t},x={xm}]"), lhs, rhs, k),
                n,
                min,
            ));
        }

        let sym = |v: &crate::stats::VarProfile, j: i64| 0.5 * (v.excess(j).unwrap() + v.excess(-j).unwrap());
        let edge = var.estimate(|v| sym(v, w));
        out.push(gate(
            CheckRecord::within(format!("var_excess_edge[t={t}]"), edge.value, 0.0, edge.stderr, k),
            h.n(),
            min,
        ));
        let relaxed = var.map(|v| v.clone().with_edge_tolerance(f64::INFINITY));
        for m in WEIGHT_EXPONENTS {
            let lhs = relaxed.try_estimate(|v| weighted_var_integral(v, m, eps))?;
            let rhs = c.histograms.try_estimate(|hist| moment_of_histogram(hist, m, eps))?;
            out.push(gate(
                CheckRecord::independent(format!("weighted_integral[t={t},m={m}]"), lhs, rhs, k),
                n,
                min,
            ));
        }

        let lap = identity_laplacian(&var, &c.histograms, eps, block, k)?;
        for r in lap.records() {
            let mut r = r.clone();
            r.check_name = format!("{}[t={t}]", r.check_name);
            out.push(gate(r, n, min));
        }

        let i0 = run.bond_index(0);
        for &x in &run.xs {
            let xm = eps * x as f64;
            let ix = run.bond_index(x);
            let excess = var.estimate(|v| v.excess(x).unwrap());
            let cov4 = h.cov_estimate(|r| (r.currents[ti][i0] as f64, r.currents[ti][ix] as f64));
            let diff = h.paired_estimate(|batch| {
                let v = super::estimates::var_profile(batch, ti, eps).map(|v| v.excess(x).unwrap());
                let cv = covariance(batch.iter().map(|r| (r.currents[ti][i0] as f64, r.currents[ti][ix] as f64)));
                v.unwrap_or(f64::NAN) - 4.0 * eps * cv
            });
            out.push(gate(
                CheckRecord::within(
                    format!("var_minus_abs[t={t},x={xm}]"),
                    excess.value,
                    4.0 * eps * cov4.value,
                    diff.stderr,
                    k,
                ),
                h.n(),
                min,
            ));
            let sym_cov = h.cov_estimate(|r| {
                let n0 = r.currents[ti][i0] as f64;
                let count = 0.5 * (r.at(ti, x) - r.at(ti, -x)) as f64 + x as f64;
                (n0, count)
            });
            out.push(gate(
                CheckRecord::within(format!("count_covariance[t={t},x={xm}]"), sym_cov.value, 0.0, sym_cov.stderr, k),
                h.n(),
                min,
            ));
        }

        if ti == 0 {
            if let Some(b) = run.decay_bond {
                let ib = run.bond_index(b);
                let cv = h.cov_estimate(|r| (r.currents[ti][i0] as f64, r.currents[ti][ib] as f64));
                out.push(gate(
                    CheckRecord::within(format!("current_covariance_decay[t={t},x={}]", eps * b as f64), cv.value, 0.0, cv.stderr, k),
                    h.n(),
                    min,
                ));
            }
        }
    }
    Ok(out)
}

/// Heights at the origin on the configured lattice and on one twice as
/// wide, driven by the same events.
pub fn buffer_doubling_checks(cfg: &ExperimentConfig, plan: &LatticePlan, exec: Execution, out: &mut RunOutput) -> Result<Vec<CheckRecord>> {
    let n = cfg
        .suite
        .buffer_replicas
        .unwrap_or_else(|| (cfg.replicas / 10).max(2 * cfg.batches()))
        .max(4);
    out.streams.push(StreamRange::new("buffer_doubling", StreamFamily::BufferCheck, 0, n as u64));
    let samples = run_nested(plan, cfg.master_seed, 0, n as u64, exec)?;
    // variances need two replicas per batch
    let batches = cfg.batches().min(n / 2);
    let eps = cfg.eps;
    let mut records = Vec::new();
    for (ti, &t) in cfg.t_grid.iter().enumerate() {
        let pick = |outer: bool| -> Vec<f64> {
            samples
                .iter()
                .map(|s| super::estimates::scaled_origin(if outer { s.outer[ti] } else { s.inner[ti] }, eps, t))
                .collect()
        };
        for (name, f) in [
            ("mean", (|v: &[f64]| v.iter().sum::<f64>() / v.len() as f64) as fn(&[f64]) -> f64),
            ("var", |v: &[f64]| covariance(v.iter().map(|&x| (x, x)))),
        ] {
            let inner = Batched::from_records(&pick(false), batches, |c| Ok(f(c)))?.estimate(|x| *x);
            let outer = Batched::from_records(&pick(true), batches, |c| Ok(f(c)))?.estimate(|x| *x);
            records.push(CheckRecord::independent(format!("buffer_doubling_{name}_h0[t={t}]"), inner, outer, 1.0));
        }
    }
    Ok(records)
}

/// Mean second-class displacement against `V T` at each configured density.
pub fn speed_checks(cfg: &ExperimentConfig, exec: Execution, out: &mut RunOutput) -> Result<Vec<CheckRecord>> {
    let s = &cfg.suite;
    let n = s.speed_replicas.unwrap_or(cfg.replicas);
    let mut records = Vec::new();
    for (i, &rho) in s.speed_rhos.iter().enumerate() {
        let plan = LatticePlan::new(s.speed_eps, rho, vec![s.speed_micro_t], None, None, cfg.buffer_multiplier(), 0)?;
        let name = format!("speed[rho={rho}]");
        out.streams.push(StreamRange::new(name.clone(), StreamFamily::Speed, i as u16, n as u64));
        let samples = run_coupled(&plan, plan.window, cfg.master_seed, StreamFamily::Speed, i as u16, n as u64, exec)?;
        let invalid = InvalidCount {
            ensemble: name.clone(),
            reason: "second-class particle left the guard band",
            invalid: samples.iter().filter(|x| !x.valid).count() as u64,
            total: n as u64,
        };
        invalid.check()?;
        out.invalid.push(invalid);
        let acc: MomentAccumulator = samples.iter().filter(|x| x.valid).map(|x| x.positions[0] as f64).collect();
        let mean = Estimate::mean_of(&acc)?;
        let target = characteristic_speed(rho, s.speed_eps) * s.speed_micro_t;
        records.push(gate(
            CheckRecord::within(name, mean.value, target, mean.stderr, s.mean_tolerance_k),
            acc.count() as usize,
            s.min_replicas,
        ));
    }
    Ok(records)
}

/// `Var N(T, 0)` from stationary runs against `rho (1 - rho) E|x(T)|` from
/// independent coupled runs.
pub fn current_variance_checks(cfg: &ExperimentConfig, exec: Execution, out: &mut RunOutput) -> Result<Vec<CheckRecord>> {
    let s = &cfg.suite;
    let n = s.jq_replicas.unwrap_or(cfg.replicas);
    let rho = s.jq_rho;
    let plan = LatticePlan::new(s.jq_eps, rho, vec![s.jq_micro_t], None, None, cfg.buffer_multiplier(), 0)?;
    let batches = cfg.batches().min(n / 2);
    if n < 4 {
        return Err(Error::InsufficientData("current variance check needs 4 replicas".into()));
    }

    out.streams.push(StreamRange::new("current_variance", StreamFamily::Current, 0, n as u64));
    let heights = run_heights(&plan, &[0], &[], cfg.master_seed, StreamFamily::Current, 0, n as u64, exec)?;
    let currents: Vec<f64> = heights.iter().map(|h| h.currents[0][0] as f64).collect();
    let var_n = Batched::from_records(&currents, batches, |c| Ok(covariance(c.iter().map(|&x| (x, x)))))?.estimate(|x| *x);

    out.streams.push(StreamRange::new("current_variance_second_class", StreamFamily::Coupled, 100, n as u64));
    let coupled = run_coupled(&plan, plan.window, cfg.master_seed, StreamFamily::Coupled, 100, n as u64, exec)?;
    let invalid = InvalidCount {
        ensemble: "current_variance_second_class".into(),
        reason: "second-class particle left the guard band",
        invalid: coupled.iter().filter(|x| !x.valid).count() as u64,
        total: n as u64,
    };
    invalid.check()?;
    out.invalid.push(invalid);
    let abs: Vec<f64> = coupled.iter().filter(|x| x.valid).map(|x| x.positions[0].abs() as f64).collect();
    let e_abs = Batched::from_records(&abs, batches.min(abs.len()), |c| Ok(c.iter().sum::<f64>() / c.len() as f64))?
        .estimate(|x| *x);
    let rhs = Estimate::new(rho * (1.0 - rho) * e_abs.value, rho * (1.0 - rho) * e_abs.stderr);
    Ok(vec![gate(
        CheckRecord::independent(format!("current_variance[rho={rho}]"), var_n, rhs, cfg.tolerance_k),
        n.min(abs.len()),
        s.min_replicas,
    )])
}

/// Number of logged replicas in the pathwise checks.
pub const PATHWISE_REPLICAS: u64 = 4;
const PATHWISE_HALF_WIDTH: usize = 200;
const PATHWISE_MICRO_T: f64 = 200.0;

#[derive(Default)]
struct PathwiseOutcome {
    events: u64,
    reflection_failures: u64,
    replay_failures: u64,
    marginal_failures: u64,
    count_failures: u64,
}

fn pathwise_replica(params: &WasepParams, seed: u64, i: u64) -> Result<PathwiseOutcome> {
    let id = stream_id(StreamFamily::Pathwise, 0, i);
    let mut o = PathwiseOutcome::default();

    let mut rng = derive_stream(seed, id);
    let state0 = init_bernoulli(params, &mut rng, None)?;
    let mut state = state0.clone();
    let bonds: Vec<i64> = (-(params.half_width as i64)..params.half_width as i64).collect();
    let mut ledger = CurrentLedger::new(params.half_width, &bonds)?;
    let mut log = TrajectoryLog::new();
    advance(params, &mut state, &mut ledger, &mut rng, PATHWISE_MICRO_T, Some(&mut log))?;
    o.events = log.len() as u64;
    o.count_failures += (state.particle_count() != state0.particle_count()) as u64;
    o.reflection_failures += (!reflect_trajectory(&log, &state0)?.holds) as u64;
    let (replayed, currents) = replay(&log, &state0)?;
    let ledger_matches = bonds
        .iter()
        .enumerate()
        .all(|(j, &b)| ledger.current(b).map(|c| c == currents[j]).unwrap_or(false));
    o.replay_failures += (replayed.occupations() != state.occupations() || !ledger_matches) as u64;

    // the coupled pair and both conditioned single lattices consume the
    // stream identically, so their marginals must agree bit for bit
    let mut rng = derive_stream(seed, id);
    let mut pair = init_discrepancy(params, &mut rng)?;
    advance_coupled(&mut pair, &mut rng, PATHWISE_MICRO_T)?;
    for cond in [OriginCondition::Occupied, OriginCondition::Empty] {
        let mut r = derive_stream(seed, id);
        let mut s = init_bernoulli(params, &mut r, Some(cond))?;
        let mut l = CurrentLedger::new(params.half_width, &[0])?;
        advance(params, &mut s, &mut l, &mut r, PATHWISE_MICRO_T, None)?;
        let coupled = if cond == OriginCondition::Occupied { pair.upper() } else { pair.lower() };
        o.marginal_failures += (coupled.occupations() != s.occupations()) as u64;
    }
    o.marginal_failures += (!pair.invariant_holds()) as u64;
    Ok(o)
}

/// Reflection, replay and coupled-marginal checks on logged trajectories.
pub fn pathwise_checks(cfg: &ExperimentConfig, exec: Execution, out: &mut RunOutput) -> Result<Vec<CheckRecord>> {
    let params = WasepParams::new(cfg.eps, 0.5, PATHWISE_HALF_WIDTH)?;
    out.streams.push(StreamRange::new("pathwise", StreamFamily::Pathwise, 0, PATHWISE_REPLICAS));
    let outcomes: Vec<PathwiseOutcome> = map_replicas(PATHWISE_REPLICAS, exec, |i| pathwise_replica(&params, cfg.master_seed, i))
        .into_iter()
        .collect::<Result<_>>()?;
    let sum = |f: fn(&PathwiseOutcome) -> u64| outcomes.iter().map(f).sum::<u64>() as f64;
    Ok(vec![
        CheckRecord::exact("pathwise_reflection", sum(|o| o.reflection_failures), 0.0, 0.0),
        CheckRecord::exact("pathwise_replay", sum(|o| o.replay_failures), 0.0, 0.0),
        CheckRecord::exact("pathwise_coupled_marginals", sum(|o| o.marginal_failures), 0.0, 0.0),
        CheckRecord::exact("pathwise_particle_count", sum(|o| o.count_failures), 0.0, 0.0),
        CheckRecord::at_least("pathwise_events_logged", sum(|o| o.events), 1.0, 0.0, 0.0),
    ])
}

/// SHE parameters for a suite config, honouring the half-width override.
pub fn she_params(sc: &SheSuiteConfig, half_width: Option<f64>) -> Result<SheParams> {
    let t_end = sc.t_grid.iter().copied().fold(0.0, f64::max);
    let probe = SheParams::matched(sc.dx, sc.dt, sc.dx, t_end)?;
    let x = match half_width {
        Some(x) => x,
        None => (probe.required_half_width(sc.window) / sc.dx).ceil() * sc.dx,
    };
    let params = SheParams::matched(sc.dx, sc.dt, x, t_end)?;
    params.check_buffer(sc.window)?;
    Ok(params)
}

/// Conservation, heat-flow refinement, increments and the variance and
/// covariance identities of the SHE.
pub fn she_checks(
    cfg: &ExperimentConfig,
    sc: &SheSuiteConfig,
    exec: Execution,
    out: &mut RunOutput,
) -> Result<Vec<CheckRecord>> {
    let k = cfg.tolerance_k;
    let min = cfg.suite.min_replicas;
    let params = she_params(sc, cfg.engine_overrides.she_half_width)?;
    let n = sc.replicas as u64;
    out.streams.push(StreamRange::new("she", StreamFamily::She, 0, n));
    let samples = run_she(&params, sc.window, &sc.t_grid, cfg.master_seed, 0, n, exec)?;
    let negative = samples.iter().filter(|s| s.negative).count() as u64;
    let invalid = InvalidCount {
        ensemble: "she".into(),
        reason: "Z became nonpositive",
        invalid: negative,
        total: n,
    };
    invalid.check()?;
    out.invalid.push(invalid);

    let mut records = vec![
        CheckRecord::at_most("she_negativity_fraction", negative as f64 / n as f64, 0.01, 0.0, k),
        CheckRecord::exact(
            "she_conservation",
            samples.iter().map(|s| s.conservation_residual).fold(0.0, f64::max),
            0.0,
            1e-9,
        ),
    ];
    let bump_t = 1.0;
    let coarse = heat_bump_error(params.nu, sc.dx, sc.dt, bump_t)?;
    let fine = heat_bump_error(params.nu, sc.dx / 2.0, sc.dt / 4.0, bump_t)?;
    records.push(CheckRecord::at_least("she_heat_refinement_ratio", coarse / fine, 3.0, 0.0, k));

    let valid: Vec<&super::ensemble::SheSample> = samples.iter().filter(|s| !s.negative).collect();
    let c = params.height_variance_rate();
    let mut xs: Vec<f64> = vec![0.0];
    xs.extend((1..=cfg.suite.x_points).map(|j| sc.window * j as f64 / cfg.suite.x_points as f64));
    let mut details = Vec::new();
    for (ti, &t) in sc.t_grid.iter().enumerate() {
        let pairs: Vec<(HopfColeField, HopfColeField)> = valid.iter().map(|s| (s.h0.clone(), s.ht[ti].clone())).collect();
        if pairs.len() < MIN_COV_REPLICAS.max(cfg.batches()) {
            records.push(CheckRecord::exact(format!("she_statistics[t={t}]"), 0.0, 0.0, 0.0).underpowered());
            continue;
        }
        let inc = increment_check(&params, &pairs, sc.delta, sc.window, sc.increment_rel_tol, k)?;
        for r in &inc.checks {
            let mut r = r.clone();
            r.check_name = format!("she_{}[t={t}]", r.check_name);
            records.push(gate(r, pairs.len(), min));
        }

        let decay_x = 8.0 * t.sqrt();
        let mut grid = xs.clone();
        if decay_x <= sc.window {
            grid.push(decay_x);
        }
        let report = cov_suite(&pairs, &grid, c, cfg.batches())?;
        let excess = |r: &crate::she::CovRow| r.var_h.value - c * r.x.abs();
        for r in &report.rows {
            records.push(gate(
                CheckRecord::within(format!("she_var_identity[t={t},x={}]", r.x), excess(r), r.cov_n.value, r.residual.stderr, k),
                pairs.len(),
                min,
            ));
            records.push(gate(
                CheckRecord::at_least(format!("she_var_excess_nonnegative[t={t},x={}]", r.x), excess(r), 0.0, r.var_h.stderr, k),
                pairs.len(),
                min,
            ));
        }
        let on_grid = &report.rows[..xs.len()];
        for w in on_grid.windows(2) {
            records.push(gate(
                CheckRecord::at_most(
                    format!("she_var_excess_monotone[t={t},x={}->{}]", w[0].x, w[1].x),
                    excess(&w[1]),
                    excess(&w[0]),
                    w[0].var_h.stderr.hypot(w[1].var_h.stderr),
                    k,
                ),
                pairs.len(),
                min,
            ));
        }
        let edge = &on_grid[on_grid.len() - 1];
        records.push(gate(
            CheckRecord::within(format!("she_var_excess_edge[t={t}]"), excess(edge), 0.0, edge.var_h.stderr, k),
            pairs.len(),
            min,
        ));
        if decay_x <= sc.window {
            let r = &report.rows[report.rows.len() - 1];
            records.push(gate(
                CheckRecord::within(format!("she_cov_decay[t={t},x={decay_x}]"), r.cov_n.value, 0.0, r.cov_n.stderr, k),
                pairs.len(),
                min,
            ));
        }
        details.push(json!({ "t": t, "covariance": report, "increments": inc }));
    }
    out.details.insert("she".into(), json!({ "params": params, "times": details }));
    if let Some(grid) = samples.first().and_then(|s| s.snapshot.clone()) {
        out.she_snapshot = Some((params, grid));
    }
    Ok(records)
}
