//! Experiment orchestration: configuration, ensembles, estimators and outputs.

pub mod config;
pub mod ensemble;
pub mod estimates;
pub mod output;
pub mod suite;
pub mod sweep;

use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::replicas::Execution;
use crate::she::{SheGrid, SheParams};
use crate::stats::{CheckRecord, CheckStatus, Histogram};
use config::{ExperimentConfig, ExperimentKind, SheSuiteConfig, SuitePart};
use ensemble::{InvalidCount, LatticePlan, StreamRange};
use estimates::SweepRow;
use sweep::{FitRow, LatticeRun, Needs};

/// Everything a run produces before it is written out.
#[derive(Default)]
pub struct RunOutput {
    pub sweep: Vec<SweepRow>,
    pub fits: Vec<FitRow>,
    /// Full-sample second-class histograms keyed by macroscopic time.
    pub histograms: Vec<(f64, Histogram)>,
    pub checks: Vec<CheckRecord>,
    pub details: Map<String, Value>,
    pub she_snapshot: Option<(SheParams, SheGrid)>,
    pub streams: Vec<StreamRange>,
    pub invalid: Vec<InvalidCount>,
}

impl RunOutput {
    pub fn count(&self, status: CheckStatus) -> usize {
        self.checks.iter().filter(|r| r.status == status).count()
    }

    /// No check failed; underpowered checks do not count as failures.
    pub fn all_pass(&self) -> bool {
        self.count(CheckStatus::Fail) == 0
    }

    pub fn check(&self, name: &str) -> Option<&CheckRecord> {
        self.checks.iter().find(|r| r.check_name == name)
    }
}

/// `workers` from the config, or one per available core.
pub fn execution(workers: Option<usize>) -> Execution {
    Execution::with_workers(workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())))
}

fn lattice_part(cfg: &ExperimentConfig, exec: Execution, needs: Needs, out: &mut RunOutput) -> Result<LatticeRun> {
    let run = LatticeRun::execute(cfg, exec, needs, out)?;
    let slices = run.slices(cfg.batches())?;
    out.sweep.extend(sweep::sweep_rows(cfg, &slices)?);
    out.histograms.extend(sweep::histograms(&slices));
    if needs.heights {
        out.checks.extend(sweep::height_checks(cfg, &run, &slices));
    }
    if needs.coupled && cfg.rho == 0.5 {
        out.checks.extend(sweep::s_structure_checks(cfg, &slices)?);
    }
    if needs.monitor {
        out.checks.extend(suite::lattice_identity_checks(cfg, &run, &slices)?);
    }
    out.fits.extend(sweep::fit_rows(&out.sweep)?);
    drop(slices);
    Ok(run)
}

/// The SHE part of a config: the suite's own settings, or for the `she`
/// kind the top-level replicas and time grid.
pub fn she_config(cfg: &ExperimentConfig) -> SheSuiteConfig {
    let ov = &cfg.engine_overrides;
    let mut sc = if cfg.kind == ExperimentKind::She {
        SheSuiteConfig {
            replicas: cfg.replicas,
            t_grid: cfg.t_grid.clone(),
            ..SheSuiteConfig::default()
        }
    } else {
        cfg.suite.she.clone()
    };
    sc.dx = ov.dx.unwrap_or(sc.dx);
    sc.dt = ov.dt.unwrap_or(sc.dt);
    sc.window = ov.she_window.unwrap_or(sc.window);
    sc
}

/// Validates `cfg` and runs it. Nothing is written to disk.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let exec = execution(cfg.workers);
    let mut out = RunOutput::default();
    match cfg.kind {
        ExperimentKind::WasepHeight => {
            let needs = Needs {
                heights: true,
                coupled: false,
                monitor: false,
            };
            lattice_part(cfg, exec, needs, &mut out)?;
        }
        ExperimentKind::SecondClass => {
            let needs = Needs {
                heights: false,
                coupled: true,
                monitor: false,
            };
            lattice_part(cfg, exec, needs, &mut out)?;
        }
        ExperimentKind::ExponentSweep => {
            let needs = Needs {
                heights: true,
                coupled: true,
                monitor: false,
            };
            lattice_part(cfg, exec, needs, &mut out)?;
        }
        ExperimentKind::She => {
            let checks = suite::she_checks(cfg, &she_config(cfg), exec, &mut out)?;
            out.checks.extend(checks);
        }
        ExperimentKind::IdentitySuite => run_suite(cfg, exec, &mut out)?,
    }
    if let Some(prefix) = &cfg.suite.fault_injection {
        let mut hit = false;
        for r in out.checks.iter_mut().filter(|r| r.check_name.starts_with(prefix.as_str())) {
            *r = r.biased(cfg.suite.fault_size);
            hit = true;
        }
        if !hit {
            return Err(Error::invalid(format!("fault_injection '{prefix}' matches no check")));
        }
    }
    Ok(out)
}

fn run_suite(cfg: &ExperimentConfig, exec: Execution, out: &mut RunOutput) -> Result<()> {
    let parts = &cfg.suite.parts;
    let mut plan: Option<LatticePlan> = None;
    for part in SuitePart::ALL.into_iter().filter(|p| parts.contains(p)) {
        let checks = match part {
            SuitePart::Pathwise => suite::pathwise_checks(cfg, exec, out)?,
            SuitePart::Wasep => {
                let needs = Needs {
                    heights: true,
                    coupled: true,
                    monitor: true,
                };
                plan = Some(lattice_part(cfg, exec, needs, out)?.plan);
                Vec::new()
            }
            SuitePart::BufferDoubling => {
                let p = match plan.take() {
                    Some(p) => p,
                    None => {
                        let micro = cfg.t_grid.iter().map(|t| t / (cfg.eps * cfg.eps)).collect();
                        let ov = &cfg.engine_overrides;
                        LatticePlan::new(cfg.eps, cfg.rho, micro, ov.window, ov.half_width, cfg.buffer_multiplier(), 0)?
                    }
                };
                suite::buffer_doubling_checks(cfg, &p, exec, out)?
            }
            SuitePart::Speed => suite::speed_checks(cfg, exec, out)?,
            SuitePart::CurrentVariance => suite::current_variance_checks(cfg, exec, out)?,
            SuitePart::She => suite::she_checks(cfg, &she_config(cfg), exec, out)?,
        };
        out.checks.extend(checks);
    }
    Ok(())
}
