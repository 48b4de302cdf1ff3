use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    WasepHeight,
    SecondClass,
    She,
    IdentitySuite,
    ExponentSweep,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::WasepHeight => "wasep-height",
            ExperimentKind::SecondClass => "second-class",
            ExperimentKind::She => "she",
            ExperimentKind::IdentitySuite => "identity-suite",
            ExperimentKind::ExponentSweep => "exponent-sweep",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineOverrides {
    /// Lattice half-width `L`; must satisfy the buffer rule.
    pub half_width: Option<usize>,
    /// SHE grid spacing.
    pub dx: Option<f64>,
    /// SHE time step.
    pub dt: Option<f64>,
    /// Factor applied to the buffer-rule half-widths.
    pub buffer_multiplier: Option<f64>,
    /// Observation window in lattice sites.
    pub window: Option<usize>,
    /// Second-class replicas leaving `[-guard, guard]` are invalid.
    pub guard: Option<usize>,
    /// SHE half-width `X`; must satisfy the buffer rule.
    pub she_half_width: Option<f64>,
    /// SHE observation window `|x| <= she_window`.
    pub she_window: Option<f64>,
    /// Number of replica batches behind every standard error.
    pub batches: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SheSuiteConfig {
    pub replicas: usize,
    pub t_grid: Vec<f64>,
    pub dx: f64,
    pub dt: f64,
    pub window: f64,
    pub delta: f64,
    /// Relative discretization allowance on the increment variance.
    pub increment_rel_tol: f64,
}

impl Default for SheSuiteConfig {
    fn default() -> Self {
        SheSuiteConfig {
            replicas: 2000,
            t_grid: vec![1.0, 4.0],
            dx: 0.1,
            dt: 0.0025,
            window: 20.0,
            delta: 1.0,
            increment_rel_tol: 0.05,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SuitePart {
    /// Height-function identities against the second-class law.
    Wasep,
    /// Mean speed of the second-class particle.
    Speed,
    /// Current variance against the second-class displacement.
    CurrentVariance,
    /// Stochastic heat equation identities.
    She,
    /// Particle-hole reflection and replay on logged trajectories.
    Pathwise,
    /// Estimator stability under doubling the lattice.
    BufferDoubling,
}

impl SuitePart {
    pub const ALL: [SuitePart; 6] = [
        SuitePart::Pathwise,
        SuitePart::Wasep,
        SuitePart::BufferDoubling,
        SuitePart::Speed,
        SuitePart::CurrentVariance,
        SuitePart::She,
    ];
}

/// Settings used only by the identity suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteConfig {
    pub parts: Vec<SuitePart>,
    pub speed_rhos: Vec<f64>,
    pub speed_eps: f64,
    pub speed_micro_t: f64,
    /// Defaults to `replicas`.
    pub speed_replicas: Option<usize>,
    pub jq_rho: f64,
    pub jq_eps: f64,
    pub jq_micro_t: f64,
    /// Defaults to `replicas`.
    pub jq_replicas: Option<usize>,
    pub she: SheSuiteConfig,
    /// Tolerance for the mean-height and mean-speed checks.
    pub mean_tolerance_k: f64,
    /// Statistical checks on fewer replicas are reported as underpowered.
    pub min_replicas: usize,
    /// Number of positive grid points for per-x comparisons.
    pub x_points: usize,
    /// Replicas for the lattice-doubling diagnostic; defaults to `replicas / 10`
    /// with at least two per batch.
    pub buffer_replicas: Option<usize>,
    /// Adds a bias of `fault_size` standard errors to the named check.
    pub fault_injection: Option<String>,
    pub fault_size: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            parts: SuitePart::ALL.to_vec(),
            speed_rhos: vec![0.3, 0.5, 0.7],
            speed_eps: 0.04,
            speed_micro_t: 500.0,
            speed_replicas: None,
            jq_rho: 0.3,
            jq_eps: 0.04,
            jq_micro_t: 200.0,
            jq_replicas: None,
            she: SheSuiteConfig::default(),
            mean_tolerance_k: 4.0,
            min_replicas: 400,
            x_points: 6,
            buffer_replicas: None,
            fault_injection: None,
            fault_size: 10.0,
        }
    }
}

fn default_eps() -> f64 {
    0.2
}

fn default_rho() -> f64 {
    0.5
}

fn default_t_grid() -> Vec<f64> {
    vec![8.0, 16.0, 32.0, 64.0, 128.0]
}

fn default_k() -> f64 {
    3.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// Macroscopic times; microscopic time is `t / eps^2`.
    #[serde(default = "default_t_grid")]
    pub t_grid: Vec<f64>,
    pub replicas: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub engine_overrides: EngineOverrides,
    #[serde(default = "default_k")]
    pub tolerance_k: f64,
    #[serde(default)]
    pub suite: SuiteConfig,
}

/// Default number of batches behind standard errors.
pub const DEFAULT_BATCHES: usize = 40;

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn batches(&self) -> usize {
        self.engine_overrides.batches.unwrap_or(DEFAULT_BATCHES)
    }

    pub fn buffer_multiplier(&self) -> f64 {
        self.engine_overrides.buffer_multiplier.unwrap_or(1.0)
    }

    pub fn uses_lattice(&self) -> bool {
        self.kind != ExperimentKind::She
    }

    /// Checks everything that can be checked before any simulation starts.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.replicas == 0 {
            return bad("replicas must be positive".into());
        }
        if self.workers == Some(0) {
            return bad("workers must be positive".into());
        }
        if self.t_grid.is_empty() {
            return bad("t_grid must not be empty".into());
        }
        if self.t_grid.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return bad(format!("t_grid entries must be positive, got {:?}", self.t_grid));
        }
        if self.t_grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("t_grid must be strictly increasing, got {:?}", self.t_grid));
        }
        if !(self.tolerance_k > 0.0) {
            return bad(format!("tolerance_k must be positive, got {}", self.tolerance_k));
        }
        let o = &self.engine_overrides;
        if let Some(m) = o.buffer_multiplier {
            if !(m >= 1.0 && m.is_finite()) {
                return bad(format!("buffer_multiplier must be >= 1, got {m}"));
            }
        }
        if let Some(b) = o.batches {
            if b < 2 {
                return bad(format!("batches must be at least 2, got {b}"));
            }
        }
        if self.kind != ExperimentKind::She {
            if !(self.eps > 0.0 && self.eps < 0.25) {
                return bad(format!("eps must lie in (0, 1/4), got {}", self.eps));
            }
            if !(0.0..=1.0).contains(&self.rho) {
                return bad(format!("rho must lie in [0, 1], got {}", self.rho));
            }
        }
        let needs_half = matches!(
            self.kind,
            ExperimentKind::SecondClass | ExperimentKind::ExponentSweep | ExperimentKind::IdentitySuite
        );
        if needs_half && self.rho != 0.5 {
            return bad(format!(
                "{} uses identities that hold only at rho = 1/2, got {}",
                self.kind.as_str(),
                self.rho
            ));
        }
        // variance estimators need two replicas in every batch
        if self.uses_lattice() && self.replicas < 2 * self.batches() {
            return bad(format!(
                "{} replicas cannot fill {} batches of at least two",
                self.replicas,
                self.batches()
            ));
        }
        if self.kind == ExperimentKind::IdentitySuite {
            let s = &self.suite;
            if s.parts.is_empty() {
                return bad("suite.parts must not be empty".into());
            }
            if s.speed_rhos.iter().any(|r| !(0.0..=1.0).contains(r)) {
                return bad(format!("suite.speed_rhos must lie in [0, 1], got {:?}", s.speed_rhos));
            }
            for (name, e) in [("speed_eps", s.speed_eps), ("jq_eps", s.jq_eps)] {
                if !(e > 0.0 && e < 0.25) {
                    return bad(format!("suite.{name} must lie in (0, 1/4), got {e}"));
                }
            }
            if !(0.0..=1.0).contains(&s.jq_rho) {
                return bad(format!("suite.jq_rho must lie in [0, 1], got {}", s.jq_rho));
            }
            if !(s.speed_micro_t > 0.0 && s.jq_micro_t > 0.0) {
                return bad("suite micro times must be positive".into());
            }
            if s.x_points == 0 {
                return bad("suite.x_points must be positive".into());
            }
            if s.she.replicas == 0 || s.she.t_grid.is_empty() || s.she.t_grid.iter().any(|t| !(*t > 0.0)) {
                return bad("suite.she needs positive replicas and a positive t_grid".into());
            }
            if !(s.she.delta > 0.0 && s.she.window > 0.0) {
                return bad("suite.she.delta and suite.she.window must be positive".into());
            }
        }
        Ok(())
    }
}
