//! Batched estimators over replica samples.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::ensemble::{CoupledSample, HeightSample};
use crate::coupling::{estimate_s, DisplacementSample};
use crate::error::{Error, Result};
use crate::stats::{moment_of_histogram, Batched, Estimate, Histogram, VarProfile};
use crate::wasep::height_velocity;

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn covariance(pairs: &[(f64, f64)]) -> f64 {
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    pairs.iter().map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / (n - 1.0)
}

/// `h_eps(t, 0) = sqrt(eps) (zeta(t/eps^2, 0) - v_eps t)`.
pub fn scaled_origin(zeta: i64, eps: f64, t_macro: f64) -> f64 {
    eps.sqrt() * (zeta as f64 - height_velocity(eps) * t_macro)
}

/// `Var(h_eps(t, eps k))` on `[-W, W]`, estimated as
/// `eps (|k| + 2 Cov(zeta(k), zeta(0)) - Var zeta(0))`.
///
/// This equals `eps Var zeta(k)` in expectation because the increments of a
/// stationary half-density height satisfy `Var(zeta(k) - zeta(0)) = |k|`,
/// and its sampling error does not grow like `|k|`.
pub fn var_profile(samples: &[&HeightSample], ti: usize, eps: f64) -> Result<VarProfile> {
    if samples.len() < 2 {
        return Err(Error::InsufficientData("variance profile needs 2 replicas".into()));
    }
    let len = samples[0].profiles[ti].len();
    let w = (len / 2) as i64;
    let n = samples.len() as f64;
    let z0: Vec<f64> = samples.iter().map(|s| s.origin(ti) as f64).collect();
    let m0 = z0.iter().sum::<f64>() / n;
    let var0 = z0.iter().map(|z| (z - m0).powi(2)).sum::<f64>() / (n - 1.0);
    let mut sums = vec![0.0; len];
    for s in samples {
        for (acc, &z) in sums.iter_mut().zip(&s.profiles[ti]) {
            *acc += z as f64;
        }
    }
    let means: Vec<f64> = sums.iter().map(|s| s / n).collect();
    let mut cross = vec![0.0; len];
    for (s, &a) in samples.iter().zip(&z0) {
        let d0 = a - m0;
        for ((acc, &z), m) in cross.iter_mut().zip(&s.profiles[ti]).zip(&means) {
            *acc += (z as f64 - m) * d0;
        }
    }
    let var = (0..len)
        .map(|i| {
            let k = i as i64 - w;
            eps * (k.abs() as f64 + 2.0 * cross[i] / (n - 1.0) - var0)
        })
        .collect();
    VarProfile::new(eps, -w, var)
}

/// Height statistics at one grid time.
pub struct HeightStats<'a> {
    pub eps: f64,
    pub t_macro: f64,
    pub ti: usize,
    pub samples: Batched<Vec<&'a HeightSample>>,
}

impl<'a> HeightStats<'a> {
    pub fn new(samples: &'a [HeightSample], ti: usize, eps: f64, t_macro: f64, batches: usize) -> Result<Self> {
        let refs: Vec<&HeightSample> = samples.iter().collect();
        Ok(HeightStats {
            eps,
            t_macro,
            ti,
            samples: Batched::from_records(&refs, batches, |c| Ok(c.to_vec()))?,
        })
    }

    pub fn n(&self) -> usize {
        self.samples.full.len()
    }

    pub fn mean_h0(&self) -> Estimate {
        self.samples
            .estimate(|s| mean(s.iter().map(|x| scaled_origin(x.origin(self.ti), self.eps, self.t_macro))))
    }

    /// `Var h_eps(t, 0) = eps Var zeta(t, 0)`.
    pub fn var_h0(&self) -> Estimate {
        self.samples.estimate(|s| {
            let pairs: Vec<(f64, f64)> = s.iter().map(|x| (x.origin(self.ti) as f64, x.origin(self.ti) as f64)).collect();
            self.eps * covariance(&pairs)
        })
    }

    pub fn var_profile(&self) -> Result<Batched<VarProfile>> {
        self.samples.try_map(|s| var_profile(s, self.ti, self.eps))
    }

    /// A functional of `(zeta(k), N at monitored bond j)` pairs.
    pub fn cov_estimate(&self, f: impl Fn(&HeightSample) -> (f64, f64)) -> Estimate {
        self.samples.estimate(|s| {
            let pairs: Vec<(f64, f64)> = s.iter().map(|x| f(x)).collect();
            covariance(&pairs)
        })
    }

    pub fn paired_estimate(&self, f: impl Fn(&[&HeightSample]) -> f64) -> Estimate {
        self.samples.estimate(|s| f(s))
    }
}

/// Second-class statistics at one grid time, over valid replicas.
pub struct CoupledStats {
    pub eps: f64,
    pub t_macro: f64,
    pub n: usize,
    pub histograms: Batched<Histogram>,
}

impl CoupledStats {
    pub fn new(samples: &[CoupledSample], ti: usize, eps: f64, t_macro: f64, batches: usize) -> Result<Self> {
        let t_micro = t_macro / (eps * eps);
        let disp: Vec<DisplacementSample> = samples
            .iter()
            .filter(|s| s.valid)
            .map(|s| DisplacementSample::new(t_micro, s.positions[ti], 0.0))
            .collect();
        let histograms = Batched::from_records(&disp, batches, |c| estimate_s(c, eps, t_macro, 0.5))?;
        Ok(CoupledStats {
            eps,
            t_macro,
            n: disp.len(),
            histograms,
        })
    }

    pub fn moment(&self, m: f64) -> Result<Estimate> {
        self.histograms.try_estimate(|h| moment_of_histogram(h, m, self.eps))
    }

    pub fn diffusivity(&self) -> Result<Estimate> {
        let m2 = self.moment(2.0)?;
        Ok(Estimate::new(m2.value / self.t_macro, m2.stderr / self.t_macro))
    }
}

/// One line of a sweep CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub eps: f64,
    pub rho: f64,
    pub t_macro: f64,
    pub n_replicas: usize,
    pub estimator: String,
    pub value: f64,
    pub stderr: f64,
}

pub const SWEEP_HEADER: &str = "eps,rho,t_macro,n_replicas,estimator,value,stderr";

pub fn write_sweep<W: Write>(rows: &[SweepRow], mut out: W) -> Result<()> {
    writeln!(out, "{SWEEP_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.eps, r.rho, r.t_macro, r.n_replicas, r.estimator, r.value, r.stderr
        )?;
    }
    Ok(())
}

/// Parses a sweep CSV written by [`write_sweep`].
pub fn read_sweep(text: &str) -> Result<Vec<SweepRow>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::invalid(format!("sweep CSV: {e}")))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if headers != SWEEP_HEADER {
        return Err(Error::invalid(format!(
            "sweep CSV must start with '{SWEEP_HEADER}', got '{headers}'"
        )));
    }
    reader
        .deserialize()
        .map(|r| r.map_err(|e| Error::invalid(format!("sweep CSV: {e}"))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(profile: Vec<i32>) -> HeightSample {
        HeightSample {
            profiles: vec![profile],
            currents: vec![vec![]],
            conservation_violations: 0,
        }
    }

    #[test]
    fn profile_estimator_matches_definition_at_origin() {
        let s: Vec<HeightSample> = (0..10)
            .map(|i| sample(vec![i - 1, i, i + (i % 3) - 1]))
            .collect();
        let refs: Vec<&HeightSample> = s.iter().collect();
        let v = var_profile(&refs, 0, 0.5).unwrap();
        let z0: Vec<(f64, f64)> = s.iter().map(|x| (x.origin(0) as f64, x.origin(0) as f64)).collect();
        assert!((v.var(0).unwrap() - 0.5 * covariance(&z0)).abs() < 1e-12);
        // when zeta(1) - zeta(0) has variance 1 the estimator equals eps Var zeta(1)
        let z1: Vec<(f64, f64)> = s.iter().map(|x| (x.at(0, 1) as f64, x.at(0, 1) as f64)).collect();
        let d: Vec<(f64, f64)> = s.iter().map(|x| ((x.at(0, 1) - x.origin(0)) as f64, (x.at(0, 1) - x.origin(0)) as f64)).collect();
        let direct = 0.5 * covariance(&z1) + 0.5 * (1.0 - covariance(&d));
        assert!((v.var(1).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn sweep_round_trip() {
        let rows = vec![
            SweepRow {
                eps: 0.2,
                rho: 0.5,
                t_macro: 8.0,
                n_replicas: 500,
                estimator: "var_h0".into(),
                value: 1.25,
                stderr: 0.0625,
            },
            SweepRow {
                eps: 0.2,
                rho: 0.5,
                t_macro: 16.0,
                n_replicas: 500,
                estimator: "mean_h0".into(),
                value: 0.1 + 0.2,
                stderr: 1e-17,
            },
        ];
        let mut out = Vec::new();
        write_sweep(&rows, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("eps,rho,t_macro,n_replicas,estimator,value,stderr\n0.2,0.5,8,500,var_h0,1.25,0.0625\n"));
        assert_eq!(read_sweep(&text).unwrap(), rows);
        assert!(read_sweep("a,b\n").is_err());
        assert!(read_sweep(&format!("{SWEEP_HEADER}\n1,2,3\n")).is_err());
    }

    #[test]
    fn origin_scaling() {
        // zeta at its mean -eps^{-2} t (p - q) / 2 gives h = t/24
        let eps: f64 = 0.04;
        let t = 2.0;
        let mean_zeta = 0.5 * eps.powf(-1.5) * t;
        let h = eps.sqrt() * (mean_zeta - height_velocity(eps) * t);
        assert!((h - t / 24.0).abs() < 1e-12);
        assert_eq!(scaled_origin(0, eps, 0.0), 0.0);
    }
}
