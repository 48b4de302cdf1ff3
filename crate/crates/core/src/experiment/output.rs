//! Result files and the run manifest.

use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use super::ensemble::{InvalidCount, StreamRange};
use super::estimates::write_sweep;
use super::sweep::FitRow;
use super::RunOutput;
use crate::error::Result;
use crate::stats::CheckStatus;

pub const FITS_HEADER: &str = "estimator,slope,intercept,slope_stderr,r_squared,t_min,t_max,n_points";

pub fn write_fits<W: std::io::Write>(fits: &[FitRow], mut out: W) -> Result<()> {
    writeln!(out, "{FITS_HEADER}")?;
    for r in fits {
        let f = &r.fit;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.estimator, f.slope, f.intercept, f.slope_stderr, f.r_squared, f.t_min, f.t_max, f.n_points
        )?;
    }
    Ok(())
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Result files as `(name, contents)`, in a fixed order.
pub fn render(cfg: &ExperimentConfig, out: &RunOutput) -> Result<Vec<(String, Vec<u8>)>> {
    let mut files = Vec::new();
    if !out.sweep.is_empty() {
        let mut buf = Vec::new();
        write_sweep(&out.sweep, &mut buf)?;
        files.push(("sweep.csv".to_string(), buf));
    }
    if !out.fits.is_empty() {
        let mut buf = Vec::new();
        write_fits(&out.fits, &mut buf)?;
        files.push(("fits.csv".to_string(), buf));
    }
    for (t, h) in &out.histograms {
        let mut buf = Vec::new();
        h.write_csv(&mut buf)?;
        files.push((format!("hist_t{t}.csv"), buf));
    }
    if let Some((params, grid)) = &out.she_snapshot {
        let mut buf = Vec::new();
        grid.write_csv(params, &mut buf)?;
        files.push(("she_snapshot.csv".to_string(), buf));
    }
    let report = json!({
        "kind": cfg.kind.as_str(),
        "all_pass": out.all_pass(),
        "n_checks": out.checks.len(),
        "n_failed": out.count(CheckStatus::Fail),
        "n_insufficient_power": out.count(CheckStatus::InsufficientPower),
        "checks": out.checks,
        "details": out.details,
    });
    files.push(("report.json".to_string(), serde_json::to_vec_pretty(&report)?));
    Ok(files)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub kind: &'static str,
    pub config_sha256: String,
    pub master_seed: u64,
    pub workers: usize,
    pub streams: Vec<StreamRange>,
    pub wall_time_seconds: f64,
    pub invalid_replicas: Vec<InvalidCount>,
    pub all_pass: bool,
    pub outputs: Vec<OutputFile>,
}

pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(cfg)?))
}

/// Writes every result file and then `manifest.json` into `dir`.
pub fn write_outputs(
    dir: &Path,
    cfg: &ExperimentConfig,
    out: &RunOutput,
    workers: usize,
    wall_time_seconds: f64,
) -> Result<RunManifest> {
    let files = render(cfg, out)?;
    fs::create_dir_all(dir)?;
    let mut outputs = Vec::with_capacity(files.len());
    for (name, bytes) in &files {
        fs::write(dir.join(name), bytes)?;
        outputs.push(OutputFile {
            path: name.clone(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
    }
    let manifest = RunManifest {
        tool: "kpzlab",
        version: env!("CARGO_PKG_VERSION"),
        kind: cfg.kind.as_str(),
        config_sha256: config_hash(cfg)?,
        master_seed: cfg.master_seed,
        workers,
        streams: out.streams.clone(),
        wall_time_seconds,
        invalid_replicas: out.invalid.clone(),
        all_pass: out.all_pass(),
        outputs,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}
