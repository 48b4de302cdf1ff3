use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn kpzlab(args: &[&str], env: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_kpzlab"));
    cmd.args(args).env_remove("KPZLAB_OUTPUT_DIR");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, json: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, json).unwrap();
    p.to_str().unwrap().to_string()
}

const SMALL_SWEEP: &str = r#"{"kind": "exponent-sweep", "replicas": 80, "t_grid": [0.5, 1, 2], "master_seed": 11}"#;

#[test]
fn zero_replicas_is_a_validation_error_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"kind": "wasep-height", "replicas": 0}"#);
    let out_dir = dir.path().join("out");
    let o = kpzlab(&["run", &cfg, "--output-dir", out_dir.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out_dir.exists());
}

#[test]
fn malformed_config_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"kind": "wasep-height", "replicas": 10, "typo": 1}"#);
    let o = kpzlab(&["run", &cfg, "--output-dir", dir.path().join("o").to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_config_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = kpzlab(&["run", dir.path().join("absent.json").to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn buffer_violations_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let narrow = write_config(
        dir.path(),
        "narrow.json",
        r#"{"kind": "wasep-height", "replicas": 80, "t_grid": [1], "engine_overrides": {"half_width": 20}}"#,
    );
    let o = kpzlab(&["run", &narrow, "--output-dir", out_dir.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let guard = write_config(
        dir.path(),
        "guard.json",
        r#"{"kind": "second-class", "replicas": 80, "t_grid": [1], "engine_overrides": {"guard": 1}}"#,
    );
    let o = kpzlab(&["run", &guard, "--output-dir", out_dir.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("replicas invalid"));
    assert!(!out_dir.exists());
}

#[test]
fn worker_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", SMALL_SWEEP);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (d, w) in [(&a, "1"), (&b, "8")] {
        let o = kpzlab(&["run", &cfg, "--workers", w, "--output-dir", d.to_str().unwrap()], &[]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let mut names: Vec<String> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".csv") || n == "report.json")
        .collect();
    names.sort();
    assert!(names.contains(&"sweep.csv".to_string()));
    assert!(names.contains(&"hist_t2.csv".to_string()));
    for n in &names {
        assert_eq!(fs::read(a.join(n)).unwrap(), fs::read(b.join(n)).unwrap(), "{n} differs");
    }
    let ma: Value = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    let mb: Value = serde_json::from_slice(&fs::read(b.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(ma["outputs"], mb["outputs"]);
    assert_eq!(ma["workers"], 1);
    assert_eq!(mb["workers"], 8);
}

#[test]
fn sweep_writes_one_row_per_time_and_estimator() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", SMALL_SWEEP);
    let o = kpzlab(&["run", &cfg], &[("KPZLAB_OUTPUT_DIR", dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let sweep = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let mut lines = sweep.lines();
    assert_eq!(lines.next(), Some("eps,rho,t_macro,n_replicas,estimator,value,stderr"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3 * 5);
    for t in ["0.5", "1", "2"] {
        let ests: Vec<&str> = rows.iter().filter(|r| r[2] == t).map(|r| r[4]).collect();
        assert_eq!(ests, ["mean_h0", "var_h0", "s_abs_moment", "s_second_moment", "diffusivity"]);
    }

    let manifest: Value = serde_json::from_slice(&fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    let listed: Vec<&str> = manifest["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|o| o["path"].as_str().unwrap())
        .collect();
    for f in ["sweep.csv", "fits.csv", "hist_t0.5.csv", "hist_t1.csv", "hist_t2.csv", "report.json"] {
        assert!(listed.contains(&f), "{f} missing from manifest");
    }
    assert_eq!(manifest["master_seed"], 11);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);

    let fit = kpzlab(
        &["fit", "--input", dir.path().join("sweep.csv").to_str().unwrap(), "--estimator", "var_h0"],
        &[],
    );
    assert!(fit.status.success());
    let text = String::from_utf8(fit.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("estimator,slope,intercept,slope_stderr,r_squared,t_min,t_max,n_points")
    );
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "var_h0");
    assert_eq!(row[7], "3");
    let fits = fs::read_to_string(dir.path().join("fits.csv")).unwrap();
    assert!(fits.lines().any(|l| l.split(',').collect::<Vec<_>>() == row));
}

#[test]
fn fit_rejects_unknown_estimators() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.csv");
    fs::write(&p, "eps,rho,t_macro,n_replicas,estimator,value,stderr\n0.2,0.5,8,10,var_h0,1,0.1\n").unwrap();
    let o = kpzlab(&["fit", "--input", p.to_str().unwrap(), "--estimator", "nope"], &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn small_suite_flags_statistics_as_underpowered() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"kind": "exponent-sweep", "replicas": 200, "t_grid": [0.5, 1],
            "suite": {"parts": ["pathwise", "wasep"]}}"#,
    );
    let o = kpzlab(&["identity-suite", &cfg, "--output-dir", dir.path().to_str().unwrap()], &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let report: Value = serde_json::from_slice(&fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["kind"], "identity-suite");
    let checks = report["checks"].as_array().unwrap();
    for c in checks {
        let name = c["check_name"].as_str().unwrap();
        if name.starts_with("pathwise") || name == "height_conservation" || name.starts_with("s_integral") {
            assert_eq!(c["status"], "pass", "{name}");
        } else {
            assert_eq!(c["status"], "insufficient_power", "{name}");
        }
    }
    assert!(checks.iter().any(|c| c["status"] == "insufficient_power"));
}

#[test]
fn injected_fault_fails_its_check() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"kind": "identity-suite", "replicas": 100,
            "suite": {"parts": ["speed"], "speed_micro_t": 40, "min_replicas": 0,
                      "fault_injection": "speed[rho=0.5]"}}"#,
    );
    let o = kpzlab(&["identity-suite", &cfg, "--output-dir", dir.path().to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(1));
    let report: Value = serde_json::from_slice(&fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    for c in report["checks"].as_array().unwrap() {
        let faulty = c["check_name"] == "speed[rho=0.5]";
        assert_eq!(c["pass"], !faulty, "{c}");
        if faulty {
            assert!(c["z_score"].as_f64().unwrap().abs() > 3.0);
        }
    }
}

#[test]
fn version_prints_crate_version() {
    let o = kpzlab(&["version"], &[]);
    assert!(o.status.success());
    assert!(String::from_utf8(o.stdout).unwrap().starts_with("kpzlab 0."));
}
