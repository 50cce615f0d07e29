use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
[model]
mass = 1.0
bare_freq = 0.0
coupling_freq = 1.0
spin_count = 8
spin_gap = 100.0
beta = 0.01

[bath]
kind = "constant"
gamma = 10.0

[initial]
alpha_re = 1.0

[numerics]
dim = 14
tol = 1e-8
t_end = 40.0
sample_dt = 0.1
"#;

fn qcsb(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qcsb"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn repo_config(name: &str) -> String {
    format!("{}/../../configs/{name}", env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn simulate_writes_trajectory_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let o = qcsb(&["simulate", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let csv = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("# qcsb-trajectory v1"));
    assert_eq!(
        lines.next(),
        Some("t,x,p,x2,impurity,S_tls,dS_tls,P_0,P_1,P_2,P_3,P_4,P_5,P_6,P_7,P_8")
    );
    assert_eq!(lines.count(), 401);
    let table = qcsb::io::read_trajectory_csv(csv.as_bytes()).unwrap();
    assert_eq!(table.column("x").unwrap()[0], table.rows[0][1]);

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    let fit = &summary["fits"]["damped_oscillation"]["ok"];
    assert!(fit["kappa"].as_f64().unwrap() > 0.0, "{summary}");
    assert!(summary["fits"]["dephasing_slope"]["ok"].as_f64().unwrap() > 0.0);
    assert_eq!(summary["convergence"]["check_dim"], 24);
    assert!(summary["diagnostics"]["max_trace_error"].as_f64().unwrap() < 1e-8);
}

#[test]
fn tol_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replace("t_end = 40.0", "t_end = 2.0") + "convergence_check = false\n";
    let cfg = write_config(dir.path(), "c.toml", &text);
    let o = qcsb(
        &["simulate", "--config", cfg.to_str().unwrap(), "--tol", "1e-6"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let summary = std::fs::read_to_string(dir.path().join("summary.json")).unwrap();
    assert!(summary.contains("\"tol\": 1e-6"), "{summary}");
    // Too few samples for an oscillation fit: reported, not fatal.
    assert!(summary.contains("\"error\""));
}

#[test]
fn config_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let typo = write_config(
        dir.path(),
        "typo.toml",
        &SMALL.replace("beta = 0.01", "beta = 0.01\nbetta = 1.0"),
    );
    let o = qcsb(&["simulate", "--config", typo.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("betta"), "{}", stderr(&o));

    let neg = write_config(
        dir.path(),
        "neg.toml",
        &SMALL.replace("gamma = 10.0", "gamma = -1.0"),
    );
    let o = qcsb(&["simulate", "--config", neg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));

    let o = qcsb(&["simulate", "--config", "/nonexistent/x.toml"], dir.path());
    assert_eq!(o.status.code(), Some(1));

    let cfg = write_config(dir.path(), "ok.toml", SMALL);
    let o = qcsb(
        &["simulate", "--config", cfg.to_str().unwrap(), "--tol", "0"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));

    let o = qcsb(&["sweep", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("[sweep]"));
    assert!(!dir.path().join("trajectory.csv").exists());
}

#[test]
fn integration_failure_exits_2_with_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "stiff.toml",
        &SMALL.replace("tol = 1e-8", "tol = 1e-300"),
    );
    let o = qcsb(&["simulate", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("step size underflow"), "{}", stderr(&o));
    let partial = std::fs::read_to_string(dir.path().join("trajectory.csv.partial")).unwrap();
    assert!(partial.starts_with("# qcsb-trajectory v1\n"));
    assert!(!dir.path().join("trajectory.csv").exists());
}

#[test]
fn single_point_sweep_flags_degenerate_fit() {
    let dir = tempfile::tempdir().unwrap();
    let text =
        SMALL.to_string() + "convergence_check = false\n\n[sweep]\naxis = \"spin_count\"\nvalues = [8]\n";
    let cfg = write_config(dir.path(), "one.toml", &text);
    let o = qcsb(
        &["sweep", "--config", cfg.to_str().unwrap(), "--threads", "1"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "# qcsb-sweep v1");
    assert_eq!(lines.len(), 3);
    assert!(
        lines[2].starts_with("8.00000000000000e0,") && lines[2].ends_with(",ok"),
        "{}",
        lines[2]
    );
    let fits: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("fits.json")).unwrap()).unwrap();
    let msg = fits["inverse_kappa_vs_value"]["error"].as_str().unwrap();
    assert!(msg.contains("insufficient data"), "{msg}");
}

#[test]
fn thermo_reads_simulation_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = qcsb(
        &["thermo", "--config", &repo_config("weak_coupling.toml")],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("thermo.json")).unwrap()).unwrap();
    let s = &v["summary"];
    let weff = s["effective_frequency"].as_f64().unwrap();
    let m = s["mean_polarization"].as_f64().unwrap();
    assert!((weff * weff - m).abs() < 1e-15);
}

#[test]
fn glass_map_on_silica_grid() {
    let dir = tempfile::tempdir().unwrap();
    let o = qcsb(
        &["glass-map", "--config", &repo_config("silica.toml")],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let grid = std::fs::read_to_string(dir.path().join("rsgrid.csv")).unwrap();
    let lines: Vec<&str> = grid.lines().collect();
    assert_eq!(lines[0], "# qcsb-rsgrid v1");
    assert_eq!(lines[1], "T_K,omega_p_rad_s,R_s,flag");
    assert_eq!(lines.len(), 2 + 50 * 50);
    assert!(lines[2..].iter().all(|l| !l.ends_with(",error")));
    let boundary = std::fs::read_to_string(dir.path().join("boundary.csv")).unwrap();
    assert_eq!(boundary.lines().count(), 2 + 50);
}

#[test]
fn validate_passes_and_detects_mutation() {
    let dir = tempfile::tempdir().unwrap();
    let o = qcsb(&["validate"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(String::from_utf8_lossy(&o.stdout).matches("PASS").count(), 3);

    let o = qcsb(&["validate", "--gain-scale", "1.05"], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let report = std::fs::read_to_string(dir.path().join("validate.json")).unwrap();
    assert!(report.contains("\"pass\": false"));
}
