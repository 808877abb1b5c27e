use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn mlsg(args: &[&str], dir: &Path, threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mlsg"));
    cmd.args(args).current_dir(dir);
    match threads {
        Some(n) => cmd.env("MLSG_THREADS", n),
        None => cmd.env_remove("MLSG_THREADS"),
    };
    cmd.output().unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    std::fs::write(dir.join(name), body).unwrap();
    name.to_string()
}

fn baseline_model(delta: f64, gamma_w: f64, gamma_x: f64) -> String {
    format!(
        r#"{{"beta_p":[[0,0.1],[1,0.1]],"beta_w":[[0,0.2],[1,0.2]],"delta":[[0,{delta}],[1,{delta}]],
        "beta_x":0.1,"gamma_p":0.1,"gamma_w":{gamma_w},"gamma_x":{gamma_x},"alpha":1,"c0":1,"r":0.05,"horizon":1}}"#
    )
}

#[test]
fn solve_writes_all_artifacts() {
    let tmp = TempDir::new().unwrap();
    let out = mlsg(&["solve", "--out", "o", "--quiet"], tmp.path(), None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stdout.is_empty());
    let o = tmp.path().join("o");
    let riccati = std::fs::read_to_string(o.join("riccati.csv")).unwrap();
    let lines: Vec<&str> = riccati.lines().collect();
    assert_eq!(lines[0], "t,P2,P1,P0,N2,N1,N0");
    assert!(lines[1].starts_with("0.0000000000000000e0,"));
    let zero = "0.0000000000000000e0";
    assert_eq!(lines.last().unwrap(), &format!("1.0000000000000000e0{}", format!(",{zero}").repeat(6)));
    for f in ["strategies.csv", "existence.json", "value_samples.csv"] {
        assert!(o.join(f).exists(), "{f}");
    }
}

#[test]
fn zero_wholesale_sensitivity_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &format!(r#"{{"model":{}}}"#, baseline_model(0.1, 0.0, 0.1)));
    let out = mlsg(&["solve", "--config", &cfg, "--out", "o"], tmp.path(), None);
    assert_eq!(out.status.code(), Some(64));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gamma_w"));
}

#[test]
fn missing_output_dir_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    for sub in ["solve", "verify", "sweep", "simulate"] {
        let out = mlsg(&[sub], tmp.path(), None);
        assert_eq!(out.status.code(), Some(64), "{sub}");
    }
}

#[test]
fn unknown_config_field_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", r#"{"mesh":{"n_steps":100},"bogus":1}"#);
    let out = mlsg(&["solve", "--config", &cfg, "--out", "o"], tmp.path(), None);
    assert_eq!(out.status.code(), Some(64));
}

#[test]
fn blow_up_exits_with_existence_failure() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &format!(r#"{{"model":{}}}"#, baseline_model(1000.0, 0.0001, 0.1)));
    let out = mlsg(&["solve", "--config", &cfg, "--out", "o"], tmp.path(), None);
    assert_eq!(out.status.code(), Some(2));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("o/existence.json")).unwrap()).unwrap();
    assert_eq!(report["existence_ok"], false);
    let eta = report["eta"].as_f64().unwrap();
    assert!(eta < 1.0 && (eta - 0.1806).abs() < 1e-9, "eta {eta}");
}

#[test]
fn verify_baseline_passes_and_corruption_fails() {
    let tmp = TempDir::new().unwrap();
    let out = mlsg(&["verify", "--out", "v"], tmp.path(), None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("v/verify.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], true);

    assert_eq!(mlsg(&["solve", "--out", "s", "--quiet"], tmp.path(), None).status.code(), Some(0));
    let csv = std::fs::read_to_string(tmp.path().join("s/riccati.csv")).unwrap();
    let mut lines: Vec<String> = csv.lines().map(String::from).collect();
    let mut fields: Vec<String> = lines[500].split(',').map(String::from).collect();
    fields[1] = "1.0e-2".into();
    lines[500] = fields.join(",");
    std::fs::write(tmp.path().join("bad.csv"), lines.join("\n")).unwrap();
    let out = mlsg(&["verify", "--solution", "bad.csv", "--out", "v2"], tmp.path(), None);
    assert_eq!(out.status.code(), Some(1));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("v2/verify.json")).unwrap()).unwrap();
    let residual = report["checks"].as_array().unwrap().iter().find(|c| c["name"] == "riccati_residual").unwrap();
    assert_eq!(residual["status"], "fail");

    let out = mlsg(&["verify", "--solution", "s/riccati.csv", "--out", "v3"], tmp.path(), None);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn verify_without_goodwill_effect_passes_trivially() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        &format!(r#"{{"model":{},"mesh":{{"n_steps":1000}}}}"#, baseline_model(0.1, 0.0001, 0.0)),
    );
    let out = mlsg(&["verify", "--config", &cfg, "--out", "v", "--quiet"], tmp.path(), None);
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(tmp.path().join("v/verify.json")).unwrap();
    assert!(text.contains("zero_goodwill_effect_state_terms"));
}

#[test]
fn deterministic_single_path_simulation() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"sim":{"n_paths":1,"n_steps":200,"seed":1,"x0":1,"sigma_scale":0},"mesh":{"n_steps":1000}}"#,
    );
    let out = mlsg(&["simulate", "--config", &cfg, "--out", "a", "--quiet"], tmp.path(), None);
    assert_eq!(out.status.code(), Some(0));
    let out = mlsg(&["simulate", "--config", &cfg, "--out", "b", "--quiet", "--seed", "99"], tmp.path(), None);
    assert_eq!(out.status.code(), Some(0));
    let a = std::fs::read_to_string(tmp.path().join("a/path_0.csv")).unwrap();
    let b = std::fs::read_to_string(tmp.path().join("b/path_0.csv")).unwrap();
    assert_eq!(a, b, "no noise, so the seed cannot matter");
    assert_eq!(a.lines().count(), 202);
    assert!(!tmp.path().join("a/path_1.csv").exists());
    let result: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("b/sim_result.json")).unwrap()).unwrap();
    assert_eq!(result["config"]["seed"], 99);
    assert_eq!(result["j_s_se"], 0.0);
}

#[test]
fn simulate_needs_a_sim_block() {
    let tmp = TempDir::new().unwrap();
    let out = mlsg(&["simulate", "--out", "o"], tmp.path(), None);
    assert_eq!(out.status.code(), Some(64));
}

#[test]
fn cost_sweep_writes_csv_and_figures() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"sweep":{"parameter":"c0","values":[1,1.5,2,2.5],"outputs":["w_x","w_0"]},"mesh":{"n_steps":500}}"#,
    );
    let out = mlsg(&["sweep", "--config", &cfg, "--out", "o", "--quiet"], tmp.path(), None);
    assert_eq!(out.status.code(), Some(0));
    let csv = std::fs::read_to_string(tmp.path().join("o/sweep_c0.csv")).unwrap();
    let values: std::collections::BTreeSet<&str> =
        csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(values.len(), 4);
    assert!(tmp.path().join("o/fig_w_x_c0.svg").exists());
    assert!(tmp.path().join("o/fig_w_0_c0.svg").exists());
}

#[test]
fn empty_selection_writes_no_figures() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"sweep":{"parameter":"delta","values":[0.1],"outputs":[]},"mesh":{"n_steps":100}}"#,
    );
    let out = mlsg(&["sweep", "--config", &cfg, "--out", "o"], tmp.path(), None);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("no plots"));
    let svgs = std::fs::read_dir(tmp.path().join("o"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "svg"))
        .count();
    assert_eq!(svgs, 0);
}

#[test]
fn invalid_thread_count_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let out = mlsg(&["solve", "--out", "o"], tmp.path(), Some("zero"));
    assert_eq!(out.status.code(), Some(64));
}
