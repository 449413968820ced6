use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SK: &str = r#"{
  "mixture": [[2, 0.09]],
  "base_measure": {"preset": "ising"},
  "mu": {"atoms": [[0.0, 1.0]]},
  "t": 1.0,
  "monte_carlo": {"N": [4, 8], "replications": 50},
  "seed": 3
}"#;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spinglass"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn compare_formulas_agree_and_csv_carries_metadata() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "sk.json", SK);
    let out_dir = dir.path().join("out");
    let out = run(&[
        "compare",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
        "--quiet",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(out_dir.join("compare.csv")).unwrap();
    let rows = csv_rows(&text);
    assert_eq!(
        rows[0][..6],
        [
            "N",
            "fe_mean",
            "fe_stderr",
            "hopf_lax",
            "classical",
            "formula_gap"
        ]
    );
    assert_eq!(rows.len(), 3);
    for row in &rows[1..] {
        let hl: f64 = row[3].parse().unwrap();
        let cl: f64 = row[4].parse().unwrap();
        assert!((hl - cl).abs() <= 2e-3);
        assert_eq!(row[6], "true");
    }
    let meta: Vec<&str> = text.lines().skip_while(|l| !l.starts_with('#')).collect();
    assert!(
        meta.iter().all(|l| l.starts_with('#')),
        "metadata must trail the table"
    );
    let hash = meta
        .iter()
        .find_map(|l| l.strip_prefix("# config_sha256: "))
        .unwrap();
    assert_eq!(hash.len(), 64);
    assert!(meta.iter().any(|l| l.starts_with("# config: {")));
    assert!(meta.contains(&"# seed: 3"));
}

#[test]
fn weights_not_summing_to_one_name_the_field() {
    let dir = TempDir::new().unwrap();
    let bad = SK.replace(
        r#""mu": {"atoms": [[0.0, 1.0]]}"#,
        r#""mu": {"atoms": [[0.0, 0.5], [0.3, 0.4]]}"#,
    );
    let cfg = write(dir.path(), "bad.json", &bad);
    let out = run(&["hopf-lax", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let msg = stderr(&out);
    assert!(msg.contains("mu.atoms") && msg.contains("0.9"), "{msg}");
    assert!(msg.contains("bad.json:4:"), "{msg}");
}

#[test]
fn malformed_json_and_unknown_fields_are_config_errors() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "broken.json",
        "{\n  \"mixture\": [[2, 0.1]],\n  \"t\": ,\n}",
    );
    let out = run(&["parisi-eval", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));

    let cfg = write(dir.path(), "typo.json", &SK.replace("\"t\"", "\"tt\""));
    let out = run(&["parisi-eval", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("tt"), "{}", stderr(&out));

    let out = run(&[
        "parisi-eval",
        "--config",
        dir.path().join("missing.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn parisi_eval_at_dirac_zero_is_zero() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "sk.json", SK);
    let out = run(&["parisi-eval", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["result"]["value"], 0.0);
    assert_eq!(json["seed"], 3);
    assert_eq!(json["config"]["mixture"][0][1], 0.09);
}

#[test]
fn outputs_are_byte_identical_for_the_same_seed() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "sk.json", SK);
    let cfg = cfg.to_str().unwrap();
    let a = run(&["fe-mc", "--config", cfg]);
    let b = run(&["fe-mc", "--config", cfg]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let c = run(&["fe-mc", "--config", cfg, "--seed", "4"]);
    assert_ne!(a.stdout, c.stdout);
    let text = String::from_utf8(c.stdout).unwrap();
    assert!(text.contains("# seed: 4"));
}

#[test]
fn fe_mc_flags_override_the_config() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "sk.json", SK);
    let mu = write(dir.path(), "mu.json", r#"{"atoms": [[0.0, 1.0]]}"#);
    let out = run(&[
        "fe-mc",
        "--config",
        cfg.to_str().unwrap(),
        "--N",
        "3",
        "--t",
        "0",
        "--reps",
        "5",
        "--branches",
        "10",
        "--mu-file",
        mu.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    let rows = csv_rows(&text);
    assert_eq!(rows[0], ["N", "mean", "stderr", "target_value"]);
    assert_eq!(rows[1], ["3", "0.0", "0.0", "0.0"]);
    assert!(text.contains("\"replications\":5") && text.contains("\"branching\":10"));
}

#[test]
fn non_convergence_exits_with_two_after_writing() {
    let dir = TempDir::new().unwrap();
    let starved = SK.replace(
        "\"seed\": 3",
        "\"optimizer\": {\"simplex\": {\"max_evals\": 4}, \"multistarts\": 1},\n  \"seed\": 3",
    );
    let cfg = write(dir.path(), "starved.json", &starved);
    let out_dir = dir.path().join("out");
    let out = run(&[
        "hopf-lax",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("did not converge"));
    assert!(out_dir.join("hopf-lax.json").exists());
}

#[test]
fn hj_grid_needs_a_grid_and_vanishes_for_ising() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "sk.json", SK);
    let out = run(&["hj-grid", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("grid"));

    let with_grid = SK.replace(
        "\"seed\": 3",
        "\"grid\": {\"s\": {\"start\": 0.4, \"step\": 0.05, \"count\": 3}, \"h\": {\"start\": 0.0, \"step\": 0.05, \"count\": 3}},\n  \"seed\": 3",
    );
    let cfg = write(dir.path(), "grid.json", &with_grid);
    let out = run(&["hj-grid", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = csv_rows(&String::from_utf8(out.stdout).unwrap());
    assert_eq!(rows.len(), 10);
    let interior: Vec<&Vec<String>> = rows[1..].iter().filter(|r| !r[3].is_empty()).collect();
    assert_eq!(interior.len(), 1);
    let residual: f64 = interior[0][3].parse().unwrap();
    assert!(residual.abs() < 1e-6);
    assert_eq!(interior[0][4], "false");
}

#[test]
fn cascade_check_reports_each_level() {
    let dir = TempDir::new().unwrap();
    let two = SK.replace(
        r#""mu": {"atoms": [[0.0, 1.0]]}"#,
        r#""mu": {"atoms": [[0.2, 0.5], [0.6, 0.5]]}"#,
    );
    let cfg = write(dir.path(), "two.json", &two);
    let out = run(&[
        "cascade-check",
        "--config",
        cfg.to_str().unwrap(),
        "--reps",
        "500",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = csv_rows(&String::from_utf8(out.stdout).unwrap());
    let names: Vec<&str> = rows[1..].iter().map(|r| r[0].as_str()).collect();
    assert_eq!(
        names,
        ["overlap_level_0", "overlap_level_1", "log_partition_theta", "psi"]
    );
    for row in &rows[1..] {
        let z: f64 = row[4].parse().unwrap();
        assert!(z.abs() <= 4.0, "{row:?}");
    }
}

#[test]
fn classical_requires_unit_time() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "half.json", &SK.replace("\"t\": 1.0", "\"t\": 0.5"));
    let out = run(&["parisi-classical", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("half.json:5: t:"), "{}", stderr(&out));
}
