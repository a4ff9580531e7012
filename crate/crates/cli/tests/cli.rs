use std::path::{Path, PathBuf};

use assert_cmd::Command;
use serde_json::Value;
use tempfile::TempDir;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn bin() -> Command {
    Command::cargo_bin("equistop").unwrap()
}

fn run_ok(args: &[&str]) -> Value {
    let out = bin().args(args).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn write(dir: &TempDir, name: &str, text: &str) -> String {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn example() -> String {
    configs().join("example_4state.toml").to_str().unwrap().to_string()
}

fn two_state(a: f64, b: f64, la: f64, lb: f64, discount: &str) -> String {
    format!("{discount}\n[two_state]\na = {a}\nb = {b}\nlambda_a = {la}\nlambda_b = {lb}\n")
}

const HYPERBOLIC: &str = "[discount]\nkind = \"hyperbolic\"\nbeta = 1.0\n";

#[test]
fn validate_example() {
    let v = run_ok(&["validate", "--config", &example()]);
    assert_eq!(v["schema"], 1);
    assert_eq!(v["n_states"], 4);
    assert_eq!(v["irreducible"], true);
    assert_eq!(v["log_subadditive"]["holds"], true);
}

#[test]
fn json_config_is_accepted() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "m.json",
        r#"{"discount": {"kind": "exponential", "rate": 0.5},
            "chain": {"states": [{"value": 1.0}, {"value": 2.0}], "rates": [[0, 1], [1, 0]]}}"#,
    );
    let v = run_ok(&["validate", "--config", &cfg]);
    assert_eq!(v["labels"], serde_json::json!(["x1", "x2"]));
}

#[test]
fn negative_rate_is_a_model_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "m.toml",
        &format!(
            "{HYPERBOLIC}[chain]\nstates = [{{ value = 1.0 }}, {{ value = 2.0 }}]\nrates = [[0.0, -1.0], [1.0, 0.0]]\n"
        ),
    );
    bin().args(["validate", "--config", &cfg]).assert().code(3);
}

#[test]
fn missing_discount_is_a_schema_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "m.toml", "[chain]\nstates = [{ value = 1.0 }]\nrates = [[0.0]]\n");
    bin().args(["validate", "--config", &cfg]).assert().code(2);
}

#[test]
fn unknown_key_and_bad_shape_are_schema_errors() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "a.toml", &format!("{HYPERBOLIC}colour = 1\n"));
    bin().args(["validate", "--config", &cfg]).assert().code(2);
    let cfg = write(
        &dir,
        "b.toml",
        &format!("{HYPERBOLIC}[chain]\nstates = [{{ value = 1.0 }}, {{ value = 2.0 }}]\nrates = [[0.0, 1.0]]\n"),
    );
    bin().args(["validate", "--config", &cfg]).assert().code(2);
}

#[test]
fn missing_file_is_an_io_error() {
    bin()
        .args(["validate", "--config", "/nonexistent/m.toml"])
        .assert()
        .code(1);
}

#[test]
fn classify_example_region() {
    let v = run_ok(&["classify", "--config", &example(), "--region", "x2,x3,x4"]);
    assert_eq!(v["mild"], true);
    assert_eq!(v["weak"], true);
    assert_eq!(v["strong"], true);
    assert_eq!(v["method"], "strict_first_order");
}

#[test]
fn classify_needs_known_labels() {
    bin().args(["classify", "--config", &example()]).assert().code(2);
    bin()
        .args(["classify", "--config", &example(), "--region", "x1,y"])
        .assert()
        .code(2);
}

#[test]
fn classify_with_monte_carlo_check() {
    let dir = TempDir::new().unwrap();
    let text = std::fs::read_to_string(example()).unwrap();
    let cfg = write(
        &dir,
        "m.toml",
        &format!("seed = 7\n{text}\n[monte_carlo]\npaths = 20000\nhorizon = 1000.0\n"),
    );
    let v = run_ok(&["classify", "--config", &cfg, "--region", "x2,x3,x4"]);
    let checks = v["monte_carlo"]["checks"].as_array().unwrap();
    assert_eq!(checks.len(), 1);
    let c = &checks[0];
    let diff = (c["estimate"].as_f64().unwrap() - c["quadrature"].as_f64().unwrap()).abs();
    assert!(diff <= 4.0 * c["stderr"].as_f64().unwrap() + c["bias_bound"].as_f64().unwrap());
}

#[test]
fn two_state_singleton_b_is_not_mild_and_pair_is_mild_only() {
    // b/a = 0.3 lies below the critical ratio 1/2
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "m.toml", &two_state(1.0, 0.3, 1.0, 1.0, HYPERBOLIC));
    let v = run_ok(&["classify", "--config", &cfg, "--region", "b"]);
    assert_eq!(v["mild"], false);
    let v = run_ok(&["classify", "--config", &cfg, "--region", "a,b"]);
    assert_eq!(v["mild"], true);
    assert_eq!(v["weak"], false);
    assert_eq!(v["strong"], false);
}

#[test]
fn iterate_example_trace() {
    let dir = TempDir::new().unwrap();
    let prefix = dir.path().join("run");
    let prefix = prefix.to_str().unwrap();
    let v = run_ok(&["iterate", "--config", &example(), "--out", prefix]);
    let regions: Vec<&Value> = v["steps"].as_array().unwrap().iter().map(|s| &s["region"]).collect();
    assert_eq!(
        regions,
        [
            &serde_json::json!([]),
            &serde_json::json!(["x2", "x4"]),
            &serde_json::json!(["x2", "x3", "x4"])
        ]
    );
    assert_eq!(v["augmenting_steps"], 2);
    let csv = std::fs::read_to_string(format!("{prefix}_iterate.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 4);
    assert!(csv.starts_with("step,state,value,sup,in_region"));
}

#[test]
fn iterate_exponential_takes_one_step() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "m.toml",
        "[discount]\nkind = \"exponential\"\nrate = 0.3\n[chain]\n\
         states = [{ value = 1.0 }, { value = 4.0 }, { value = 2.0 }]\n\
         rates = [[0.0, 1.0, 0.5], [0.2, 0.0, 0.3], [1.0, 2.0, 0.0]]\n",
    );
    let v = run_ok(&["iterate", "--config", &cfg]);
    assert_eq!(v["augmenting_steps"], 1);
}

#[test]
fn iterate_singleton_chain() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "m.toml",
        &format!("{HYPERBOLIC}[chain]\nstates = [{{ value = 3.0 }}]\nrates = [[0.0]]\n"),
    );
    let v = run_ok(&["iterate", "--config", &cfg]);
    assert_eq!(v["final"], serde_json::json!(["x1"]));
}

#[test]
fn enumerate_verifies_candidate() {
    let v = run_ok(&["enumerate", "--config", &example(), "--region", "x2,x3,x4"]);
    assert_eq!(v["intersection"], serde_json::json!(["x2", "x3", "x4"]));
    assert_eq!(v["verify"]["optimal"], true);
}

#[test]
fn enumerate_too_large_exits_4() {
    let n = 17;
    let states: Vec<String> = (0..n).map(|i| format!("{{ value = {}.0 }}", i + 1)).collect();
    let rates: Vec<String> = (0..n)
        .map(|i| {
            let row: Vec<&str> = (0..n).map(|j| if j == (i + 1) % n { "1.0" } else { "0.0" }).collect();
            format!("[{}]", row.join(", "))
        })
        .collect();
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "m.toml",
        &format!(
            "{HYPERBOLIC}[chain]\nstates = [{}]\nrates = [{}]\n",
            states.join(", "),
            rates.join(", ")
        ),
    );
    bin().args(["enumerate", "--config", &cfg]).assert().code(4);
}

#[test]
fn two_state_map_hyperbolic_has_no_weak_only_cell() {
    let cfg = configs().join("two_state.toml");
    let v = run_ok(&["two-state-map", "--config", cfg.to_str().unwrap()]);
    assert_eq!(v["cells"], 50 * 51);
    assert_eq!(v["disagreements"], 0);
    assert_eq!(v["weak_not_strong"].as_array().unwrap().len(), 0);
}

#[test]
fn two_state_map_gamma_half_has_weak_only_critical_cells() {
    let dir = TempDir::new().unwrap();
    let prefix = dir.path().join("g");
    let prefix = prefix.to_str().unwrap();
    let cfg = configs().join("two_state_gamma.toml");
    let v = run_ok(&["two-state-map", "--config", cfg.to_str().unwrap(), "--out", prefix]);
    assert!(!v["weak_not_strong"].as_array().unwrap().is_empty());
    let csv = std::fs::read_to_string(format!("{prefix}_two_state_map.csv")).unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let (case, weak, strong) = (col("case"), col("ab_weak"), col("ab_strong"));
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f[weak] == "true" && f[strong] == "false" {
            assert_eq!(f[case], "iv");
        }
    }
}

#[test]
fn two_state_map_rejects_degenerate_values() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "m.toml", &two_state(1.0, 1.0, 1.0, 1.0, HYPERBOLIC));
    bin().args(["two-state-map", "--config", &cfg]).assert().code(3);
}

#[test]
fn put_analysis() {
    let dir = TempDir::new().unwrap();
    let prefix = dir.path().join("p");
    let prefix = prefix.to_str().unwrap();
    let cfg = configs().join("put.toml");
    let v = run_ok(&["put", "--config", cfg.to_str().unwrap(), "--out", prefix]);
    assert_eq!(v["threshold_matches"], true);
    assert_eq!(v["containment_holds"], true);
    assert_eq!(v["n0"], 3);
    let top = v["S_inf"]
        .as_array()
        .unwrap()
        .iter()
        .map(|l| l.as_i64().unwrap())
        .max()
        .unwrap();
    assert_eq!(top, 3);
    let csv = std::fs::read_to_string(format!("{prefix}_put.csv")).unwrap();
    assert!(csv.starts_with("level,price,payoff,equilibrium_value,precommitment_value"));
}

#[test]
fn put_rejects_foreign_discount() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "m.toml",
        "[discount]\nkind = \"exponential\"\nrate = 1.0\n[put]\nu = 2.0\np = 0.55\nlambda = 1.0\nbeta = 1.0\nK = 10.0\n",
    );
    bin().args(["put", "--config", &cfg]).assert().code(2);
}

#[test]
fn unwritable_csv_is_an_io_error() {
    bin()
        .args(["iterate", "--config", &example(), "--out", "/nonexistent/dir/run"])
        .assert()
        .code(1);
}

#[test]
fn outputs_are_reproducible() {
    let dir = TempDir::new().unwrap();
    let text = std::fs::read_to_string(example()).unwrap();
    let cfg = write(
        &dir,
        "m.toml",
        &format!("{text}\n[monte_carlo]\npaths = 5000\nhorizon = 1000.0\n"),
    );
    let runs: Vec<(Vec<u8>, String)> = ["a", "b"]
        .iter()
        .map(|tag| {
            let prefix = dir.path().join(tag);
            let prefix = prefix.to_str().unwrap();
            let out = bin()
                .args(["classify", "--config", &cfg, "--region", "x2,x3,x4", "--seed", "11"])
                .output()
                .unwrap();
            assert!(out.status.success());
            let it = bin()
                .args(["iterate", "--config", &cfg, "--out", prefix])
                .output()
                .unwrap();
            assert!(it.status.success());
            let mut bytes = out.stdout;
            bytes.extend(std::fs::read(format!("{prefix}_iterate.csv")).unwrap());
            (bytes, String::from_utf8(it.stdout).unwrap().replace(prefix, ""))
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
}
