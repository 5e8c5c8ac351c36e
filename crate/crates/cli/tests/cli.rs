use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_feeder-envelope");

fn data(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(rel)
}

fn feeder13() -> PathBuf {
    data("feeder13.json")
}

fn scenario(name: &str) -> PathBuf {
    data(&format!("scenarios/{name}.json"))
}

fn write_json(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_vec_pretty(value).unwrap()).unwrap();
    path
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn run(cmd: &str, feeder: &Path, scenario: &Path, out: &Path, extra: &[&str]) -> Output {
    Command::new(BIN)
        .arg(cmd)
        .arg("--feeder")
        .arg(feeder)
        .arg("--scenario")
        .arg(scenario)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn two_node(vmin: f64, vmax: f64) -> Value {
    json!({
        "base": {"v0_pu2": 1.0},
        "nodes": [{"id": 1, "vmin_pu2": vmin, "vmax_pu2": vmax}],
        "branches": [{"from": 0, "to": 1, "r_pu": 0.05, "x_pu": 0.05}]
    })
}

/// The bundled feeder with every node's voltage limits replaced.
fn feeder13_with_limits(vmin: f64, vmax: f64) -> Value {
    let mut f = read_json(&feeder13());
    for node in f["nodes"].as_array_mut().unwrap() {
        node["vmin_pu2"] = json!(vmin);
        node["vmax_pu2"] = json!(vmax);
    }
    f
}

fn f64s(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

#[test]
fn no_load_flow_is_flat() {
    let tmp = TempDir::new().unwrap();
    let sc = write_json(tmp.path(), "empty.json", &json!({}));
    let out = run("loadflow", &feeder13(), &sc, tmp.path(), &[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let lf = read_json(&tmp.path().join("loadflow.json"));
    assert_eq!(lf["converged"], true);
    assert!(f64s(&lf["V"]).iter().all(|&v| v == 1.0));
    assert!(f64s(&lf["l"]).iter().all(|&v| v == 0.0));
}

#[test]
fn overload_reports_collapsing_node() {
    let tmp = TempDir::new().unwrap();
    let feeder = write_json(tmp.path(), "f.json", &two_node(0.81, 1.21));
    let sc = write_json(tmp.path(), "s.json", &json!({"loads": [{"node": 1, "p_pu": 5.0, "q_pu": 2.0}]}));
    let out = run("loadflow", &feeder, &sc, tmp.path(), &[]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("collapse at node 1"), "{}", stderr(&out));
}

#[test]
fn malformed_input_is_an_input_error() {
    let tmp = TempDir::new().unwrap();
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, "{ nodes: ").unwrap();
    let out = run("loadflow", &bad, &scenario("cost13"), tmp.path(), &[]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("parse"), "{}", stderr(&out));
    let out = run("solve", &feeder13(), &bad, tmp.path(), &[]);
    assert_eq!(code(&out), 2);
    let out = run("solve", &feeder13(), &scenario("cost13"), tmp.path(), &["--eps", "0"]);
    assert_eq!(code(&out), 2);
    let missing = tmp.path().join("missing.json");
    assert_eq!(code(&run("solve", &missing, &scenario("cost13"), tmp.path(), &[])), 2);
}

#[test]
fn cost_solve_validates_and_sandwiches_exact_voltage() {
    let tmp = TempDir::new().unwrap();
    let out = run("solve", &feeder13(), &scenario("cost13"), tmp.path(), &[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let sol = read_json(&tmp.path().join("solution.json"));
    assert_eq!(sol["validation"]["violation_count"], 0);
    assert_eq!(sol["validation"]["admissible"], true);
    let csv = fs::read_to_string(tmp.path().join("voltages.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("node,v_minus,v_exact,v_plus"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 12);
    for r in &rows {
        assert!(r[1] <= r[2] + 1e-6 && r[2] <= r[3] + 1e-6, "{r:?}");
    }
    let trace = fs::read_to_string(tmp.path().join("trace.jsonl")).unwrap();
    assert_eq!(trace.lines().count() as u64, sol["iterations"].as_u64().unwrap());
}

#[test]
fn voltage_ceiling_below_substation_is_infeasible() {
    let tmp = TempDir::new().unwrap();
    let feeder = write_json(tmp.path(), "f.json", &feeder13_with_limits(0.81, 0.99));
    let sc = write_json(
        tmp.path(),
        "s.json",
        &json!({
            "generators": [{"node": 3, "p_min_pu": 0.0, "p_max_pu": 0.0, "q_min_pu": 0.0, "q_max_pu": 0.0}],
            "objective": "hosting"
        }),
    );
    let out = run("solve", &feeder, &sc, tmp.path(), &[]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    assert!(stderr(&out).contains("v_plus_max"), "{}", stderr(&out));
}

#[test]
fn tightening_never_loses_hosting_against_one_shot() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("tight"), tmp.path().join("once"));
    assert_eq!(code(&run("solve", &feeder13(), &scenario("hosting13"), &a, &["--tighten"])), 0);
    assert_eq!(code(&run("solve", &feeder13(), &scenario("hosting13"), &b, &["--no-tighten"])), 0);
    let total = |dir: &Path| f64s(&read_json(&dir.join("solution.json"))["solution"]["p_g"]).iter().sum::<f64>();
    assert!(total(&a) >= total(&b) - 1e-9, "{} < {}", total(&a), total(&b));
    assert_eq!(read_json(&b.join("solution.json"))["iterations"], 1);
}

#[test]
fn hosting_reports_both_configurations() {
    let tmp = TempDir::new().unwrap();
    let out = run("hosting", &feeder13(), &scenario("hosting13"), tmp.path(), &[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let h = read_json(&tmp.path().join("hosting.json"));
    let d = &h["distributed"];
    let c = &h["centralized"];
    assert_eq!(d["nodes"], json!([3, 5, 7, 8, 10, 11]));
    assert_eq!(c["nodes"], json!([2]));
    for run in [d, c] {
        assert_eq!(run["validation"]["violation_count"], 0);
        let cap = f64s(&run["capacity"]);
        assert!((cap.iter().sum::<f64>() - run["total"].as_f64().unwrap()).abs() < 1e-12);
        assert!(run["total"].as_f64().unwrap() > 0.0);
    }
}

#[test]
fn zero_headroom_gives_zero_capacity() {
    let tmp = TempDir::new().unwrap();
    let feeder = write_json(tmp.path(), "f.json", &feeder13_with_limits(0.9025, 1.0));
    let sc = read_json(&scenario("hosting13"));
    let sc = write_json(tmp.path(), "s.json", &json!({"generators": sc["generators"], "objective": "hosting"}));
    let out = run("hosting", &feeder, &sc, tmp.path(), &[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let h = read_json(&tmp.path().join("hosting.json"));
    for key in ["distributed", "centralized"] {
        for c in f64s(&h[key]["capacity"]) {
            assert!(c.abs() < 1e-7, "{key}: {c}");
        }
    }
}

fn short_horizon(steps: usize, b_final: Option<f64>) -> Value {
    let mut sc = read_json(&scenario("multiperiod13"));
    let h = &mut sc["horizon"];
    let series: Vec<Value> = h["load_series"].as_array().unwrap()[..steps].to_vec();
    h["T"] = json!(steps);
    h["load_series"] = json!(series);
    if let Some(b) = b_final {
        for bat in sc["batteries"].as_array_mut().unwrap() {
            bat["b_final_puh"] = json!(b);
        }
    }
    sc
}

#[test]
fn multiperiod_compare_favours_storage() {
    let tmp = TempDir::new().unwrap();
    let sc = write_json(tmp.path(), "s.json", &short_horizon(4, None));
    let out = run("multiperiod", &feeder13(), &sc, tmp.path(), &["--compare"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let cmp = read_json(&tmp.path().join("comparison.json"));
    let totals: Vec<(String, f64)> = cmp
        .as_array()
        .unwrap()
        .iter()
        .map(|e| (e["configuration"].as_str().unwrap().to_owned(), e["total_generation"].as_f64().unwrap()))
        .collect();
    let names: Vec<&str> = totals.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["no-storage", "centralized", "distributed"]);
    assert!(totals[2].1 >= totals[0].1 - 1e-9);
    assert!(totals[1].1 >= totals[0].1 - 1e-9);
    let csv = fs::read_to_string(tmp.path().join("schedule.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn forced_final_charge_nets_to_zero_and_soc_stays_in_bounds() {
    let tmp = TempDir::new().unwrap();
    let sc = write_json(tmp.path(), "s.json", &short_horizon(4, Some(0.0)));
    let out = run("multiperiod", &feeder13(), &sc, tmp.path(), &[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let s = &read_json(&tmp.path().join("schedule.json"))["schedule"];
    let dt = s["dt"].as_f64().unwrap();
    let p_b: Vec<Vec<f64>> = s["p_b"].as_array().unwrap().iter().map(f64s).collect();
    for b in 0..6 {
        let net: f64 = p_b.iter().map(|row| row[b] * dt).sum();
        assert!(net.abs() < 1e-7, "battery {b}: {net}");
    }
    for row in s["soc"].as_array().unwrap() {
        for v in f64s(row) {
            assert!((0.0..=0.06).contains(&v), "{v}");
        }
    }
}

#[test]
fn outputs_are_byte_identical_across_runs_and_thread_caps() {
    let tmp = TempDir::new().unwrap();
    let dirs: Vec<PathBuf> = (0..2).map(|k| tmp.path().join(k.to_string())).collect();
    for (dir, threads) in dirs.iter().zip(["1", "4"]) {
        let out = Command::new(BIN)
            .env("FEEDER_ENVELOPE_THREADS", threads)
            .args(["hosting", "--feeder"])
            .arg(feeder13())
            .arg("--scenario")
            .arg(scenario("hosting13"))
            .arg("--out")
            .arg(dir)
            .output()
            .unwrap();
        assert_eq!(code(&out), 0);
    }
    for name in ["hosting.json", "trace.jsonl"] {
        assert_eq!(fs::read(dirs[0].join(name)).unwrap(), fs::read(dirs[1].join(name)).unwrap(), "{name}");
    }
}

#[test]
fn validate_accepts_solution_files_and_flags_overdrive() {
    let tmp = TempDir::new().unwrap();
    let solved = tmp.path().join("solved");
    assert_eq!(code(&run("solve", &feeder13(), &scenario("cost13"), &solved, &[])), 0);
    let out = run(
        "validate",
        &feeder13(),
        &scenario("cost13"),
        &tmp.path().join("ok"),
        &["--dispatch", solved.join("solution.json").to_str().unwrap()],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let dispatch = write_json(tmp.path(), "d.json", &json!({"generator_nodes": [11], "p_g": [1.5]}));
    let dir = tmp.path().join("bad");
    let out = run("validate", &feeder13(), &scenario("cost13"), &dir, &["--dispatch", dispatch.to_str().unwrap()]);
    assert_eq!(code(&out), 6, "{}", stderr(&out));
    let v = read_json(&dir.join("validation.json"));
    assert!(v["validation"]["violation_count"].as_u64().unwrap() > 0);
    let unknown = write_json(tmp.path(), "u.json", &json!({"generator_nodes": [99], "p_g": [0.1]}));
    let out = run("validate", &feeder13(), &scenario("cost13"), &dir, &["--dispatch", unknown.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
}

#[test]
fn flexibility_export_has_up_and_down_per_unit() {
    let tmp = TempDir::new().unwrap();
    let out = run("flexibility", &feeder13(), &scenario("flex13"), tmp.path(), &[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let f = read_json(&tmp.path().join("flexibility.json"));
    let (up, down) = (f64s(&f["up"]), f64s(&f["down"]));
    assert_eq!(up.len(), 6);
    assert!(down.iter().sum::<f64>() < up.iter().sum::<f64>());
    assert_eq!(f["admissible"], true);
}
