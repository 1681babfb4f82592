//! End-to-end tests running the compiled binary against temp directories.
//!
//! Every JSON artifact is checked against the schemas shipped under
//! `schemas/` with a small validator covering the subset of JSON Schema
//! those files use (`type`, `required`, `properties`,
//! `additionalProperties: false`, `items`, `enum`).

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_trendbal")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("binary should spawn")
}

fn run_ok(args: &[&str]) {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&read(path)).unwrap_or_else(|e| panic!("parse {}: {e}", path.display()))
}

fn schema_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schemas")
}

// ----------------------------------------------------------------
// Subset JSON Schema validator
// ----------------------------------------------------------------

fn type_matches(name: &str, value: &Value) -> bool {
    match name {
        "object" => value.is_object(),
        "array" => value.is_array(),
        "string" => value.is_string(),
        "boolean" => value.is_boolean(),
        "null" => value.is_null(),
        "integer" => value.is_i64() || value.is_u64(),
        "number" => value.is_number(),
        other => panic!("schema uses unsupported type '{other}'"),
    }
}

fn validate(value: &Value, schema: &Value, at: &str) -> Result<(), String> {
    if let Some(allowed) = schema.get("enum") {
        let options = allowed.as_array().expect("enum must be an array");
        if !options.contains(value) {
            return Err(format!("{at}: {value} not in enum {allowed}"));
        }
        return Ok(());
    }
    if let Some(ty) = schema.get("type") {
        let names: Vec<&str> = match ty {
            Value::String(s) => vec![s.as_str()],
            Value::Array(list) => list.iter().map(|v| v.as_str().unwrap()).collect(),
            other => panic!("unsupported type spec {other}"),
        };
        if !names.iter().any(|n| type_matches(n, value)) {
            return Err(format!("{at}: expected type {names:?}, got {value}"));
        }
        // A union like ["object", "null"] only applies the object keywords
        // when the value actually is an object.
        if value.is_null() && names.contains(&"null") {
            return Ok(());
        }
    }
    if let Some(obj) = value.as_object() {
        if let Some(required) = schema.get("required").and_then(Value::as_array) {
            for key in required {
                let key = key.as_str().unwrap();
                if !obj.contains_key(key) {
                    return Err(format!("{at}: missing required key '{key}'"));
                }
            }
        }
        let props = schema.get("properties").and_then(Value::as_object);
        if schema.get("additionalProperties") == Some(&Value::Bool(false)) {
            let known = props.map(|p| p.keys().collect::<Vec<_>>()).unwrap_or_default();
            for key in obj.keys() {
                if !known.contains(&key) {
                    return Err(format!("{at}: unexpected key '{key}'"));
                }
            }
        }
        if let Some(props) = props {
            for (key, sub) in props {
                if let Some(child) = obj.get(key) {
                    validate(child, sub, &format!("{at}.{key}"))?;
                }
            }
        }
    }
    if let Some(list) = value.as_array() {
        if let Some(items) = schema.get("items") {
            for (i, child) in list.iter().enumerate() {
                validate(child, items, &format!("{at}[{i}]"))?;
            }
        }
    }
    Ok(())
}

fn assert_schema(artifact: &Path, schema_file: &str) {
    let value = read_json(artifact);
    let schema = read_json(&schema_dir().join(schema_file));
    if let Err(msg) = validate(&value, &schema, "$") {
        panic!("{} violates {schema_file}: {msg}", artifact.display());
    }
}

// ----------------------------------------------------------------
// Fixtures
// ----------------------------------------------------------------

/// Simulates a small panel into `dir` and returns the panel path.
fn simulated_panel(dir: &Path) -> PathBuf {
    run_ok(&[
        "simulate",
        "--variant", "a",
        "--seed", "11",
        "--j", "12",
        "--t0", "12",
        "--t1", "5",
        "--k", "3",
        "--out", dir.to_str().unwrap(),
        "--deterministic",
    ]);
    dir.join("panel.csv")
}

fn fit_on(panel: &Path, out: &Path, extra: &[&str]) {
    let mut args = vec![
        "fit",
        "--data", panel.to_str().unwrap(),
        "--treated", "1",
        "--t0", "12",
        "--balancing", "pre_outcomes",
        "--out", out.to_str().unwrap(),
        "--deterministic",
    ];
    args.extend_from_slice(extra);
    run_ok(&args);
}

fn parse_csv(path: &Path) -> Vec<Vec<String>> {
    read(path)
        .lines()
        .map(|line| line.split(',').map(str::to_string).collect())
        .collect()
}

// ----------------------------------------------------------------
// Tests
// ----------------------------------------------------------------

#[test]
fn simulate_reruns_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    simulated_panel(&a);
    simulated_panel(&b);
    for name in [
        "panel.csv",
        "truth_mu.csv",
        "truth_z.csv",
        "truth_gamma.csv",
        "truth_u.csv",
        "config.json",
    ] {
        assert_eq!(read(&a.join(name)), read(&b.join(name)), "{name} differs");
    }
    assert_schema(&a.join("config.json"), "simulate_config.schema.json");
}

#[test]
fn fit_emits_expected_files_on_panel_data() {
    let tmp = TempDir::new().unwrap();
    let panel = simulated_panel(&tmp.path().join("sim"));
    let out = tmp.path().join("fit");
    fit_on(&panel, &out, &["--method", "cridge", "--lambda", "2"]);
    for name in ["weights.json", "effects.json", "counterfactual.csv", "gap.csv"] {
        assert!(out.join(name).is_file(), "{name} missing");
    }
    assert_schema(&out.join("weights.json"), "weights.schema.json");
    assert_schema(&out.join("effects.json"), "effects.schema.json");

    let weights = read_json(&out.join("weights.json"));
    let entry = &weights["entries"][0];
    assert_eq!(entry["method"], "cridge(lambda=2)");
    // Feasibility: the weights reproduce the constraint side exactly and
    // sum to one through the intercept row.
    assert!(entry["balance"].as_f64().unwrap() < 1e-8);
    assert!((entry["sum"].as_f64().unwrap() - 1.0).abs() < 1e-8);
    let n_weights = entry["weights"].as_array().unwrap().len();
    assert_eq!(n_weights, 12);
    assert_eq!(entry["units"].as_array().unwrap().len(), n_weights);
}

#[test]
fn fit_lambda_grid_is_sorted_with_nonincreasing_norms() {
    let tmp = TempDir::new().unwrap();
    let panel = simulated_panel(&tmp.path().join("sim"));
    let out = tmp.path().join("fit");
    // Deliberately unsorted on the command line.
    fit_on(&panel, &out, &["--method", "cridge", "--lambda", "4,1,2"]);
    let weights = read_json(&out.join("weights.json"));
    let entries = weights["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 3);
    let lambdas: Vec<f64> = entries.iter().map(|e| e["lambda"].as_f64().unwrap()).collect();
    assert_eq!(lambdas, vec![1.0, 2.0, 4.0]);
    let norms: Vec<f64> = entries
        .iter()
        .map(|e| {
            e["weights"]
                .as_array()
                .unwrap()
                .iter()
                .map(|v| v.as_f64().unwrap().powi(2))
                .sum::<f64>()
        })
        .collect();
    assert!(norms[0] >= norms[1] - 1e-12 && norms[1] >= norms[2] - 1e-12,
        "penalty norms should fall along the grid: {norms:?}");
}

#[test]
fn missing_covariate_column_exits_one_and_names_it() {
    let tmp = TempDir::new().unwrap();
    let panel = simulated_panel(&tmp.path().join("sim"));
    let out = run(&[
        "fit",
        "--data", panel.to_str().unwrap(),
        "--treated", "1",
        "--t0", "12",
        "--trending", "ext:urbanization",
        "--out", tmp.path().join("fit").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("urbanization"), "stderr should name the column: {stderr}");
}

#[test]
fn negative_lambda_exits_one() {
    let tmp = TempDir::new().unwrap();
    let panel = simulated_panel(&tmp.path().join("sim"));
    let out = run(&[
        "fit",
        "--data", panel.to_str().unwrap(),
        "--treated", "1",
        "--t0", "12",
        "--lambda", "-3",
        "--out", tmp.path().join("fit").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nonnegative"));
}

/// Writes a panel whose outcomes follow a two-factor model plus a tiny
/// perturbation: the perturbation keeps the matrix full rank (so factor
/// sweeps up to r=3 stay well-posed) while the projected spectrum still
/// collapses by orders of magnitude after the second eigenvalue.
fn rank_two_panel(path: &Path) {
    let units = 10usize;
    let periods = 16usize;
    let mut body = String::from("period");
    for i in 1..=units {
        body.push_str(&format!(",{i}"));
    }
    body.push('\n');
    for t in 1..=periods {
        let f = (t as f64 * 0.37).sin();
        let g = 0.05 * t as f64;
        body.push_str(&t.to_string());
        for i in 1..=units {
            let a = 1.0 + 0.3 * i as f64;
            let b = ((i * i) % 7) as f64 - 3.0;
            let dust = 1e-6 * (((i * 31 + t * 17) % 11) as f64 - 5.0);
            body.push_str(&format!(",{:.15e}", a * f + b * g + dust));
        }
        body.push('\n');
    }
    std::fs::write(path, body).unwrap();
}

#[test]
fn factors_spectrum_collapses_on_rank_two_data() {
    let tmp = TempDir::new().unwrap();
    let panel = tmp.path().join("panel.csv");
    rank_two_panel(&panel);
    let out = tmp.path().join("fac");
    run_ok(&[
        "factors",
        "--data", panel.to_str().unwrap(),
        "--treated", "1",
        "--t0", "12",
        "--r", "0,1,2,3",
        "--out", out.to_str().unwrap(),
        "--deterministic",
    ]);
    let rows = parse_csv(&out.join("eigenvalues.csv"));
    assert_eq!(rows[0], vec!["rank", "eigenvalue"]);
    let eig: Vec<f64> = rows[1..].iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(eig[0] > 0.0);
    // Two-way demeaning cannot raise rank, so past the second eigenvalue
    // only the 1e-6 perturbation is left (squared in the spectrum).
    assert!(eig[2] < 1e-8 * eig[0], "third eigenvalue should collapse: {eig:?}");
    assert!(eig[3] < 1e-8 * eig[0], "fourth eigenvalue should collapse: {eig:?}");
    for r in [0usize, 1, 2, 3] {
        assert!(out.join(format!("counterfactual_r{r}.csv")).is_file());
    }
    assert!(out.join("loadings.csv").is_file());
}

#[test]
fn factors_r_zero_matches_plain_fit() {
    let tmp = TempDir::new().unwrap();
    let panel = simulated_panel(&tmp.path().join("sim"));
    let fac = tmp.path().join("fac");
    run_ok(&[
        "factors",
        "--data", panel.to_str().unwrap(),
        "--treated", "1",
        "--t0", "12",
        "--r", "0",
        "--method", "cridge",
        "--lambda", "2",
        "--out", fac.to_str().unwrap(),
        "--deterministic",
    ]);
    let fit = tmp.path().join("fit");
    run_ok(&[
        "fit",
        "--data", panel.to_str().unwrap(),
        "--treated", "1",
        "--t0", "12",
        "--method", "cridge",
        "--lambda", "2",
        "--out", fit.to_str().unwrap(),
        "--deterministic",
    ]);
    let from_factors = parse_csv(&fac.join("counterfactual_r0.csv"));
    let from_fit = parse_csv(&fit.join("counterfactual.csv"));
    assert_eq!(from_factors.len(), from_fit.len());
    for (a, b) in from_factors[1..].iter().zip(from_fit[1..].iter()) {
        assert_eq!(a[0], b[0], "period order should match");
        assert_eq!(a[2], b[2], "r=0 counterfactual should equal the plain fit");
    }
}

#[test]
fn factors_rank_overflow_exits_one() {
    let tmp = TempDir::new().unwrap();
    let panel = simulated_panel(&tmp.path().join("sim"));
    let out = run(&[
        "factors",
        "--data", panel.to_str().unwrap(),
        "--treated", "1",
        "--t0", "12",
        "--r", "99",
        "--out", tmp.path().join("fac").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("factors"));
}

#[test]
fn compare_reports_one_block_per_method() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("cmp");
    run_ok(&[
        "compare",
        "--variant", "a",
        "--seed", "5",
        "--j", "8",
        "--t0", "8",
        "--t1", "3",
        "--k", "2",
        "--methods", "cridge:2,di,hcw",
        "--seeds", "6",
        "--out", out.to_str().unwrap(),
        "--deterministic",
    ]);
    assert_schema(&out.join("report.json"), "compare_report.schema.json");
    let report = read_json(&out.join("report.json"));
    let labels: Vec<&str> = report["methods"]
        .as_array()
        .unwrap()
        .iter()
        .map(|m| m["label"].as_str().unwrap())
        .collect();
    assert_eq!(labels, vec!["cridge(lambda=2)", "di(lambda=0.01,alpha=0.9)", "hcw"]);
    assert_eq!(report["n_seeds"], 6);
    for m in report["methods"].as_array().unwrap() {
        assert_eq!(m["post_rmse"].as_array().unwrap().len(), 6);
    }
    let per_seed = parse_csv(&out.join("per_seed.csv"));
    assert_eq!(per_seed.len(), 1 + 6 * 3, "header plus seeds x methods rows");
}

#[test]
fn diagnose_fans_out_one_report_per_lambda() {
    let tmp = TempDir::new().unwrap();
    let panel = simulated_panel(&tmp.path().join("sim"));
    let out = tmp.path().join("diag");
    run_ok(&[
        "diagnose",
        "--data", panel.to_str().unwrap(),
        "--treated", "1",
        "--t0", "12",
        "--method", "cridge",
        "--lambda", "1,2,4",
        "--pretrend",
        "--out", out.to_str().unwrap(),
        "--deterministic",
    ]);
    assert_schema(&out.join("diagnostics.json"), "diagnostics.schema.json");
    let diag = read_json(&out.join("diagnostics.json"));
    let reports = diag["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 3);
    for (rep, lambda) in reports.iter().zip(["1", "2", "4"]) {
        assert_eq!(rep["test"], "pretrend");
        assert_eq!(rep["fit"].as_str().unwrap(), format!("cridge(lambda={lambda})"));
        let names: Vec<&str> = rep["coefficients"]
            .as_array()
            .unwrap()
            .iter()
            .map(|c| c["name"].as_str().unwrap())
            .collect();
        assert_eq!(names, vec!["intercept", "trend"]);
    }
}

#[test]
fn diagnose_compatibility_tests_adjacent_fits() {
    let tmp = TempDir::new().unwrap();
    let panel = simulated_panel(&tmp.path().join("sim"));
    let out = tmp.path().join("diag");
    run_ok(&[
        "diagnose",
        "--data", panel.to_str().unwrap(),
        "--treated", "1",
        "--t0", "12",
        "--method", "cridge",
        "--lambda", "1,4",
        "--compatibility",
        "--out", out.to_str().unwrap(),
        "--deterministic",
    ]);
    let diag = read_json(&out.join("diagnostics.json"));
    let reports = diag["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 1);
    assert_eq!(reports[0]["test"], "compatibility");
    assert_eq!(reports[0]["fit"], "cridge(lambda=1) vs cridge(lambda=4)");
}

#[test]
fn timestamp_appears_unless_deterministic() {
    let tmp = TempDir::new().unwrap();
    let panel = simulated_panel(&tmp.path().join("sim"));
    let with_ts = tmp.path().join("with");
    run_ok(&[
        "fit",
        "--data", panel.to_str().unwrap(),
        "--treated", "1",
        "--t0", "12",
        "--out", with_ts.to_str().unwrap(),
    ]);
    let meta = &read_json(&with_ts.join("weights.json"))["metadata"];
    let created = meta["created"].as_str().expect("created timestamp expected");
    assert!(created.ends_with('Z') && created.contains('T'), "ISO-8601: {created}");

    let without = tmp.path().join("without");
    fit_on(&panel, &without, &[]);
    let meta = &read_json(&without.join("weights.json"))["metadata"];
    assert!(meta.get("created").is_none(), "deterministic runs omit the timestamp");
}

#[test]
fn long_layout_matches_wide_layout() {
    let tmp = TempDir::new().unwrap();
    let wide = simulated_panel(&tmp.path().join("sim"));
    // Reshape the wide file into unit,period,outcome rows.
    let rows = parse_csv(&wide);
    let units = &rows[0][1..];
    let mut body = String::from("unit,period,outcome\n");
    for row in &rows[1..] {
        for (c, unit) in units.iter().enumerate() {
            body.push_str(&format!("{unit},{},{}\n", row[0], row[c + 1]));
        }
    }
    let long = tmp.path().join("long.csv");
    std::fs::write(&long, body).unwrap();

    let from_wide = tmp.path().join("w");
    let from_long = tmp.path().join("l");
    fit_on(&wide, &from_wide, &["--method", "cridge", "--lambda", "2"]);
    run_ok(&[
        "fit",
        "--data", long.to_str().unwrap(),
        "--layout", "long",
        "--treated", "1",
        "--t0", "12",
        "--balancing", "pre_outcomes",
        "--method", "cridge",
        "--lambda", "2",
        "--out", from_long.to_str().unwrap(),
        "--deterministic",
    ]);
    let a = read_json(&from_wide.join("weights.json"));
    let b = read_json(&from_long.join("weights.json"));
    assert_eq!(a["entries"], b["entries"], "layouts should agree on the same panel");
}

#[test]
fn external_covariates_are_balanced_exactly() {
    let tmp = TempDir::new().unwrap();
    let panel = simulated_panel(&tmp.path().join("sim"));
    // One numeric covariate per unit, constructed to be balanceable.
    let mut body = String::from("unit,density\n");
    for i in 1..=13 {
        body.push_str(&format!("{i},{}\n", 2.0 + ((i * 3) % 5) as f64));
    }
    let cov = tmp.path().join("cov.csv");
    std::fs::write(&cov, body).unwrap();
    let out = tmp.path().join("fit");
    run_ok(&[
        "fit",
        "--data", panel.to_str().unwrap(),
        "--covariates", cov.to_str().unwrap(),
        "--treated", "1",
        "--t0", "12",
        "--trending", "ext:density",
        "--method", "cridge",
        "--lambda", "2",
        "--out", out.to_str().unwrap(),
        "--deterministic",
    ]);
    let weights = read_json(&out.join("weights.json"));
    let entry = &weights["entries"][0];
    assert!(entry["balance"].as_f64().unwrap() < 1e-8);
    // density of unit 1 is 2 + (3 % 5) = 5; the weighted control density
    // must reproduce it.
    let w: Vec<f64> = entry["weights"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let dens: Vec<f64> = (2..=13).map(|i| 2.0 + ((i * 3) % 5) as f64).collect();
    let hit: f64 = w.iter().zip(&dens).map(|(a, b)| a * b).sum();
    assert!((hit - 5.0).abs() < 1e-8, "weighted density {hit} should equal 5");
}
