use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_duty-energy"))
        .args(args)
        .env_remove("DUTY_ENERGY_CATALOG")
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn structured(args: &[&str]) -> Value {
    let mut full = args.to_vec();
    full.extend(["--format", "structured"]);
    let o = run(&full);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["schema_version"], 1);
    v
}

fn num(v: &Value, key: &str) -> f64 {
    v[key].as_f64().unwrap_or_else(|| panic!("{key} missing in {v}"))
}

#[test]
fn predict_defaults() {
    let o = run(&["predict", "presets/normal-default"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert!(text.contains("6.2225 mAh") && text.contains("mA·s"), "{text}");
    assert!(text.contains("20.5343 mWh"));

    let v = structured(&["predict", "vlp-default"]);
    assert!((num(&v, "p_total_mwh") / 0.779 - 1.0).abs() < 0.01);
    for key in [
        "q_total_mah",
        "q_total_coulomb",
        "p_total_mwh",
        "p_total_joule",
        "i_overall_ma",
        "breakdown",
        "accounting",
        "truncated_init",
    ] {
        assert!(v.get(key).is_some(), "{key}");
    }
    let sum: f64 = v["breakdown"].as_object().unwrap().values().map(|c| c.as_f64().unwrap()).sum();
    assert!((sum / num(&v, "q_total_mah") / 3600.0 - 1.0).abs() < 1e-12);
}

#[test]
fn structured_output_is_deterministic() {
    for args in [
        &["predict", "lowpower-default", "--format", "structured"][..],
        &["validate", "--bundled", "--format", "structured"],
        &["sweep", "normal-cyclic", "--vary", "t_conn_int_ms=11.25,45,250,1000", "--format", "structured"],
    ] {
        let a = run(args);
        let b = run(args);
        assert_eq!(code(&a), 0);
        assert_eq!(a.stdout, b.stdout, "{args:?}");
    }
}

#[test]
fn mode_override_and_set() {
    let v = structured(&["predict", "normal-default", "--mode", "low_power", "--set", "eink=\"optimized\""]);
    assert!((num(&v, "q_total_mah") / 2.27 - 1.0).abs() < 0.01);
    let v = structured(&["predict", "normal-default", "--set", "t_s=7200"]);
    assert_eq!(num(&v, "total_time_s"), 7200.0);
    let o = run(&["predict", "normal-default", "--set", "t_s"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn predict_error_codes() {
    assert_eq!(code(&run(&["predict", "missing-file"])), 2);
    let o = run(&["predict", "normal-default", "--set", "t_conn_int_ms=100"]);
    assert_eq!(code(&o), 1, "catalog miss");
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "mode = \"normal\"\nt_eink_seconds = 3\n").unwrap();
    let o = run(&["predict", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("t_eink_seconds"));
    std::fs::write(&bad, "mode = \"normal\"\nt_s = [\n").unwrap();
    let o = run(&["predict", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line"));
    assert_eq!(code(&run(&["predict"])), 2);
    assert_eq!(code(&run(&["nonsense"])), 2);
}

#[test]
fn scenario_file_without_suffix() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("mine.toml"), "extends = \"normal-default\"\nt_s = 1800.0\n").unwrap();
    let stem = dir.path().join("mine");
    let v = structured(&["predict", stem.to_str().unwrap()]);
    assert_eq!(num(&v, "total_time_s"), 1800.0);
}

#[test]
fn validate_commands() {
    let o = run(&["validate", "--bundled"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("11 cases"));
    assert_eq!(code(&run(&["validate", "--bundled", "--threshold", "99.9"])), 1);
    assert_eq!(code(&run(&["validate"])), 2);
    assert_eq!(code(&run(&["validate", "no/such/suite.toml"])), 2);

    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("suite.toml");
    std::fs::write(&empty, "schema_version = 1\ncases = []\n").unwrap();
    let o = run(&["validate", empty.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));

    let v = structured(&["validate", "../core/data/validation/v1"]);
    assert_eq!(v["cases"].as_array().unwrap().len(), 11);
    assert!(v["aggregate"]["min_accuracy_pct"].as_f64().unwrap() >= 97.0);
}

#[test]
fn sweep_commands() {
    let v = structured(&["sweep", "normal-cyclic", "--vary", "p_tx_dbm=0,4,8"]);
    let got: Vec<f64> = v["rows"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["report"]["i_overall_ma"].as_f64().unwrap())
        .collect();
    for (g, want) in got.iter().zip([6.18, 6.22, 6.26]) {
        assert!((g / want - 1.0).abs() < 0.015, "{g} vs {want}");
    }

    let v = structured(&["sweep", "lowpower-cyclic", "--vary", "t_conn_int_ms=11.25,45,250,1000"]);
    let got: Vec<f64> = v["rows"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["report"]["i_overall_ma"].as_f64().unwrap())
        .collect();
    assert!(got.windows(2).all(|w| w[1] < w[0]), "{got:?}");
    assert!((got[0] / 2.58 - 1.0).abs() < 0.015 && (got[3] / 2.20 - 1.0).abs() < 0.015);

    let single = structured(&["sweep", "lowpower-default"]);
    let direct = structured(&["predict", "lowpower-default"]);
    assert_eq!(single["rows"][0]["report"]["q_total_mah"], direct["q_total_mah"]);

    assert_eq!(code(&run(&["sweep", "normal-cyclic", "--vary", "t_conn_int_ms=45,100"])), 1);
    assert_eq!(code(&run(&["sweep", "normal-cyclic", "--vary", "no_such_key=1"])), 2);
}

#[test]
fn trace_pipeline_matches_prediction() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("t.csv");
    let o = run(&[
        "trace",
        "synth",
        "presets/normal-default",
        "--rate",
        "1000",
        "--duration",
        "600",
        "-o",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let integ = structured(&["trace", "integrate", csv.to_str().unwrap()]);
    let pred = structured(&["predict", "normal-default", "--set", "t_s=600"]);
    let q_trace = num(&integ, "q_mas");
    let q_pred = num(&pred, "q_total_mah") * 3600.0;
    assert!((q_trace / q_pred - 1.0).abs() < 1e-3, "{q_trace} vs {q_pred}");
}

#[test]
fn integrate_constant_trace() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("c.csv");
    let rows: String = (0..=100).map(|i| format!("{},5\n", f64::from(i) * 0.1)).collect();
    std::fs::write(&f, format!("time_s,current_mA\n{rows}")).unwrap();
    let v = structured(&["trace", "integrate", f.to_str().unwrap()]);
    assert!((num(&v, "q_mas") - 50.0).abs() < 1e-9);

    std::fs::write(&f, "time_s,current_mA\n0,1\n0.1,oops\n").unwrap();
    let o = run(&["trace", "integrate", f.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));
    assert_eq!(code(&run(&["trace", "integrate", "missing.csv"])), 2);
}

#[test]
fn segment_one_vlp_cycle() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("v.csv");
    let o = run(&["trace", "synth", "vlp-default", "--cycles", "1", "-o", csv.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let v = structured(&["trace", "segment", csv.to_str().unwrap(), "--label-with", "vlp-default"]);
    let segs = v["segments"].as_array().unwrap();
    assert_eq!(segs.len(), 6);
    let labels: Vec<&str> = segs.iter().map(|s| s["label"].as_str().unwrap()).collect();
    assert_eq!(labels, ["startup", "idle_start", "sensing", "idle_sens", "eink", "deep_sleep"]);
    assert_eq!(code(&run(&["trace", "segment", csv.to_str().unwrap(), "--min-duration", "0"])), 2);
}

#[test]
fn catalog_overlay_from_flag_and_env() {
    let dir = tempfile::tempdir().unwrap();
    let cat = dir.path().join("cat.toml");
    std::fs::write(&cat, "[defaults]\nt_s = 1800.0\n").unwrap();
    let v = structured(&["predict", "normal-default", "--catalog", cat.to_str().unwrap()]);
    assert_eq!(num(&v, "total_time_s"), 1800.0);

    let o = Command::new(env!("CARGO_BIN_EXE_duty-energy"))
        .args(["predict", "normal-default", "--format", "structured"])
        .env("DUTY_ENERGY_CATALOG", &cat)
        .output()
        .unwrap();
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(num(&v, "total_time_s"), 1800.0);

    std::fs::write(&cat, "[defaults]\nbogus = 1\n").unwrap();
    assert_eq!(code(&run(&["predict", "normal-default", "--catalog", cat.to_str().unwrap()])), 2);
}

#[test]
fn output_file_flag() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let o = run(&["predict", "normal-default", "--format", "structured", "-o", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(o.stdout.is_empty());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!((num(&v, "q_total_mah") - 6.2225).abs() < 1e-3);
    assert!(Path::new(&out).exists());
}
