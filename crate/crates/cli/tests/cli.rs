use std::path::Path;
use std::process::{Command, Output};

fn uat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uat")).args(args).output().unwrap()
}

fn json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

const SMALL: &str = r#"{
  "num_rounds": 600,
  "seeds": [0, 1, 2],
  "reliability": {"train_samples": 500, "validation_samples": 300, "hyperparams": {"epochs": 50}}
}"#;

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("config.json");
    std::fs::write(&p, body).unwrap();
    p.display().to_string()
}

fn names(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    v.sort();
    v
}

#[test]
fn three_seeds_fan_out_and_rerun_is_identical() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), SMALL);
    let a = d.path().join("a");
    let b = d.path().join("b");
    json(&uat(&["simulate", "--config", &cfg, "--out", a.to_str().unwrap()]));
    json(&uat(&["simulate", "--config", &cfg, "--out", b.to_str().unwrap()]));
    let files = names(&a);
    assert_eq!(files.iter().filter(|f| f.starts_with("trace-")).count(), 3);
    assert_eq!(files.iter().filter(|f| f.starts_with("summary-")).count(), 3);
    assert_eq!(files.iter().filter(|f| f.starts_with("aggregate-")).count(), 1);
    for f in &files {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let trace = std::fs::read_to_string(a.join("trace-uat-seed1.csv")).unwrap();
    assert_eq!(trace.lines().count(), 601);
}

#[test]
fn final_policy_speedup_is_exactly_one() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), SMALL);
    let v = json(&uat(&["simulate", "--config", &cfg, "--policy", "final", "--seed", "4"]));
    assert_eq!(v["aggregate"]["mean"]["speedup"], 1.0);
    assert_eq!(v["aggregate"]["seeds"], serde_json::json!([4]));
}

#[test]
fn analyze_emits_one_series_per_policy() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), SMALL);
    let out = d.path().join("runs");
    let o = out.to_str().unwrap();
    for p in ["uat", "random", "final", "fixed-arm:3"] {
        json(&uat(&["simulate", "--config", &cfg, "--out", o, "--policy", p]));
    }
    let v = json(&uat(&["analyze", "--traces", o]));
    assert_eq!(v["files"].as_array().unwrap().len(), 4);
    let series = std::fs::read_to_string(out.join("series-random.csv")).unwrap();
    assert_eq!(series.lines().count(), 601);
    assert!(series.starts_with("round,mean_cum_regret,std_cum_regret,num_seeds\n"));
}

#[test]
fn analyze_rejects_mixed_horizons_and_empty_dirs() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), SMALL);
    let out = d.path().join("runs");
    let o = out.to_str().unwrap();
    json(&uat(&["simulate", "--config", &cfg, "--out", o, "--seed", "0"]));
    json(&uat(&["simulate", "--config", &cfg, "--out", o, "--seed", "1", "--rounds", "500"]));
    let r = uat(&["analyze", "--traces", o]);
    assert_eq!(r.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&r.stderr).unwrap();
    assert_eq!(err["error"], "incompatible_traces");

    let empty = d.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let r = uat(&["analyze", "--traces", empty.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(1));
}

#[test]
fn invalid_config_is_a_json_error_line() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), r#"{"num_round": 10}"#);
    let r = uat(&["simulate", "--config", &cfg]);
    assert_eq!(r.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&r.stderr).unwrap();
    assert_eq!(err["error"], "invalid_config");
    assert!(err["message"].as_str().unwrap().contains("num_round"));

    let r = uat(&["simulate", "--policy", "fixed:0.73", "--rounds", "10"]);
    assert_eq!(r.status.code(), Some(1));
}

#[test]
fn help_documents_config_fields() {
    let r = uat(&["--help"]);
    assert!(r.status.success());
    let s = String::from_utf8(r.stdout).unwrap();
    for field in [
        "num_layers",
        "overconfidence_rate",
        "shifts",
        "include_lower",
        "gamma",
        "epsilon",
        "lambda",
        "variant",
        "criterion",
        "policy",
        "num_rounds",
        "seeds",
        "reshuffle",
        "model_path",
        "calibration_tol",
        "write_traces",
    ] {
        assert!(s.contains(field), "{field} missing from --help");
    }
}

#[test]
fn train_g_writes_a_loadable_model() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), SMALL);
    let out = d.path().join("g");
    let v = json(&uat(&["train-g", "--config", &cfg, "--out", out.to_str().unwrap()]));
    assert_eq!(v["report"]["coverage"].as_array().unwrap().len(), 12);
    let model = out.join("reliability.json");
    let body = format!(
        r#"{{"num_rounds": 200, "reliability": {{"model_path": {}}}}}"#,
        serde_json::to_string(&model.display().to_string()).unwrap()
    );
    let cfg2 = d.path().join("load.json");
    std::fs::write(&cfg2, body).unwrap();
    json(&uat(&["simulate", "--config", cfg2.to_str().unwrap()]));
}

#[test]
fn sweep_writes_one_row_per_variant() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path().join("sweep.json");
    std::fs::write(
        &p,
        format!(
            r#"{{"base": {SMALL}, "variant": ["full", "confidence_only", "confidence_penalized",
            "reliability_only", "reliability_penalized", "product_only"]}}"#
        ),
    )
    .unwrap();
    let out = d.path().join("s");
    json(&uat(&["sweep", "--config", p.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seeds", "0,1"]));
    let table = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 7);
    assert!(lines[0].starts_with("lambda,epsilon,tau,variant,policy,seeds,empirical_risk,speedup"));
    assert!(lines[6].contains("product_only"));

    std::fs::write(&p, r#"{"lambda": []}"#).unwrap();
    assert_eq!(uat(&["sweep", "--config", p.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn bench_reports_a_median() {
    let v = json(&uat(&["bench", "--rounds", "1000", "--batches", "3"]));
    assert!(v["median_ns_per_round"].as_f64().unwrap() > 0.0);
}
