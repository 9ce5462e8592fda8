use std::path::Path;
use std::process::{Command, Output};

fn debias(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_debias"))
        .args(args)
        .env_remove("DEBIAS_OUTPUT_DIR")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
}

fn generate(dir: &Path) {
    ok(&debias(&[
        "generate", "--n", "40", "--p", "30", "--s-star", "2", "--seed", "7", "--out", dir.to_str().unwrap(),
    ]));
}

#[test]
fn generate_estimate_diagnose_posterior_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let inst = tmp.path().join("inst");
    generate(&inst);
    for f in ["x.csv", "y.csv", "meta.json"] {
        assert!(inst.join(f).exists(), "{f}");
    }
    let inst_s = inst.to_str().unwrap();

    for method in ["zz", "one-step"] {
        let out = debias(&["estimate", "--instance", inst_s, "--method", method]);
        ok(&out);
        let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        let b = v["beta1_hat"].as_f64().unwrap();
        let iv = v["interval_95"].as_array().unwrap();
        let width = iv[1].as_f64().unwrap() - iv[0].as_f64().unwrap();
        let x1 = v["x1_norm"].as_f64().unwrap();
        assert!((width - 2.0 * 1.959_963_984_540_054 / x1).abs() < 1e-12);
        assert!(iv[0].as_f64().unwrap() < b && b < iv[1].as_f64().unwrap());
    }

    let out = debias(&["diagnose", "--instance", inst_s]);
    ok(&out);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["lambda_n"].as_f64().unwrap() > 0.0);
    assert!(v.get("kappa").is_none());

    let samples = tmp.path().join("samples.jsonl");
    let summary = tmp.path().join("summary.json");
    ok(&debias(&[
        "posterior",
        "--instance",
        inst_s,
        "--samples",
        samples.to_str().unwrap(),
        "--summary",
        summary.to_str().unwrap(),
        "--seed",
        "3",
        "--n-iter",
        "500",
        "--burn-in",
        "100",
    ]));
    let lines = std::fs::read_to_string(&samples).unwrap();
    assert_eq!(lines.lines().count(), 500);
    let first: serde_json::Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
    for key in ["support", "b_s", "b1_star", "b1", "log_target"] {
        assert!(first.get(key).is_some(), "{key}");
    }
    let s: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&summary).unwrap()).unwrap();
    assert!(s["tau_n"].as_f64().unwrap() < 1.0);
    assert_eq!(s["distance"]["n_samples"].as_u64(), Some(500));
}

#[test]
fn experiment_requires_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let out = debias(&[
        "experiment",
        "--grid",
        "30,20,2",
        "--output-dir",
        tmp.path().to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"));
}

#[test]
fn experiment_then_report_and_resume() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("out");
    let args = [
        "experiment",
        "--seed",
        "11",
        "--grid",
        "40,30,2",
        "--methods",
        "zz,one_step,bayes",
        "--reps",
        "2",
        "--n-iter",
        "300",
        "--burn-in",
        "100",
        "--output-dir",
        dir.to_str().unwrap(),
    ];
    ok(&debias(&args));
    let records = std::fs::read_to_string(dir.join("records.jsonl")).unwrap();
    assert_eq!(records.lines().count(), 2);
    let summary = std::fs::read_to_string(dir.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().next().unwrap(), "n,p,s_star,method,w1,ks,coverage");
    assert_eq!(summary.lines().count(), 1 + 3);

    ok(&debias(&args));
    assert_eq!(std::fs::read_to_string(dir.join("records.jsonl")).unwrap(), records);
    assert_eq!(std::fs::read_to_string(dir.join("summary.csv")).unwrap(), summary);

    ok(&debias(&["report", "--output-dir", dir.to_str().unwrap()]));
    for f in ["efficiency.csv", "normality.csv", "coverage.csv", "diagnostics.csv"] {
        assert!(dir.join(f).exists(), "{f}");
    }
}

#[test]
fn output_dir_from_environment_and_config_file_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("envout");
    let cfg = tmp.path().join("exp.toml");
    std::fs::write(
        &cfg,
        "reps = 1\nmethods = [\"one_step\"]\n\n[[grid]]\nn = 30\np = 20\ns_star = 1\n",
    )
    .unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_debias"))
        .args(["experiment", "--seed", "5", "--reps", "4", "--grid", "50,40,2", "--config", cfg.to_str().unwrap()])
        .env("DEBIAS_OUTPUT_DIR", &dir)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    ok(&out);
    let records = std::fs::read_to_string(dir.join("records.jsonl")).unwrap();
    assert_eq!(records.lines().count(), 1);
    let r: serde_json::Value = serde_json::from_str(records.lines().next().unwrap()).unwrap();
    assert_eq!(r["n"].as_u64(), Some(30));
    assert!(r["zz"].is_null() && r["bayes"].is_null());
    assert!(!r["one_step"].is_null());
}

#[test]
fn error_rows_give_exit_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("out");
    let cfg = tmp.path().join("exp.toml");
    // an impossible chain configuration fails inside every replication
    std::fs::write(
        &cfg,
        "methods = [\"bayes\"]\n[posterior]\nn_iter = 10\nburn_in = 0\n",
    )
    .unwrap();
    let out = debias(&[
        "experiment",
        "--seed",
        "1",
        "--grid",
        "30,20,1",
        "--config",
        cfg.to_str().unwrap(),
        "--output-dir",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let line = std::fs::read_to_string(dir.join("records.jsonl")).unwrap();
    let r: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
    assert_eq!(r["status"], "error");
    assert!(r["error"].as_str().unwrap().contains("samples"));
    let rep = debias(&["report", "--output-dir", dir.to_str().unwrap()]);
    assert_eq!(rep.status.code(), Some(2));
}

#[test]
fn report_on_empty_directory_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let out = debias(&["report", "--output-dir", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no records"));
}
