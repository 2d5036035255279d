use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_impute-ate"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).env("IMPUTE_ATE_THREADS", "1").output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

fn sample_csv() -> String {
    let mut s = String::from("x1,d,y\n");
    for i in 0..40 {
        let x = i as f64 / 39.0;
        let d = (i * 7 % 3 == 0) as u8;
        let y = x * x + d as f64 * (1.0 + x) + 0.1 * ((i * 13 % 5) as f64 - 2.0);
        s.push_str(&format!("{x},{d},{y}\n"));
    }
    s
}

#[test]
fn estimate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "d.csv", &sample_csv());
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"smoother":{"type":"forest","B":20,"s":10,"theta":2},"adjuster":{"type":"polynomial","degree":2}}"#,
    );
    let out1 = dir.path().join("r1.json").display().to_string();
    let out2 = dir.path().join("r2.json").display().to_string();
    for out in [&out1, &out2] {
        let o = run(&["estimate", "--data", &data, "--config", &cfg, "--out", out, "--seed", "9"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out1).unwrap()).unwrap();
    let b: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out2).unwrap()).unwrap();
    assert_eq!(a["estimate"], b["estimate"]);
    assert_eq!(a["config"]["seed"], 9);
    assert_eq!(a["dataset"]["n"], 40);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "d.csv", &sample_csv());
    let bad_cfg = write(dir.path(), "bad.json", r#"{"smoother":{"type":"wnn","gamma":[0.5,0.6]}}"#);
    let o = run(&["estimate", "--data", &data, "--config", &bad_cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("gamma must sum to 1"));

    let bad_data = write(dir.path(), "bad.csv", "x1,d,y\n0.2,2,3.0\n0.7,0,1.0\n");
    let cfg = write(dir.path(), "c.json", r#"{"smoother":{"type":"wnn","M":1}}"#);
    let o = run(&["estimate", "--data", &bad_data, "--config", &cfg]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("treatment must be 0 or 1 (line 2)"));

    let o = run(&["estimate", "--data", &data, "--config", &cfg]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["estimate"]["tau_hat"].is_number());
}

#[test]
fn weights_dump() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "d.csv", "x1,d,y\n0.2,1,3.0\n0.7,0,1.0\n");
    let cfg = write(dir.path(), "c.json", r#"{"smoother":{"type":"wnn","M":1}}"#);
    let out = dir.path().join("w.csv").display().to_string();
    let o = run(&["weights", "--data", &data, "--config", &cfg, "--out", &out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text, "i,j,w\n1,2,1.0000000000000000e0\n2,1,1.0000000000000000e0\n");
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["summary"]["nonzero_entries"], 2);
}

#[test]
fn bound_and_forest_diag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "b.json", r#"{"dgp":"benchmark"}"#);
    let o = run(&["bound", "--config", &cfg]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["sigma2"].as_f64().unwrap() - 49.0 / 12.0).abs() < 1e-10);

    let f = write(
        dir.path(),
        "f.json",
        r#"{"forest_diag":{"n":200,"s_grid":[16,64],"trees":2,"forests":3}}"#,
    );
    let o = run(&["forest-diag", "--config", &f, "--seed", "4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 2);
}

#[test]
fn simulate_writes_report_and_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "s.json",
        r#"{"command":"simulate","dgp":"benchmark","smoother":{"type":"wnn"},"adjuster":{"type":"polynomial","degree":1},"n_grid":[50,100],"R":8,"seed":3}"#,
    );
    let out = dir.path().join("rep.json").display().to_string();
    let rows = dir.path().join("rows.csv").display().to_string();
    let o = run(&["simulate", "--config", &cfg, "--out", &out, "--rows", &rows]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["results"].as_array().unwrap().len(), 2);
    let csv = std::fs::read_to_string(&rows).unwrap();
    assert_eq!(csv.lines().count(), 1 + 16);

    let wrong = run(&["bound", "--config", &cfg]);
    assert_eq!(wrong.status.code(), Some(2));
}

#[test]
fn bad_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "b.json", r#"{"dgp":"benchmark"}"#);
    let o = bin().args(["bound", "--config", &cfg]).env("IMPUTE_ATE_THREADS", "zero").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}
