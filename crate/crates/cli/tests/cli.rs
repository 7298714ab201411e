use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lerp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lerp"))
        .args(args)
        .env("LERP_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Couples where wife facts imply the husband facts held out for test.
fn write_dataset(dir: &Path) {
    let mut train = String::new();
    let mut test = String::new();
    for i in 0..20 {
        let (h, w) = (format!("p{}", 2 * i), format!("p{}", 2 * i + 1));
        train.push_str(&format!("{w}\twife\t{h}\n"));
        let fact = format!("{h}\thusband\t{w}\n");
        if i < 4 {
            test.push_str(&fact);
        } else {
            train.push_str(&fact);
        }
    }
    fs::write(dir.join("train.txt"), train).unwrap();
    fs::write(dir.join("valid.txt"), &test).unwrap();
    fs::write(dir.join("test.txt"), &test).unwrap();
}

fn write_config(path: &Path, seed: u64) {
    let json = format!(
        r#"{{"m": 4, "T": 1, "K": 2, "rules_per_relation": 3, "epochs": 15, "batch_size": 16, "seed": {seed}}}"#
    );
    fs::write(path, json).unwrap();
}

#[test]
fn train_evaluate_extract_dump() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    fs::create_dir(&data).unwrap();
    write_dataset(&data);
    let config = tmp.path().join("config.json");
    write_config(&config, 11);
    let ckpt = tmp.path().join("ckpt");

    let out = lerp(&["train", "--data", s(&data), "--config", s(&config), "--out", s(&ckpt)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["epoch-01.ckpt", "epoch-15.ckpt", "final", "loss.log"] {
        assert!(ckpt.join(name).exists(), "missing {name}");
    }
    let log = fs::read_to_string(ckpt.join("loss.log")).unwrap();
    let first = log.lines().next().unwrap();
    assert!(first.starts_with("step=1 epoch=1 loss=") && first.contains(" wall="), "{first}");
    assert_eq!(log.lines().filter(|l| l.starts_with("epoch=")).count(), 15);

    let report = tmp.path().join("out/report.json");
    let final_ckpt = ckpt.join("final");
    let out = lerp(&["evaluate", "--data", s(&data), "--ckpt", s(&final_ckpt), "--report", s(&report)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("MRR"), "{table}");
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert!(json["mrr"].as_f64().unwrap() > 0.9, "{json}");
    assert_eq!(json["tie_policy"], "mean");

    let rules = tmp.path().join("rules.txt");
    let out = lerp(&["extract-rules", "--ckpt", s(&final_ckpt), "--out", s(&rules)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&rules).unwrap();
    // rules are weight-sorted within each target
    let top = text
        .lines()
        .filter_map(|l| l.split_once('\t'))
        .map(|(_, rule)| rule)
        .find(|rule| rule.ends_with("⇒ husband(x,y)"))
        .unwrap();
    assert!(top.starts_with("wife(y,x)"), "{text}");
    assert!(tmp.path().join("rules.txt.functions").exists());

    let vectors = tmp.path().join("lerp.tsv");
    let out = lerp(&["dump-lerp", "--data", s(&data), "--ckpt", s(&final_ckpt), "--out", s(&vectors)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let dump = fs::read_to_string(&vectors).unwrap();
    assert_eq!(dump.lines().count(), 40);
    // name plus m + 1 values
    assert_eq!(dump.lines().next().unwrap().split('\t').count(), 6);
}

#[test]
fn same_seed_same_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    fs::create_dir(&data).unwrap();
    write_dataset(&data);
    let config = tmp.path().join("config.json");
    write_config(&config, 1);
    let mut finals = Vec::new();
    let mut reports = Vec::new();
    for run in ["a", "b"] {
        let out_dir = tmp.path().join(run);
        let out = lerp(&["train", "--data", s(&data), "--config", s(&config), "--out", s(&out_dir), "--seed", "5"]);
        assert!(out.status.success());
        let report = out_dir.join("report.json");
        let out = lerp(&["evaluate", "--data", s(&data), "--ckpt", s(&out_dir.join("final")), "--report", s(&report)]);
        assert!(out.status.success());
        finals.push(fs::read(out_dir.join("final")).unwrap());
        reports.push(fs::read(report).unwrap());
    }
    assert_eq!(finals[0], finals[1]);
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn bad_config_names_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    fs::create_dir(&data).unwrap();
    write_dataset(&data);
    let config = tmp.path().join("config.json");
    fs::write(&config, r#"{"m": 0}"#).unwrap();
    let out_dir = tmp.path().join("ckpt");
    let out = lerp(&["train", "--data", s(&data), "--config", s(&config), "--out", s(&out_dir)]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.contains("`m`"), "{err}");
    assert!(!out_dir.join("final").exists());

    fs::write(&config, r#"{"depth": 2}"#).unwrap();
    let out = lerp(&["train", "--data", s(&data), "--config", s(&config), "--out", s(&out_dir)]);
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().contains("depth"));
}

#[test]
fn missing_inputs_fail_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let report = tmp.path().join("report.json");
    let missing = tmp.path().join("nope");
    let out = lerp(&["evaluate", "--data", s(&missing), "--ckpt", s(&missing), "--report", s(&report)]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error: "), "{err}");
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(!report.exists());

    let out = lerp(&["evaluate", "--data", s(&missing)]);
    assert!(!out.status.success(), "missing required flags must be rejected");
}

#[test]
fn oracle_check_reports_suites() {
    let out = lerp(&[
        "oracle-check",
        "--oracle-cases",
        "25",
        "--gradient-cases",
        "5",
        "--bound-cases",
        "2",
        "--workers",
        "1",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 3, "{text}");
    assert!(text.lines().all(|l| l.contains(" 0 failures")), "{text}");
}
