use std::path::Path;
use std::process::{Command, Output};

use lqg_mc::io::Artifact;
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lqg-mc"))
}

fn run(args: &[&str]) -> Output {
    bin().env_remove("LQG_MC_OUTPUT_DIR").args(args).output().unwrap()
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_slice(&read(dir, "manifest.json")).unwrap()
}

fn csv_rows(bytes: &[u8]) -> (Vec<String>, Vec<Vec<String>>) {
    let text = String::from_utf8(bytes.to_vec()).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}

#[test]
fn loop_batch_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("loops");
    let out = run(&["loop", "--alpha", "0.5", "--n-samples", "1000", "--output-dir", dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let (header, rows) = csv_rows(&read(&dir, "loops.csv"));
    assert_eq!(header, ["loop", "step", "t", "x", "y"]);
    assert_eq!(rows.len(), 1000 * 257);
    let last: usize = rows.last().unwrap()[0].parse().unwrap();
    assert_eq!(last, 999);
    for r in &rows {
        let step: usize = r[1].parse().unwrap();
        let (x, y): (f64, f64) = (r[3].parse().unwrap(), r[4].parse().unwrap());
        if step == 0 || step == 256 {
            assert_eq!((x, y), (0.0, 0.0));
        } else {
            assert!(x >= -0.1 && y >= -0.1);
        }
    }

    let (header, hist) = csv_rows(&read(&dir, "z_half_histogram.csv"));
    assert_eq!(header, ["coordinate", "bin_lo", "bin_hi", "count"]);
    for coord in ["x", "y"] {
        let total: u64 = hist.iter().filter(|r| r[0] == coord).map(|r| r[3].parse::<u64>().unwrap()).sum();
        assert_eq!(total, 1000);
    }
    let (_, mid) = csv_rows(&read(&dir, "z_half.csv"));
    assert_eq!(mid.len(), 1000);

    let m = manifest(&dir);
    for key in ["config", "seed", "hashes", "timings", "results"] {
        assert!(m.get(key).is_some(), "manifest lacks {key}");
    }
    let hashes = m["hashes"].as_object().unwrap();
    assert_eq!(hashes.len(), 3);
    for (name, h) in hashes {
        let a = Artifact {
            name: name.clone(),
            bytes: read(&dir, name),
        };
        assert_eq!(h.as_str().unwrap(), a.content_hash());
    }
    assert_eq!(m["results"]["acceptance"]["samples"], 1000);
}

#[test]
fn artifacts_are_identical_across_reruns_and_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cases: [(&str, &[&str]); 3] = [
        ("loop", &["loop", "--n-samples", "200"]),
        ("sphere", &["sphere-bessel", "--n-samples", "30"]),
        ("levy", &["levy-sphere", "--n-samples", "30", "--truncations", r#"{"levy-sphere-calibration":{"size":200}}"#]),
    ];
    for (tag, args) in cases {
        let mut reference: Option<Value> = None;
        for (k, threads) in ["1", "4", "8", "4"].iter().enumerate() {
            let dir = tmp.path().join(format!("{tag}{k}"));
            let mut full = args.to_vec();
            full.extend(["--seed", "11", "--threads", threads, "--output-dir", dir.to_str().unwrap()]);
            let out = run(&full);
            assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
            let hashes = manifest(&dir)["hashes"].clone();
            match &reference {
                None => reference = Some(hashes),
                Some(r) => assert_eq!(r, &hashes, "{tag} differs at {threads} threads"),
            }
        }
    }
}

#[test]
fn verify_scaling_lists_checks() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("scaling");
    let out = run(&["verify", "scaling", "--output-dir", dir.to_str().unwrap()]);
    assert!(out.status.success());
    let report: Value = serde_json::from_slice(&read(&dir, "report.json")).unwrap();
    assert_eq!(report["passed"], true);
    let checks = report["criteria"][0]["metrics"]["checks"].as_array().unwrap();
    assert!(checks.len() >= 10);
    assert!(checks.iter().all(|c| c["passed"] == true));
    assert!(String::from_utf8_lossy(&out.stdout).contains("scaling: PASS"));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.json");
    let dir = tmp.path().join("out");
    std::fs::write(&cfg, format!(r#"{{"seed": 5, "n_samples": 3, "output_dir": "{}", "truncations": {{"bessel": {{"kind": "min_max", "min_max": 2.0}}}}}}"#, dir.display())).unwrap();
    let out = run(&["bessel", "--config", cfg.to_str().unwrap(), "--seed", "6", "--n-steps", "50"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(&dir);
    assert_eq!(m["seed"], 6);
    assert_eq!(m["config"]["run"]["n_samples"], 3);
    assert_eq!(m["config"]["run"]["grid"]["n_steps"], 50);
    assert_eq!(m["results"]["truncation"]["min_max"], 2.0);
    let (_, rows) = csv_rows(&read(&dir, "excursions.csv"));
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r[2].parse::<f64>().unwrap() >= 2.0));
}

#[test]
fn output_dir_defaults_to_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("from-env");
    let out = bin()
        .env("LQG_MC_OUTPUT_DIR", &dir)
        .args(["stable", "--n-samples", "2"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.join("excursions.csv").exists());
}

#[test]
fn errors_exit_nonzero_with_message() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"n_samples": "many"}"#).unwrap();
    let file = tmp.path().join("file");
    std::fs::write(&file, "x").unwrap();
    let cases: Vec<Vec<String>> = vec![
        vec!["frobnicate".into()],
        vec!["loop".into(), "--config".into(), bad.display().to_string()],
        vec!["loop".into(), "--config".into(), tmp.path().join("missing.json").display().to_string()],
        vec!["loop".into(), "--output-dir".into(), file.join("sub").display().to_string()],
        vec!["verify".into(), "nonsense".into(), "--output-dir".into(), tmp.path().join("v").display().to_string()],
        vec!["loop".into(), "--threads".into(), "lots".into()],
    ];
    for args in cases {
        let out = run(&args.iter().map(String::as_str).collect::<Vec<_>>());
        assert!(!out.status.success(), "{args:?} succeeded");
        assert!(!out.stderr.is_empty(), "{args:?} printed nothing to stderr");
    }
}
