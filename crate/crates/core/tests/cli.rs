use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn radmi(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_radmi"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env("RADMI_LOG", "warn")
        .output()
        .expect("spawn radmi")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A small, fast configuration: 40 subjects, 10 VAE epochs.
fn quick_config(dir: &Path) -> std::path::PathBuf {
    let cfg = json!({
        "cohort": {"n_subjects": 40, "seed": 5},
        "vae": {"vae_epochs": 10},
        "classifier": {"n_boot": 200},
        "sweep": {"latent": [16, 48]}
    });
    let path = dir.join("quick.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"vae": {"vae_epochs": 3, "learning_rate": 0.1}}"#).unwrap();
    let o = radmi(&dir.path().join("w"), &["--config", cfg.to_str().unwrap(), "gen-cohort"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("learning_rate"), "{}", stderr(&o));
}

#[test]
fn missing_upstream_output_fails_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let o = radmi(dir.path(), &["extract-hcr"]);
    assert!(!o.status.success());
    let msg = stderr(&o);
    assert!(msg.contains("missing input") && msg.contains("preprocess"), "{msg}");
    assert!(dir.path().join("extract-hcr/log.txt").exists());
}

#[test]
fn invalid_cohort_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"cohort": {"n_subjects": 4}}"#).unwrap();
    let o = radmi(&dir.path().join("w"), &["--config", cfg.to_str().unwrap(), "gen-cohort"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("n_subjects"));
}

#[test]
fn stages_run_in_order_and_describe_their_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let w = dir.path().join("w");
    for stage in [
        "gen-cohort",
        "preprocess",
        "extract-hcr",
        "train-vae",
        "extract-dlr",
        "train-classifier",
        "evaluate",
        "report",
    ] {
        let o = radmi(&w, &["--config", cfg, "--seed", "9", "--threads", "1", stage]);
        assert!(o.status.success(), "{stage}: {}", stderr(&o));
        let resolved: Value = serde_json::from_str(&fs::read_to_string(w.join(stage).join("config.json")).unwrap()).unwrap();
        assert_eq!(resolved["stage"], stage);
        assert_eq!(resolved["seed"], 9);
        assert!(resolved["version"].is_string());
        assert_eq!(resolved["config"]["vae"]["seed"], 9);
        assert!(w.join(stage).join("log.txt").exists());
    }

    let auc = fs::read_to_string(w.join("evaluate/auc.csv")).unwrap();
    // header plus 5 configurations x 4 markers
    assert_eq!(auc.lines().count(), 1 + 20);
    let table = fs::read_to_string(w.join("report/report.md")).unwrap();
    assert!(table.contains("HD64-MI") && table.contains("δ"));
    let hcr = fs::read_to_string(w.join("extract-hcr/hcr.csv")).unwrap();
    assert_eq!(hcr.lines().count(), 41);
    assert!(w.join("train-vae/d32-mi/model.ckpt").exists());
    assert!(w.join("extract-dlr/d32.csv").exists());

    let o = radmi(&w, &["--config", cfg, "--seed", "9", "sweep", "--kappa", "0.01,0.1,1,10"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut rdr = csv::Reader::from_path(w.join("sweep/kappa.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 16);
    let headers = rdr.headers().unwrap().clone();
    let marker_col = headers.iter().position(|h| h == "marker").unwrap();
    for m in ["shape", "atrophy", "fat", "senility"] {
        assert_eq!(rows.iter().filter(|r| &r[marker_col] == m).count(), 4, "{m}");
    }
}

#[test]
fn seed_flag_changes_the_cohort() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let read = |w: &Path| fs::read_to_string(w.join("gen-cohort/manifest.json")).unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for (w, seed) in [(&a, "1"), (&b, "1"), (&c, "2")] {
        assert!(radmi(w, &["--config", cfg, "--seed", seed, "gen-cohort"]).status.success());
    }
    let strip = |s: String, w: &Path| s.replace(w.to_str().unwrap(), "");
    assert_eq!(strip(read(&a), &a), strip(read(&b), &b));
    assert_ne!(strip(read(&a), &a), strip(read(&c), &c));
}

#[test]
fn hcr_scaling_can_be_switched_off() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("raw.json");
    fs::write(&cfg, r#"{"cohort": {"n_subjects": 16, "seed": 2}, "scale_hcr": false}"#).unwrap();
    let w = dir.path().join("w");
    for stage in ["gen-cohort", "preprocess", "extract-hcr"] {
        let o = radmi(&w, &["--config", cfg.to_str().unwrap(), stage]);
        assert!(o.status.success(), "{stage}: {}", stderr(&o));
    }
    let raw = fs::read(w.join("extract-hcr/hcr.csv")).unwrap();
    assert_eq!(raw, fs::read(w.join("extract-hcr/hcr_scaled.csv")).unwrap());
}
