use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use emg_trf::io::{read_series, read_table};

fn emg_trf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_emg-trf"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(root: &Path, subjects: &str, sentences: &str, modes: &str, raw: bool) {
    let mut args = vec![
        "synth",
        "--out",
        p(root),
        "--subjects",
        subjects,
        "--sentences",
        sentences,
        "--modes",
        modes,
        "--seed",
        "5",
    ];
    if raw {
        args.push("--raw");
    }
    let out = emg_trf(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn write_config(path: &Path, root: &Path, out: &Path, extra: &str) {
    let cfg = format!(
        r#"{{"dataset_root": "{}", "output_dir": "{}", "grid": {{"alphas": [0.01], "lambdas": [0.1]}},
            "cv": {{"n_permutations": 20}} {extra}}}"#,
        p(root),
        p(out)
    );
    fs::write(path, cfg).unwrap();
}

#[test]
fn preprocess_warps_silent_trials_to_aloud_length() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    synth(&root, "1", "5", "aloud,mimed", true);
    let out = emg_trf(&["preprocess", "--dataset-root", p(&root), "--modes", "aloud,mimed"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for sent in 0..5 {
        let file = format!("sent{sent:03}_r0.tsv");
        let raw = read_series(&root.join("sub01/raw/aloud").join(&file)).unwrap();
        let aloud = read_series(&root.join("sub01/envelopes/aloud").join(&file)).unwrap();
        let mimed = read_series(&root.join("sub01/envelopes/mimed").join(&file)).unwrap();
        assert_eq!(aloud.sample_rate_hz(), 50.0);
        assert_eq!(aloud.n_frames(), (raw.duration_s() * 50.0).round() as usize);
        assert_eq!(mimed.n_frames(), aloud.n_frames());
    }
}

#[test]
fn silent_trial_without_aloud_pair_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    synth(&root, "1", "5", "aloud,subvocal", true);
    fs::remove_file(root.join("sub01/raw/aloud/sent003_r0.tsv")).unwrap();
    fs::remove_dir_all(root.join("sub01/envelopes")).unwrap();
    let out = emg_trf(&["preprocess", "--dataset-root", p(&root), "--modes", "aloud,subvocal"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("sub01/subvocal/sent003_r0"), "{err}");
    assert!(!root.join("sub01/envelopes").exists());
}

#[test]
fn corrupted_input_fails_before_any_output() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    let out_dir = dir.path().join("out");
    synth(&root, "2", "5", "aloud", false);
    fs::write(root.join("sub02/envelopes/aloud/sent001_r0.tsv"), "# rate_hz=50 channels=a\nnan?\n").unwrap();
    let cfg = dir.path().join("cfg.json");
    write_config(&cfg, &root, &out_dir, r#", "modes": ["aloud"]"#);
    let out = emg_trf(&["encode", "--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sent001_r0.tsv"));
    assert!(!out_dir.exists());
    let out = emg_trf(&["validate-config", "--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"grid": {"alphas": [-1.0]}}"#).unwrap();
    assert_eq!(emg_trf(&["encode", "--config", p(&cfg)]).status.code(), Some(1));
    fs::write(&cfg, r#"{"unknown_field": 1}"#).unwrap();
    assert_eq!(emg_trf(&["validate-config", "--config", p(&cfg)]).status.code(), Some(1));
    assert_eq!(emg_trf(&["encode", "--modes", "shouted"]).status.code(), Some(1));
}

#[test]
fn encode_and_analyze_one_subject_one_mode() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    let out_dir = dir.path().join("out");
    synth(&root, "1", "6", "mimed", false);
    let cfg = dir.path().join("cfg.json");
    write_config(&cfg, &root, &out_dir, r#", "modes": ["mimed"]"#);

    let out = emg_trf(&["analyze", "--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(2));

    assert!(emg_trf(&["validate-config", "--config", p(&cfg)]).status.success());
    let out = emg_trf(&["encode", "--config", p(&cfg)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = read_table(&out_dir.join("encoding.tsv")).unwrap();
    assert_eq!(header[0], "subject");
    assert_eq!(rows.len(), 16);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["n_rows"], 16);
    assert_eq!(summary["config"]["modes"][0], "mimed");

    let out = emg_trf(&["analyze", "--config", p(&cfg)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (_, fig2a) = read_table(&out_dir.join("fig2a_r.tsv")).unwrap();
    assert_eq!(fig2a.len(), 16);
    let (_, fig2b) = read_table(&out_dir.join("fig2b_delta_r.tsv")).unwrap();
    assert_eq!(fig2b.len(), 8);
    let (header, fig4) = read_table(&out_dir.join("fig4_weights_mimed.tsv")).unwrap();
    assert_eq!((fig4.len(), header.len() - 1), (12, 8));
    for row in &fig4 {
        for v in &row[1..] {
            let v: f64 = v.parse().unwrap();
            assert!((0.0..=1.0).contains(&v));
        }
    }
    assert!(out_dir.join("fig2a_mimed.svg").exists());
    assert!(out_dir.join("fig4_weights_mimed.svg").exists());

    // Asking for a mode that was never encoded lists what is missing.
    let out = emg_trf(&["analyze", "--config", p(&cfg), "--modes", "mimed,aloud"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sub01/aloud/A"));
}

#[test]
fn partition_table_sums_to_joint_r2() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    let out_dir = dir.path().join("out");
    synth(&root, "2", "5", "aloud", false);
    let cfg = dir.path().join("cfg.json");
    write_config(&cfg, &root, &out_dir, r#", "modes": ["aloud"], "feature_kinds": ["A", "P", "AP"]"#);
    assert!(emg_trf(&["encode", "--config", p(&cfg)]).status.success());
    assert!(emg_trf(&["analyze", "--config", p(&cfg)]).status.success());
    let (header, rows) = read_table(&out_dir.join("fig3_partition.tsv")).unwrap();
    assert_eq!(rows.len(), 16);
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    for row in rows {
        let v = |name: &str| row[col(name)].parse::<f64>().unwrap();
        assert!((v("unique_a") + v("unique_p") + v("shared") - v("r2_ap")).abs() < 1e-15);
    }
    // The aloud map keeps the twelve kinematic rows.
    let (_, fig4) = read_table(&out_dir.join("fig4_weights_aloud.tsv")).unwrap();
    assert_eq!(fig4.len(), 12);
}
