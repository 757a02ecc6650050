use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn apln(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_apln"))
        .args(args)
        .output()
        .expect("spawn apln")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, samples: usize, views: usize) {
    let out = apln(&[
        "synth",
        "--samples",
        &samples.to_string(),
        "--views",
        &views.to_string(),
        "--classes",
        "4",
        "--dim",
        "5",
        "--out",
        s(dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

fn mask_zeros(dir: &Path) -> usize {
    fs::read_to_string(dir.join("mask.csv"))
        .unwrap()
        .lines()
        .flat_map(|l| l.split(','))
        .filter(|c| c.trim() == "0")
        .count()
}

const QUICK: &str = r#"
seed = 3
test_fraction = 0.25

[synthetic]
samples = 120
views = 3
classes = 3
dim = 4
separation = 3.0

[corruption]
eta = 0.3

[train]
epochs_f = 2
epochs_v = 2
epochs_j = 2
batch_size = 32
feature_dim = 8
latent_dim = 4
vae_hidden = 8
imputation_samples = 2
"#;

#[test]
fn help_lists_flags_with_defaults() {
    for cmd in ["train", "corrupt", "fuse", "export", "synth"] {
        let out = apln(&[cmd, "--help"]);
        assert_eq!(code(&out), 0);
        let text = String::from_utf8_lossy(&out.stdout);
        assert!(text.contains("Usage: apln"), "{cmd}: {text}");
        if cmd != "export" {
            assert!(
                text.contains("default"),
                "{cmd} help lacks defaults: {text}"
            );
        }
    }
    let text = String::from_utf8_lossy(&apln(&["corrupt", "--help"]).stdout).to_string();
    for flag in [
        "--eta",
        "--conflict-fraction",
        "--seed",
        "--out",
        "[default: 0.4]",
    ] {
        assert!(text.contains(flag), "missing {flag}");
    }
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    assert_eq!(code(&apln(&["frobnicate"])), 2);
}

#[test]
fn missing_config_names_the_path() {
    let out = apln(&["train", "/definitely/not/here.toml"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("/definitely/not/here.toml"));
}

#[test]
fn config_without_data_source_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "seed = 1\n").unwrap();
    assert_eq!(code(&apln(&["train", s(&cfg)])), 2);
    fs::write(&cfg, "dataset = \"x\"\n[train]\nepochs = 2\n").unwrap();
    assert_eq!(code(&apln(&["train", s(&cfg)])), 2);
}

#[test]
fn unreadable_dataset_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(
        &cfg,
        format!("dataset = \"{}\"\n", s(&dir.path().join("absent"))),
    )
    .unwrap();
    assert_eq!(code(&apln(&["train", s(&cfg)])), 3);
}

#[test]
fn train_writes_reports_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("quick.toml");
    fs::write(&cfg, QUICK).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let res = apln(&["train", s(&cfg), "--output", s(out)]);
        assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    }
    let reports: Vec<_> = fs::read_dir(a.join("reports"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".jsonl"))
        .collect();
    assert_eq!(reports.len(), 3);
    let metrics: Vec<_> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.starts_with("metrics"))
        .collect();
    assert_eq!(metrics, ["metrics.json"]);
    for phase in ["umae_f", "umae_v", "umae_j"] {
        let lines = fs::read_to_string(a.join("reports").join(format!("{phase}.jsonl"))).unwrap();
        assert_eq!(lines.lines().count(), 2, "{phase} epoch records");
        assert!(a.join("checkpoints").join(format!("{phase}.json")).exists());
    }
    assert_eq!(
        fs::read(a.join("metrics.json")).unwrap(),
        fs::read(b.join("metrics.json")).unwrap()
    );
    assert_eq!(
        fs::read(a.join("checkpoints/umae_j.json")).unwrap(),
        fs::read(b.join("checkpoints/umae_j.json")).unwrap()
    );

    let m: Value = serde_json::from_slice(&fs::read(a.join("metrics.json")).unwrap()).unwrap();
    let test_samples = m["test_samples"].as_u64().unwrap() as usize;
    assert_eq!(test_samples, 30);

    let exported = dir.path().join("exp");
    let res = apln(&[
        "export",
        s(&a),
        "--what",
        "uncertainty",
        "--out",
        s(&exported),
    ]);
    assert_eq!(code(&res), 0);
    for phase in ["umae_f", "umae_v", "umae_j"] {
        let text = fs::read_to_string(exported.join(format!("uncertainty_{phase}.csv"))).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("row_id,label,predicted,uncertainty"));
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), test_samples);
        for row in rows {
            let u: f64 = row.rsplit(',').next().unwrap().parse().unwrap();
            assert!((0.0..=1.0).contains(&u));
        }
    }
    assert!(!exported.join("conflict_umae_j.csv").exists());

    let res = apln(&["export", s(&a)]);
    assert_eq!(code(&res), 0);
    let conflict = fs::read_to_string(a.join("export/conflict_umae_j.csv")).unwrap();
    assert_eq!(conflict.lines().count(), 4);
    let evidence = fs::read_to_string(a.join("export/evidence_umae_f.csv")).unwrap();
    assert_eq!(evidence.lines().next(), Some("row_id,label,e_0,e_1,e_2"));
    assert_eq!(evidence.lines().count(), test_samples + 1);
}

#[test]
fn flags_override_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("quick.toml");
    fs::write(&cfg, QUICK).unwrap();
    let out = dir.path().join("run");
    let res = apln(&[
        "train",
        s(&cfg),
        "--output",
        s(&out),
        "--seed",
        "9",
        "--eta",
        "0",
        "--epochs",
        "1,0,1",
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let c: Value = serde_json::from_slice(&fs::read(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(c["seed"], 9);
    assert_eq!(c["train"]["seed"], 9);
    assert_eq!(c["corruption"]["eta"], 0.0);
    assert_eq!(c["train"]["epochs_v"], 0);
    let m: Value = serde_json::from_slice(&fs::read(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(m["test_missing_rate"], 0.0);
}

#[test]
fn export_without_run_artifacts_fails_with_data_code() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&apln(&["export", s(dir.path())])), 3);
}

#[test]
fn corrupt_identity_copies_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let (src, dst) = (dir.path().join("src"), dir.path().join("dst"));
    synth(&src, 100, 3);
    let out = apln(&[
        "corrupt",
        s(&src),
        "--eta",
        "0",
        "--conflict-fraction",
        "0",
        "--out",
        s(&dst),
    ]);
    assert_eq!(code(&out), 0);
    for name in [
        "manifest.json",
        "labels.csv",
        "view_1.csv",
        "view_2.csv",
        "view_3.csv",
    ] {
        assert_eq!(
            fs::read(src.join(name)).unwrap(),
            fs::read(dst.join(name)).unwrap(),
            "{name}"
        );
    }
    assert!(!dst.join("mask.csv").exists());
    assert_eq!(
        fs::read_to_string(dst.join("provenance.jsonl")).unwrap(),
        ""
    );
}

#[test]
fn corrupt_counts_masked_entries_and_conflict_rows() {
    let dir = tempfile::tempdir().unwrap();
    let (src, dst) = (dir.path().join("src"), dir.path().join("dst"));
    synth(&src, 300, 3);
    let out = apln(&[
        "corrupt",
        s(&src),
        "--eta",
        "0.5",
        "--conflict-fraction",
        "0.4",
        "--seed",
        "11",
        "--out",
        s(&dst),
    ]);
    assert_eq!(code(&out), 0);
    // η·V·N = 0.5 · 3 · 300
    assert_eq!(mask_zeros(&dst), 450);
    let log = fs::read_to_string(dst.join("provenance.jsonl")).unwrap();
    // round(0.4 · 300)
    assert_eq!(log.lines().count(), 120);
    let summary = stdout_json(&out);
    assert_eq!(summary["masked_entries"], 450);
}

#[test]
fn corrupt_rejects_infeasible_rates() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src");
    synth(&src, 60, 3);
    let dst = dir.path().join("dst");
    assert_eq!(
        code(&apln(&[
            "corrupt",
            s(&src),
            "--eta",
            "0.9",
            "--out",
            s(&dst)
        ])),
        4
    );
    let masked = dir.path().join("masked");
    assert_eq!(
        code(&apln(&[
            "corrupt",
            s(&src),
            "--eta",
            "0.3",
            "--out",
            s(&masked)
        ])),
        0
    );
    assert_eq!(
        code(&apln(&[
            "corrupt",
            s(&masked),
            "--eta",
            "0.3",
            "--out",
            s(&dst)
        ])),
        4
    );
    assert_eq!(
        code(&apln(&[
            "corrupt",
            s(&dir.path().join("none")),
            "--out",
            s(&dst)
        ])),
        3
    );
}

fn opinion_json(evidence: &[f64]) -> Value {
    let k = evidence.len() as f64;
    let strength: f64 = evidence.iter().sum::<f64>() + k;
    serde_json::json!({
        "belief": evidence.iter().map(|e| e / strength).collect::<Vec<_>>(),
        "uncertainty": k / strength,
        "base_rate": vec![1.0 / k; evidence.len()],
    })
}

fn fuse(dir: &Path, opinions: &Value, mode: &str) -> Output {
    let path = dir.join("ops.json");
    fs::write(&path, opinions.to_string()).unwrap();
    apln(&["fuse", s(&path), "--mode", mode])
}

fn close(v: &Value, expected: &[f64]) {
    let got: Vec<f64> = v
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect();
    assert_eq!(got.len(), expected.len());
    for (g, e) in got.iter().zip(expected) {
        assert!((g - e).abs() < 1e-9, "{got:?} vs {expected:?}");
    }
}

#[test]
fn fuse_single_opinion_is_echoed_with_projection() {
    let dir = tempfile::tempdir().unwrap();
    let w = opinion_json(&[3.0, 1.0]);
    let out = fuse(dir.path(), &Value::Array(vec![w.clone()]), "balanced");
    assert_eq!(code(&out), 0);
    let v = stdout_json(&out);
    assert_eq!(v["fused"], w);
    // P = b + a·u with S = 6: (3/6 + 1/6, 1/6 + 1/6)
    close(&v["probabilities"], &[4.0 / 6.0, 2.0 / 6.0]);
    close(&v["conflict_matrix"][0], &[1.0]);
}

#[test]
fn fuse_identical_opinions() {
    let dir = tempfile::tempdir().unwrap();
    let w = opinion_json(&[2.0, 5.0, 1.0]);
    let out = fuse(
        dir.path(),
        &Value::Array(vec![w.clone(), w.clone()]),
        "sequential",
    );
    assert_eq!(code(&out), 0);
    let v = stdout_json(&out);
    close(&v["fused"]["belief"], &[2.0 / 11.0, 5.0 / 11.0, 1.0 / 11.0]);
    close(&v["fused_evidence"], &[2.0, 5.0, 1.0]);
    for row in v["conflict_matrix"].as_array().unwrap() {
        close(row, &[1.0, 1.0]);
    }
}

#[test]
fn fuse_three_views_per_mode() {
    let dir = tempfile::tempdir().unwrap();
    let ops = serde_json::json!([
        opinion_json(&[4.0, 0.0]),
        opinion_json(&[0.0, 4.0]),
        opinion_json(&[0.0, 4.0])
    ]);
    let balanced = stdout_json(&fuse(dir.path(), &ops, "balanced"));
    close(&balanced["fused_evidence"], &[4.0 / 3.0, 8.0 / 3.0]);
    // e1/4 + e2/4 + e3/2
    let sequential = stdout_json(&fuse(dir.path(), &ops, "sequential"));
    close(&sequential["fused_evidence"], &[1.0, 3.0]);
}

#[test]
fn fuse_error_codes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, "[{\"belief\": [0.5,").unwrap();
    assert_eq!(code(&apln(&["fuse", s(&path)])), 2);
    let mixed = serde_json::json!([opinion_json(&[1.0, 2.0]), opinion_json(&[1.0, 2.0, 3.0])]);
    assert_eq!(code(&fuse(dir.path(), &mixed, "balanced")), 4);
    assert_eq!(
        code(&fuse(dir.path(), &serde_json::json!([]), "balanced")),
        2
    );
    assert_eq!(code(&apln(&["fuse", s(&dir.path().join("none.json"))])), 3);
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    synth(&a, 80, 2);
    synth(&b, 80, 2);
    for name in ["labels.csv", "view_1.csv", "view_2.csv", "manifest.json"] {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap()
        );
    }
}
