use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use descrec::synthetic::PlantedClusters;

fn fixture(dir: &Path, extra: &str) -> std::path::PathBuf {
    PlantedClusters::generate(30, 20, 2, 11).write(&dir.join("raw")).unwrap();
    let cfg = dir.join("descrec.toml");
    fs::write(
        &cfg,
        format!(
            "dataset = \"Sports\"\ninteractions = \"raw/interactions.tsv\"\nitem_metadata = \"raw/items.jsonl\"\n\
             workdir = \"work\"\nmax_epochs = 4\nembed_dim = 8\nhidden_dim = 16\n{extra}"
        ),
    )
    .unwrap();
    cfg
}

fn descrec(cfg: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_descrec"))
        .arg("--config")
        .arg(cfg)
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("DESCREC_MLLM_ENDPOINT")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn stub_chain_runs_and_reruns_are_noops() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(dir.path(), "");
    for cmd in ["prepare", "describe", "encode", "build-graph", "train", "evaluate", "export-graph"] {
        let out = descrec(&cfg, &["--stub", cmd]);
        assert_eq!(code(&out), 0, "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let metrics = fs::read_to_string(dir.path().join("work/evaluate/metrics.json")).unwrap();
    let metrics: serde_json::Value = serde_json::from_str(&metrics).unwrap();
    assert_eq!(metrics["dataset"], "Sports");

    assert_eq!(code(&descrec(&cfg, &["--stub", "describe"])), 0);
    // a forced rerun rebuilds the stage from the description cache alone
    let again = descrec(&cfg, &["--stub", "--force", "describe"]);
    assert_eq!(code(&again), 0);
    let summary: serde_json::Value = serde_json::from_slice(&again.stdout).unwrap();
    assert_eq!(summary["items_generated"], 0);
    assert_eq!(summary["users_generated"], 0);
}

#[test]
fn exit_codes_follow_failure_kind() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(dir.path(), "");
    assert_eq!(code(&descrec(&cfg, &["evaluate"])), 3);
    assert_eq!(code(&descrec(&cfg, &["prepare"])), 0);
    // changing the seed invalidates the recorded split
    assert_eq!(code(&descrec(&cfg, &["--seed", "7", "prepare"])), 4);
    assert_eq!(code(&descrec(&cfg, &["--seed", "7", "--force", "prepare"])), 0);
    assert_eq!(code(&descrec(&cfg, &["ablate", "--variant", "bogus"])), 4);

    let bad = fixture(dir.path(), "alpha = 3.0\n");
    assert_eq!(code(&descrec(&bad, &["prepare"])), 4);
    let unknown = fixture(dir.path(), "no_such_key = 1\n");
    assert_eq!(code(&descrec(&unknown, &["prepare"])), 4);
}

#[test]
fn missing_image_is_a_partial_describe() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(dir.path(), "");
    let meta = dir.path().join("raw/items.jsonl");
    let text = fs::read_to_string(&meta).unwrap();
    let mut edited = String::new();
    for line in text.lines() {
        let mut rec: serde_json::Value = serde_json::from_str(line).unwrap();
        if rec["item_key"] == "i0007" {
            rec["image_ref"] = serde_json::Value::Null;
        }
        edited.push_str(&rec.to_string());
        edited.push('\n');
    }
    fs::write(&meta, edited).unwrap();
    assert_eq!(code(&descrec(&cfg, &["prepare"])), 0);
    let out = descrec(&cfg, &["--stub", "describe"]);
    assert_eq!(code(&out), 2);
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["item_failures"], 1);
    assert_eq!(code(&descrec(&cfg, &["--stub", "encode"])), 0);
}

#[test]
fn ablate_prints_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(dir.path(), "");
    for cmd in ["prepare", "describe", "encode"] {
        assert_eq!(code(&descrec(&cfg, &["--stub", cmd])), 0);
    }
    let out = descrec(&cfg, &["--stub", "ablate", "--variant", "full", "--variant", "no_te"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = stdout.lines().filter(|l| l.starts_with("full\t") || l.starts_with("no_te\t")).collect();
    assert_eq!(rows.len(), 2);
}

#[test]
fn help_lists_config_keys() {
    let out = Command::new(env!("CARGO_BIN_EXE_descrec")).arg("--help").output().unwrap();
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    for key in ["alpha_grid", "k_cooccur_grid", "mllm_endpoint", "export-graph"] {
        assert!(text.contains(key), "{key}");
    }
}
