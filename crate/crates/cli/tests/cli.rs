//! End-to-end runs of the `gatesid` binary in scratch directories.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

/// Small enough that a whole pipeline runs in seconds.
const TINY: &[&str] = &[
    "corpus.n_items=240",
    "corpus.n_users=60",
    "corpus.n_impressions=6000",
    "corpus.max_age=200",
    "corpus.new_age_max=20",
    "rqvae.codes_per_level=8",
    "rqvae.epochs=2",
    "train.epochs=1",
    "ablate.seeds=1,2",
    "ablate.variants=full,no_gfsa",
];

fn gatesid(dir: &Path, args: &[&str], sets: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_gatesid"));
    cmd.current_dir(dir).env("GATESID_LOG", "quiet").args(args);
    for s in sets {
        cmd.args(["--set", s]);
    }
    cmd.output().expect("spawn gatesid")
}

fn summary(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stdout);
    let line = text.lines().last().unwrap_or_else(|| panic!("no stdout; stderr: {}", String::from_utf8_lossy(&out.stderr)));
    serde_json::from_str(line).unwrap_or_else(|e| panic!("summary `{line}` is not JSON: {e}"))
}

fn ok(dir: &Path, args: &[&str], sets: &[&str]) -> Value {
    let out = gatesid(dir, args, sets);
    assert!(
        out.status.success(),
        "{args:?} failed ({:?}): {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    summary(&out)
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn pipeline(dir: &Path) {
    for step in [
        &["gen-data"][..],
        &["train-rqvae"],
        &["encode-sids"],
        &["train"],
        &["eval"],
        &["gate-curve"],
        &["export-emb"],
        &["ablate"],
    ] {
        ok(dir, step, TINY);
    }
}

#[test]
fn missing_prerequisite_exits_two_and_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = gatesid(dir.path(), &["train-rqvae"], &[]);
    assert_eq!(out.status.code(), Some(2));
    let s = summary(&out);
    assert_eq!(s["status"], "error");
    assert!(s["error"].as_str().unwrap().contains("data/corpus"), "{s}");
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    for bad in ["no_such.key=1", "train.epochs=often", "loss.tau=-1"] {
        let out = gatesid(dir.path(), &["gen-data"], &[bad]);
        assert_eq!(out.status.code(), Some(1), "{bad}");
    }
    let out = gatesid(dir.path(), &["train", "--variant", "deluxe"], &[]);
    assert_eq!(out.status.code(), Some(1));
    let out = Command::new(env!("CARGO_BIN_EXE_gatesid"))
        .current_dir(dir.path())
        .env("GATESID_LOG", "loud")
        .arg("grad-check")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn config_file_is_overridden_by_set() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("run.cfg");
    std::fs::write(&file, "# desk run\ntrain.epochs=3\nseed=11\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_gatesid"))
        .current_dir(dir.path())
        .args(["--config", "run.cfg", "--set", "train.epochs=5", "--print-config"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().any(|l| l == "train.epochs=5"));
    assert!(text.lines().any(|l| l == "seed=11"));
}

#[test]
fn grad_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let s = ok(dir.path(), &["grad-check"], &[]);
    assert_eq!(s["all_passed"], true, "{s}");
    assert!(dir.path().join("reports/grad_check.json").exists());
}

#[test]
fn gen_data_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    ok(a.path(), &["gen-data", "--seed", "7"], TINY);
    ok(b.path(), &["gen-data", "--seed", "7"], TINY);
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert!(!ta.is_empty());
    assert_eq!(ta, tb);
    let c = tempfile::tempdir().unwrap();
    ok(c.path(), &["gen-data", "--seed", "8"], TINY);
    assert_ne!(tree(c.path()), ta);
}

#[test]
fn pipeline_is_bitwise_reproducible_and_leaves_inputs_alone() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pipeline(a.path());
    pipeline(b.path());
    let ta = tree(a.path());
    assert_eq!(ta, tree(b.path()));
    for expected in [
        "data/corpus/items.csv",
        "artifacts/sids.csv",
        "artifacts/models/full.json",
        "artifacts/embeddings/full_item.csv",
        "reports/eval_full.json",
        "reports/gate_curve_full.csv",
        "reports/ablation_summary.csv",
    ] {
        assert!(ta.contains_key(Path::new(expected)), "missing {expected}; have {:?}", ta.keys().collect::<Vec<_>>());
    }

    // Re-running downstream steps must not touch their inputs.
    let inputs = |t: &BTreeMap<PathBuf, Vec<u8>>| -> BTreeMap<PathBuf, Vec<u8>> {
        t.iter()
            .filter(|(k, _)| k.starts_with("data") || k.ends_with("sids.csv") || k.starts_with("artifacts/rqvae"))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    };
    ok(a.path(), &["eval"], TINY);
    ok(a.path(), &["ablate", "--from-artifacts"], TINY);
    let after = tree(a.path());
    assert_eq!(inputs(&after), inputs(&ta));
    assert_eq!(after, ta, "rerunning eval and ablate changed artifacts");
}

#[test]
fn embeddings_export_has_header_and_one_row_per_item() {
    let dir = tempfile::tempdir().unwrap();
    for step in [&["gen-data"][..], &["train-rqvae"], &["encode-sids"], &["train"], &["export-emb"]] {
        ok(dir.path(), step, TINY);
    }
    let text = std::fs::read_to_string(dir.path().join("artifacts/embeddings/full_sid.csv")).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("item_id,v1,"));
    let width = header.split(',').count();
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 240);
    assert!(rows.iter().all(|r| r.split(',').count() == width));
}

/// Default corpus and golden seed: the full model must beat the model
/// without gated fused attention on test CTR AUC.
#[test]
fn golden_full_beats_no_gfsa_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    for step in [&["gen-data"][..], &["train-rqvae"], &["encode-sids"]] {
        ok(p, step, &[]);
    }
    let mut auc = BTreeMap::new();
    for v in ["full", "no_gfsa"] {
        ok(p, &["train", "--variant", v], &[]);
        ok(p, &["eval", "--variant", v], &[]);
        let report: Value = serde_json::from_slice(&std::fs::read(p.join(format!("reports/eval_{v}.json"))).unwrap()).unwrap();
        auc.insert(v, report["ctr"]["all"]["auc"].as_f64().unwrap());
    }
    assert!(auc["full"] > auc["no_gfsa"], "{auc:?}");
}
