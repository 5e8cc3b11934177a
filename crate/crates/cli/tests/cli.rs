//! The `jmap` binary end to end on a tiny corpus: exit codes, failure
//! records, stage skipping and artifact manifests.

use std::path::Path;
use std::process::{Command, Output};

use jmap_cli::artifacts::{read_manifest, sha256_file};

fn jmap(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jmap"))
        .arg("--output-dir")
        .arg(out)
        .args(args)
        .output()
        .expect("run jmap")
}

/// Settings that shrink every stage to seconds.
const TINY: &[&str] = &[
    "--set",
    "dims=[16,16,16]",
    "--set",
    "subjects_per_class=4",
    "--set",
    "pyramid_levels=1",
    "--set",
    "iterations=3",
    "--set",
    "affine_iterations=3",
    "--set",
    "batch_size=4",
    "--folds",
    "2",
    "--max-epochs",
    "1",
];

fn tiny(out: &Path, args: &[&str]) -> Output {
    let all: Vec<&str> = TINY.iter().chain(args).copied().collect();
    jmap(out, &all)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_documents_the_flags_and_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let o = jmap(dir.path(), &["--help"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    for word in [
        "--config",
        "--set",
        "--seed",
        "--mode",
        "--modality",
        "--alpha",
        "--force",
        "pipeline",
        "rank-regions",
    ] {
        assert!(text.contains(word), "help lacks {word}");
    }
}

#[test]
fn unknown_key_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = jmap(dir.path(), &["--set", "no_such_key=1", "show-config"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("no_such_key"));
}

#[test]
fn invalid_value_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = jmap(dir.path(), &["--folds", "1", "show-config"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn show_config_prints_the_merged_json() {
    let dir = tempfile::tempdir().unwrap();
    let o = jmap(dir.path(), &["--seed", "7", "--set", "alpha=0.25", "show-config"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["seed"], 7);
    assert_eq!(v["alpha"], 0.25);
}

#[test]
fn stage_without_its_inputs_fails_with_a_record() {
    let dir = tempfile::tempdir().unwrap();
    let o = tiny(dir.path(), &["train"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let record = walk(dir.path())
        .into_iter()
        .find(|p| p.ends_with("error.json"))
        .expect("error.json");
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(record).unwrap()).unwrap();
    assert_eq!(v["stage"], "train");
    assert_eq!(v["exit_code"], 3);
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap().flatten() {
        let p = e.path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn tiny_pipeline_writes_reports_and_verifiable_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let o = tiny(dir.path(), &["pipeline", "--ablate"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("| REG |") && stdout.contains("| JM |"), "{stdout}");
    let run = Path::new(stdout.lines().last().unwrap().trim());
    for rel in [
        "report/table2.md",
        "report/summary.json",
        "train/jm/fold0/best.ckpt",
        "train/reg/fold1/curve.csv",
        "rank/jm/table1.md",
        "evaluate/reg/predictions.csv",
    ] {
        assert!(run.join(rel).is_file(), "missing {rel}");
    }

    let manifest = read_manifest(run).unwrap();
    assert!(!manifest.is_empty());
    for a in &manifest {
        assert_eq!(sha256_file(&run.join(&a.path)).unwrap(), a.sha256, "{}", a.path);
    }

    // completed stages are skipped on a rerun
    let again = tiny(dir.path(), &["pipeline", "--ablate"]);
    assert!(again.status.success());
    assert!(stderr(&again).contains("[register] up to date"));
    assert!(stderr(&again).contains("[train/jm] up to date"));
}
