//! End-to-end tests of the `fusenet` binary: artifact layout, exit
//! codes, and bit-identical replay of a run from its frozen config.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fusenet::eval::train::FoldResult;
use fusenet::nets::checkpoint;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fusenet"))
        .args(args)
        .output()
        .expect("binary should start")
}

fn run_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("process should exit, not be killed")
}

/// Small-but-real experiment: 12 paired studies at 8^3, one stage, one
/// block, so every command finishes in seconds.
fn tiny_config(dataset: &str) -> String {
    format!(
        r#"{{
  "seed": 7,
  "dataset": {dataset},
  "preprocess": {{ "out_shape": [4, 4, 4] }},
  "model": {{ "strategy": "multistage", "stages": 1, "blocks_per_stage": 1, "base_channels": 2 }},
  "folds": {{ "k": 3 }},
  "schedule": {{ "epochs": 1, "batch_size": 4 }},
  "grid": {{ "stages": [1, 2], "blocks_per_stage": [1, 1] }}
}}
"#
    )
}

const TINY_SYNTH: &str = r#"{ "synth": { "n_studies": 12, "volume_shape": [8, 8, 8],
  "blob_radius_voxels": 2.0, "amplitude": 0.5, "noise_sigma": 0.05 } }"#;

fn write_config(dir: &Path, name: &str, dataset: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, tiny_config(dataset)).unwrap();
    path
}

fn collect_files(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_path_buf();
                files.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    files.sort_by(|a, b| a.0.cmp(&b.0));
    files
}

fn assert_dirs_identical(a: &Path, b: &Path) {
    let fa = collect_files(a);
    let fb = collect_files(b);
    let names = |f: &[(PathBuf, Vec<u8>)]| f.iter().map(|(p, _)| p.clone()).collect::<Vec<_>>();
    assert_eq!(names(&fa), names(&fb), "file sets differ");
    for ((path, da), (_, db)) in fa.iter().zip(&fb) {
        assert_eq!(da, db, "{} differs between runs", path.display());
    }
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_cv_artifacts_and_frozen_rerun_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "exp.json", TINY_SYNTH);
    let synth_dir = tmp.path().join("synth");
    run_ok(&["synth", "--config", path_str(&cfg), "--out", path_str(&synth_dir)]);
    assert!(synth_dir.join("manifest.json").is_file());
    assert!(synth_dir.join("config.frozen.json").is_file());
    assert!(synth_dir.join("volumes").join("synth-0000_ct.mvol").is_file());

    let cv_dir = tmp.path().join("cv");
    let stdout = run_ok(&["cv", "--config", path_str(&cfg), "--out", path_str(&cv_dir)]);
    assert!(stdout.contains("strategy multistage"));
    assert!(stdout.contains("summary over 3 folds"));
    for fold in 0..3 {
        assert!(cv_dir.join("folds").join(format!("fold{fold}.json")).is_file());
        assert!(cv_dir.join(format!("checkpoint_fold{fold}.fnet")).is_file());
    }
    assert!(cv_dir.join("summary.json").is_file());
    let csv = std::fs::read_to_string(cv_dir.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "model,fold,accuracy,auc,gmean");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("multistage,0,"));

    // The frozen config is a fixpoint: freezing what it parses to
    // reproduces it byte for byte.
    let frozen_path = cv_dir.join("config.frozen.json");
    let frozen = std::fs::read_to_string(&frozen_path).unwrap();
    let parsed: fusenet::config::ExperimentConfig = serde_json::from_str(&frozen).unwrap();
    assert_eq!(parsed.to_frozen_json(), frozen);

    // Replaying from the frozen config reproduces every artifact bitwise,
    // including the checkpoints and the frozen config itself.
    let rerun_dir = tmp.path().join("cv_rerun");
    run_ok(&["cv", "--config", path_str(&frozen_path), "--out", path_str(&rerun_dir)]);
    assert_dirs_identical(&cv_dir, &rerun_dir);
}

#[test]
fn preprocessed_manifest_cv_matches_raw_manifest_cv() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "exp.json", TINY_SYNTH);
    let synth_dir = tmp.path().join("synth");
    run_ok(&["synth", "--config", path_str(&cfg), "--out", path_str(&synth_dir)]);

    let raw_cfg = write_config(
        tmp.path(),
        "raw.json",
        r#"{ "manifest": { "path": "synth/manifest.json" } }"#,
    );
    let pre_dir = tmp.path().join("pre");
    run_ok(&["preprocess", "--config", path_str(&raw_cfg), "--out", path_str(&pre_dir)]);
    assert!(pre_dir.join("manifest.json").is_file());

    let pre_cfg = write_config(
        tmp.path(),
        "pre.json",
        r#"{ "manifest": { "path": "pre/manifest.json", "preprocessed": true } }"#,
    );
    let cv_raw = tmp.path().join("cv_raw");
    let cv_pre = tmp.path().join("cv_pre");
    run_ok(&["cv", "--config", path_str(&raw_cfg), "--out", path_str(&cv_raw)]);
    run_ok(&["cv", "--config", path_str(&pre_cfg), "--out", path_str(&cv_pre)]);

    // Saved preprocessed volumes round-trip exactly, so training on them
    // retraces training on the raw volumes bit for bit.
    for name in ["folds/fold0.json", "folds/fold1.json", "folds/fold2.json", "summary.json",
                 "metrics.csv", "checkpoint_fold0.fnet"] {
        let a = std::fs::read(cv_raw.join(name)).unwrap();
        let b = std::fs::read(cv_pre.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between raw and preprocessed runs");
    }

    // Preprocessing an already-preprocessed manifest is refused.
    let out = run(&["preprocess", "--config", path_str(&pre_cfg), "--out",
                    path_str(&tmp.path().join("pre2"))]);
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn train_writes_loadable_checkpoint_and_fold_result() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "exp.json", TINY_SYNTH);
    let out_dir = tmp.path().join("train");
    let stdout = run_ok(&["train", "--config", path_str(&cfg), "--out", path_str(&out_dir)]);
    assert!(stdout.contains("fold 0:"));

    let net = checkpoint::load(&out_dir.join("checkpoint.fnet")).expect("checkpoint should load");
    assert!(net.parameter_count() > 0);
    let text = std::fs::read_to_string(out_dir.join("fold0.json")).unwrap();
    let result: FoldResult = serde_json::from_str(&text).unwrap();
    assert_eq!(result.fold, 0);
    assert_eq!(result.predictions.len(), 4);
    assert_eq!(result.curve.len(), 1);
}

#[test]
fn gridsearch_compare_and_verify_graph_produce_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "exp.json", TINY_SYNTH);

    let grid_dir = tmp.path().join("grid");
    let stdout = run_ok(&["gridsearch", "--config", path_str(&cfg), "--out", path_str(&grid_dir)]);
    assert!(stdout.contains("#1 "));
    let text = std::fs::read_to_string(grid_dir.join("gridsearch.json")).unwrap();
    let json: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(json["ranking"].as_array().unwrap().len(), 2);
    assert!(!json["consultations"].as_array().unwrap().is_empty());

    let cv_a = tmp.path().join("cv_ct");
    let cv_b = tmp.path().join("cv_pet");
    run_ok(&["cv", "--config", path_str(&cfg), "--out", path_str(&cv_a),
             "--strategy", "unimodal_ct"]);
    run_ok(&["cv", "--config", path_str(&cfg), "--out", path_str(&cv_b),
             "--strategy", "unimodal_pet"]);
    let cmp_dir = tmp.path().join("cmp");
    let stdout = run_ok(&["compare", "--a", path_str(&cv_a), "--b", path_str(&cv_b),
                          "--out", path_str(&cmp_dir)]);
    assert!(stdout.contains("unimodal_ct"));
    assert!(stdout.contains("Wilcoxon signed-rank (two-sided) over 3 folds"));
    assert!(cmp_dir.join("comparison.json").is_file());
    assert!(cmp_dir.join("comparison.txt").is_file());

    // Comparing a run against itself still works; names get suffixes and
    // every paired difference is zero.
    let stdout = run_ok(&["compare", "--a", path_str(&cv_a), "--b", path_str(&cv_a)]);
    assert!(stdout.contains("unimodal_ct:a"));
    assert!(stdout.contains("degenerate"));

    let vg_dir = tmp.path().join("vg");
    let stdout = run_ok(&["verify-graph", "--config", path_str(&cfg), "--out", path_str(&vg_dir)]);
    assert!(stdout.contains("matched: 4 events"));
    assert!(stdout.contains("F4 = concat(F2^0, F3^0)"));
    assert!(vg_dir.join("fusiongraph.json").is_file());

    // A network built without fusion blocks cannot realize the declared
    // graph; the command reports the mismatch and fails.
    let silent = tmp.path().join("silent.json");
    let cfg_text = tiny_config(TINY_SYNTH)
        .replace("\"base_channels\": 2", "\"base_channels\": 2, \"fusion_blocks\": false");
    std::fs::write(&silent, cfg_text).unwrap();
    let out = run(&["verify-graph", "--config", path_str(&silent)]);
    assert_eq!(exit_code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stdout).contains("mismatch"));
}

#[test]
fn exit_codes_follow_error_kinds() {
    let tmp = tempfile::tempdir().unwrap();

    // Usage problems: unknown subcommand, unknown strategy, zero workers.
    assert_eq!(exit_code(&run(&["bogus"])), 2);
    let cfg = write_config(tmp.path(), "exp.json", TINY_SYNTH);
    let out = run(&["cv", "--config", path_str(&cfg), "--out",
                    path_str(&tmp.path().join("x")), "--strategy", "fancy"]);
    assert_eq!(exit_code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown strategy"));
    let out = run(&["cv", "--config", path_str(&cfg), "--out",
                    path_str(&tmp.path().join("x")), "--workers", "0"]);
    assert_eq!(exit_code(&out), 2);

    // Help and version are not errors.
    assert_eq!(exit_code(&run(&["--help"])), 0);
    assert_eq!(exit_code(&run(&["--version"])), 0);

    // Config the file parses to but that fails validation.
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, tiny_config(TINY_SYNTH).replace("\"k\": 3", "\"k\": 1")).unwrap();
    let out = run(&["train", "--config", path_str(&bad), "--out",
                    path_str(&tmp.path().join("y"))]);
    assert_eq!(exit_code(&out), 2);

    // Missing and malformed files are data problems, not usage problems.
    let out = run(&["train", "--config", path_str(&tmp.path().join("absent.json")),
                    "--out", path_str(&tmp.path().join("z"))]);
    assert_eq!(exit_code(&out), 3);
    let garbled = tmp.path().join("garbled.json");
    std::fs::write(&garbled, "{ not json").unwrap();
    let out = run(&["train", "--config", path_str(&garbled), "--out",
                    path_str(&tmp.path().join("w"))]);
    assert_eq!(exit_code(&out), 3);

    // --seed overrides the config seed and lands in the frozen config.
    let seed_dir = tmp.path().join("seeded");
    run_ok(&["synth", "--config", path_str(&cfg), "--out", path_str(&seed_dir),
             "--seed", "99"]);
    let frozen = std::fs::read_to_string(seed_dir.join("config.frozen.json")).unwrap();
    assert!(frozen.contains("\"seed\": 99"));
}
