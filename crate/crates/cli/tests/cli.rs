use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn toy_data() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/toy").canonicalize().unwrap()
}

/// Toy config writing into a fresh temporary directory.
fn setup(extra: &str) -> (TempDir, PathBuf) {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("toy.cfg");
    let text = format!(
        "data.dir = {}\ndata.features = features.csv\nsplit.pool_size = 15\nmodel.hidden = 8\nprop.T = 3\n\
         train.epochs = 2\ntrain.eval_k = 5\neval.k = 5\neval.seeds = 0,1\noutput.dir = out\n{extra}",
        toy_data().display()
    );
    fs::write(&cfg, text).unwrap();
    (dir, cfg)
}

fn yygnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_yygnn")).args(args).output().unwrap()
}

fn run_ok(args: &[&str]) -> String {
    let out = yygnn(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn train(cfg: &Path) {
    run_ok(&["train", "-c", cfg.to_str().unwrap()]);
}

#[test]
fn toy_train_writes_all_outputs() {
    let (dir, cfg) = setup("");
    let out = yygnn(&["train", "-c", cfg.to_str().unwrap(), "--diagnostics"]);
    assert!(out.status.success(), "{}", stderr(&out));
    for f in ["model.yyg", "train_log.tsv", "config.snapshot.cfg", "split.txt", "diagnostics.txt"] {
        assert!(dir.path().join("out").join(f).is_file(), "{f} missing");
    }
    let log = fs::read_to_string(dir.path().join("out/train_log.tsv")).unwrap();
    assert_eq!(log.lines().count(), 3);
    let diag = fs::read_to_string(dir.path().join("out/diagnostics.txt")).unwrap();
    assert!(diag.starts_with("t, energy, Q, sigma(Q)"));
    assert_eq!(diag.lines().count(), 1 + 4);
    assert!(stderr(&out).contains("default: train.lr = 0.01"));
}

#[test]
fn snapshot_rerun_is_bit_identical() {
    let (dir, cfg) = setup("");
    train(&cfg);
    let out = dir.path().join("out");
    let first = fs::read(out.join("model.yyg")).unwrap();
    let log = fs::read(out.join("train_log.tsv")).unwrap();
    let snap = dir.path().join("snapshot.cfg");
    fs::copy(out.join("config.snapshot.cfg"), &snap).unwrap();
    run_ok(&["train", "-c", snap.to_str().unwrap()]);
    assert_eq!(fs::read(out.join("model.yyg")).unwrap(), first);
    assert_eq!(fs::read(out.join("train_log.tsv")).unwrap(), log);
}

#[test]
fn missing_feature_file_is_a_data_error_naming_the_path() {
    let (_dir, cfg) = setup("");
    let out = yygnn(&["train", "-c", cfg.to_str().unwrap(), "--set", "data.features=absent.csv"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("absent.csv"));
}

#[test]
fn config_errors_exit_2_with_key() {
    let (_dir, cfg) = setup("prop.steps = 3\n");
    let out = yygnn(&["train", "-c", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("prop.steps"));
    let (_dir, cfg) = setup("train.lr = -1\n");
    assert_eq!(yygnn(&["train", "-c", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn divergence_exits_4() {
    let (_dir, cfg) = setup("prop.alpha = 50\nprop.lower_bound = false\nprop.lambda_k = 20\n");
    let out = yygnn(&["train", "-c", cfg.to_str().unwrap(), "--set", "prop.T=64"]);
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
}

#[test]
fn eval_rows_and_baselines() {
    let (dir, cfg) = setup("");
    train(&cfg);
    let c = cfg.to_str().unwrap();
    let table = run_ok(&["eval", "-c", c]);
    let rows: Vec<Vec<&str>> = table.lines().map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 2);
    for r in &rows {
        assert_eq!(r.len(), 5);
        let v: f64 = r[2].parse().unwrap();
        assert!((0.0..=1.0).contains(&v));
        assert_eq!(r[4].split(',').count(), 2);
    }
    assert_eq!(rows[0][1], "HR@5");
    assert_eq!(fs::read_to_string(dir.path().join("out/results.tsv")).unwrap(), table);

    let with = run_ok(&["eval", "-c", c, "--baselines", "cn,aa,ra"]);
    let names: Vec<&str> = with.lines().map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(names.len(), 8);
    for h in ["CN", "AA", "RA"] {
        assert_eq!(names.iter().filter(|n| **n == h).count(), 2);
    }
    assert_eq!(yygnn(&["eval", "-c", c, "--baselines", "xx"]).status.code(), Some(2));
}

#[test]
fn eval_checks_fingerprint() {
    let (_dir, cfg) = setup("");
    train(&cfg);
    let c = cfg.to_str().unwrap();
    // Feature noise changes the features the checkpoint was trained on.
    let out = yygnn(&["eval", "-c", c, "--set", "data.feature_noise=0.5"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("fingerprint"));
    run_ok(&["eval", "-c", c, "--set", "data.feature_noise=0.5", "--allow-mismatch"]);
}

#[test]
fn predict_outputs() {
    let (_dir, cfg) = setup("");
    train(&cfg);
    let c = cfg.to_str().unwrap();
    for scorer in ["mlp", "dot", "pruned_dot"] {
        let out = yygnn(&["predict", "-c", c, "--src", "0,3,7", "-k", "1", "--scorer", scorer]);
        assert!(out.status.success());
        let text = String::from_utf8(out.stdout.clone()).unwrap();
        let srcs: Vec<&str> = text.lines().map(|l| l.split('\t').next().unwrap()).collect();
        assert_eq!(srcs, ["0", "3", "7"]);
        assert!(stderr(&out).contains("decode nodes/sec"));
    }
    let top = run_ok(&["predict", "-c", c, "--src", "2", "-k", "4", "--exclude-known"]);
    let scores: Vec<f64> = top.lines().map(|l| l.split('\t').nth(2).unwrap().parse().unwrap()).collect();
    assert_eq!(scores.len(), 4);
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));

    assert_eq!(run_ok(&["predict", "-c", c, "--src", "", "-k", "1"]), "");
    assert_eq!(run_ok(&["predict", "-c", c, "-k", "1"]), "");
    let bad = yygnn(&["predict", "-c", c, "--src", "99", "-k", "1"]);
    assert_eq!(bad.status.code(), Some(3));
    assert!(stderr(&bad).contains("99"));
}

#[test]
fn split_writes_manifest() {
    let (dir, cfg) = setup("");
    run_ok(&["split", "-c", cfg.to_str().unwrap()]);
    let manifest = fs::read_to_string(dir.path().join("out/split.txt")).unwrap();
    assert!(!manifest.is_empty());
}

#[test]
fn check_suites_report_and_exit_codes() {
    let out = run_ok(&["check", "isomorphism"]);
    assert!(out.contains("without negative edges"));
    assert!(out.contains("2/2 checks passed"));
    assert!(run_ok(&["--threads", "1", "check", "metrics-oracle"]).contains("required == 0"));
    assert_eq!(yygnn(&["check", "nonsense"]).status.code(), Some(2));
}
