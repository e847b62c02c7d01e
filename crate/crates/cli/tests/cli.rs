//! End-to-end tests of the `ubr` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn ubr() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ubr"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = ubr().args(args).output().expect("spawn ubr");
    assert!(
        out.status.success(),
        "ubr {args:?} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn run_err(args: &[&str]) -> Output {
    let out = ubr().args(args).output().expect("spawn ubr");
    assert!(
        !out.status.success(),
        "ubr {args:?} unexpectedly succeeded:\n{}",
        String::from_utf8_lossy(&out.stdout)
    );
    out
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

fn synth_config(dir: &Path, users: usize, rho: f64, seed: u64) -> PathBuf {
    let path = dir.join("synth.cfg");
    write(
        &path,
        &format!(
            "users = {users}\ncategories = 6\nitems_per_category = 5\nbrands = 4\n\
             seq_len = 16\nrecency_window = 5\nrho = {rho}\nseed = {seed}\n"
        ),
    );
    path
}

fn train_config(dir: &Path, data_dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("train.cfg");
    write(
        &path,
        &format!(
            "log = {}/log.csv\ncatalog = {}/catalog.csv\nseed = 7\ns = 4\n\
             embed_dim = 4\nheads = 1\nbatch_size = 100\nmax_rounds = 1\n{extra}",
            data_dir.display(),
            data_dir.display()
        ),
    );
    path
}

#[test]
fn synth_outputs_parse_and_are_seed_stable() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = synth_config(tmp.path(), 12, 0.9, 3);
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    run_ok(&["synth", "--config", cfg.to_str().unwrap(), "--out", out_a.to_str().unwrap()]);
    run_ok(&["synth", "--config", cfg.to_str().unwrap(), "--out", out_b.to_str().unwrap()]);

    // Outputs exist and the log parses back.
    let report = ubr_core::data::parse_log(&out_a.join("log.csv")).unwrap();
    assert!(report.errors.is_empty());
    assert_eq!(report.records.len(), 12 * 16);
    let (fields, items) = ubr_core::data::parse_catalog(&out_a.join("catalog.csv")).unwrap();
    assert_eq!(fields, vec!["item_id", "category", "brand"]);
    assert_eq!(items.len(), 30);
    assert!(out_a.join("manifest.json").exists());

    // Same seed, byte-identical data files.
    for name in ["log.csv", "catalog.csv", "truth.csv"] {
        let a = std::fs::read(out_a.join(name)).unwrap();
        let b = std::fs::read(out_b.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identically seeded runs");
    }
}

#[test]
fn synth_full_signal_oracle_auc_is_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = synth_config(tmp.path(), 40, 1.0, 11);
    let out = tmp.path().join("data");
    run_ok(&["synth", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);

    // Hidden-category oracle on the emitted data: derive the test split with
    // the same pipeline and seed the trainer would use, score candidates by
    // category match against truth.csv, and demand perfect ranking.
    let report = ubr_core::data::parse_log(&out.join("log.csv")).unwrap();
    let (_, catalog) = ubr_core::data::parse_catalog(&out.join("catalog.csv")).unwrap();
    let data =
        ubr_core::trainer::prepare_data(report.schema, &report.records, &catalog, 1, 7).unwrap();

    let truth: std::collections::HashMap<String, String> =
        std::fs::read_to_string(out.join("truth.csv"))
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| {
                let (u, c) = l.split_once(',').unwrap();
                (format!("user_id_{u}"), format!("category_{c}"))
            })
            .collect();

    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for t in &data.test {
        let hidden = &truth[&t.user_token];
        scores.push(f64::from(t.item_tokens.contains(hidden)));
        labels.push(t.label);
    }
    let set = ubr_core::metrics::ScoredSet::new(scores, labels).unwrap();
    assert_eq!(ubr_core::metrics::auc(&set).unwrap(), 1.0);
}

#[test]
fn index_snapshot_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = synth_config(tmp.path(), 10, 0.8, 5);
    let data_dir = tmp.path().join("data");
    run_ok(&["synth", "--config", cfg.to_str().unwrap(), "--out", data_dir.to_str().unwrap()]);

    let idx = tmp.path().join("archive.idx");
    let log = data_dir.join("log.csv");
    run_ok(&["index", "--log", log.to_str().unwrap(), "--out", idx.to_str().unwrap()]);

    let text = std::fs::read_to_string(&idx).unwrap();
    assert!(text.starts_with("UBRIDX1\t"));
    let archive = ubr_core::archive::Archive::load_snapshot(&idx).unwrap();
    assert_eq!(archive.total_docs(), 10 * 16);
    assert_eq!(archive.doc_len(), 7);
}

#[test]
fn train_eval_retrieve_flow() {
    let tmp = tempfile::tempdir().unwrap();
    let synth_cfg = synth_config(tmp.path(), 14, 0.9, 13);
    let data_dir = tmp.path().join("data");
    run_ok(&["synth", "--config", synth_cfg.to_str().unwrap(), "--out", data_dir.to_str().unwrap()]);

    let train_cfg = train_config(tmp.path(), &data_dir, "");
    let run_dir = tmp.path().join("run");
    let out = run_ok(&[
        "train",
        "--config",
        train_cfg.to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
    ]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("mode = ubr"));
    for name in [
        "model.ckpt",
        "report.csv",
        "test_metrics.csv",
        "train_targets.csv",
        "valid_targets.csv",
        "test_targets.csv",
        "manifest.json",
    ] {
        assert!(run_dir.join(name).exists(), "{name} missing");
    }
    let report = std::fs::read_to_string(run_dir.join("report.csv")).unwrap();
    assert!(report.starts_with("epoch,phase,auc,logloss,mean_reward\n"));
    // pretrain + one round (selector, predictor)
    assert_eq!(report.lines().count(), 1 + 3);

    // eval on the checkpoint reproduces the trainer's final test row exactly
    let eval_out = run_ok(&[
        "eval",
        "--config",
        train_cfg.to_str().unwrap(),
        "--checkpoint",
        run_dir.join("model.ckpt").to_str().unwrap(),
        "--split",
        "test",
    ]);
    let eval_text = String::from_utf8_lossy(&eval_out.stdout);
    let saved = std::fs::read_to_string(run_dir.join("test_metrics.csv")).unwrap();
    assert_eq!(eval_text, saved, "eval does not match the trainer's test metrics");

    // repeated eval is identical
    let eval_again = run_ok(&[
        "eval",
        "--config",
        train_cfg.to_str().unwrap(),
        "--checkpoint",
        run_dir.join("model.ckpt").to_str().unwrap(),
        "--split",
        "test",
    ]);
    assert_eq!(eval_text, String::from_utf8_lossy(&eval_again.stdout));

    // retrieve prints the trace sections in order with a normalized alpha
    let trace_out = run_ok(&[
        "retrieve",
        "--config",
        train_cfg.to_str().unwrap(),
        "--checkpoint",
        run_dir.join("model.ckpt").to_str().unwrap(),
        "--target",
        "test-0",
    ]);
    let trace = String::from_utf8_lossy(&trace_out.stdout);
    let sections = [
        "target test-0",
        "selection probabilities:",
        "query:",
        "retrieved (bm25):",
        "alpha:",
        "alpha_sum = ",
        "yhat = ",
    ];
    let mut pos = 0;
    for s in sections {
        let found = trace[pos..]
            .find(s)
            .unwrap_or_else(|| panic!("section `{s}` missing or out of order in:\n{trace}"));
        pos += found;
    }
    let alpha_sum: f64 = trace
        .lines()
        .find(|l| l.starts_with("alpha_sum = "))
        .unwrap()
        .trim_start_matches("alpha_sum = ")
        .parse()
        .unwrap();
    assert!((alpha_sum - 1.0).abs() < 1e-6);

    // BM25 scores in the trace match the eval-path scores exactly: the trace
    // re-runs the same deterministic search, so spot-check one line parses.
    assert!(trace.lines().any(|l| l.trim_start().starts_with("doc ") && l.contains("score=")));

    // unknown target id is a rejection
    run_err(&[
        "retrieve",
        "--config",
        train_cfg.to_str().unwrap(),
        "--checkpoint",
        run_dir.join("model.ckpt").to_str().unwrap(),
        "--target",
        "test-99999",
    ]);
}

#[test]
fn seeded_training_is_bit_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let synth_cfg = synth_config(tmp.path(), 10, 0.9, 17);
    let data_dir = tmp.path().join("data");
    run_ok(&["synth", "--config", synth_cfg.to_str().unwrap(), "--out", data_dir.to_str().unwrap()]);

    let train_cfg = train_config(tmp.path(), &data_dir, "mode = recent_n\n");
    let run_a = tmp.path().join("a");
    let run_b = tmp.path().join("b");
    for dir in [&run_a, &run_b] {
        run_ok(&[
            "train",
            "--config",
            train_cfg.to_str().unwrap(),
            "--out",
            dir.to_str().unwrap(),
        ]);
    }
    for name in ["report.csv", "model.ckpt", "test_metrics.csv"] {
        let a = std::fs::read(run_a.join(name)).unwrap();
        let b = std::fs::read(run_b.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identically seeded runs");
    }
}

#[test]
fn mode_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let synth_cfg = synth_config(tmp.path(), 10, 0.9, 19);
    let data_dir = tmp.path().join("data");
    run_ok(&["synth", "--config", synth_cfg.to_str().unwrap(), "--out", data_dir.to_str().unwrap()]);
    let train_cfg = train_config(tmp.path(), &data_dir, "");
    let run_dir = tmp.path().join("run");
    let out = run_ok(&[
        "train",
        "--config",
        train_cfg.to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
        "--mode",
        "sum_pooling",
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("mode = sum_pooling"));
    // sum-pooling modes have no selector phase
    let report = std::fs::read_to_string(run_dir.join("report.csv")).unwrap();
    assert!(!report.contains(",selector,"));
}

#[test]
fn eval_scores_csv_hand_case() {
    let tmp = tempfile::tempdir().unwrap();
    let scores = tmp.path().join("scores.csv");
    write(&scores, "score,label\n0.9,1\n0.8,1\n0.2,0\n0.1,0\n");
    let out = run_ok(&["eval", "--scores", scores.to_str().unwrap()]);
    let text = String::from_utf8_lossy(&out.stdout);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("auc,logloss,ne,rig"));
    let values: Vec<f64> = lines
        .next()
        .unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    assert_eq!(values[0], 1.0);
    assert!(values[1] > 0.0);
    assert!((values[2] + values[3] - 1.0).abs() < 1e-9);
}

#[test]
fn rejections_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    // missing config file
    run_err(&["synth", "--config", "/nonexistent.cfg", "--out", tmp.path().to_str().unwrap()]);
    // bad synth config (recency window >= seq_len)
    let bad = tmp.path().join("bad.cfg");
    write(&bad, "users = 5\nseq_len = 10\nrecency_window = 10\n");
    run_err(&["synth", "--config", bad.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    // train config without data paths
    let empty = tmp.path().join("empty.cfg");
    write(&empty, "seed = 1\n");
    run_err(&["train", "--config", empty.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    // eval without inputs
    run_err(&["eval"]);
    // unknown split
    let synth_cfg = synth_config(tmp.path(), 10, 0.9, 23);
    let data_dir = tmp.path().join("data");
    run_ok(&["synth", "--config", synth_cfg.to_str().unwrap(), "--out", data_dir.to_str().unwrap()]);
    let train_cfg = train_config(tmp.path(), &data_dir, "");
    let run_dir = tmp.path().join("run");
    run_ok(&["train", "--config", train_cfg.to_str().unwrap(), "--out", run_dir.to_str().unwrap()]);
    run_err(&[
        "eval",
        "--config",
        train_cfg.to_str().unwrap(),
        "--checkpoint",
        run_dir.join("model.ckpt").to_str().unwrap(),
        "--split",
        "nonsense",
    ]);
}
