//! Implementations of the CLI subcommands.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};

use ubr_core::archive::Archive;
use ubr_core::config::{KvConfig, ModelDims};
use ubr_core::data::synth::{gen_synthetic, SynthConfig, SynthOutput};
use ubr_core::data::{
    self, parse_catalog, parse_log, write_catalog, write_log, write_split_manifest,
    PredictionTarget,
};
use ubr_core::metrics::ScoredSet;
use ubr_core::numeric::ParamStore;
use ubr_core::rng::stream_rng;
use ubr_core::selector;
use ubr_core::trainer::{self, TrainConfig, TrainData};

use crate::manifest::{write_atomic, PhaseTimer, RunManifest};

pub fn synth(config_path: &Path, out_dir: &Path) -> anyhow::Result<()> {
    let kv = KvConfig::parse_file(config_path).context("reading synth config")?;
    let defaults = SynthConfig::default();
    let cfg = SynthConfig {
        users: kv.get_usize("users", defaults.users)?,
        categories: kv.get_usize("categories", defaults.categories)?,
        items_per_category: kv.get_usize("items_per_category", defaults.items_per_category)?,
        brands: kv.get_usize("brands", defaults.brands)?,
        seq_len: kv.get_usize("seq_len", defaults.seq_len)?,
        recency_window: kv.get_usize("recency_window", defaults.recency_window)?,
        rho: kv.get_f64("rho", defaults.rho)?,
        start_ts: kv.get_i64("start_ts", defaults.start_ts)?,
    };
    let seed = kv.get_u64("seed", 1)?;

    let mut timer = PhaseTimer::new();
    let out = gen_synthetic(&cfg, &mut stream_rng(seed, "data"))?;
    timer.lap("generate");

    std::fs::create_dir_all(out_dir)?;
    let log_path = out_dir.join("log.csv");
    let catalog_path = out_dir.join("catalog.csv");
    let truth_path = out_dir.join("truth.csv");
    write_log(&log_path, &out.schema, &out.records)?;
    write_catalog(&catalog_path, &out.schema.item_fields, &out.catalog)?;
    write_truth(&truth_path, &out)?;
    timer.lap("write");

    let mut manifest = RunManifest::new("synth", seed, kv.render());
    manifest.hash_input(config_path)?;
    for p in [&log_path, &catalog_path, &truth_path] {
        manifest.record_output(p);
    }
    manifest.timings_ms = timer.timings;
    manifest.write(&out_dir.join("manifest.json"))?;

    println!(
        "synth: {} users x {} behaviors -> {} records, {} items",
        cfg.users,
        cfg.seq_len,
        out.records.len(),
        out.catalog.len()
    );
    Ok(())
}

/// Ground truth sidecar: each user's hidden preferred category.
fn write_truth(path: &Path, out: &SynthOutput) -> anyhow::Result<()> {
    let mut text = String::from("user_id,hidden_category\n");
    for (user, cat) in out.hidden_category.iter().enumerate() {
        text.push_str(&format!("{user},{cat}\n"));
    }
    write_atomic(path, &text)?;
    Ok(())
}

pub fn index(log_path: &Path, out_path: &Path) -> anyhow::Result<()> {
    let report = parse_log(log_path).context("parsing behavior log")?;
    warn_parse_errors(&report.errors);
    // Index the same document set training would see (users with fewer than
    // 4 behaviors cannot produce targets and are dropped by the split).
    let split = data::temporal_split(&report.schema, &report.records);
    let archive = ubr_core::archive::build_index(&split.docs)?;
    archive.save_snapshot(out_path)?;
    println!(
        "index: {} docs, {} tokens, doc_len {} -> {}",
        archive.total_docs(),
        archive.vocab_size(),
        archive.doc_len(),
        out_path.display()
    );
    Ok(())
}

fn warn_parse_errors(errors: &[data::LineError]) {
    if errors.is_empty() {
        return;
    }
    log::warn!("{} malformed log lines skipped", errors.len());
    for e in errors.iter().take(5) {
        log::warn!("  line {}: {}", e.line_no, e.reason);
    }
}

/// Shared setup for train/eval/retrieve: parse the training config and load
/// the dataset it names.
struct Setup {
    kv: KvConfig,
    cfg: TrainConfig,
    data: TrainData,
    log_path: PathBuf,
    catalog_path: PathBuf,
}

fn load_setup(config_path: &Path, mode_override: Option<&str>) -> anyhow::Result<Setup> {
    let mut kv = KvConfig::parse_file(config_path).context("reading training config")?;
    if let Some(mode) = mode_override {
        kv.set("mode", mode);
    }
    let cfg = TrainConfig::from_kv(&kv)?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    let resolve = |key: &str| -> anyhow::Result<PathBuf> {
        let raw = kv
            .require(key)
            .map_err(|_| anyhow!("training config must set `{key}`"))?;
        let p = PathBuf::from(raw);
        Ok(if p.is_absolute() { p } else { base.join(p) })
    };
    let log_path = resolve("log")?;
    let catalog_path = resolve("catalog")?;
    if !log_path.exists() {
        bail!("log file not found: {}", log_path.display());
    }
    if !catalog_path.exists() {
        bail!("catalog file not found: {}", catalog_path.display());
    }
    let report = parse_log(&log_path).context("parsing behavior log")?;
    warn_parse_errors(&report.errors);
    let (catalog_fields, catalog) = parse_catalog(&catalog_path)?;
    if catalog_fields != report.schema.item_fields {
        bail!(
            "catalog fields {:?} do not match log item fields {:?}",
            catalog_fields,
            report.schema.item_fields
        );
    }
    let negative_ratio = kv.get_usize("negative_ratio", 1)?;
    let data = trainer::prepare_data(
        report.schema.clone(),
        &report.records,
        &catalog,
        negative_ratio,
        cfg.seed,
    )?;
    Ok(Setup {
        kv,
        cfg,
        data,
        log_path,
        catalog_path,
    })
}

pub fn train(config_path: &Path, out_dir: &Path, mode_override: Option<&str>) -> anyhow::Result<()> {
    let mut timer = PhaseTimer::new();
    let setup = load_setup(config_path, mode_override)?;
    timer.lap("prepare");

    let outcome = trainer::run(&setup.data, &setup.cfg)?;
    timer.lap("train");
    if outcome.diverged {
        log::error!("training diverged; keeping the last good checkpoint");
    }

    std::fs::create_dir_all(out_dir)?;
    let ckpt_path = out_dir.join("model.ckpt");
    outcome.store.save_checkpoint(&ckpt_path)?;
    let report_path = out_dir.join("report.csv");
    write_atomic(&report_path, &trainer::report_csv(&outcome.rows))?;
    let metrics_path = out_dir.join("test_metrics.csv");
    write_atomic(&metrics_path, &metrics_line(&outcome.test))?;
    for (name, targets) in [
        ("train_targets.csv", &setup.data.train),
        ("valid_targets.csv", &setup.data.valid),
        ("test_targets.csv", &setup.data.test),
    ] {
        write_split_manifest(&out_dir.join(name), targets)?;
    }
    timer.lap("write");

    let mut manifest = RunManifest::new("train", setup.cfg.seed, render_effective(&setup));
    manifest.hash_input(config_path)?;
    manifest.hash_input(&setup.log_path)?;
    manifest.hash_input(&setup.catalog_path)?;
    for name in [
        "model.ckpt",
        "report.csv",
        "test_metrics.csv",
        "train_targets.csv",
        "valid_targets.csv",
        "test_targets.csv",
    ] {
        manifest.record_output(&out_dir.join(name));
    }
    manifest.timings_ms = timer.timings;
    manifest.write(&out_dir.join("manifest.json"))?;

    println!("mode = {}", setup.cfg.mode.name());
    println!("rows = {}", outcome.rows.len());
    println!("best_round = {}", outcome.best_round);
    print!("{}", metrics_line(&outcome.test));
    Ok(())
}

/// The full effective config (training keys plus data paths).
fn render_effective(setup: &Setup) -> String {
    let mut kv = setup.cfg.to_kv();
    kv.set("log", setup.log_path.display());
    kv.set("catalog", setup.catalog_path.display());
    if let Some(r) = setup.kv.get("negative_ratio") {
        kv.set("negative_ratio", r);
    }
    kv.render()
}

fn metrics_line(m: &trainer::SplitMetrics) -> String {
    format!(
        "auc,logloss,ne,rig\n{:.6},{:.6},{:.6},{:.6}\n",
        m.auc, m.logloss, m.ne, m.rig
    )
}

fn split_by_name<'a>(data: &'a TrainData, split: &str) -> anyhow::Result<&'a [PredictionTarget]> {
    match split {
        "train" => Ok(&data.train),
        "valid" => Ok(&data.valid),
        "test" => Ok(&data.test),
        other => bail!("unknown split `{other}` (expected train|valid|test)"),
    }
}

fn load_model(setup: &Setup, checkpoint: &Path) -> anyhow::Result<(ModelDims, ParamStore)> {
    let dims = setup.data.dims(&setup.cfg);
    let mut store = ParamStore::new();
    trainer::register_all_params(&mut store, &dims, setup.cfg.seed)?;
    store
        .load_checkpoint(checkpoint)
        .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    Ok((dims, store))
}

pub fn eval(
    config: Option<&Path>,
    checkpoint: Option<&Path>,
    split: &str,
    scores: Option<&Path>,
) -> anyhow::Result<()> {
    if let Some(scores_path) = scores {
        let set = read_scores_csv(scores_path)?;
        print!("{}", scored_metrics_line(&set)?);
        return Ok(());
    }
    let (Some(config), Some(checkpoint)) = (config, checkpoint) else {
        bail!("eval needs either --scores or both --config and --checkpoint");
    };
    let setup = load_setup(config, None)?;
    let (dims, store) = load_model(&setup, checkpoint)?;
    let targets = split_by_name(&setup.data, split)?;
    let set = trainer::score_split(&setup.data, &store, &dims, &setup.cfg, targets)?;
    print!("{}", scored_metrics_line(&set)?);
    Ok(())
}

fn scored_metrics_line(set: &ScoredSet) -> anyhow::Result<String> {
    let m = trainer::split_metrics(set)?;
    Ok(metrics_line(&m))
}

/// Scores CSV: optional `score,label` header, then one `score,label` row per
/// example.
fn read_scores_csv(path: &Path) -> anyhow::Result<ScoredSet> {
    let text = std::fs::read_to_string(path)?;
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() || (i == 0 && line.starts_with("score")) {
            continue;
        }
        let (s, l) = line
            .split_once(',')
            .ok_or_else(|| anyhow!("line {}: expected `score,label`", i + 1))?;
        scores.push(s.trim().parse::<f64>().with_context(|| format!("line {}", i + 1))?);
        labels.push(l.trim().parse::<u8>().with_context(|| format!("line {}", i + 1))?);
    }
    Ok(ScoredSet::new(scores, labels)?)
}

pub fn retrieve(config_path: &Path, checkpoint: &Path, target_id: &str) -> anyhow::Result<()> {
    let setup = load_setup(config_path, None)?;
    let (dims, store) = load_model(&setup, checkpoint)?;
    let data = &setup.data;
    let cfg = &setup.cfg;

    let target = data
        .train
        .iter()
        .chain(&data.valid)
        .chain(&data.test)
        .find(|t| t.id == target_id)
        .ok_or_else(|| anyhow!("unknown target `{target_id}`"))?;

    println!("target {} label={} ts={}", target.id, target.label, target.timestamp);
    println!("user {}", target.user_token);

    let doc_ids = if cfg.mode.uses_retrieval() {
        let outcome = selector::select(&store, &dims, &data.vocab, target, cfg.likelihood, None)?;
        println!("selection probabilities:");
        for (token, (p, m)) in target
            .candidate_tokens()
            .iter()
            .zip(outcome.probs.iter().zip(&outcome.mask))
        {
            println!("  {token}  p={p:.4}  selected={m}");
        }
        println!(
            "query: {} AND ({})  log_prob={:.4}",
            outcome.query.user_token,
            outcome.query.feature_tokens.join(" OR "),
            outcome.log_prob
        );
        let retrieved = data.archive.search(&outcome.query, cfg.s, target.timestamp);
        println!("retrieved (bm25):");
        for (&doc_id, &score) in retrieved.doc_ids.iter().zip(&retrieved.scores) {
            print_doc(&data.archive, doc_id, Some(score));
        }
        retrieved.doc_ids
    } else {
        let ids = data.archive.recent(&target.user_token, cfg.s, target.timestamp);
        println!("recent behaviors:");
        for &doc_id in &ids {
            print_doc(&data.archive, doc_id, None);
        }
        ids
    };

    let batch = ubr_core::predictor::BehaviorBatch::from_docs(
        &data.archive,
        &data.vocab,
        &doc_ids,
        cfg.s,
        dims.n_fields,
    );
    let t_ids = ubr_core::predictor::target_ids(&data.vocab, target);
    let mut g = ubr_core::numeric::Graph::new();
    let out = ubr_core::predictor::forward_graph(
        &mut g,
        &store,
        &dims,
        &batch,
        &t_ids,
        !cfg.mode.uses_attention(),
    )?;
    let alpha = g.value(out.alpha).data().to_vec();
    let real = batch.real_count();
    println!("alpha:");
    let mut sorted_ids = doc_ids.clone();
    sorted_ids.sort_unstable();
    for (i, &a) in alpha.iter().take(real).enumerate() {
        println!("  doc {}  alpha={a:.6}", sorted_ids[i]);
    }
    println!("alpha_sum = {:.9}", alpha.iter().sum::<f64>());
    println!("yhat = {:.6}", g.value(out.yhat).item());
    Ok(())
}

fn print_doc(archive: &Archive, doc_id: u32, score: Option<f64>) {
    let tokens = archive.doc_tokens(doc_id).unwrap_or_default().join(",");
    let ts = archive.timestamp(doc_id).unwrap_or_default();
    match score {
        Some(s) => println!("  doc {doc_id}  score={s:.6}  ts={ts}  {tokens}"),
        None => println!("  doc {doc_id}  ts={ts}  {tokens}"),
    }
}
