//! Alternating training of the selection policy and the prediction network.
//!
//! The predictor is pre-trained against retrievals from the freshly
//! initialized selector, then the two models take turns: one selector epoch
//! (REINFORCE over sampled feature subsets, rewarded by per-example relative
//! information gain against the frozen predictor), a query regeneration pass,
//! and one predictor epoch (cross entropy plus L2). Validation AUC drives
//! early stopping; the best round's parameters are restored at the end.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::archive::Archive;
use crate::config::{ConfigError, KvConfig, ModelDims};
use crate::data::{DataError, DatasetSchema, PredictionTarget, SplitOutput, Vocabulary};
use crate::metrics::{self, MetricError, ScoredSet};
use crate::numeric::{
    clamp_prob, Direction, Graph, LikelihoodMode, NumericError, ParamStore, Sgd,
};
use crate::predictor::{self, BehaviorBatch, PredictorError};
use crate::rng::stream_rng;
use crate::selector;

/// Hyperparameter grids: the search spaces the defaults are drawn from.
pub const SELECTOR_LR_GRID: [f64; 3] = [1e-6, 1e-5, 1e-4];
pub const PREDICTOR_LR_GRID: [f64; 3] = [1e-4, 5e-4, 1e-3];
pub const LAMBDA_GRID: [f64; 3] = [1e-4, 5e-4, 1e-3];
pub const BATCH_SIZE_GRID: [usize; 2] = [100, 200];

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("average CTR {0} outside (0, 1); cannot form rewards")]
    DegenerateCtr(f64),
    #[error("target `{0}` has no label")]
    MissingLabel(String),
    #[error("training diverged (non-finite loss) in {phase} of round {round}")]
    Diverged { phase: &'static str, round: usize },
}

/// The four framework variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Learned retrieval + attention pooling.
    Ubr,
    /// Most recent S behaviors + attention pooling.
    RecentN,
    /// Most recent S behaviors + unweighted sum pooling.
    SumPooling,
    /// Learned retrieval + unweighted sum pooling.
    UbrSumPooling,
}

impl Mode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ubr" => Some(Self::Ubr),
            "recent_n" => Some(Self::RecentN),
            "sum_pooling" => Some(Self::SumPooling),
            "ubr_sum_pooling" => Some(Self::UbrSumPooling),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Ubr => "ubr",
            Self::RecentN => "recent_n",
            Self::SumPooling => "sum_pooling",
            Self::UbrSumPooling => "ubr_sum_pooling",
        }
    }

    /// Whether behaviors come from learned retrieval (vs. recency).
    pub fn uses_retrieval(&self) -> bool {
        matches!(self, Self::Ubr | Self::UbrSumPooling)
    }

    /// Whether pooling weights come from the scoring network.
    pub fn uses_attention(&self) -> bool {
        matches!(self, Self::Ubr | Self::RecentN)
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub mode: Mode,
    pub seed: u64,
    /// Retrieval size S.
    pub s: usize,
    /// Sampled subsets per target in a selector step (L).
    pub l_samples: usize,
    pub lr_selector: f64,
    pub lr_predictor: f64,
    pub lambda: f64,
    pub batch_size: usize,
    pub max_rounds: usize,
    pub patience: usize,
    pub embed_dim: usize,
    pub heads: usize,
    /// SGD momentum; 0 is plain SGD.
    pub momentum: f64,
    /// Reward baseline (EMA) for variance reduction; off reproduces raw
    /// REINFORCE.
    pub baseline: bool,
    pub baseline_decay: f64,
    pub pretrain_epochs: usize,
    pub likelihood: LikelihoodMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Ubr,
            seed: 1,
            s: 12,
            l_samples: 1,
            lr_selector: 1e-4,
            lr_predictor: 1e-3,
            lambda: 1e-4,
            batch_size: 100,
            max_rounds: 10,
            patience: 3,
            embed_dim: 16,
            heads: 2,
            momentum: 0.9,
            baseline: true,
            baseline_decay: 0.99,
            pretrain_epochs: 1,
            likelihood: LikelihoodMode::Bernoulli,
        }
    }
}

impl TrainConfig {
    pub fn from_kv(kv: &KvConfig) -> Result<Self, TrainError> {
        let d = Self::default();
        let mode_str = kv.get("mode").unwrap_or("ubr");
        let mode = Mode::parse(mode_str)
            .ok_or_else(|| TrainError::BadConfig(format!("unknown mode `{mode_str}`")))?;
        let lik_str = kv.get("likelihood").unwrap_or("bernoulli");
        let likelihood = LikelihoodMode::parse(lik_str)
            .ok_or_else(|| TrainError::BadConfig(format!("unknown likelihood `{lik_str}`")))?;
        let cfg = Self {
            mode,
            seed: kv.get_u64("seed", d.seed)?,
            s: kv.get_usize("s", d.s)?,
            l_samples: kv.get_usize("l_samples", d.l_samples)?,
            lr_selector: kv.get_f64("lr_selector", d.lr_selector)?,
            lr_predictor: kv.get_f64("lr_predictor", d.lr_predictor)?,
            lambda: kv.get_f64("lambda", d.lambda)?,
            batch_size: kv.get_usize("batch_size", d.batch_size)?,
            max_rounds: kv.get_usize("max_rounds", d.max_rounds)?,
            patience: kv.get_usize("patience", d.patience)?,
            embed_dim: kv.get_usize("embed_dim", d.embed_dim)?,
            heads: kv.get_usize("heads", d.heads)?,
            momentum: kv.get_f64("momentum", d.momentum)?,
            baseline: kv.get_bool("baseline", d.baseline)?,
            baseline_decay: kv.get_f64("baseline_decay", d.baseline_decay)?,
            pretrain_epochs: kv.get_usize("pretrain_epochs", d.pretrain_epochs)?,
            likelihood,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.s == 0 {
            return Err(TrainError::BadConfig("s must be >= 1".into()));
        }
        if self.l_samples == 0 {
            return Err(TrainError::BadConfig("l_samples must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::BadConfig("batch_size must be >= 1".into()));
        }
        if self.embed_dim == 0 || self.heads == 0 {
            return Err(TrainError::BadConfig("embed_dim and heads must be >= 1".into()));
        }
        for (name, v) in [
            ("lr_selector", self.lr_selector),
            ("lr_predictor", self.lr_predictor),
            ("lambda", self.lambda),
            ("momentum", self.momentum),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(TrainError::BadConfig(format!("{name} must be finite and >= 0")));
            }
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return Err(TrainError::BadConfig("baseline_decay must be in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::default();
        kv.set("mode", self.mode.name());
        kv.set("seed", self.seed);
        kv.set("s", self.s);
        kv.set("l_samples", self.l_samples);
        kv.set("lr_selector", self.lr_selector);
        kv.set("lr_predictor", self.lr_predictor);
        kv.set("lambda", self.lambda);
        kv.set("batch_size", self.batch_size);
        kv.set("max_rounds", self.max_rounds);
        kv.set("patience", self.patience);
        kv.set("embed_dim", self.embed_dim);
        kv.set("heads", self.heads);
        kv.set("momentum", self.momentum);
        kv.set("baseline", self.baseline);
        kv.set("baseline_decay", self.baseline_decay);
        kv.set("pretrain_epochs", self.pretrain_epochs);
        kv.set(
            "likelihood",
            match self.likelihood {
                LikelihoodMode::Bernoulli => "bernoulli",
                LikelihoodMode::SelectedOnly => "selected_only",
            },
        );
        kv
    }
}

/// Per-example reward: relative information gain of the log-likelihood `ll`
/// against the entropy of the average experienced CTR. Zero for a constant
/// predictor at `p_avg`, approaching one as `ll` approaches zero.
pub fn rig_reward(ll: f64, p_avg: f64) -> Result<f64, TrainError> {
    if !(0.0 < p_avg && p_avg < 1.0) {
        return Err(TrainError::DegenerateCtr(p_avg));
    }
    let denom = p_avg * p_avg.ln() + (1.0 - p_avg) * (1.0 - p_avg).ln();
    Ok(1.0 - ll / denom)
}

/// Running reward statistics for variance reduction.
#[derive(Debug, Clone)]
pub struct RewardState {
    pub p_avg: f64,
    pub baseline: f64,
    pub decay: f64,
    pub enabled: bool,
}

impl RewardState {
    pub fn new(p_avg: f64, cfg: &TrainConfig) -> Result<Self, TrainError> {
        if !(0.0 < p_avg && p_avg < 1.0) {
            return Err(TrainError::DegenerateCtr(p_avg));
        }
        Ok(Self {
            p_avg,
            baseline: 0.0,
            decay: cfg.baseline_decay,
            enabled: cfg.baseline,
        })
    }

    /// Advantage of a reward against the current baseline, then fold the
    /// reward into the running mean.
    pub fn advantage(&mut self, reward: f64) -> f64 {
        let adv = if self.enabled { reward - self.baseline } else { reward };
        if self.enabled {
            self.baseline = self.decay * self.baseline + (1.0 - self.decay) * reward;
        }
        adv
    }
}

/// Everything the loop needs for one dataset.
#[derive(Debug)]
pub struct TrainData {
    pub schema: DatasetSchema,
    pub archive: Archive,
    pub vocab: Vocabulary,
    pub train: Vec<PredictionTarget>,
    pub valid: Vec<PredictionTarget>,
    pub test: Vec<PredictionTarget>,
}

impl TrainData {
    /// Bundle a split (with negatives already sampled into the target lists)
    /// for training.
    pub fn new(
        schema: DatasetSchema,
        split: &SplitOutput,
        vocab: Vocabulary,
        train: Vec<PredictionTarget>,
        valid: Vec<PredictionTarget>,
        test: Vec<PredictionTarget>,
    ) -> Result<Self, TrainError> {
        let archive = crate::archive::build_index(&split.docs)
            .map_err(|e| TrainError::BadConfig(format!("archive build failed: {e}")))?;
        Ok(Self {
            schema,
            archive,
            vocab,
            train,
            valid,
            test,
        })
    }

    pub fn dims(&self, cfg: &TrainConfig) -> ModelDims {
        let n_fields = 1 + self.schema.item_fields.len() + crate::data::CONTEXT_FIELDS.len();
        ModelDims::new(self.vocab.len(), cfg.embed_dim, cfg.heads, n_fields)
    }
}

/// One row of the training report (metrics on the validation split after the
/// named phase).
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub epoch: usize,
    pub phase: String,
    pub auc: f64,
    pub logloss: f64,
    pub mean_reward: Option<f64>,
}

impl ReportRow {
    pub fn csv_header() -> &'static str {
        "epoch,phase,auc,logloss,mean_reward"
    }

    pub fn to_csv(&self) -> String {
        let reward = self
            .mean_reward
            .map_or(String::new(), |r| format!("{r:.6}"));
        format!(
            "{},{},{:.6},{:.6},{}",
            self.epoch, self.phase, self.auc, self.logloss, reward
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitMetrics {
    pub auc: f64,
    pub logloss: f64,
    pub ne: f64,
    pub rig: f64,
}

fn is_divergence(err: &TrainError) -> bool {
    matches!(
        err,
        TrainError::Diverged { .. }
            | TrainError::Numeric(NumericError::NonFiniteGrad(_))
            | TrainError::Numeric(NumericError::NonFiniteParam(_))
    )
}

#[derive(Debug)]
pub struct RunOutcome {
    pub store: ParamStore,
    pub rows: Vec<ReportRow>,
    pub test: SplitMetrics,
    pub best_round: usize,
    /// Set when training aborted on divergence; parameters are the last good
    /// snapshot.
    pub diverged: bool,
}

pub fn register_all_params(
    store: &mut ParamStore,
    dims: &ModelDims,
    seed: u64,
) -> Result<(), NumericError> {
    let mut rng = stream_rng(seed, "init");
    selector::register_params(store, dims, &mut rng)?;
    predictor::register_params(store, dims, &mut rng)?;
    Ok(())
}

/// Resolve the behaviors for a target under the given mode: learned
/// retrieval through the archive, or the most recent S.
pub fn behaviors_for_target(
    data: &TrainData,
    store: &ParamStore,
    dims: &ModelDims,
    cfg: &TrainConfig,
    target: &PredictionTarget,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Vec<u32>, TrainError> {
    if cfg.mode.uses_retrieval() {
        let outcome = selector::select(store, dims, &data.vocab, target, cfg.likelihood, rng)?;
        Ok(data
            .archive
            .search(&outcome.query, cfg.s, target.timestamp)
            .doc_ids)
    } else {
        Ok(data.archive.recent(&target.user_token, cfg.s, target.timestamp))
    }
}

/// Score a whole split deterministically. Targets are processed in chunks
/// that share one graph, which changes nothing numerically (each forward is
/// independent) but avoids re-copying the parameter tensors per target.
pub fn score_split(
    data: &TrainData,
    store: &ParamStore,
    dims: &ModelDims,
    cfg: &TrainConfig,
    targets: &[PredictionTarget],
) -> Result<ScoredSet, TrainError> {
    let mut scores = Vec::with_capacity(targets.len());
    let mut labels = Vec::with_capacity(targets.len());
    for chunk in targets.chunks(256) {
        let mut g = Graph::new();
        for t in chunk {
            let doc_ids = behaviors_for_target(data, store, dims, cfg, t, None)?;
            let batch =
                BehaviorBatch::from_docs(&data.archive, &data.vocab, &doc_ids, cfg.s, dims.n_fields);
            let t_ids = predictor::target_ids(&data.vocab, t);
            let out = predictor::forward_graph(
                &mut g,
                store,
                dims,
                &batch,
                &t_ids,
                !cfg.mode.uses_attention(),
            )?;
            scores.push(g.value(out.yhat).item());
            labels.push(t.label);
        }
    }
    Ok(ScoredSet::new(scores, labels)?)
}

pub fn split_metrics(set: &ScoredSet) -> Result<SplitMetrics, MetricError> {
    Ok(SplitMetrics {
        auc: metrics::auc(set)?,
        logloss: metrics::log_loss(set)?,
        ne: metrics::ne(set)?,
        rig: metrics::rig(set)?,
    })
}

fn shuffled_indices(n: usize, seed: u64, label: &str) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream_rng(seed, label));
    idx
}

/// Log-likelihood of a label under a predicted probability (clamped).
fn log_likelihood(yhat: f64, label: u8) -> f64 {
    let p = clamp_prob(yhat);
    if label == 1 {
        p.ln()
    } else {
        (1.0 - p).ln()
    }
}

/// One REINFORCE epoch over the training targets with the predictor frozen.
/// Returns the mean reward. θ ascends; φ is untouched.
pub fn selector_epoch(
    data: &TrainData,
    store: &mut ParamStore,
    dims: &ModelDims,
    cfg: &TrainConfig,
    reward_state: &mut RewardState,
    optimizer: &mut Sgd,
    round: usize,
) -> Result<f64, TrainError> {
    let order = shuffled_indices(data.train.len(), cfg.seed, &format!("sel-shuffle-{round}"));
    let mut sample_rng = stream_rng(cfg.seed, &format!("sel-sample-{round}"));

    let mut reward_sum = 0.0;
    let mut reward_count = 0usize;
    for chunk in order.chunks(cfg.batch_size) {
        let mut g = Graph::new();
        let mut example_losses = Vec::with_capacity(chunk.len());
        for &idx in chunk {
            let target = &data.train[idx];
            let candidate_ids = selector::candidate_ids(&data.vocab, target);
            let p_node = selector::probs_graph(&mut g, store, dims, &candidate_ids)?;
            let probs = g.value(p_node).data().to_vec();

            let mut sample_losses = Vec::with_capacity(cfg.l_samples);
            for _ in 0..cfg.l_samples {
                let mask = selector::sample_mask(&probs, &mut sample_rng);
                let log_prob = selector::log_prob_of(&probs, &mask, cfg.likelihood);
                let query = selector::build_query(target, &mask, log_prob);
                let doc_ids = data.archive.search(&query, cfg.s, target.timestamp).doc_ids;
                let batch =
                    BehaviorBatch::from_docs(&data.archive, &data.vocab, &doc_ids, cfg.s, dims.n_fields);
                let t_ids = predictor::target_ids(&data.vocab, target);
                // Reward forward: value-only nodes in the shared batch graph.
                // No path connects them to the selector loss, so backward
                // never touches the predictor parameters.
                let fwd = predictor::forward_graph(
                    &mut g,
                    store,
                    dims,
                    &batch,
                    &t_ids,
                    !cfg.mode.uses_attention(),
                )?;
                let yhat = g.value(fwd.yhat).item();
                let reward = rig_reward(log_likelihood(yhat, target.label), reward_state.p_avg)?;
                if !reward.is_finite() {
                    log::warn!("skipping target {}: non-finite reward", target.id);
                    continue;
                }
                reward_sum += reward;
                reward_count += 1;
                let advantage = reward_state.advantage(reward);
                // Ascend advantage * log pi: minimize the negation.
                let lp_node = g.bernoulli_log_prob(p_node, &mask, cfg.likelihood);
                sample_losses.push(g.scale(lp_node, -advantage));
            }
            if !sample_losses.is_empty() {
                let sum = g.add_n(&sample_losses);
                example_losses.push(g.scale(sum, 1.0 / cfg.l_samples as f64));
            }
        }
        if example_losses.is_empty() {
            continue;
        }
        let total = g.add_n(&example_losses);
        let loss = g.scale(total, 1.0 / example_losses.len() as f64);
        if !g.value(loss).item().is_finite() {
            return Err(TrainError::Diverged {
                phase: "selector",
                round,
            });
        }
        g.backward(loss);
        g.write_grads(store);
        optimizer.step(store, cfg.lr_selector, Direction::Minimize)?;
    }
    Ok(if reward_count == 0 {
        0.0
    } else {
        reward_sum / reward_count as f64
    })
}

/// Regenerate the retrieved behaviors of every training target with the
/// current (frozen) selector, sampling one subset per target.
pub fn regenerate_retrievals(
    data: &TrainData,
    store: &ParamStore,
    dims: &ModelDims,
    cfg: &TrainConfig,
    round: usize,
) -> Result<Vec<Vec<u32>>, TrainError> {
    let mut rng = stream_rng(cfg.seed, &format!("requery-{round}"));
    data.train
        .iter()
        .map(|t| behaviors_for_target(data, store, dims, cfg, t, Some(&mut rng)))
        .collect()
}

/// One cross-entropy epoch over the training targets with fixed retrievals.
/// φ descends; θ is untouched. Returns the mean batch loss.
pub fn predictor_epoch(
    data: &TrainData,
    store: &mut ParamStore,
    dims: &ModelDims,
    cfg: &TrainConfig,
    retrievals: &[Vec<u32>],
    optimizer: &mut Sgd,
    round: usize,
) -> Result<f64, TrainError> {
    for t in &data.train {
        if t.label > 1 {
            return Err(TrainError::MissingLabel(t.id.clone()));
        }
    }
    let order = shuffled_indices(data.train.len(), cfg.seed, &format!("pred-shuffle-{round}"));
    let mut loss_sum = 0.0;
    let mut batches = 0usize;
    for chunk in order.chunks(cfg.batch_size) {
        let mut g = Graph::new();
        let mut bces = Vec::with_capacity(chunk.len());
        for &idx in chunk {
            let target = &data.train[idx];
            let batch = BehaviorBatch::from_docs(
                &data.archive,
                &data.vocab,
                &retrievals[idx],
                cfg.s,
                dims.n_fields,
            );
            let t_ids = predictor::target_ids(&data.vocab, target);
            let out = predictor::forward_graph(
                &mut g,
                store,
                dims,
                &batch,
                &t_ids,
                !cfg.mode.uses_attention(),
            )?;
            bces.push(g.bce(out.yhat, f64::from(target.label)));
        }
        let sum = g.add_n(&bces);
        let mean = g.scale(sum, 1.0 / bces.len() as f64);
        let loss = predictor::add_regularizer(&mut g, store, mean, cfg.lambda)?;
        let loss_value = g.value(loss).item();
        if !loss_value.is_finite() {
            return Err(TrainError::Diverged {
                phase: "predictor",
                round,
            });
        }
        loss_sum += loss_value;
        batches += 1;
        g.backward(loss);
        g.write_grads(store);
        optimizer.step(store, cfg.lr_predictor, Direction::Minimize)?;
    }
    Ok(if batches == 0 { 0.0 } else { loss_sum / batches as f64 })
}

/// Train end to end: pre-train, alternate, early-stop on validation AUC,
/// restore the best round, and evaluate the test split.
pub fn run(data: &TrainData, cfg: &TrainConfig) -> Result<RunOutcome, TrainError> {
    cfg.validate()?;
    let dims = data.dims(cfg);
    let mut store = ParamStore::new();
    register_all_params(&mut store, &dims, cfg.seed)?;

    let p_avg = ScoredSet::new(vec![0.5; data.train.len()], data.train.iter().map(|t| t.label).collect())
        .map(|s| s.ctr())
        .unwrap_or(0.0);
    let mut reward_state = RewardState::new(p_avg, cfg)?;
    let mut sel_opt = Sgd::new(cfg.momentum);
    let mut pred_opt = Sgd::new(cfg.momentum);

    let mut rows: Vec<ReportRow> = Vec::new();
    let mut epoch = 0usize;
    let mut best_auc = f64::NEG_INFINITY;
    let mut best_round = 0usize;
    let mut best_snapshot = store.snapshot(|_| true);
    let mut patience_left = cfg.patience;
    let mut diverged = false;

    let eval_valid = |store: &ParamStore,
                          rows: &mut Vec<ReportRow>,
                          epoch: &mut usize,
                          phase: &str,
                          reward: Option<f64>|
     -> Result<f64, TrainError> {
        let set = score_split(data, store, &dims, cfg, &data.valid)?;
        let m = split_metrics(&set)?;
        *epoch += 1;
        rows.push(ReportRow {
            epoch: *epoch,
            phase: phase.to_string(),
            auc: m.auc,
            logloss: m.logloss,
            mean_reward: reward,
        });
        Ok(m.auc)
    };

    // Pre-train the predictor against the initialized selector's retrievals.
    'outer: {
        for e in 0..cfg.pretrain_epochs {
            let retrievals = regenerate_retrievals(data, &store, &dims, cfg, 0)?;
            match predictor_epoch(data, &mut store, &dims, cfg, &retrievals, &mut pred_opt, 0) {
                Ok(_) => {}
                Err(e) if is_divergence(&e) => {
                    log::error!("pretrain diverged: {e}");
                    diverged = true;
                    break 'outer;
                }
                Err(e) => return Err(e),
            }
            let auc = eval_valid(&store, &mut rows, &mut epoch, "pretrain", None)?;
            if e == cfg.pretrain_epochs - 1 || auc > best_auc {
                best_auc = auc;
                best_snapshot = store.snapshot(|_| true);
            }
        }

        for round in 1..=cfg.max_rounds {
            if cfg.mode.uses_retrieval() {
                let mean_reward = match selector_epoch(
                    data,
                    &mut store,
                    &dims,
                    cfg,
                    &mut reward_state,
                    &mut sel_opt,
                    round,
                ) {
                    Ok(r) => r,
                    Err(e) if is_divergence(&e) => {
                        log::error!("selector epoch diverged: {e}");
                        diverged = true;
                        break 'outer;
                    }
                    Err(e) => return Err(e),
                };
                eval_valid(&store, &mut rows, &mut epoch, "selector", Some(mean_reward))?;
            }

            let retrievals = regenerate_retrievals(data, &store, &dims, cfg, round)?;
            match predictor_epoch(data, &mut store, &dims, cfg, &retrievals, &mut pred_opt, round) {
                Ok(_) => {}
                Err(e) if is_divergence(&e) => {
                    log::error!("predictor epoch diverged: {e}");
                    diverged = true;
                    break 'outer;
                }
                Err(e) => return Err(e),
            }
            let auc = eval_valid(&store, &mut rows, &mut epoch, "predictor", None)?;

            if auc > best_auc {
                best_auc = auc;
                best_round = round;
                best_snapshot = store.snapshot(|_| true);
                patience_left = cfg.patience;
            } else if patience_left == 0 {
                log::info!("early stop after round {round} (best round {best_round})");
                break;
            } else {
                patience_left -= 1;
            }
        }
    }

    store.restore(&best_snapshot);
    let test_set = score_split(data, &store, &dims, cfg, &data.test)?;
    let test = split_metrics(&test_set)?;
    Ok(RunOutcome {
        store,
        rows,
        test,
        best_round,
        diverged,
    })
}

/// The canonical ingestion pipeline: temporal split, negative sampling on
/// every split (ratio 1), vocabulary, archive.
pub fn prepare_data(
    schema: DatasetSchema,
    records: &[crate::data::BehaviorLogRecord],
    catalog: &[crate::data::CatalogItem],
    negative_ratio: usize,
    seed: u64,
) -> Result<TrainData, TrainError> {
    let split = crate::data::temporal_split(&schema, records);
    if split.train.is_empty() {
        return Err(TrainError::BadConfig(
            "no user has the 4 behaviors a temporal split needs".into(),
        ));
    }
    let clicked = crate::data::clicked_items(&schema, records);
    let mut rng = stream_rng(seed, "negatives");
    let train =
        crate::data::sample_negatives(&schema, &split.train, &clicked, catalog, negative_ratio, &mut rng)?;
    let valid =
        crate::data::sample_negatives(&schema, &split.valid, &clicked, catalog, negative_ratio, &mut rng)?;
    let test =
        crate::data::sample_negatives(&schema, &split.test, &clicked, catalog, negative_ratio, &mut rng)?;
    let vocab = crate::data::build_vocabulary(&schema, &split, catalog);
    TrainData::new(schema, &split, vocab, train, valid, test)
}

/// Render the per-epoch report as CSV, bit-stable for a fixed run.
pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from(ReportRow::csv_header());
    out.push('\n');
    for row in rows {
        out.push_str(&row.to_csv());
        out.push('\n');
    }
    out
}

/// Distinct users mentioned by a target list (used for sanity reporting).
pub fn distinct_users(targets: &[PredictionTarget]) -> usize {
    targets
        .iter()
        .map(|t| t.user_token.as_str())
        .collect::<HashSet<_>>()
        .len()
}
