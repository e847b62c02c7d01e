//! The feature-selection policy.
//!
//! Candidate features of a prediction target (every field except the user
//! id) are embedded, passed through multi-head self-attention and a small
//! per-feature MLP, and squashed to per-feature selection probabilities. A
//! subset is drawn by independent Bernoulli sampling (or thresholding at
//! inference time) and becomes the retrieval query together with the
//! mandatory user token.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::archive::Query;
use crate::config::ModelDims;
use crate::data::{PredictionTarget, Vocabulary};
use crate::numeric::{
    clamp_prob, Activation, Graph, LikelihoodMode, NodeId, NumericError, ParamStore, TensorInit,
};

pub const EMBED: &str = "sel.embed";

fn head_names(i: usize) -> (String, String, String) {
    (
        format!("sel.head{i}.wq"),
        format!("sel.head{i}.wk"),
        format!("sel.head{i}.wv"),
    )
}

/// All selector tensor names, the θ parameter group.
pub fn param_names(dims: &ModelDims) -> Vec<String> {
    let mut names = vec![EMBED.to_string()];
    for i in 0..dims.heads {
        let (q, k, v) = head_names(i);
        names.extend([q, k, v]);
    }
    names.extend(
        ["sel.wo", "sel.mlp.w1", "sel.mlp.b1", "sel.mlp.w2", "sel.mlp.b2"]
            .map(str::to_string),
    );
    names
}

pub fn register_params(
    store: &mut ParamStore,
    dims: &ModelDims,
    rng: &mut ChaCha8Rng,
) -> Result<(), NumericError> {
    let d = dims.embed_dim;
    store.register(EMBED, dims.vocab_size, d, TensorInit::Embedding, rng)?;
    for i in 0..dims.heads {
        let (q, k, v) = head_names(i);
        for name in [q, k, v] {
            store.register(&name, d, d, TensorInit::DenseWeight { fan_in: d }, rng)?;
        }
    }
    store.register(
        "sel.wo",
        dims.heads * d,
        d,
        TensorInit::DenseWeight { fan_in: dims.heads * d },
        rng,
    )?;
    store.register(
        "sel.mlp.w1",
        d,
        dims.sel_hidden,
        TensorInit::DenseWeight { fan_in: d },
        rng,
    )?;
    store.register("sel.mlp.b1", 1, dims.sel_hidden, TensorInit::Zeros, rng)?;
    store.register(
        "sel.mlp.w2",
        dims.sel_hidden,
        1,
        TensorInit::DenseWeight { fan_in: dims.sel_hidden },
        rng,
    )?;
    store.register("sel.mlp.b2", 1, 1, TensorInit::Zeros, rng)?;
    Ok(())
}

/// Build the probability head P = sigmoid(MLP(Multihead(X, X, X))) over the
/// candidate features. Returns the K_q x 1 probability node.
pub fn probs_graph(
    g: &mut Graph,
    store: &ParamStore,
    dims: &ModelDims,
    candidate_ids: &[u32],
) -> Result<NodeId, NumericError> {
    assert!(!candidate_ids.is_empty(), "no candidate features");
    let x = g.gather(store, EMBED, candidate_ids)?;
    let scale = 1.0 / (dims.embed_dim as f64).sqrt();

    let mut heads = Vec::with_capacity(dims.heads);
    for i in 0..dims.heads {
        let (qn, kn, vn) = head_names(i);
        let wq = g.param(store, &qn)?;
        let wk = g.param(store, &kn)?;
        let wv = g.param(store, &vn)?;
        let q = g.matmul(x, wq);
        let k = g.matmul(x, wk);
        let v = g.matmul(x, wv);
        let scores = g.matmul_nt(q, k);
        let scaled = g.scale(scores, scale);
        let attn = g.softmax_rows(scaled);
        heads.push(g.matmul(attn, v));
    }
    let concat = if heads.len() == 1 {
        heads[0]
    } else {
        g.concat_cols(&heads)
    };
    let wo = g.param(store, "sel.wo")?;
    let e = g.matmul(concat, wo);
    let hidden = g.dense(store, "sel.mlp.w1", Some("sel.mlp.b1"), e, Activation::Relu)?;
    let logits = g.dense(store, "sel.mlp.w2", Some("sel.mlp.b2"), hidden, Activation::None)?;
    Ok(g.sigmoid(logits))
}

/// Forward-only selection probabilities for a target's candidate features.
pub fn selection_probs(
    store: &ParamStore,
    dims: &ModelDims,
    vocab: &Vocabulary,
    target: &PredictionTarget,
) -> Result<Vec<f64>, NumericError> {
    let ids = candidate_ids(vocab, target);
    let mut g = Graph::new();
    let p = probs_graph(&mut g, store, dims, &ids)?;
    Ok(g.value(p).data().to_vec())
}

pub fn candidate_ids(vocab: &Vocabulary, target: &PredictionTarget) -> Vec<u32> {
    target
        .candidate_tokens()
        .iter()
        .map(|t| vocab.id(t))
        .collect()
}

/// A drawn (or thresholded) feature subset with its log-probability and the
/// query it induces.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionOutcome {
    pub probs: Vec<f64>,
    pub mask: Vec<bool>,
    pub log_prob: f64,
    pub query: Query,
}

/// Independent Bernoulli draws from the selection probabilities. If nothing
/// is drawn, the single highest-probability feature is force-selected (ties
/// to the lowest index); the log-probability is computed from the final mask.
pub fn sample_mask(probs: &[f64], rng: &mut ChaCha8Rng) -> Vec<bool> {
    let mut mask = bernoulli_mask(probs, rng);
    force_nonempty(probs, &mut mask);
    mask
}

/// The raw Bernoulli stage of [`sample_mask`], without the non-empty
/// guarantee.
pub fn bernoulli_mask(probs: &[f64], rng: &mut ChaCha8Rng) -> Vec<bool> {
    probs.iter().map(|&p| rng.gen::<f64>() < p).collect()
}

/// Deterministic inference-time subset: p_i >= 0.5.
pub fn threshold_mask(probs: &[f64]) -> Vec<bool> {
    let mut mask: Vec<bool> = probs.iter().map(|&p| p >= 0.5).collect();
    force_nonempty(probs, &mut mask);
    mask
}

fn force_nonempty(probs: &[f64], mask: &mut [bool]) {
    if mask.iter().any(|&m| m) {
        return;
    }
    let top = probs
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then_with(|| b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .expect("nonempty probability vector");
    mask[top] = true;
}

/// Log-probability of a mask under the configured likelihood mode, matching
/// the training graph's value bit for bit.
pub fn log_prob_of(probs: &[f64], mask: &[bool], mode: LikelihoodMode) -> f64 {
    debug_assert_eq!(probs.len(), mask.len());
    let mut ll = 0.0;
    for (&p, &m) in probs.iter().zip(mask) {
        let pc = clamp_prob(p);
        if m {
            ll += pc.ln();
        } else if mode == LikelihoodMode::Bernoulli {
            ll += (1.0 - pc).ln();
        }
    }
    ll
}

/// Form the boolean query: the user token plus the selected candidate tokens
/// in canonical order.
pub fn build_query(target: &PredictionTarget, mask: &[bool], log_prob: f64) -> Query {
    let candidates = target.candidate_tokens();
    debug_assert_eq!(candidates.len(), mask.len());
    Query {
        user_token: target.user_token.clone(),
        feature_tokens: candidates
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(t, _)| t.to_string())
            .collect(),
        log_prob,
    }
}

/// One-stop selection: probabilities, subset (sampled when `rng` is given,
/// thresholded otherwise), log-probability, and query.
pub fn select(
    store: &ParamStore,
    dims: &ModelDims,
    vocab: &Vocabulary,
    target: &PredictionTarget,
    mode: LikelihoodMode,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<SelectionOutcome, NumericError> {
    let probs = selection_probs(store, dims, vocab, target)?;
    let mask = match rng {
        Some(rng) => sample_mask(&probs, rng),
        None => threshold_mask(&probs),
    };
    let log_prob = log_prob_of(&probs, &mask, mode);
    let query = build_query(target, &mask, log_prob);
    Ok(SelectionOutcome {
        probs,
        mask,
        log_prob,
        query,
    })
}
