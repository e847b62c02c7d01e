//! Attention-based click-probability prediction.
//!
//! Each retrieved behavior and the prediction target are embedded as the
//! concatenation of their per-field embeddings in canonical order. A scoring
//! network rates every behavior against the target, the scores are
//! softmax-normalized into attention weights, the behaviors are pooled into a
//! user representation, and a 200-80-1 MLP with a sigmoid output maps the
//! pooled representation plus the target to a click probability.

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::archive::Archive;
use crate::config::ModelDims;
use crate::data::{PredictionTarget, Vocabulary};
use crate::numeric::{
    Activation, Graph, NodeId, NumericError, ParamStore, Tensor, TensorInit,
};

pub const EMBED: &str = "pred.embed";

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error("no unmasked behaviors to attend over")]
    AllMasked,
    #[error("behavior embedding has {got} values, expected {expected}")]
    BadEmbeddingWidth { got: usize, expected: usize },
}

/// Parameter names of the φ group (embeddings plus both dense stacks).
pub fn param_names(_dims: &ModelDims) -> Vec<String> {
    let mut names = vec![EMBED.to_string()];
    names.extend(DENSE_PARAMS.iter().map(|s| s.to_string()));
    names
}

const DENSE_PARAMS: [&str; 12] = [
    "pred.att.w1",
    "pred.att.b1",
    "pred.att.w2",
    "pred.att.b2",
    "pred.att.w3",
    "pred.att.b3",
    "pred.mlp.w1",
    "pred.mlp.b1",
    "pred.mlp.w2",
    "pred.mlp.b2",
    "pred.mlp.w3",
    "pred.mlp.b3",
];

/// The tensors covered by the L2 regularizer: the dense layers only,
/// embedding tables excluded.
pub fn regularized_params() -> &'static [&'static str] {
    &DENSE_PARAMS
}

pub fn register_params(
    store: &mut ParamStore,
    dims: &ModelDims,
    rng: &mut ChaCha8Rng,
) -> Result<(), NumericError> {
    let d = dims.embed_dim;
    let field_vec = dims.field_vec();
    store.register(EMBED, dims.vocab_size, d, TensorInit::Embedding, rng)?;

    let att_in = 2 * field_vec;
    let (a1, a2) = dims.att_hidden;
    store.register("pred.att.w1", att_in, a1, TensorInit::DenseWeight { fan_in: att_in }, rng)?;
    store.register("pred.att.b1", 1, a1, TensorInit::Zeros, rng)?;
    store.register("pred.att.w2", a1, a2, TensorInit::DenseWeight { fan_in: a1 }, rng)?;
    store.register("pred.att.b2", 1, a2, TensorInit::Zeros, rng)?;
    store.register("pred.att.w3", a2, 1, TensorInit::DenseWeight { fan_in: a2 }, rng)?;
    store.register("pred.att.b3", 1, 1, TensorInit::Zeros, rng)?;

    let mlp_in = 2 * field_vec;
    let (m1, m2) = dims.mlp_hidden;
    store.register("pred.mlp.w1", mlp_in, m1, TensorInit::DenseWeight { fan_in: mlp_in }, rng)?;
    store.register("pred.mlp.b1", 1, m1, TensorInit::Zeros, rng)?;
    store.register("pred.mlp.w2", m1, m2, TensorInit::DenseWeight { fan_in: m1 }, rng)?;
    store.register("pred.mlp.b2", 1, m2, TensorInit::Zeros, rng)?;
    store.register("pred.mlp.w3", m2, 1, TensorInit::DenseWeight { fan_in: m2 }, rng)?;
    store.register("pred.mlp.b3", 1, 1, TensorInit::Zeros, rng)?;
    Ok(())
}

/// Behaviors fed to one forward pass: the token ids of each retrieved
/// behavior (padded to length S with the reserved id 0) and the padding mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BehaviorBatch {
    /// Per behavior: vocab ids of its fields in canonical order.
    pub field_ids: Vec<Vec<u32>>,
    /// True for real behaviors, false for padding rows.
    pub mask: Vec<bool>,
}

impl BehaviorBatch {
    /// Resolve retrieved doc ids against the archive and vocabulary, pad to
    /// `s`, and canonicalize input order by ascending doc id so the pipeline
    /// output does not depend on the retrieval ordering.
    pub fn from_docs(
        archive: &Archive,
        vocab: &Vocabulary,
        doc_ids: &[u32],
        s: usize,
        n_fields: usize,
    ) -> Self {
        let mut sorted: Vec<u32> = doc_ids.to_vec();
        sorted.sort_unstable();
        let mut field_ids = Vec::with_capacity(s);
        let mut mask = Vec::with_capacity(s);
        for &doc_id in sorted.iter().take(s) {
            let tokens = archive.doc_tokens(doc_id).unwrap_or_default();
            field_ids.push(tokens.iter().map(|t| vocab.id(t)).collect());
            mask.push(true);
        }
        while field_ids.len() < s {
            field_ids.push(vec![0; n_fields]);
            mask.push(false);
        }
        Self { field_ids, mask }
    }

    pub fn real_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Target token ids in canonical field order.
pub fn target_ids(vocab: &Vocabulary, target: &PredictionTarget) -> Vec<u32> {
    target.field_tokens().iter().map(|t| vocab.id(t)).collect()
}

/// Output nodes of one prediction forward pass.
pub struct ForwardNodes {
    pub yhat: NodeId,
    /// Attention weights (1 x S); all ones over real rows in sum-pooling
    /// mode.
    pub alpha: NodeId,
    pub pooled: NodeId,
}

/// Build the prediction network over a stacked behavior matrix.
///
/// `b_stack` is S x field_vec (one embedded behavior per row), `t_row` is the
/// embedded target. In sum-pooling mode the attention weights are fixed to 1
/// on every unmasked row (an unnormalized sum).
pub fn forward_stacked(
    g: &mut Graph,
    store: &ParamStore,
    b_stack: NodeId,
    t_row: NodeId,
    mask: &[bool],
    sum_pooling: bool,
) -> Result<ForwardNodes, PredictorError> {
    if !mask.iter().any(|&m| m) {
        return Err(PredictorError::AllMasked);
    }
    let alpha = if sum_pooling {
        let weights: Vec<f64> = mask.iter().map(|&m| f64::from(m)).collect();
        g.input(Tensor::from_vec(1, mask.len(), weights))
    } else {
        let tiled = g.tile_rows(t_row, mask.len());
        let pairs = g.concat_cols(&[b_stack, tiled]);
        let h1 = g.dense(store, "pred.att.w1", Some("pred.att.b1"), pairs, Activation::Relu)?;
        let h2 = g.dense(store, "pred.att.w2", Some("pred.att.b2"), h1, Activation::Relu)?;
        let w = g.dense(store, "pred.att.w3", Some("pred.att.b3"), h2, Activation::None)?;
        let w_row = g.reshape(w, 1, mask.len());
        g.masked_softmax(w_row, mask)
    };
    let pooled = g.matmul(alpha, b_stack);
    let head_in = g.concat_cols(&[pooled, t_row]);
    let h1 = g.dense(store, "pred.mlp.w1", Some("pred.mlp.b1"), head_in, Activation::Relu)?;
    let h2 = g.dense(store, "pred.mlp.w2", Some("pred.mlp.b2"), h1, Activation::Relu)?;
    let yhat = g.dense(store, "pred.mlp.w3", Some("pred.mlp.b3"), h2, Activation::Sigmoid)?;
    Ok(ForwardNodes {
        yhat,
        alpha,
        pooled,
    })
}

/// [`forward_stacked`] over individually embedded behavior rows.
pub fn forward_from_rows(
    g: &mut Graph,
    store: &ParamStore,
    b_rows: &[NodeId],
    t_row: NodeId,
    mask: &[bool],
    sum_pooling: bool,
) -> Result<ForwardNodes, PredictorError> {
    let b_stack = g.concat_rows(b_rows);
    forward_stacked(g, store, b_stack, t_row, mask, sum_pooling)
}

/// Build the full forward pass from token ids (embedding lookups included).
pub fn forward_graph(
    g: &mut Graph,
    store: &ParamStore,
    dims: &ModelDims,
    behaviors: &BehaviorBatch,
    target_field_ids: &[u32],
    sum_pooling: bool,
) -> Result<ForwardNodes, PredictorError> {
    let all_ids: Vec<u32> = behaviors.field_ids.iter().flatten().copied().collect();
    let be = g.gather(store, EMBED, &all_ids)?;
    let b_stack = g.reshape(be, behaviors.field_ids.len(), dims.field_vec());
    let te = g.gather(store, EMBED, target_field_ids)?;
    let t_row = g.reshape(te, 1, dims.field_vec());
    forward_stacked(g, store, b_stack, t_row, &behaviors.mask, sum_pooling)
}

/// Forward-only click probability.
pub fn predict_value(
    store: &ParamStore,
    dims: &ModelDims,
    behaviors: &BehaviorBatch,
    target_field_ids: &[u32],
    sum_pooling: bool,
) -> Result<f64, PredictorError> {
    let mut g = Graph::new();
    let out = forward_graph(&mut g, store, dims, behaviors, target_field_ids, sum_pooling)?;
    Ok(g.value(out.yhat).item())
}

/// Attention weights over raw behavior embeddings (padding rows get exactly
/// zero weight).
pub fn attention_weights(
    store: &ParamStore,
    dims: &ModelDims,
    behaviors: &[Vec<f64>],
    target: &[f64],
    mask: &[bool],
) -> Result<Vec<f64>, PredictorError> {
    let mut g = Graph::new();
    let b_rows = embed_rows(&mut g, dims, behaviors)?;
    let t_row = g.input(Tensor::from_vec(1, dims.field_vec(), target.to_vec()));
    let out = forward_from_rows(&mut g, store, &b_rows, t_row, mask, false)?;
    Ok(g.value(out.alpha).data().to_vec())
}

/// Weighted sum pooling r = Σ α_i b_i.
pub fn user_repr(behaviors: &[Vec<f64>], alpha: &[f64]) -> Vec<f64> {
    assert_eq!(behaviors.len(), alpha.len(), "length mismatch");
    let width = behaviors.first().map_or(0, Vec::len);
    let mut out = vec![0.0; width];
    for (b, &a) in behaviors.iter().zip(alpha) {
        for (o, &v) in out.iter_mut().zip(b) {
            *o += a * v;
        }
    }
    out
}

/// Click probability from a pooled representation and an embedded target.
pub fn predict(
    store: &ParamStore,
    dims: &ModelDims,
    pooled: &[f64],
    target: &[f64],
) -> Result<f64, PredictorError> {
    let expected = dims.field_vec();
    if pooled.len() != expected || target.len() != expected {
        return Err(PredictorError::BadEmbeddingWidth {
            got: pooled.len().max(target.len()),
            expected,
        });
    }
    let mut g = Graph::new();
    let head_in = g.input(Tensor::from_vec(
        1,
        2 * expected,
        pooled.iter().chain(target).copied().collect(),
    ));
    let h1 = g.dense(store, "pred.mlp.w1", Some("pred.mlp.b1"), head_in, Activation::Relu)?;
    let h2 = g.dense(store, "pred.mlp.w2", Some("pred.mlp.b2"), h1, Activation::Relu)?;
    let yhat = g.dense(store, "pred.mlp.w3", Some("pred.mlp.b3"), h2, Activation::Sigmoid)?;
    Ok(g.value(yhat).item())
}

/// Cross-entropy loss with the L2 penalty (λ/2)·Σ‖Φ‖² over the dense-layer
/// parameters.
pub fn ce_loss(
    store: &ParamStore,
    yhat: f64,
    label: u8,
    lambda: f64,
) -> Result<f64, NumericError> {
    let mut g = Graph::new();
    let y = g.input(Tensor::scalar(yhat));
    let mut loss = g.bce(y, f64::from(label));
    if lambda != 0.0 {
        loss = add_regularizer(&mut g, store, loss, lambda)?;
    }
    Ok(g.value(loss).item())
}

/// loss + (λ/2) Σ over dense params of ‖W‖².
pub fn add_regularizer(
    g: &mut Graph,
    store: &ParamStore,
    loss: NodeId,
    lambda: f64,
) -> Result<NodeId, NumericError> {
    let mut parts = vec![loss];
    for name in DENSE_PARAMS {
        let p = g.param(store, name)?;
        let sq = g.sum_sq(p);
        parts.push(g.scale(sq, lambda / 2.0));
    }
    Ok(g.add_n(&parts))
}

/// Embed raw behavior vectors as graph inputs.
fn embed_rows(
    g: &mut Graph,
    dims: &ModelDims,
    behaviors: &[Vec<f64>],
) -> Result<Vec<NodeId>, PredictorError> {
    let expected = dims.field_vec();
    behaviors
        .iter()
        .map(|b| {
            if b.len() != expected {
                return Err(PredictorError::BadEmbeddingWidth {
                    got: b.len(),
                    expected,
                });
            }
            Ok(g.input(Tensor::from_vec(1, expected, b.clone())))
        })
        .collect()
}

/// Embedded field vector (concatenated per-field embeddings) of a token-id
/// list, read straight from the embedding table.
pub fn embed_fields(store: &ParamStore, dims: &ModelDims, ids: &[u32]) -> Vec<f64> {
    let table = store.get(EMBED).expect("predictor embeddings registered");
    let mut out = Vec::with_capacity(ids.len() * dims.embed_dim);
    for &id in ids {
        let row = if (id as usize) < table.rows() { id as usize } else { 0 };
        out.extend_from_slice(table.row(row));
    }
    out
}
