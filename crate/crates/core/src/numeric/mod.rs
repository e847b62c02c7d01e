//! Dense f64 numeric substrate for the two networks in this crate.
//!
//! Everything is a row-major 2-D [`Tensor`]. Forward passes are built as a
//! [`Graph`] of eager ops; [`Graph::backward`] runs reverse-mode
//! differentiation and [`Graph::write_grads`] accumulates the result into the
//! owning [`ParamStore`]. [`grad_check`] verifies any scalar loss against
//! central finite differences.

mod graph;
mod optim;
mod store;
mod tensor;

pub use graph::{Activation, Graph, LikelihoodMode, NodeId};
pub use optim::{grad_check, sgd_step, Direction, Sgd};
pub use store::{ParamStore, TensorInit};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("unknown parameter tensor `{0}`")]
    UnknownParam(String),
    #[error("parameter tensor `{0}` already exists")]
    DuplicateParam(String),
    #[error("non-finite gradient in tensor `{0}`")]
    NonFiniteGrad(String),
    #[error("non-finite value in tensor `{0}` after update")]
    NonFiniteParam(String),
    #[error("gradient missing for tensor `{0}`")]
    MissingGrad(String),
}

/// Numerically stable softmax of a small vector.
///
/// The maximum is subtracted before exponentiation and the normalizer is
/// summed in value-sorted order, so the output depends only on the multiset
/// of inputs: permuting the input permutes the output exactly.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    if xs.is_empty() {
        return Vec::new();
    }
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|&x| (x - max).exp()).collect();
    let norm = sorted_sum(&exps);
    exps.iter().map(|&e| e / norm).collect()
}

/// Sum in ascending value order (order-independent reduction).
pub(crate) fn sorted_sum(xs: &[f64]) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.iter().sum()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// Clamp applied to probabilities before any `ln`.
pub const PROB_EPS: f64 = 1e-6;

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}
