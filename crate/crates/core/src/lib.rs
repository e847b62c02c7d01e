//! Retrieval-augmented click-through-rate prediction.
//!
//! Instead of feeding a CTR model the most recent N behaviors of a user, this
//! crate retrieves the most *relevant* behaviors from the user's entire
//! history: a learned policy selects a subset of the prediction target's
//! features, the subset forms a boolean query against a feature-based
//! inverted index, and the top-S behaviors by BM25 are fed to an
//! attention-pooling predictor. The selection policy is trained by REINFORCE
//! with a relative-information-gain reward, the predictor by cross entropy.
//!
//! Module map:
//! - [`archive`]: inverted-index behavior store with time-filtered BM25 search
//! - [`numeric`]: dense f64 tensors, a small reverse-mode autodiff graph, SGD
//! - [`selector`]: self-attentive feature-selection policy and query building
//! - [`predictor`]: attention pooling over retrieved behaviors + MLP head
//! - [`trainer`]: alternating selector/predictor training loop
//! - [`data`]: log parsing, context derivation, temporal splits, synthesis
//! - [`metrics`]: AUC, log loss, normalized entropy, relative information gain

pub mod archive;
pub mod config;
pub mod data;
pub mod metrics;
pub mod numeric;
pub mod predictor;
pub mod rng;
pub mod selector;
pub mod trainer;
