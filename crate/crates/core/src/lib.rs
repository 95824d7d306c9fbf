//! Self-supervised pretraining and stability evaluation for hospitalization
//! prediction from insurance-claims histories.
//!
//! The crate covers the whole pipeline: claims preprocessing, a synthetic
//! claims generator with a known risk model, claim "narrative" tokenization,
//! CBOW code embeddings, four classifiers (risk-factor logistic regression,
//! bag-of-codes SVM, embedding GBM, masked-LM transformer), and the
//! perturbation/LIME stability protocol.

pub mod claims;
pub mod embeddings;
pub mod error;
pub mod eval;
pub mod exec;
pub mod math;
pub mod models;
pub mod narrative;
pub mod rng;
pub mod synthgen;

pub use error::{Error, Result};
pub use exec::Execution;
