//! Hierarchical structured self-attentive extractive summarization.
//!
//! Sentences are encoded word by word with a BiLSTM and pooled by
//! self-attention; the sentence vectors go through a second BiLSTM and
//! attention layer to form a document vector. A sequential logistic layer
//! then scores each sentence from its content, salience, novelty with respect
//! to the summary built so far, and position. The crate also ships a ROUGE
//! scorer and the LEAD-3 baseline.

pub mod classifier;
pub mod cli;
pub mod corpus;
pub mod embeddings;
pub mod encoder;
pub mod error;
pub mod inference;
pub mod model;
pub mod numerics;
pub mod rouge;
pub mod training;

pub use error::{Error, Result};
