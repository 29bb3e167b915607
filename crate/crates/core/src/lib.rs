//! Federated training of an attention-based sequence-to-sequence model that
//! maps symptom sequences to disease labels.
//!
//! Clients train local copies of an encoder–attention–decoder network on
//! private shards; a coordinator merges them by dataset-size-weighted
//! averaging once per communication round.

pub mod cli;
pub mod data;
pub mod error;
pub mod federated;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod tokens;
pub mod train;

pub use error::{Error, Result};
