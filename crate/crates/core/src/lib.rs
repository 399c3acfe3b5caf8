//! Activation-entropy confidence scoring and unsupervised data selection
//! for frame classifiers under acoustic mismatch.
//!
//! The pipeline: gammatone filterbank features, a sigmoid frame classifier
//! with optional convolutional head, a normalized windowed activation
//! entropy (NRSE) that scores how unfamiliar an utterance looks to the
//! net, ranking-based selection of pool utterances, pseudo-labeled
//! fine-tuning anchored by the original training data, and reporting.
//! Everything is seeded and deterministic: the same inputs and seeds
//! produce byte-identical artifacts.

pub mod config;
pub mod corpus;
pub mod data;
pub mod entropy;
pub mod features;
pub mod net;
pub mod pipeline;
pub mod report;
pub mod selection;

mod error;
mod ioutil;

pub use error::{Error, Result};
