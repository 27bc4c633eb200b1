//! Acoustic word embeddings for zero-resource settings.
//!
//! The crate bundles a deterministic synthetic multilingual corpus, a
//! simulated term-discovery noise model, non-neural baselines (downsampling
//! and DTW), a small exact-gradient GRU toolkit, the classifier / Siamese /
//! (correspondence) autoencoder embedding models, the same-different
//! evaluation, embedding-space probes, and an experiment runner tying them
//! together.

pub mod corpus;
pub mod dtw;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod features;
pub mod matrix;
pub mod models;
pub mod nn;
pub mod probe;
pub mod rng;

pub use corpus::{Corpus, Segment, SegmentMeta};
pub use error::{Error, Result};
pub use features::Embedding;
pub use matrix::Matrix;
