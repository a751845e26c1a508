//! Semi-supervised node embeddings that preserve both graph structure and
//! multi-label edge relations.
//!
//! Training alternates between two objectives that share the node embedding
//! table:
//!
//! - a skip-gram structural loss over random-walk co-occurrences, optimized
//!   with negative sampling ([`structural`]);
//! - a relational loss that predicts the label set of an edge from the
//!   concatenation of its endpoint embeddings with a small feed-forward
//!   classifier ([`relational`]).
//!
//! The weight factor `lambda` decides how many batches of each kind run per
//! round ([`trainer::schedule_counts`]). `lambda = 0` reduces to plain
//! DeepWalk-style skip-gram training.
//!
//! Learned embeddings are scored with a one-vs-rest logistic regression on
//! node labels and Macro-F1 ([`evaluation`]).

// `Real` may be f64, so widening casts are not always no-ops.
#![allow(clippy::unnecessary_cast)]

pub mod checkpoint;
pub mod cli;
pub mod embedding_io;
pub mod error;
pub mod evaluation;
pub mod graph;
pub mod matrix;
pub mod params;
pub mod relational;
pub mod rng;
pub mod structural;
pub mod synth;
pub mod trainer;
pub mod walk;

pub use error::{Error, Result};
pub use graph::{Graph, LabelSet, LabelVocabulary, LabeledEdgeSet, NodeLabelSet};
pub use matrix::Matrix;
pub use params::{AdamConfig, AdamState, EmbeddingTables, ModelGrads, RowGrads};
pub use relational::MlpParams;
pub use trainer::{train, StopReason, TrainConfig, TrainOutput, TrainReport};

/// Floating point type used for all training arithmetic.
#[cfg(not(feature = "single-precision"))]
pub type Real = f64;
/// Floating point type used for all training arithmetic.
#[cfg(feature = "single-precision")]
pub type Real = f32;
