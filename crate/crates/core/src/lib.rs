//! Trainable discourse processing for information extraction.
//!
//! Given a declarative output schema, a corpus of sentence-analyzer case
//! frames, and hand-coded answer keys, this crate learns one decision tree
//! per discourse decision and, at run time, filters, merges, links, splits,
//! and infers objects to produce a coherent output graph per document.
//!
//! Numeric code is generic over the scalar type (any [`real::Real`], i.e.
//! `f32` or `f64`); class proportions and confidence thresholds use exact
//! rational arithmetic. The aliases below fix `f64` for ordinary use.

pub mod eval;
pub mod features;
pub mod frames;
pub mod id3;
pub mod labeler;
pub mod pipeline;
pub mod real;
pub mod rng;
pub mod schema;
pub mod synth;

/// Decision tree with `f64` scores.
pub type Tree = id3::DecisionTree<f64>;
/// Trained model with `f64` scores.
pub type Model = pipeline::Model<f64>;
/// Training configuration with `f64` betas.
pub type TrainConfig = pipeline::TrainConfig<f64>;
/// Score report with `f64` metrics.
pub type ScoreReport = eval::ScoreReport<f64>;
/// Recall/precision/f triple over `f64`.
pub type Metrics = id3::Metrics<f64>;
/// Generator rules with `f64` probabilities.
pub type GenRules = synth::GenRules<f64>;
