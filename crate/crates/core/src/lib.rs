//! Few-shot prototype classification with a learned outlier ("junk") head.
//!
//! Embeddings produced by a frozen encoder are projected by a learned linear
//! map, averaged per class into prototypes, and a query is scored against
//! every prototype plus one extra junk logit built from the summed prototype
//! distances and the query magnitude. The crate covers the forward math
//! ([`engine`]), end-to-end training with analytic gradients and ADAM
//! ([`trainer`]), the episodic sampling protocol ([`sampler`]), on-disk
//! formats ([`ingest`]), evaluation measures ([`metrics`]) and a Gaussian
//! simulation of the few-shot task ([`simulator`]).
//!
//! With the default `parallel` feature, batch work (per-episode gradients,
//! evaluation, Monte Carlo blocks) runs on rayon. Every reduction happens in
//! a fixed order, so results are bit-identical with the feature disabled or
//! under any thread count.

pub mod engine;
pub mod error;
pub mod ingest;
pub mod metrics;
pub mod par;
pub mod rng;
pub mod sampler;
pub mod simulator;
pub mod synthetic;
pub mod trainer;

pub use engine::{
    class_scores, compute_prototypes, junk_score, predict, predict_episode, project, update_prototype, DistanceKind,
    LabeledEpisode, ModelParams, Prediction, PrototypeSet,
};
pub use error::{Error, Result};
