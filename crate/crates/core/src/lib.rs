//! Relevance-driven hidden-state interpretation of beyond-semantic speech
//! features.
//!
//! The emission model scores each candidate interpretation by the ratio of
//! cognitive effect to processing effort (two small scoring networks) and
//! normalises the ratios with a softmax. A hidden Markov chain over the
//! interpretations gives sequence-level decoding, posteriors and training.
//! Alongside sit exact information-bound diagnostics on discrete
//! distributions, judge-score aggregation and a synthetic scenario
//! generator with a Bayes-oracle decoder.

pub mod cli;
pub mod error;
pub mod hmm;
pub mod infobound;
pub mod relevance;
pub mod score;
pub mod synth;
pub mod train;
pub mod vectors;

pub use error::{BossError, Result};
pub use hmm::{BossModel, DecodedSequence};
pub use vectors::{
    ContextTrack, ContextVector, DimensionSignature, Hypothesis, LabeledSequence,
    ObservationVector,
};
