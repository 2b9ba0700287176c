//! Information-driven subword tokenisation.
//!
//! A byte-level language model assigns every byte of a training corpus a
//! surprisal and an entropy. Contiguous low-information bytes are grouped into
//! spans, and the spans found across the corpus become a fixed subword
//! vocabulary. The vocabulary is then used with ordinary longest-prefix
//! inference, so nothing about the language model is needed after training.
//!
//! The pipeline, module by module:
//!
//! * [`corpus`] reads documents, splits them into pre-tokens and stores the
//!   per-byte signal tracks.
//! * [`ngram`] is a smoothed n-gram byte model that produces those signals.
//! * [`segment`] turns a signal track into spans with the global, monotonic
//!   or combined constraint.
//! * [`learn`] counts spans and selects a vocabulary (frequency, incremental,
//!   seeded and language-balanced methods).
//! * [`bpe`] is the byte-pair-encoding trainer used for the baselines and for
//!   completing a seeded vocabulary.
//! * [`tokenizer`] runs longest-prefix or merge-replay inference.
//! * [`eval`] holds the intrinsic metrics.
//! * [`pipeline`] wires the above together for the command-line tool.
//!
//! Numeric code that touches signal values is generic over [`Scalar`]
//! (`f32` or `f64`); the aliases below fix the common `f64` case.

#![forbid(unsafe_code)]

pub mod bpe;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod learn;
pub mod ngram;
pub mod pipeline;
pub mod scalar;
pub mod segment;
pub mod tokenizer;
pub mod vocab;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use corpus::{Document, PreTokenBoundary};
pub use ngram::NGramByteModel;
pub use segment::{ConstraintKind, SignalKind, Span};
pub use tokenizer::{Mode, Tokenizer};
pub use vocab::{Marker, Symbol, Vocabulary};

/// Signal track with `f64` values.
pub type SignalTrack = corpus::SignalTrack<f64>;
/// Signal track with `f32` values, half the memory for large corpora.
pub type SignalTrackF32 = corpus::SignalTrack<f32>;
/// Constraint configuration with `f64` thresholds.
pub type ConstraintConfig = segment::ConstraintConfig<f64>;
/// Constraint configuration with `f32` thresholds.
pub type ConstraintConfigF32 = segment::ConstraintConfig<f32>;
