//! Multinational address tagging laboratory.
//!
//! Builds, trains and evaluates subword-embedding sequence taggers on
//! synthetic multinational address corpora: data generation over five
//! formatting patterns, BPE and character-n-gram word embeddings, a
//! length-constrained seq2seq LSTM tagger, the multi-seed training protocol,
//! and the evaluation/statistics harness.

pub mod corpus;
pub mod datagen;
pub mod domain;
pub mod embedding;
pub mod evaluation;
pub mod model_io;
pub mod nn;
pub mod subword;
pub mod tagger;
pub mod training;
