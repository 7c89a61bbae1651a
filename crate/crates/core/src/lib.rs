//! Distant-supervision relation extraction: corpus processing, lexicon
//! matching, triplet extraction, bag sampling, embeddings and a
//! bag-attention classifier.

pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod io;
pub mod lexicon;
pub mod model;
pub mod sampling;
pub mod synth;
pub mod train_eval;
pub mod triplets;

pub use error::{Error, Result};
