//! Byte-level encoder-decoder transformer for nucleotide sequences.
//!
//! The encoder uses sliding-window attention augmented with block-global
//! tokens, so its cost grows as `L(2r+1+k)` rather than `L²`. Around the model
//! sit span-corruption pretraining, classification fine-tuning with gradual
//! unfreezing, sequencing-noise simulation, and beam-search generation scored
//! by Levenshtein distance.

pub mod attention;
pub mod cli;
pub mod error;
mod fsio;
pub mod genomics_io;
pub mod model;
pub mod numerics;
pub mod tasks;
pub mod tokenizer;
pub mod training;

pub use error::{Error, Result};
