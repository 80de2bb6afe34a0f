//! Neural machine translation with a recurrent contexter in place of attention.
//!
//! A bidirectional GRU encoder annotates the source. At every target step a
//! context vector is built either by additive attention or by the contexter,
//! a GRU that reads the annotations starting from a state derived from the
//! previous decoder state. Training, beam search, BLEU and gate
//! visualization are all implemented here in plain `f64` arithmetic.

pub mod cli;
pub mod context;
pub mod corpus;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gru;
pub mod model;
pub mod numerics;
pub mod search;
pub mod training;
pub mod viz;

pub use context::{ContextMode, Mechanism, OutputMode};
pub use corpus::{Corpus, SentencePair, Vocabulary};
pub use error::{Error, Result};
pub use model::{Dims, ModelParams};
pub use training::{Checkpoint, TrainConfig};
