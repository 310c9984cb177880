//! Batched beam-search decoding for transducer (RNN-T) models.
//!
//! The crate keeps every hypothesis of a batch in one [`hyps::BatchedBeamHyps`]
//! store, expands the whole batch with a single scoring call per round, and
//! can fuse an ARPA n-gram LM into the search.

pub mod cli;
pub mod decode;
pub mod error;
pub mod fixtures;
pub mod fusion;
pub mod hyps;
pub mod lm;
pub mod math;
pub mod metrics;
pub mod model;

pub use error::{Error, Result};
