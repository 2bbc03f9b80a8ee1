//! End-to-end spoken language understanding on sets of semantic entities
//! whose spoken order is unknown.
//!
//! The crate generates reproducible synthetic slot-filling corpora, trains two
//! compact sequence models (an RNN transducer and an attention
//! encoder-decoder), recovers the spoken order of entity phrases via attention
//! alignment or HMM keyword alignment, and scores everything with slot F1,
//! intent accuracy and WER. The `pipeline` module reproduces the experiment
//! grid end to end from seeds.

pub mod align;
pub mod attn;
pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod grammar;
pub mod io;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod rnnt;
pub mod targets;
pub mod training;
pub mod vocab;

pub use error::{Result, SluError};
