//! Reward-driven sequence training for caption generation.
//!
//! The crate bundles phrase-matching caption metrics (CIDEr-D, BLEU-4,
//! ROUGE-L), an entailment-corrected reward (CIDEnt), an attention
//! encoder-decoder with hand-written backpropagation, and a mixed
//! cross-entropy + REINFORCE trainer, plus a synthetic captioning corpus to
//! exercise them end to end.

pub mod config;
pub mod corpus;
pub mod entailment;
pub mod error;
pub mod metrics;
pub mod model;
pub mod reward;
pub mod synth;
pub mod text;
pub mod training;

pub use error::{Error, ErrorCategory, Result};
