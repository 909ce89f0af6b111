//! Attention encoder-decoder policy.
//!
//! A linear down-projection feeds a bidirectional LSTM encoder. A single-layer
//! LSTM decoder attends over the encoder states with additive attention and
//! emits a softmax over the vocabulary.

pub mod backward;
pub mod checkpoint;
pub mod decode;
pub mod forward;
pub mod linalg;
pub mod lstm;
pub mod params;
pub mod vocab;

pub use backward::{backward, backward_into};
pub use checkpoint::Checkpoint;
pub use decode::{beam_search, beam_search_with, ensemble_decode, BeamResult, EnsembleDecoder, ModelDecoder, StepDecoder};
pub use forward::{
    attend, decode_step, encode, greedy_decode, sample_index, sample_sequence, sequence_log_prob, teacher_forced, DecoderState,
    DecoderTrace, Dropout, EncoderTrace, StepTrace,
};
pub use params::{Block, Layout, ModelDims, ModelParams};
pub use vocab::{Vocab, BOS, EOS, UNK};

/// Decoder step limit.
pub const DEFAULT_MAX_DECODE: usize = 16;
/// Encoder step limit; longer feature sequences are rejected.
pub const MAX_ENCODER_STEPS: usize = 50;
