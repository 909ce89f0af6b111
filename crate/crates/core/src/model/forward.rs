//! Forward passes: bidirectional encoder, additive attention, decoder step.

use rand::Rng;

use super::linalg::{dot, matvec_add, softmax};
use super::lstm::{self, LstmCache};
use super::params::{Block, ModelParams};
use super::vocab::{BOS, EOS};
use crate::corpus::FeatureSequence;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct EncoderTrace {
    pub frames: Vec<Vec<f64>>,
    pub projected: Vec<Vec<f64>>,
    pub fwd: Vec<LstmCache>,
    /// Indexed by frame position, not by processing order.
    pub bwd: Vec<LstmCache>,
    /// `h^e_i = [forward_i; backward_i]`
    pub states: Vec<Vec<f64>>,
    /// `W_a h^e_i + b_a`, shared by every decoder step.
    pub keys: Vec<Vec<f64>>,
}

/// Runs both encoder directions over the projected frames.
pub fn encode(features: &FeatureSequence, params: &ModelParams) -> Result<EncoderTrace> {
    let d = params.dims();
    if features.dim() != d.feat_dim {
        return Err(Error::Shape(format!(
            "features have dimension {} but the model expects {}",
            features.dim(),
            d.feat_dim
        )));
    }
    let n = features.len();
    if n > super::MAX_ENCODER_STEPS {
        return Err(Error::Shape(format!(
            "{n} frames exceed the encoder limit of {}",
            super::MAX_ENCODER_STEPS
        )));
    }
    let he = d.enc_hidden;
    let projected: Vec<Vec<f64>> = features
        .frames()
        .iter()
        .map(|f| {
            let mut x = params.block(Block::FeatProjB).to_vec();
            matvec_add(&mut x, params.block(Block::FeatProjW), f);
            x
        })
        .collect();

    let (wf, bf) = (params.block(Block::EncFwdW), params.block(Block::EncFwdB));
    let mut fwd = Vec::with_capacity(n);
    let (mut h, mut c) = (vec![0.0; he], vec![0.0; he]);
    for x in &projected {
        let step = lstm::forward(wf, bf, x, &h, &c);
        h.clone_from(&step.h);
        c.clone_from(&step.c);
        fwd.push(step);
    }

    let (wb, bb) = (params.block(Block::EncBwdW), params.block(Block::EncBwdB));
    let mut bwd: Vec<Option<LstmCache>> = vec![None; n];
    let (mut h, mut c) = (vec![0.0; he], vec![0.0; he]);
    for i in (0..n).rev() {
        let step = lstm::forward(wb, bb, &projected[i], &h, &c);
        h.clone_from(&step.h);
        c.clone_from(&step.c);
        bwd[i] = Some(step);
    }
    let bwd: Vec<LstmCache> = bwd.into_iter().map(|s| s.expect("every position visited")).collect();

    let states: Vec<Vec<f64>> = fwd
        .iter()
        .zip(&bwd)
        .map(|(f, b)| f.h.iter().chain(&b.h).copied().collect())
        .collect();
    let keys = states
        .iter()
        .map(|s| {
            let mut k = params.block(Block::AttnBias).to_vec();
            matvec_add(&mut k, params.block(Block::AttnKey), s);
            k
        })
        .collect();
    Ok(EncoderTrace {
        frames: features.frames().to_vec(),
        projected,
        fwd,
        bwd,
        states,
        keys,
    })
}

#[derive(Debug, Clone)]
pub struct Attention {
    pub alpha: Vec<f64>,
    pub context: Vec<f64>,
    /// `tanh(W_a h^e_i + U_a h^d_{t-1} + b_a)` per position.
    pub hidden: Vec<Vec<f64>>,
}

pub(crate) fn attend_keys(states: &[Vec<f64>], keys: &[Vec<f64>], h_prev: &[f64], params: &ModelParams) -> Attention {
    let mut query = vec![0.0; params.dims().attn_dim];
    matvec_add(&mut query, params.block(Block::AttnQuery), h_prev);
    let score_w = params.block(Block::AttnScore);
    let hidden: Vec<Vec<f64>> = keys
        .iter()
        .map(|k| k.iter().zip(&query).map(|(a, b)| (a + b).tanh()).collect())
        .collect();
    let energies: Vec<f64> = hidden.iter().map(|t| dot(score_w, t)).collect();
    let alpha = softmax(&energies);
    let mut context = vec![0.0; states[0].len()];
    for (a, s) in alpha.iter().zip(states) {
        for (c, v) in context.iter_mut().zip(s) {
            *c += a * v;
        }
    }
    Attention { alpha, context, hidden }
}

/// Attention weights over encoder states and the resulting context vector.
pub fn attend(states: &[Vec<f64>], h_prev: &[f64], params: &ModelParams) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = params.dims();
    if states.is_empty() {
        return Err(Error::Shape("no encoder states to attend over".into()));
    }
    if let Some(s) = states.iter().find(|s| s.len() != d.enc_state()) {
        return Err(Error::Shape(format!("encoder state width {} != {}", s.len(), d.enc_state())));
    }
    if h_prev.len() != d.dec_hidden {
        return Err(Error::Shape(format!("decoder state width {} != {}", h_prev.len(), d.dec_hidden)));
    }
    let keys: Vec<Vec<f64>> = states
        .iter()
        .map(|s| {
            let mut k = params.block(Block::AttnBias).to_vec();
            matvec_add(&mut k, params.block(Block::AttnKey), s);
            k
        })
        .collect();
    let a = attend_keys(states, &keys, h_prev, params);
    Ok((a.alpha, a.context))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl DecoderState {
    pub fn zeros(hidden: usize) -> Self {
        DecoderState {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

/// Output of one decoder step.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub lstm: LstmCache,
    /// Cell input after dropout, `[embedding; context]`.
    pub input: Vec<f64>,
    pub mask: Option<Vec<f64>>,
    pub logits: Vec<f64>,
    pub dist: Vec<f64>,
}

fn check_word(word: usize, params: &ModelParams) -> Result<()> {
    let size = params.dims().vocab_size;
    if word >= size {
        return Err(Error::Vocab { id: word, size });
    }
    Ok(())
}

pub(crate) fn step_inner(
    prev_word: usize,
    state: &DecoderState,
    context: &[f64],
    params: &ModelParams,
    mask: Option<Vec<f64>>,
) -> StepOutput {
    let d = params.dims();
    let emb = &params.block(Block::Embedding)[prev_word * d.embed_dim..(prev_word + 1) * d.embed_dim];
    let mut input: Vec<f64> = emb.iter().chain(context).copied().collect();
    if let Some(m) = &mask {
        for (x, k) in input.iter_mut().zip(m) {
            *x *= k;
        }
    }
    let lstm = lstm::forward(params.block(Block::DecW), params.block(Block::DecB), &input, &state.h, &state.c);
    let mut logits = vec![0.0; d.vocab_size];
    matvec_add(&mut logits, params.block(Block::OutW), &lstm.h);
    let dist = softmax(&logits);
    StepOutput {
        lstm,
        input,
        mask,
        logits,
        dist,
    }
}

/// One decoder step in inference mode: returns the new state, logits `s_t`
/// and the output distribution.
pub fn decode_step(
    prev_word: usize,
    state: &DecoderState,
    context: &[f64],
    params: &ModelParams,
) -> Result<(DecoderState, Vec<f64>, Vec<f64>)> {
    check_word(prev_word, params)?;
    let d = params.dims();
    if context.len() != d.enc_state() || state.h.len() != d.dec_hidden || state.c.len() != d.dec_hidden {
        return Err(Error::Shape("decoder step inputs do not match model dimensions".into()));
    }
    let out = step_inner(prev_word, state, context, params, None);
    let next = DecoderState {
        h: out.lstm.h.clone(),
        c: out.lstm.c.clone(),
    };
    Ok((next, out.logits, out.dist))
}

/// Everything one decoder step needs for backpropagation.
#[derive(Debug, Clone)]
pub struct StepTrace {
    pub prev_word: usize,
    /// Target (teacher forcing) or sampled word.
    pub word: usize,
    pub h_prev: Vec<f64>,
    pub attention: Attention,
    pub out: StepOutput,
}

impl StepTrace {
    pub fn hidden(&self) -> &[f64] {
        &self.out.lstm.h
    }

    pub fn dist(&self) -> &[f64] {
        &self.out.dist
    }

    pub fn logits(&self) -> &[f64] {
        &self.out.logits
    }
}

/// A recorded forward pass. Only valid with the exact parameters it was
/// recorded under.
#[derive(Debug, Clone)]
pub struct DecoderTrace {
    pub(crate) stamp: (u64, u64),
    pub encoder: EncoderTrace,
    pub steps: Vec<StepTrace>,
}

impl DecoderTrace {
    pub fn words(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.word).collect()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Inverted dropout on the decoder cell input, active in training only.
pub struct Dropout<'a, R: Rng> {
    pub rate: f64,
    pub rng: &'a mut R,
}

impl<R: Rng> Dropout<'_, R> {
    fn mask(&mut self, width: usize) -> Option<Vec<f64>> {
        if self.rate <= 0.0 {
            return None;
        }
        let keep = 1.0 / (1.0 - self.rate);
        Some(
            (0..width)
                .map(|_| if self.rng.random::<f64>() < self.rate { 0.0 } else { keep })
                .collect(),
        )
    }
}

/// Per-step decisions of a free-running decoder.
trait StepPolicy {
    fn mask(&mut self, width: usize) -> Option<Vec<f64>>;
    fn choose(&mut self, dist: &[f64]) -> usize;
}

struct Sampler<'a, R: Rng> {
    dropout: Dropout<'a, R>,
}

impl<R: Rng> StepPolicy for Sampler<'_, R> {
    // mask for step t is drawn before the word for step t
    fn mask(&mut self, width: usize) -> Option<Vec<f64>> {
        self.dropout.mask(width)
    }

    fn choose(&mut self, dist: &[f64]) -> usize {
        sample_index(dist, self.dropout.rng)
    }
}

struct Greedy;

impl StepPolicy for Greedy {
    fn mask(&mut self, _width: usize) -> Option<Vec<f64>> {
        None
    }

    fn choose(&mut self, dist: &[f64]) -> usize {
        super::linalg::argmax(dist)
    }
}

fn run_decoder(features: &FeatureSequence, params: &ModelParams, max_steps: usize, policy: &mut dyn StepPolicy) -> Result<DecoderTrace> {
    let encoder = encode(features, params)?;
    let d = params.dims();
    let mut state = DecoderState::zeros(d.dec_hidden);
    let mut prev = BOS;
    let mut steps = Vec::new();
    for _ in 0..max_steps {
        let attention = attend_keys(&encoder.states, &encoder.keys, &state.h, params);
        let out = step_inner(prev, &state, &attention.context, params, policy.mask(d.dec_input()));
        let word = policy.choose(&out.dist);
        let next = DecoderState {
            h: out.lstm.h.clone(),
            c: out.lstm.c.clone(),
        };
        steps.push(StepTrace {
            prev_word: prev,
            word,
            h_prev: std::mem::replace(&mut state, next).h,
            attention,
            out,
        });
        prev = word;
        if word == EOS {
            break;
        }
    }
    Ok(DecoderTrace {
        stamp: params.stamp(),
        encoder,
        steps,
    })
}

/// Teacher-forced pass over `targets` (normally ending in [`EOS`]).
pub fn teacher_forced<R: Rng>(
    features: &FeatureSequence,
    targets: &[usize],
    params: &ModelParams,
    mut dropout: Option<Dropout<'_, R>>,
) -> Result<DecoderTrace> {
    for &w in targets {
        check_word(w, params)?;
    }
    let encoder = encode(features, params)?;
    let d = params.dims();
    let mut state = DecoderState::zeros(d.dec_hidden);
    let mut prev = BOS;
    let mut steps = Vec::with_capacity(targets.len());
    for &word in targets {
        let attention = attend_keys(&encoder.states, &encoder.keys, &state.h, params);
        let mask = dropout.as_mut().and_then(|dr| dr.mask(d.dec_input()));
        let out = step_inner(prev, &state, &attention.context, params, mask);
        let next = DecoderState {
            h: out.lstm.h.clone(),
            c: out.lstm.c.clone(),
        };
        steps.push(StepTrace {
            prev_word: prev,
            word,
            h_prev: std::mem::replace(&mut state, next).h,
            attention,
            out,
        });
        prev = word;
    }
    Ok(DecoderTrace {
        stamp: params.stamp(),
        encoder,
        steps,
    })
}

/// Draws one word id from `dist` by inverse CDF.
pub fn sample_index<R: Rng>(dist: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in dist.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the total mass; take the last word with mass
    dist.iter().rposition(|&p| p > 0.0).unwrap_or(dist.len() - 1)
}

/// Multinomial sampling until [`EOS`] or `max_len` words. The returned ids
/// include the terminating EOS when one was drawn.
pub fn sample_sequence<R: Rng>(
    features: &FeatureSequence,
    params: &ModelParams,
    rng: &mut R,
    max_len: usize,
    dropout_rate: f64,
) -> Result<(Vec<usize>, DecoderTrace)> {
    let mut policy = Sampler {
        dropout: Dropout { rate: dropout_rate, rng },
    };
    let trace = run_decoder(features, params, max_len, &mut policy)?;
    Ok((trace.words(), trace))
}

/// Argmax decoding with a separate code path from beam search.
pub fn greedy_decode(features: &FeatureSequence, params: &ModelParams, max_len: usize) -> Result<Vec<usize>> {
    let trace = run_decoder(features, params, max_len, &mut Greedy)?;
    let mut words = trace.words();
    if words.last() == Some(&EOS) {
        words.pop();
    }
    Ok(words)
}

/// Exact log-probability of a word sequence (ids ending in EOS or truncated).
pub fn sequence_log_prob(features: &FeatureSequence, words: &[usize], params: &ModelParams) -> Result<f64> {
    let trace = teacher_forced::<rand_chacha::ChaCha8Rng>(features, words, params, None)?;
    Ok(trace.steps.iter().map(|s| s.dist()[s.word].ln()).sum())
}
