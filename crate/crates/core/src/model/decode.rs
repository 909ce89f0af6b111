//! Beam search over any step-wise decoder, including averaged ensembles.

use std::cmp::Ordering;

use super::forward::{attend_keys, encode, step_inner, DecoderState, EncoderTrace};
use super::params::ModelParams;
use super::vocab::{BOS, EOS};
use crate::corpus::FeatureSequence;
use crate::error::{Error, Result};

/// A decoder that can be advanced one word at a time from any saved state.
pub trait StepDecoder {
    type State: Clone;

    fn vocab_size(&self) -> usize;
    fn start(&self) -> Self::State;
    /// Feeds `prev_word`; returns the next state and the distribution over the next word.
    fn step(&self, state: &Self::State, prev_word: usize) -> (Self::State, Vec<f64>);
}

/// Inference-mode decoder for one model and one encoded input.
pub struct ModelDecoder<'a> {
    params: &'a ModelParams,
    encoder: EncoderTrace,
}

impl<'a> ModelDecoder<'a> {
    pub fn new(features: &FeatureSequence, params: &'a ModelParams) -> Result<Self> {
        Ok(ModelDecoder {
            params,
            encoder: encode(features, params)?,
        })
    }
}

impl StepDecoder for ModelDecoder<'_> {
    type State = DecoderState;

    fn vocab_size(&self) -> usize {
        self.params.dims().vocab_size
    }

    fn start(&self) -> DecoderState {
        DecoderState::zeros(self.params.dims().dec_hidden)
    }

    fn step(&self, state: &DecoderState, prev_word: usize) -> (DecoderState, Vec<f64>) {
        let att = attend_keys(&self.encoder.states, &self.encoder.keys, &state.h, self.params);
        let out = step_inner(prev_word, state, &att.context, self.params, None);
        let next = DecoderState {
            h: out.lstm.h,
            c: out.lstm.c,
        };
        (next, out.dist)
    }
}

/// Averages the per-step distributions of its members.
pub struct EnsembleDecoder<'a> {
    members: Vec<ModelDecoder<'a>>,
}

impl<'a> EnsembleDecoder<'a> {
    pub fn new(features: &FeatureSequence, members: &'a [ModelParams]) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::Ensemble("ensemble needs at least one member".into()))?;
        for (i, m) in members.iter().enumerate() {
            if m.dims().vocab_size != first.dims().vocab_size {
                return Err(Error::Ensemble(format!(
                    "member {i} has vocabulary {} but member 0 has {}",
                    m.dims().vocab_size,
                    first.dims().vocab_size
                )));
            }
            if m.dims().feat_dim != first.dims().feat_dim {
                return Err(Error::Ensemble(format!("member {i} expects different feature dimension")));
            }
        }
        let members = members.iter().map(|p| ModelDecoder::new(features, p)).collect::<Result<_>>()?;
        Ok(EnsembleDecoder { members })
    }
}

impl StepDecoder for EnsembleDecoder<'_> {
    type State = Vec<DecoderState>;

    fn vocab_size(&self) -> usize {
        self.members[0].vocab_size()
    }

    fn start(&self) -> Vec<DecoderState> {
        self.members.iter().map(|m| m.start()).collect()
    }

    fn step(&self, state: &Vec<DecoderState>, prev_word: usize) -> (Vec<DecoderState>, Vec<f64>) {
        let k = self.members.len() as f64;
        let mut avg = vec![0.0; self.vocab_size()];
        let mut next = Vec::with_capacity(self.members.len());
        for (m, s) in self.members.iter().zip(state) {
            let (ns, dist) = m.step(s, prev_word);
            for (a, p) in avg.iter_mut().zip(&dist) {
                *a += p;
            }
            next.push(ns);
        }
        for a in &mut avg {
            *a /= k;
        }
        (next, avg)
    }
}

#[derive(Clone)]
struct Hypothesis<S> {
    words: Vec<usize>,
    log_prob: f64,
    state: S,
}

/// Higher log-probability first, then lexicographically smaller word ids.
fn rank(a_lp: f64, a_words: &[usize], b_lp: f64, b_words: &[usize]) -> Ordering {
    b_lp.partial_cmp(&a_lp)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a_words.cmp(b_words))
}

/// Result of a beam search: word ids without the terminating EOS.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamResult {
    pub words: Vec<usize>,
    pub log_prob: f64,
}

/// Length-unnormalized beam search.
///
/// Hypotheses that emit EOS leave the beam; unfinished ones are cut off at
/// `max_len` words. Equal scores are broken by the smaller word-id sequence.
pub fn beam_search_with<D: StepDecoder>(decoder: &D, beam_width: usize, max_len: usize) -> Result<BeamResult> {
    if beam_width == 0 {
        return Err(Error::Config("beam width must be at least 1".into()));
    }
    let v = decoder.vocab_size();
    let mut live = vec![Hypothesis {
        words: Vec::new(),
        log_prob: 0.0,
        state: decoder.start(),
    }];
    let mut finished: Vec<(Vec<usize>, f64)> = Vec::new();

    for step in 0..max_len {
        let mut expansions: Vec<(usize, usize, f64)> = Vec::with_capacity(live.len() * v);
        let mut next_states = Vec::with_capacity(live.len());
        for (hi, h) in live.iter().enumerate() {
            let prev = h.words.last().copied().unwrap_or(BOS);
            let (state, dist) = decoder.step(&h.state, prev);
            next_states.push(state);
            for (w, &p) in dist.iter().enumerate() {
                expansions.push((hi, w, h.log_prob + p.ln()));
            }
        }
        // Key each expansion by its full word sequence for the tie-break.
        let key = |&(hi, w, _): &(usize, usize, f64)| {
            let mut k = live[hi].words.clone();
            k.push(w);
            k
        };
        expansions.sort_by(|a, b| rank(a.2, &key(a), b.2, &key(b)));
        expansions.truncate(beam_width);

        let last_step = step + 1 == max_len;
        let mut next_live = Vec::with_capacity(beam_width);
        for e @ &(hi, w, lp) in &expansions {
            if w == EOS {
                finished.push((live[hi].words.clone(), lp));
            } else if last_step {
                finished.push((key(e), lp));
            } else {
                next_live.push(Hypothesis {
                    words: key(e),
                    log_prob: lp,
                    state: next_states[hi].clone(),
                });
            }
        }
        live = next_live;
        if live.is_empty() {
            break;
        }
        // Scores only fall as words are added, so a strictly better finished
        // hypothesis cannot be overtaken.
        let best_live = live.iter().map(|h| h.log_prob).fold(f64::NEG_INFINITY, f64::max);
        let best_done = finished.iter().map(|f| f.1).fold(f64::NEG_INFINITY, f64::max);
        if best_done > best_live {
            break;
        }
    }
    if max_len == 0 {
        finished.push((Vec::new(), 0.0));
    }
    finished.sort_by(|a, b| rank(a.1, &a.0, b.1, &b.0));
    let (words, log_prob) = finished.into_iter().next().expect("at least one hypothesis finishes");
    Ok(BeamResult { words, log_prob })
}

pub fn beam_search(features: &FeatureSequence, params: &ModelParams, beam_width: usize, max_len: usize) -> Result<Vec<usize>> {
    let dec = ModelDecoder::new(features, params)?;
    Ok(beam_search_with(&dec, beam_width, max_len)?.words)
}

pub fn ensemble_decode(features: &FeatureSequence, members: &[ModelParams], beam_width: usize, max_len: usize) -> Result<Vec<usize>> {
    let dec = EnsembleDecoder::new(features, members)?;
    Ok(beam_search_with(&dec, beam_width, max_len)?.words)
}
