//! Reverse-mode gradients of a recorded forward pass.
//!
//! The caller supplies `dL/ds_t` for every decoder step; the chain runs back
//! through the output projection, decoder cell, attention, both encoder
//! directions, the feature projection and the word embeddings. The baseline
//! regressor never appears on this path.

use super::forward::DecoderTrace;
use super::linalg::{dot, matvec_t_add, outer_add};
use super::lstm;
use super::params::{Block, ModelParams};
use crate::error::{Error, Result};

/// Gradient of the trace's loss, as a fresh vector shaped like the parameters.
pub fn backward(trace: &DecoderTrace, params: &ModelParams, upstream: &[Vec<f64>]) -> Result<Vec<f64>> {
    let mut grad = params.zeros_like();
    backward_into(trace, params, upstream, &mut grad)?;
    Ok(grad)
}

/// Adds the gradient into `grad`, which must match the parameter layout.
pub fn backward_into(trace: &DecoderTrace, params: &ModelParams, upstream: &[Vec<f64>], grad: &mut [f64]) -> Result<()> {
    if trace.stamp != params.stamp() {
        return Err(Error::StaleTrace);
    }
    if upstream.len() != trace.steps.len() {
        return Err(Error::Alignment(format!(
            "{} upstream gradients for {} decoder steps",
            upstream.len(),
            trace.steps.len()
        )));
    }
    if grad.len() != params.len() {
        return Err(Error::Shape(format!("gradient buffer {} != {}", grad.len(), params.len())));
    }
    let d = *params.dims();
    let layout = params.layout().clone();
    if let Some(bad) = upstream.iter().find(|u| u.len() != d.vocab_size) {
        return Err(Error::Shape(format!("upstream width {} != vocab {}", bad.len(), d.vocab_size)));
    }

    let out_w = params.block(Block::OutW);
    let dec_w = params.block(Block::DecW);
    let attn_q = params.block(Block::AttnQuery);
    let score_w = params.block(Block::AttnScore);
    let enc = &trace.encoder;
    let n = enc.states.len();
    let hd = d.dec_hidden;
    let emb_dim = d.embed_dim;
    let in_w = d.dec_input();

    // Per-block gradient views are carved from disjoint ranges as needed.
    macro_rules! g {
        ($b:expr) => {
            &mut grad[layout.range($b)]
        };
    }

    let mut d_states = vec![vec![0.0; d.enc_state()]; n];
    let mut d_keys = vec![vec![0.0; d.attn_dim]; n];
    let mut dh_next = vec![0.0; hd];
    let mut dc_next = vec![0.0; hd];

    for (step, ds) in trace.steps.iter().zip(upstream).rev() {
        let h = &step.out.lstm.h;
        outer_add(g!(Block::OutW), ds, h);
        let mut dh = dh_next.clone();
        matvec_t_add(&mut dh, out_w, ds);

        let (d_concat, dc_prev) = {
            let r_w = layout.range(Block::DecW);
            let r_b = layout.range(Block::DecB);
            let (lo, hi) = grad.split_at_mut(r_b.start);
            lstm::backward(&step.out.lstm, dec_w, &dh, &dc_next, &mut lo[r_w], &mut hi[..r_b.len()])
        };
        let mut d_input = d_concat[..in_w].to_vec();
        let mut dh_prev = d_concat[in_w..].to_vec();
        if let Some(mask) = &step.out.mask {
            for (x, m) in d_input.iter_mut().zip(mask) {
                *x *= m;
            }
        }

        let emb_row = step.prev_word * emb_dim;
        for (gv, v) in g!(Block::Embedding)[emb_row..emb_row + emb_dim].iter_mut().zip(&d_input[..emb_dim]) {
            *gv += v;
        }
        let d_ctx = &d_input[emb_dim..];

        let att = &step.attention;
        let d_alpha: Vec<f64> = enc.states.iter().map(|s| dot(d_ctx, s)).collect();
        let mean = dot(&att.alpha, &d_alpha);
        let mut d_query = vec![0.0; d.attn_dim];
        for i in 0..n {
            for (dst, v) in d_states[i].iter_mut().zip(d_ctx) {
                *dst += att.alpha[i] * v;
            }
            let de = att.alpha[i] * (d_alpha[i] - mean);
            if de == 0.0 {
                continue;
            }
            let tz = &att.hidden[i];
            for (gv, t) in g!(Block::AttnScore).iter_mut().zip(tz) {
                *gv += de * t;
            }
            for k in 0..d.attn_dim {
                let dz = de * score_w[k] * (1.0 - tz[k] * tz[k]);
                d_keys[i][k] += dz;
                d_query[k] += dz;
            }
        }
        outer_add(g!(Block::AttnQuery), &d_query, &step.h_prev);
        matvec_t_add(&mut dh_prev, attn_q, &d_query);

        dh_next = dh_prev;
        dc_next = dc_prev;
    }

    let attn_key = params.block(Block::AttnKey);
    for i in 0..n {
        outer_add(g!(Block::AttnKey), &d_keys[i], &enc.states[i]);
        for (gv, v) in g!(Block::AttnBias).iter_mut().zip(&d_keys[i]) {
            *gv += v;
        }
        matvec_t_add(&mut d_states[i], attn_key, &d_keys[i]);
    }

    let he = d.enc_hidden;
    let p = d.proj_dim;
    let mut d_proj = vec![vec![0.0; p]; n];

    // forward direction: position i feeds i+1
    {
        let w = params.block(Block::EncFwdW);
        let (rw, rb) = (layout.range(Block::EncFwdW), layout.range(Block::EncFwdB));
        let mut dh_next = vec![0.0; he];
        let mut dc_next = vec![0.0; he];
        for i in (0..n).rev() {
            let mut dh = d_states[i][..he].to_vec();
            for (a, b) in dh.iter_mut().zip(&dh_next) {
                *a += b;
            }
            let (lo, hi) = grad.split_at_mut(rb.start);
            let (dcat, dc_prev) = lstm::backward(&enc.fwd[i], w, &dh, &dc_next, &mut lo[rw.clone()], &mut hi[..rb.len()]);
            for (a, b) in d_proj[i].iter_mut().zip(&dcat[..p]) {
                *a += b;
            }
            dh_next = dcat[p..].to_vec();
            dc_next = dc_prev;
        }
    }
    // backward direction: position i feeds i-1
    {
        let w = params.block(Block::EncBwdW);
        let (rw, rb) = (layout.range(Block::EncBwdW), layout.range(Block::EncBwdB));
        let mut dh_next = vec![0.0; he];
        let mut dc_next = vec![0.0; he];
        for i in 0..n {
            let mut dh = d_states[i][he..].to_vec();
            for (a, b) in dh.iter_mut().zip(&dh_next) {
                *a += b;
            }
            let (lo, hi) = grad.split_at_mut(rb.start);
            let (dcat, dc_prev) = lstm::backward(&enc.bwd[i], w, &dh, &dc_next, &mut lo[rw.clone()], &mut hi[..rb.len()]);
            for (a, b) in d_proj[i].iter_mut().zip(&dcat[..p]) {
                *a += b;
            }
            dh_next = dcat[p..].to_vec();
            dc_next = dc_prev;
        }
    }

    for i in 0..n {
        outer_add(g!(Block::FeatProjW), &d_proj[i], &enc.frames[i]);
        for (gv, v) in g!(Block::FeatProjB).iter_mut().zip(&d_proj[i]) {
            *gv += v;
        }
    }
    Ok(())
}
