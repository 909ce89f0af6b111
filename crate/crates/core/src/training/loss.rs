//! Losses and their gradients with respect to the softmax inputs `s_t`.

use crate::error::{Error, Result};
use crate::model::linalg::dot;
use crate::model::{Block, DecoderTrace, ModelParams};

/// Cross-entropy of a teacher-forced trace against `targets`.
///
/// Returns the summed negative log-likelihood and, per step,
/// `dL/ds_t = p_t - onehot(target_t)`.
pub fn xe_loss(trace: &DecoderTrace, targets: &[usize]) -> Result<(f64, Vec<Vec<f64>>)> {
    if trace.len() != targets.len() {
        return Err(Error::Alignment(format!(
            "trace has {} steps, target has {}",
            trace.len(),
            targets.len()
        )));
    }
    let mut loss = 0.0;
    let mut upstream = Vec::with_capacity(targets.len());
    for (t, (step, &target)) in trace.steps.iter().zip(targets).enumerate() {
        if step.word != target {
            return Err(Error::Alignment(format!(
                "step {t} was forced with word {} but target is {target}",
                step.word
            )));
        }
        let dist = step.dist();
        loss -= dist[target].ln();
        let mut g = dist.to_vec();
        g[target] -= 1.0;
        upstream.push(g);
    }
    Ok((loss, upstream))
}

/// Per-step reward predictions `b_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineEstimate {
    pub values: Vec<f64>,
}

/// `b = w . h + c`. `hidden` is read as a constant; nothing flows back into it.
pub fn baseline_predict(hidden: &[f64], params: &ModelParams) -> f64 {
    dot(params.block(Block::BaselineW), hidden) + params.block(Block::BaselineB)[0]
}

pub fn baseline_for_trace(trace: &DecoderTrace, params: &ModelParams) -> BaselineEstimate {
    BaselineEstimate {
        values: trace.steps.iter().map(|s| baseline_predict(s.hidden(), params)).collect(),
    }
}

/// REINFORCE gradient on `s_t` from one sampled sequence:
/// `(r - b_t) (p_t - onehot(w_t))`.
pub fn rl_gradients(trace: &DecoderTrace, reward: f64, baselines: &BaselineEstimate) -> Result<Vec<Vec<f64>>> {
    if baselines.values.len() != trace.len() {
        return Err(Error::Alignment(format!(
            "{} baseline values for {} steps",
            baselines.values.len(),
            trace.len()
        )));
    }
    Ok(trace
        .steps
        .iter()
        .zip(&baselines.values)
        .map(|(step, &b)| {
            let adv = reward - b;
            let mut g: Vec<f64> = step.dist().iter().map(|p| adv * p).collect();
            g[step.word] -= adv;
            g
        })
        .collect())
}

/// Gradient of the regressor loss; only the regressor weights receive any.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineGrad {
    pub weight: Vec<f64>,
    pub bias: f64,
}

impl BaselineGrad {
    /// Adds `scale *` this gradient into the regressor slots of a full-size
    /// gradient vector.
    pub fn add_into(&self, grad: &mut [f64], params: &ModelParams, scale: f64) {
        let l = params.layout();
        for (g, v) in grad[l.range(Block::BaselineW)].iter_mut().zip(&self.weight) {
            *g += scale * v;
        }
        grad[l.range(Block::BaselineB)][0] += scale * self.bias;
    }
}

/// Squared error `sum_t (b_t - r)^2` of the regressor on one sequence.
pub fn baseline_loss(trace: &DecoderTrace, baselines: &BaselineEstimate, reward: f64) -> Result<(f64, BaselineGrad)> {
    if baselines.values.len() != trace.len() {
        return Err(Error::Alignment("baseline values do not match trace".into()));
    }
    let width = trace.steps.first().map(|s| s.hidden().len()).unwrap_or(0);
    let mut loss = 0.0;
    let mut weight = vec![0.0; width];
    let mut bias = 0.0;
    for (step, &b) in trace.steps.iter().zip(&baselines.values) {
        let err = b - reward;
        loss += err * err;
        for (w, h) in weight.iter_mut().zip(step.hidden()) {
            *w += 2.0 * err * h;
        }
        bias += 2.0 * err;
    }
    Ok((loss, BaselineGrad { weight, bias }))
}
