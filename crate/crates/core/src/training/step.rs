//! Single optimization steps: pure XE, pure REINFORCE, and the mixed loss.

use rand::Rng;

use super::loss::{baseline_for_trace, baseline_loss, rl_gradients, xe_loss};
use super::optim::{clip_global_norm, Adam, AdamConfig};
use crate::corpus::FeatureSequence;
use crate::error::{Error, Result};
use crate::model::{backward_into, sample_sequence, teacher_forced, Dropout, ModelParams, EOS};
use crate::reward::{Reward, RewardKind};

/// Optimizer and regularization settings for both training phases.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Mixing weight of the RL loss; `None` picks the per-reward default.
    pub gamma: Option<f64>,
    pub lr_xe: f64,
    pub lr_mixed: f64,
    pub lr_baseline: f64,
    pub clip_norm: f64,
    pub dropout: f64,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub xe_max_epochs: usize,
    /// Epochs without dev-loss improvement before the XE phase stops.
    pub xe_patience: usize,
    pub rl_epochs: usize,
    pub seed: u64,
    pub init_range: f64,
    pub max_decode: usize,
    /// Beam width for per-epoch dev evaluation.
    pub eval_beam: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: None,
            lr_xe: 1e-3,
            lr_mixed: 1e-4,
            lr_baseline: 3e-2,
            clip_norm: 10.0,
            dropout: 0.5,
            adam: AdamConfig::default(),
            batch_size: 16,
            xe_max_epochs: 60,
            xe_patience: 3,
            rl_epochs: 20,
            seed: 1,
            init_range: 0.08,
            max_decode: crate::model::DEFAULT_MAX_DECODE,
            eval_beam: 5,
        }
    }
}

impl TrainConfig {
    pub fn default_gamma(kind: RewardKind) -> f64 {
        if kind.uses_entailment() {
            0.9990
        } else {
            0.9995
        }
    }

    pub fn gamma_for(&self, kind: RewardKind) -> f64 {
        self.gamma.unwrap_or_else(|| Self::default_gamma(kind))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if let Some(g) = self.gamma {
            if !(0.0..=1.0).contains(&g) {
                return bad(format!("train.gamma must be in [0,1], got {g}"));
            }
        }
        for (name, v) in [
            ("train.lr_xe", self.lr_xe),
            ("train.lr_mixed", self.lr_mixed),
            ("train.lr_baseline", self.lr_baseline),
            ("train.clip_norm", self.clip_norm),
            ("train.init_range", self.init_range),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("train.dropout must be in [0,1), got {}", self.dropout));
        }
        if self.batch_size == 0 || self.max_decode == 0 || self.eval_beam == 0 {
            return bad("train.batch_size, train.max_decode and train.eval_beam must be positive".into());
        }
        Ok(())
    }
}

/// One training example: features plus teacher-forcing targets (ending in EOS).
#[derive(Debug, Clone, Copy)]
pub struct StepItem<'a> {
    /// Item index handed back to the reward function.
    pub index: usize,
    pub features: &'a FeatureSequence,
    pub targets: &'a [usize],
}

/// Scores a sampled word sequence (without the terminating EOS) for an item.
pub trait SequenceReward {
    fn reward(&self, index: usize, words: &[usize]) -> Result<Reward>;
}

impl<F> SequenceReward for F
where
    F: Fn(usize, &[usize]) -> Result<Reward>,
{
    fn reward(&self, index: usize, words: &[usize]) -> Result<Reward> {
        self(index, words)
    }
}

/// Separate Adam states for the policy and the baseline regressor.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub policy: Adam,
    pub baseline: Adam,
}

impl Optimizer {
    pub fn new(params: &ModelParams, cfg: AdamConfig) -> Self {
        let l = params.layout();
        Optimizer {
            policy: Adam::new(l.policy_range().len(), cfg),
            baseline: Adam::new(l.baseline_range().len(), cfg),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepStats {
    pub items: usize,
    /// Summed over the batch; divide by `items` for a mean.
    pub xe_loss: f64,
    pub reward: f64,
    pub baseline: f64,
    pub abs_advantage: f64,
    pub baseline_loss: f64,
    /// Global policy-gradient norm before clipping.
    pub grad_norm: f64,
}

struct RlPass {
    reward: f64,
    baseline_mean: f64,
    abs_adv_mean: f64,
    baseline_loss: f64,
}

fn xe_pass<R: Rng>(params: &ModelParams, item: &StepItem<'_>, dropout: f64, scale: f64, rng: &mut R, grad: &mut [f64]) -> Result<f64> {
    let trace = teacher_forced(item.features, item.targets, params, Some(Dropout { rate: dropout, rng }))?;
    let (loss, mut ups) = xe_loss(&trace, item.targets)?;
    for u in ups.iter_mut().flatten() {
        *u *= scale;
    }
    backward_into(&trace, params, &ups, grad)?;
    Ok(loss)
}

fn rl_pass<R: Rng>(
    params: &ModelParams,
    item: &StepItem<'_>,
    cfg: &TrainConfig,
    scale: f64,
    batch_len: f64,
    reward_fn: &dyn SequenceReward,
    rng: &mut R,
    grad: &mut [f64],
) -> Result<RlPass> {
    let (words, trace) = sample_sequence(item.features, params, rng, cfg.max_decode, cfg.dropout)?;
    let body: Vec<usize> = words.iter().copied().take_while(|&w| w != EOS).collect();
    let reward = reward_fn.reward(item.index, &body)?.value;
    let baselines = baseline_for_trace(&trace, params);
    let mut ups = rl_gradients(&trace, reward, &baselines)?;
    for u in ups.iter_mut().flatten() {
        *u *= scale;
    }
    backward_into(&trace, params, &ups, grad)?;
    let (bl, bgrad) = baseline_loss(&trace, &baselines, reward)?;
    bgrad.add_into(grad, params, 1.0 / batch_len);
    let steps = baselines.values.len().max(1) as f64;
    Ok(RlPass {
        reward,
        baseline_mean: baselines.values.iter().sum::<f64>() / steps,
        abs_adv_mean: baselines.values.iter().map(|b| (reward - b).abs()).sum::<f64>() / steps,
        baseline_loss: bl,
    })
}

/// Batch-mean XE gradient (before clipping).
pub fn xe_gradient<R: Rng>(params: &ModelParams, batch: &[StepItem<'_>], cfg: &TrainConfig, rng: &mut R) -> Result<(Vec<f64>, StepStats)> {
    let mut grad = params.zeros_like();
    let mut stats = StepStats {
        items: batch.len(),
        ..Default::default()
    };
    let scale = 1.0 / batch.len() as f64;
    for item in batch {
        stats.xe_loss += xe_pass(params, item, cfg.dropout, scale, rng, &mut grad)?;
    }
    Ok((grad, stats))
}

/// Batch-mean REINFORCE gradient with the learned baseline (before clipping).
/// The regressor's squared-error gradient is included in its own slots.
pub fn rl_gradient<R: Rng>(
    params: &ModelParams,
    batch: &[StepItem<'_>],
    cfg: &TrainConfig,
    reward_fn: &dyn SequenceReward,
    rng: &mut R,
) -> Result<(Vec<f64>, StepStats)> {
    let mut grad = params.zeros_like();
    let mut stats = StepStats {
        items: batch.len(),
        ..Default::default()
    };
    let n = batch.len() as f64;
    for item in batch {
        let r = rl_pass(params, item, cfg, 1.0 / n, n, reward_fn, rng, &mut grad)?;
        stats.reward += r.reward;
        stats.baseline += r.baseline_mean;
        stats.abs_advantage += r.abs_adv_mean;
        stats.baseline_loss += r.baseline_loss;
    }
    Ok((grad, stats))
}

/// `(1 - gamma) * XE + gamma * RL`, per item: the teacher-forced pass first,
/// then the sampled pass. A zero weight skips that pass entirely.
pub fn mixed_gradient<R: Rng>(
    params: &ModelParams,
    batch: &[StepItem<'_>],
    cfg: &TrainConfig,
    gamma: f64,
    reward_fn: &dyn SequenceReward,
    rng: &mut R,
) -> Result<(Vec<f64>, StepStats)> {
    let mut grad = params.zeros_like();
    let mut stats = StepStats {
        items: batch.len(),
        ..Default::default()
    };
    let n = batch.len() as f64;
    let w_xe = 1.0 - gamma;
    let w_rl = gamma;
    for item in batch {
        if w_xe != 0.0 {
            stats.xe_loss += xe_pass(params, item, cfg.dropout, w_xe / n, rng, &mut grad)?;
        }
        if w_rl != 0.0 {
            let r = rl_pass(params, item, cfg, w_rl / n, n, reward_fn, rng, &mut grad)?;
            stats.reward += r.reward;
            stats.baseline += r.baseline_mean;
            stats.abs_advantage += r.abs_adv_mean;
            stats.baseline_loss += r.baseline_loss;
        }
    }
    Ok((grad, stats))
}

/// Clips the policy part of `grad` to `clip_norm` and takes one Adam step on
/// each parameter group. Returns the pre-clip policy norm.
pub fn apply_update(params: &mut ModelParams, opt: &mut Optimizer, grad: &mut [f64], lr: f64, cfg: &TrainConfig) -> Result<f64> {
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient component {i} is {}", grad[i])));
    }
    let policy = params.layout().policy_range();
    let base = params.layout().baseline_range();
    let norm = clip_global_norm(&mut grad[policy.clone()], cfg.clip_norm);
    let data = params.as_mut_slice();
    opt.policy.step(&mut data[policy.clone()], &grad[policy], lr);
    opt.baseline.step(&mut data[base.clone()], &grad[base], cfg.lr_baseline);
    if !params.is_finite() {
        return Err(Error::NonFinite("parameters after update".into()));
    }
    Ok(norm)
}

pub fn xe_step<R: Rng>(
    params: &mut ModelParams,
    opt: &mut Optimizer,
    batch: &[StepItem<'_>],
    cfg: &TrainConfig,
    lr: f64,
    rng: &mut R,
) -> Result<StepStats> {
    let (mut grad, mut stats) = xe_gradient(params, batch, cfg, rng)?;
    stats.grad_norm = apply_update(params, opt, &mut grad, lr, cfg)?;
    Ok(stats)
}

pub fn rl_step<R: Rng>(
    params: &mut ModelParams,
    opt: &mut Optimizer,
    batch: &[StepItem<'_>],
    cfg: &TrainConfig,
    lr: f64,
    reward_fn: &dyn SequenceReward,
    rng: &mut R,
) -> Result<StepStats> {
    let (mut grad, mut stats) = rl_gradient(params, batch, cfg, reward_fn, rng)?;
    stats.grad_norm = apply_update(params, opt, &mut grad, lr, cfg)?;
    Ok(stats)
}

#[allow(clippy::too_many_arguments)]
pub fn mixed_step<R: Rng>(
    params: &mut ModelParams,
    opt: &mut Optimizer,
    batch: &[StepItem<'_>],
    cfg: &TrainConfig,
    gamma: f64,
    lr: f64,
    reward_fn: &dyn SequenceReward,
    rng: &mut R,
) -> Result<StepStats> {
    let (mut grad, mut stats) = mixed_gradient(params, batch, cfg, gamma, reward_fn, rng)?;
    stats.grad_norm = apply_update(params, opt, &mut grad, lr, cfg)?;
    Ok(stats)
}
