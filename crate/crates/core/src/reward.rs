//! Sequence-level rewards: a phrase-matching metric, optionally penalized by
//! `lambda` when the entailment score falls below `beta`.

use std::fmt;
use std::str::FromStr;

use crate::entailment::{ent_max, EntailmentScore, EntailmentScorer};
use crate::error::{Error, Result};
use crate::metrics::{bleu4, CiderReferences, MetricConfig};
use crate::text::{DocFreqTable, Sentence};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaseMetric {
    CiderD,
    Bleu4,
}

impl fmt::Display for BaseMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaseMetric::CiderD => "cider",
            BaseMetric::Bleu4 => "bleu",
        })
    }
}

/// The `--reward` choices: a base metric with or without the entailment penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardKind {
    Cider,
    Cident,
    Bleu,
    Bleuent,
}

impl RewardKind {
    pub fn base_metric(self) -> BaseMetric {
        match self {
            RewardKind::Cider | RewardKind::Cident => BaseMetric::CiderD,
            RewardKind::Bleu | RewardKind::Bleuent => BaseMetric::Bleu4,
        }
    }

    pub fn uses_entailment(self) -> bool {
        matches!(self, RewardKind::Cident | RewardKind::Bleuent)
    }
}

impl FromStr for RewardKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cider" => Ok(RewardKind::Cider),
            "cident" => Ok(RewardKind::Cident),
            "bleu" => Ok(RewardKind::Bleu),
            "bleuent" => Ok(RewardKind::Bleuent),
            other => Err(Error::Config(format!(
                "unknown reward `{other}` (expected cider, cident, bleu or bleuent)"
            ))),
        }
    }
}

impl fmt::Display for RewardKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RewardKind::Cider => "cider",
            RewardKind::Cident => "cident",
            RewardKind::Bleu => "bleu",
            RewardKind::Bleuent => "bleuent",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardConfig {
    pub base_metric: BaseMetric,
    pub lambda: f64,
    pub beta: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            base_metric: BaseMetric::CiderD,
            lambda: 0.45,
            beta: 0.33,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("reward.lambda must be >= 0, got {}", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config(format!("reward.beta must be in [0,1], got {}", self.beta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reward {
    pub value: f64,
    pub base_value: f64,
    pub ent: EntailmentScore,
    pub penalized: bool,
}

/// `base - lambda` when `ent < beta`, otherwise `base`. No clamping.
pub fn cident(base: f64, ent: EntailmentScore, cfg: &RewardConfig) -> Reward {
    let penalized = ent.value() < cfg.beta;
    Reward {
        value: if penalized { base - cfg.lambda } else { base },
        base_value: base,
        ent,
        penalized,
    }
}

/// Reference set of one item with its CIDEr-D statistics precomputed.
#[derive(Debug, Clone)]
pub struct RewardTarget<'a> {
    refs: &'a [Sentence],
    cider: Option<CiderReferences>,
}

impl<'a> RewardTarget<'a> {
    pub fn new(refs: &'a [Sentence], df: &DocFreqTable, base: BaseMetric) -> Result<Self> {
        if refs.is_empty() {
            return Err(Error::MissingReference);
        }
        let cider = match base {
            BaseMetric::CiderD => Some(CiderReferences::new(refs, df)?),
            BaseMetric::Bleu4 => None,
        };
        Ok(RewardTarget { refs, cider })
    }

    pub fn refs(&self) -> &[Sentence] {
        self.refs
    }
}

/// Scores a sampled caption. `scorer = None` means the plain metric reward:
/// entailment is not consulted and the reward is never penalized.
pub fn reward_with_target(
    candidate: &Sentence,
    target: &RewardTarget<'_>,
    df: &DocFreqTable,
    metric_cfg: &MetricConfig,
    reward_cfg: &RewardConfig,
    scorer: Option<&dyn EntailmentScorer>,
) -> Result<Reward> {
    let base = match (&target.cider, reward_cfg.base_metric) {
        (Some(c), BaseMetric::CiderD) => c.score(candidate, df, metric_cfg),
        (None, BaseMetric::CiderD) => CiderReferences::new(target.refs, df)?.score(candidate, df, metric_cfg),
        (_, BaseMetric::Bleu4) => bleu4(candidate, target.refs, metric_cfg)?,
    };
    match scorer {
        Some(s) => {
            let ent = ent_max(candidate, target.refs, s)?;
            Ok(cident(base, ent, reward_cfg))
        }
        None => Ok(Reward {
            value: base,
            base_value: base,
            ent: EntailmentScore::ONE,
            penalized: false,
        }),
    }
}

/// Base metric, then max-over-references entailment, then the penalty.
pub fn reward_for_sample(
    candidate: &Sentence,
    refs: &[Sentence],
    df: &DocFreqTable,
    metric_cfg: &MetricConfig,
    reward_cfg: &RewardConfig,
    scorer: &dyn EntailmentScorer,
) -> Result<Reward> {
    let target = RewardTarget::new(refs, df, reward_cfg.base_metric)?;
    reward_with_target(candidate, &target, df, metric_cfg, reward_cfg, Some(scorer))
}
