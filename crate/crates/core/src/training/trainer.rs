//! Epoch loops: the cross-entropy phase with early stopping, then the mixed
//! XE/RL phase starting from its best parameters.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::xe_loss;
use super::step::{mixed_step, xe_step, Optimizer, SequenceReward, StepItem, StepStats, TrainConfig};
use crate::corpus::Corpus;
use crate::entailment::EntailmentScorer;
use crate::error::{Error, Result};
use crate::metrics::{evaluate_corpus, ItemScores, MetricConfig, MetricReport};
use crate::model::{beam_search, ensemble_decode, sample_sequence, teacher_forced, ModelDims, ModelParams, Vocab, EOS};
use crate::reward::{reward_with_target, Reward, RewardConfig, RewardKind, RewardTarget};
use crate::text::{build_doc_freq, DocFreqTable, Sentence};

/// Model sizes other than the vocabulary, which comes from the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArchConfig {
    pub proj_dim: usize,
    pub enc_hidden: usize,
    pub dec_hidden: usize,
    pub embed_dim: usize,
    pub attn_dim: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            proj_dim: 32,
            enc_hidden: 64,
            dec_hidden: 64,
            embed_dim: 32,
            attn_dim: 32,
        }
    }
}

impl ArchConfig {
    pub fn dims(&self, feat_dim: usize, vocab_size: usize) -> ModelDims {
        ModelDims {
            feat_dim,
            proj_dim: self.proj_dim,
            enc_hidden: self.enc_hidden,
            dec_hidden: self.dec_hidden,
            embed_dim: self.embed_dim,
            attn_dim: self.attn_dim,
            vocab_size,
        }
    }
}

/// Train and dev splits with the encoded captions of every training item.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub train: Corpus,
    pub dev: Corpus,
    pub vocab: Vocab,
    train_targets: Vec<Vec<Vec<usize>>>,
    dev_targets: Vec<Vec<Vec<usize>>>,
}

impl TrainingData {
    /// Builds the vocabulary from the training captions.
    pub fn new(train: Corpus, dev: Corpus, max_vocab: usize) -> Result<Self> {
        let vocab = Vocab::build(train.items().iter().flat_map(|it| it.references.iter()), max_vocab)?;
        Self::with_vocab(train, dev, vocab)
    }

    pub fn with_vocab(train: Corpus, dev: Corpus, vocab: Vocab) -> Result<Self> {
        if train.is_empty() || dev.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        if train.feat_dim() != dev.feat_dim() {
            return Err(Error::Shape("train and dev feature dimensions differ".into()));
        }
        let encode = |c: &Corpus| -> Vec<Vec<Vec<usize>>> {
            c.items()
                .iter()
                .map(|it| it.references.iter().map(|s| vocab.encode(s)).collect())
                .collect()
        };
        let train_targets = encode(&train);
        let dev_targets = encode(&dev);
        Ok(TrainingData {
            train,
            dev,
            vocab,
            train_targets,
            dev_targets,
        })
    }

    pub fn feat_dim(&self) -> usize {
        self.train.feat_dim().expect("non-empty")
    }

    fn xe_examples(&self) -> Vec<(usize, usize)> {
        self.train_targets
            .iter()
            .enumerate()
            .flat_map(|(i, caps)| (0..caps.len()).map(move |c| (i, c)))
            .collect()
    }

    /// Mean per-token negative log-likelihood of the dev captions, no dropout.
    pub fn dev_loss(&self, params: &ModelParams) -> Result<f64> {
        let mut loss = 0.0;
        let mut tokens = 0usize;
        for (item, caps) in self.dev.items().iter().zip(&self.dev_targets) {
            for t in caps {
                let tr = teacher_forced::<ChaCha8Rng>(&item.features, t, params, None)?;
                loss += xe_loss(&tr, t)?.0;
                tokens += t.len();
            }
        }
        Ok(loss / tokens.max(1) as f64)
    }
}

/// Settings for decoding and scoring a split.
pub struct Evaluator<'a> {
    pub metric: MetricConfig,
    pub reward: RewardConfig,
    pub scorer: &'a dyn EntailmentScorer,
    pub beam: usize,
    pub max_decode: usize,
}

/// Beam-decodes every item; more than one member decodes as an ensemble.
pub fn decode_corpus(
    members: &[ModelParams],
    vocab: &Vocab,
    corpus: &Corpus,
    beam: usize,
    max_len: usize,
) -> Result<BTreeMap<String, Sentence>> {
    let mut out = BTreeMap::new();
    for item in corpus.items() {
        let words = match members {
            [] => return Err(Error::Ensemble("no models to decode with".into())),
            [one] => beam_search(&item.features, one, beam, max_len)?,
            many => ensemble_decode(&item.features, many, beam, max_len)?,
        };
        out.insert(item.id.clone(), vocab.decode(&words));
    }
    Ok(out)
}

impl Evaluator<'_> {
    pub fn evaluate(&self, members: &[ModelParams], vocab: &Vocab, corpus: &Corpus) -> Result<MetricReport> {
        let cands = decode_corpus(members, vocab, corpus, self.beam, self.max_decode)?;
        evaluate_corpus(&cands, corpus, &self.metric, &self.reward, self.scorer)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Xe,
    Mixed,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Xe => "xe",
            Phase::Mixed => "mixed",
        }
    }
}

/// One row of the training log. RL columns are absent in the XE phase.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub phase: Phase,
    pub epoch: usize,
    pub train_xe_loss: Option<f64>,
    pub dev_xe_loss: f64,
    pub mean_reward: Option<f64>,
    pub mean_baseline: Option<f64>,
    pub mean_abs_advantage: Option<f64>,
    pub dev: ItemScores,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    pub const HEADER: &'static str =
        "phase,epoch,train_xe_loss,dev_xe_loss,mean_reward,mean_baseline,mean_abs_advantage,dev_bleu4,dev_rouge_l,dev_cider_d,dev_cident";

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let mut out = format!("{}\n", Self::HEADER);
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{},{:.6},{},{},{},{:.6},{:.6},{:.6},{:.6}",
                e.phase.as_str(),
                e.epoch,
                opt(e.train_xe_loss),
                e.dev_xe_loss,
                opt(e.mean_reward),
                opt(e.mean_baseline),
                opt(e.mean_abs_advantage),
                e.dev.bleu4,
                e.dev.rouge_l,
                e.dev.cider_d,
                e.dev.cident
            );
        }
        out
    }

    pub fn phase(&self, phase: Phase) -> impl Iterator<Item = &EpochLog> {
        self.epochs.iter().filter(move |e| e.phase == phase)
    }
}

fn mean(sum: f64, n: usize) -> f64 {
    sum / n.max(1) as f64
}

#[derive(Debug, Clone)]
pub struct XeOutcome {
    /// Parameters from the epoch with the lowest dev loss.
    pub params: ModelParams,
    pub best_epoch: usize,
    pub log: TrainLog,
    /// Dev scores of `params`.
    pub dev: ItemScores,
}

/// Cross-entropy training until the dev loss fails to improve for
/// `xe_patience` consecutive epochs (or `xe_max_epochs` is reached).
pub fn train_xe(data: &TrainingData, arch: &ArchConfig, cfg: &TrainConfig, eval: &Evaluator<'_>) -> Result<XeOutcome> {
    cfg.validate()?;
    let dims = arch.dims(data.feat_dim(), data.vocab.len());
    let mut params = ModelParams::init_uniform(dims, cfg.init_range, cfg.seed)?;
    let mut opt = Optimizer::new(&params, cfg.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut examples = data.xe_examples();
    let mut log = TrainLog::default();
    let mut best: Option<(f64, usize, ModelParams, ItemScores)> = None;
    let mut stale = 0;

    for epoch in 1..=cfg.xe_max_epochs {
        examples.shuffle(&mut rng);
        let mut loss = 0.0;
        let mut tokens = 0usize;
        for chunk in examples.chunks(cfg.batch_size) {
            let batch: Vec<StepItem<'_>> = chunk
                .iter()
                .map(|&(i, c)| StepItem {
                    index: i,
                    features: &data.train.items()[i].features,
                    targets: &data.train_targets[i][c],
                })
                .collect();
            tokens += batch.iter().map(|b| b.targets.len()).sum::<usize>();
            loss += xe_step(&mut params, &mut opt, &batch, cfg, cfg.lr_xe, &mut rng)?.xe_loss;
        }
        let dev_loss = data.dev_loss(&params)?;
        let dev = eval.evaluate(std::slice::from_ref(&params), &data.vocab, &data.dev)?.mean();
        log.epochs.push(EpochLog {
            phase: Phase::Xe,
            epoch,
            train_xe_loss: Some(mean(loss, tokens)),
            dev_xe_loss: dev_loss,
            mean_reward: None,
            mean_baseline: None,
            mean_abs_advantage: None,
            dev: dev.clone(),
        });
        if best.as_ref().is_none_or(|b| dev_loss < b.0) {
            best = Some((dev_loss, epoch, params.clone(), dev));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.xe_patience {
                break;
            }
        }
    }
    let (_, best_epoch, params, dev) = best.ok_or_else(|| Error::Config("train.xe_max_epochs must be positive".into()))?;
    Ok(XeOutcome {
        params,
        best_epoch,
        log,
        dev,
    })
}

/// Sequence reward over the items of one corpus.
pub struct CorpusReward<'a> {
    vocab: &'a Vocab,
    df: DocFreqTable,
    targets: Vec<RewardTarget<'a>>,
    metric: MetricConfig,
    reward: RewardConfig,
    scorer: Option<&'a dyn EntailmentScorer>,
}

impl<'a> CorpusReward<'a> {
    /// Without a scorer the reward is the plain base metric.
    pub fn new(
        corpus: &'a Corpus,
        vocab: &'a Vocab,
        metric: MetricConfig,
        reward: RewardConfig,
        scorer: Option<&'a dyn EntailmentScorer>,
    ) -> Result<Self> {
        let df = build_doc_freq(corpus)?;
        let targets = corpus
            .items()
            .iter()
            .map(|it| RewardTarget::new(&it.references, &df, reward.base_metric))
            .collect::<Result<_>>()?;
        Ok(CorpusReward {
            vocab,
            df,
            targets,
            metric,
            reward,
            scorer,
        })
    }

    pub fn score_sentence(&self, index: usize, sentence: &Sentence) -> Result<Reward> {
        let target = self
            .targets
            .get(index)
            .ok_or_else(|| Error::Data(format!("no reward target for item {index}")))?;
        reward_with_target(sentence, target, &self.df, &self.metric, &self.reward, self.scorer)
    }
}

impl SequenceReward for CorpusReward<'_> {
    fn reward(&self, index: usize, words: &[usize]) -> Result<Reward> {
        self.score_sentence(index, &self.vocab.decode(words))
    }
}

/// Mean reward of one sample per item, drawn under training-time dropout so
/// it is comparable with the rewards logged during mixed epochs.
pub fn mean_sampled_reward(
    params: &ModelParams,
    corpus: &Corpus,
    reward: &dyn SequenceReward,
    max_len: usize,
    dropout: f64,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    for (i, item) in corpus.items().iter().enumerate() {
        let (words, _) = sample_sequence(&item.features, params, &mut rng, max_len, dropout)?;
        let body: Vec<usize> = words.into_iter().take_while(|&w| w != EOS).collect();
        sum += reward.reward(i, &body)?.value;
    }
    Ok(mean(sum, corpus.len()))
}

#[derive(Debug, Clone)]
pub struct MixedOutcome {
    pub params: ModelParams,
    pub log: TrainLog,
    pub gamma: f64,
}

/// Mixed-loss fine-tuning for `rl_epochs` epochs. Epoch 0 of the log holds
/// the starting point, with its reward measured by an independent probe.
pub fn train_mixed(
    start: &ModelParams,
    data: &TrainingData,
    cfg: &TrainConfig,
    kind: RewardKind,
    reward_cfg: &RewardConfig,
    scorer: &dyn EntailmentScorer,
    eval: &Evaluator<'_>,
) -> Result<MixedOutcome> {
    cfg.validate()?;
    reward_cfg.validate()?;
    if reward_cfg.base_metric != kind.base_metric() {
        return Err(Error::Config(format!("reward `{kind}` does not match the configured base metric")));
    }
    let gamma = cfg.gamma_for(kind);
    let reward = CorpusReward::new(
        &data.train,
        &data.vocab,
        eval.metric,
        *reward_cfg,
        kind.uses_entailment().then_some(scorer),
    )?;
    let mut params = start.clone();
    let mut opt = Optimizer::new(&params, cfg.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0xa11ce));
    let probe_seed = cfg.seed.wrapping_add(0x9e0be);
    let mut log = TrainLog::default();

    let dev_entry = |params: &ModelParams, epoch: usize, stats: Option<(StepStats, f64)>, reward0: Option<f64>| -> Result<EpochLog> {
        let dev = eval.evaluate(std::slice::from_ref(params), &data.vocab, &data.dev)?.mean();
        let (train_xe, reward_mean, base, adv) = match stats {
            Some((s, tokens)) => {
                let n = s.items;
                (
                    (gamma < 1.0).then(|| s.xe_loss / tokens),
                    Some(mean(s.reward, n)),
                    Some(mean(s.baseline, n)),
                    Some(mean(s.abs_advantage, n)),
                )
            }
            None => (None, reward0, None, None),
        };
        Ok(EpochLog {
            phase: Phase::Mixed,
            epoch,
            train_xe_loss: train_xe,
            dev_xe_loss: data.dev_loss(params)?,
            mean_reward: reward_mean,
            mean_baseline: base,
            mean_abs_advantage: adv,
            dev,
        })
    };

    let r0 = mean_sampled_reward(&params, &data.train, &reward, cfg.max_decode, cfg.dropout, probe_seed)?;
    log.epochs.push(dev_entry(&params, 0, None, Some(r0))?);

    let mut order: Vec<usize> = (0..data.train.len()).collect();
    for epoch in 1..=cfg.rl_epochs {
        order.shuffle(&mut rng);
        let mut total = StepStats::default();
        let mut tokens = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<StepItem<'_>> = chunk
                .iter()
                .map(|&i| {
                    let caps = &data.train_targets[i];
                    StepItem {
                        index: i,
                        features: &data.train.items()[i].features,
                        targets: &caps[epoch % caps.len()],
                    }
                })
                .collect();
            tokens += batch.iter().map(|b| b.targets.len()).sum::<usize>();
            let s = mixed_step(&mut params, &mut opt, &batch, cfg, gamma, cfg.lr_mixed, &reward, &mut rng)?;
            total.items += s.items;
            total.xe_loss += s.xe_loss;
            total.reward += s.reward;
            total.baseline += s.baseline;
            total.abs_advantage += s.abs_advantage;
            total.baseline_loss += s.baseline_loss;
        }
        log.epochs.push(dev_entry(&params, epoch, Some((total, tokens as f64)), None)?);
    }
    Ok(MixedOutcome { params, log, gamma })
}
