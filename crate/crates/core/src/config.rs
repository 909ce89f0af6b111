//! Flat `key = value` run configuration.
//!
//! Lines are `key = value`; `#` starts a comment. Every key has a default
//! (see [`RunConfig::defaults_text`]) and unknown or repeated keys are
//! rejected.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use crate::corpus::Split;
use crate::entailment::{ContradictionLexicon, EntailmentScorer, LexicalScorer, RemoteScorer, SCORER_URL_ENV};
use crate::error::{Error, Result};
use crate::metrics::MetricConfig;
use crate::reward::{RewardConfig, RewardKind};
use crate::synth::SyntheticSpec;
use crate::training::{ArchConfig, TrainConfig};

/// Default penalty when `reward.lambda = auto` and no baseline score is known.
pub const FALLBACK_LAMBDA: f64 = 0.45;

/// Penalty setting: a number, or the XE baseline's dev score on the base metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaSetting {
    Auto,
    Value(f64),
}

impl LambdaSetting {
    /// Resolves `Auto` with the baseline score when one is available.
    pub fn resolve(self, baseline: Option<f64>) -> f64 {
        match (self, baseline) {
            (LambdaSetting::Value(v), _) => v,
            (LambdaSetting::Auto, Some(b)) => b,
            (LambdaSetting::Auto, None) => FALLBACK_LAMBDA,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub out: PathBuf,
    pub dev_frac: f64,
    pub test_frac: f64,
    pub arch: ArchConfig,
    pub max_vocab: usize,
    pub train: TrainConfig,
    /// Number of consecutive seeds trained by one command, for ensembles.
    pub num_seeds: usize,
    pub reward: RewardKind,
    pub lambda: LambdaSetting,
    pub beta: f64,
    pub metric: MetricConfig,
    /// Overrides the environment variable when set.
    pub scorer_url: Option<String>,
    pub scorer_timeout: Duration,
    pub synth: SyntheticSpec,
    pub synth_seed: u64,
    pub eval_split: Split,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: None,
            lexicon: None,
            out: PathBuf::from("out"),
            dev_frac: 0.2,
            test_frac: 0.2,
            arch: ArchConfig::default(),
            max_vocab: 64,
            train: TrainConfig::default(),
            num_seeds: 1,
            reward: RewardKind::Cident,
            lambda: LambdaSetting::Auto,
            beta: RewardConfig::default().beta,
            metric: MetricConfig::default(),
            scorer_url: None,
            scorer_timeout: Duration::from_secs(10),
            synth: SyntheticSpec::default(),
            synth_seed: 2016,
            eval_split: Split::Test,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_owned)
        .collect()
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn split_name(s: Split) -> &'static str {
    match s {
        Split::Train => "train",
        Split::Dev => "dev",
        Split::Test => "test",
    }
}

impl RunConfig {
    pub fn from_str_config(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: key `{key}` repeated", n + 1)));
            }
            cfg.set(key, value).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", n + 1)),
                other => other,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("reading {}: {e}", path.display())))?;
        Self::from_str_config(&text)
    }

    /// Sets one key. Values are validated as a whole by [`RunConfig::validate`].
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let t = &mut self.train;
        let a = &mut self.arch;
        let s = &mut self.synth;
        match key {
            "paths.corpus" => self.corpus = opt_path(v),
            "paths.lexicon" => self.lexicon = opt_path(v),
            "paths.out" => self.out = PathBuf::from(v),
            "split.dev_frac" => self.dev_frac = parse(key, v)?,
            "split.test_frac" => self.test_frac = parse(key, v)?,
            "eval.split" => self.eval_split = v.parse()?,
            "model.proj_dim" => a.proj_dim = parse(key, v)?,
            "model.enc_hidden" => a.enc_hidden = parse(key, v)?,
            "model.dec_hidden" => a.dec_hidden = parse(key, v)?,
            "model.embed_dim" => a.embed_dim = parse(key, v)?,
            "model.attn_dim" => a.attn_dim = parse(key, v)?,
            "model.max_vocab" => self.max_vocab = parse(key, v)?,
            "train.gamma" => t.gamma = if v == "auto" { None } else { Some(parse(key, v)?) },
            "train.lr_xe" => t.lr_xe = parse(key, v)?,
            "train.lr_mixed" => t.lr_mixed = parse(key, v)?,
            "train.lr_baseline" => t.lr_baseline = parse(key, v)?,
            "train.clip_norm" => t.clip_norm = parse(key, v)?,
            "train.dropout" => t.dropout = parse(key, v)?,
            "train.adam_beta1" => t.adam.beta1 = parse(key, v)?,
            "train.adam_beta2" => t.adam.beta2 = parse(key, v)?,
            "train.adam_epsilon" => t.adam.epsilon = parse(key, v)?,
            "train.batch_size" => t.batch_size = parse(key, v)?,
            "train.xe_max_epochs" => t.xe_max_epochs = parse(key, v)?,
            "train.xe_patience" => t.xe_patience = parse(key, v)?,
            "train.rl_epochs" => t.rl_epochs = parse(key, v)?,
            "train.seed" => t.seed = parse(key, v)?,
            "train.num_seeds" => self.num_seeds = parse(key, v)?,
            "train.init_range" => t.init_range = parse(key, v)?,
            "train.max_decode" => t.max_decode = parse(key, v)?,
            "train.eval_beam" => t.eval_beam = parse(key, v)?,
            "reward.metric" => self.reward = v.parse()?,
            "reward.lambda" => {
                self.lambda = if v == "auto" {
                    LambdaSetting::Auto
                } else {
                    LambdaSetting::Value(parse(key, v)?)
                }
            }
            "reward.beta" => self.beta = parse(key, v)?,
            "metric.cider_sigma" => self.metric.cider_sigma = parse(key, v)?,
            "metric.bleu_epsilon" => self.metric.bleu_epsilon = parse(key, v)?,
            "scorer.url" => self.scorer_url = (!v.is_empty()).then(|| v.to_string()),
            "scorer.timeout_secs" => self.scorer_timeout = Duration::from_secs_f64(parse::<f64>(key, v)?.max(0.0)),
            "synth.items" => s.items = parse(key, v)?,
            "synth.subjects" => s.subjects = list(v),
            "synth.verbs" => s.verbs = list(v),
            "synth.objects" => s.objects = list(v),
            "synth.contradictions" => {
                s.contradictions = list(v)
                    .iter()
                    .map(|p| {
                        p.split_once(':')
                            .map(|(a, b)| (a.trim().to_string(), b.trim().to_string()))
                            .ok_or_else(|| Error::Config(format!("`{key}`: pair `{p}` is not `a:b`")))
                    })
                    .collect::<Result<_>>()?
            }
            "synth.paraphrases" => s.paraphrases = parse(key, v)?,
            "synth.feat_dim" => s.feat_dim = parse(key, v)?,
            "synth.frames" => s.frames = parse(key, v)?,
            "synth.noise" => s.noise = parse(key, v)?,
            "synth.pair_separation" => s.pair_separation = parse(key, v)?,
            "synth.bare_rate" => s.bare_rate = parse(key, v)?,
            "synth.feature_seed" => s.feature_seed = parse(key, v)?,
            "synth.seed" => self.synth_seed = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.metric.validate()?;
        self.reward_config(None).validate()?;
        self.synth.validate()?;
        if self.num_seeds == 0 {
            return Err(Error::Config("train.num_seeds must be positive".into()));
        }
        if let LambdaSetting::Value(v) = self.lambda {
            if !v.is_finite() {
                return Err(Error::Config("reward.lambda must be finite or `auto`".into()));
            }
        }
        let a = &self.arch;
        if [a.proj_dim, a.enc_hidden, a.dec_hidden, a.embed_dim, a.attn_dim].contains(&0) {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        Ok(())
    }

    /// Reward settings with `lambda` resolved against an optional baseline score.
    pub fn reward_config(&self, baseline: Option<f64>) -> RewardConfig {
        RewardConfig {
            base_metric: self.reward.base_metric(),
            lambda: self.lambda.resolve(baseline),
            beta: self.beta,
        }
    }

    /// Endpoint for the remote scorer: the config key, else the environment.
    pub fn scorer_endpoint(&self) -> Option<String> {
        self.scorer_url
            .clone()
            .or_else(|| std::env::var(SCORER_URL_ENV).ok().filter(|s| !s.is_empty()))
    }

    /// The remote scorer when an endpoint is configured, otherwise the
    /// lexical scorer over `lexicon` (or an empty lexicon).
    pub fn scorer(&self, lexicon: Option<ContradictionLexicon>) -> Box<dyn EntailmentScorer> {
        match self.scorer_endpoint() {
            Some(url) => Box::new(RemoteScorer::new(url, self.scorer_timeout)),
            None => Box::new(LexicalScorer::new(lexicon.unwrap_or_else(|| {
                ContradictionLexicon::new(std::iter::empty::<(&str, &str)>(), ContradictionLexicon::default_negations())
            }))),
        }
    }

    /// Every key with its current value, in the accepted file format.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let a = &self.arch;
        let s = &self.synth;
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("paths.corpus", path(&self.corpus));
        kv("paths.lexicon", path(&self.lexicon));
        kv("paths.out", self.out.display().to_string());
        kv("split.dev_frac", self.dev_frac.to_string());
        kv("split.test_frac", self.test_frac.to_string());
        kv("eval.split", split_name(self.eval_split).into());
        kv("model.proj_dim", a.proj_dim.to_string());
        kv("model.enc_hidden", a.enc_hidden.to_string());
        kv("model.dec_hidden", a.dec_hidden.to_string());
        kv("model.embed_dim", a.embed_dim.to_string());
        kv("model.attn_dim", a.attn_dim.to_string());
        kv("model.max_vocab", self.max_vocab.to_string());
        kv("train.gamma", t.gamma.map_or("auto".into(), |g| g.to_string()));
        kv("train.lr_xe", t.lr_xe.to_string());
        kv("train.lr_mixed", t.lr_mixed.to_string());
        kv("train.lr_baseline", t.lr_baseline.to_string());
        kv("train.clip_norm", t.clip_norm.to_string());
        kv("train.dropout", t.dropout.to_string());
        kv("train.adam_beta1", t.adam.beta1.to_string());
        kv("train.adam_beta2", t.adam.beta2.to_string());
        kv("train.adam_epsilon", t.adam.epsilon.to_string());
        kv("train.batch_size", t.batch_size.to_string());
        kv("train.xe_max_epochs", t.xe_max_epochs.to_string());
        kv("train.xe_patience", t.xe_patience.to_string());
        kv("train.rl_epochs", t.rl_epochs.to_string());
        kv("train.seed", t.seed.to_string());
        kv("train.num_seeds", self.num_seeds.to_string());
        kv("train.init_range", t.init_range.to_string());
        kv("train.max_decode", t.max_decode.to_string());
        kv("train.eval_beam", t.eval_beam.to_string());
        kv("reward.metric", self.reward.to_string());
        kv(
            "reward.lambda",
            match self.lambda {
                LambdaSetting::Auto => "auto".into(),
                LambdaSetting::Value(v) => v.to_string(),
            },
        );
        kv("reward.beta", self.beta.to_string());
        kv("metric.cider_sigma", self.metric.cider_sigma.to_string());
        kv("metric.bleu_epsilon", self.metric.bleu_epsilon.to_string());
        kv("scorer.url", self.scorer_url.clone().unwrap_or_default());
        kv("scorer.timeout_secs", self.scorer_timeout.as_secs_f64().to_string());
        kv("synth.items", s.items.to_string());
        kv("synth.subjects", s.subjects.join(","));
        kv("synth.verbs", s.verbs.join(","));
        kv("synth.objects", s.objects.join(","));
        kv(
            "synth.contradictions",
            s.contradictions
                .iter()
                .map(|(a, b)| format!("{a}:{b}"))
                .collect::<Vec<_>>()
                .join(","),
        );
        kv("synth.paraphrases", s.paraphrases.to_string());
        kv("synth.feat_dim", s.feat_dim.to_string());
        kv("synth.frames", s.frames.to_string());
        kv("synth.noise", s.noise.to_string());
        kv("synth.pair_separation", s.pair_separation.to_string());
        kv("synth.bare_rate", s.bare_rate.to_string());
        kv("synth.feature_seed", s.feature_seed.to_string());
        kv("synth.seed", self.synth_seed.to_string());
        out
    }

    pub fn defaults_text() -> String {
        RunConfig::default().to_text()
    }
}
