use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Deserialize;

use captionrl::config::RunConfig;
use captionrl::corpus::{Corpus, Split};
use captionrl::entailment::{ent_max, ContradictionLexicon};
use captionrl::metrics::{bleu4, cider_d, rouge_l};
use captionrl::model::{Checkpoint, ModelParams, Vocab};
use captionrl::reward::{cident, BaseMetric, RewardKind};
use captionrl::synth::generate_synthetic;
use captionrl::text::{tokenize, DocFreqTable, Sentence};
use captionrl::training::{train_mixed, train_xe, Evaluator, TrainingData};
use captionrl::{Error, Result};

#[derive(Parser)]
#[command(name = "captionrl", version, about = "Reward-driven caption training on a desk-scale corpus")]
struct Cli {
    /// Run configuration (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus and its contradiction lexicon.
    Generate {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Validate a corpus and print its split index.
    Ingest {
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Also write `id,split,frames,captions` rows to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-entropy training with early stopping on dev loss.
    TrainXe {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mixed XE/RL fine-tuning from a cross-entropy checkpoint.
    TrainRl {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// Starting checkpoint; repeat once per seed.
        #[arg(long, required = true)]
        checkpoint: Vec<PathBuf>,
        #[arg(long)]
        reward: Option<RewardKind>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decode a split with one checkpoint or an averaged ensemble and score it.
    Evaluate {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
        /// Same as repeating --checkpoint.
        #[arg(long, num_args = 1..)]
        ensemble: Vec<PathBuf>,
        #[arg(long)]
        reward: Option<RewardKind>,
        #[arg(long)]
        split: Option<Split>,
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Report raw metric values instead of the x100 scale.
        #[arg(long)]
        raw: bool,
    },
    /// Score explicit candidate/reference sets from a JSONL file.
    Score {
        /// Records `{"id": .., "candidate": .., "references": [..]}`.
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        reward: Option<RewardKind>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        raw: bool,
    },
    /// Summarize training logs.
    Report {
        #[arg(long = "log", required = true)]
        logs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print every configuration key with its effective value.
    Config,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let cat = e.category();
            eprintln!("error[{}]: {e}", cat.as_str());
            ExitCode::from(cat.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Generate { out, seed } => {
            let out = out.unwrap_or_else(|| cfg.out.clone());
            let (corpus, lexicon) = generate_synthetic(&cfg.synth, seed.unwrap_or(cfg.synth_seed))?;
            create_dir(&out)?;
            corpus.save(&out.join("corpus.jsonl"))?;
            lexicon.save(&out.join("lexicon.json"))?;
            println!("wrote {} items to {}", corpus.len(), out.join("corpus.jsonl").display());
        }
        Command::Ingest { corpus, out } => {
            let corpus = load_corpus(corpus.as_deref(), &cfg)?;
            let splits = split_ids(&corpus, &cfg)?;
            let counts = |s: &str| splits.values().filter(|v| v.as_str() == s).count();
            println!(
                "items {} feat_dim {} captions {} train {} dev {} test {}",
                corpus.len(),
                corpus.feat_dim().unwrap_or(0),
                corpus.items().iter().map(|it| it.captions.len()).sum::<usize>(),
                counts("train"),
                counts("dev"),
                counts("test")
            );
            if let Some(out) = out {
                let mut text = String::from("id,split,frames,captions\n");
                for it in corpus.items() {
                    text += &format!("{},{},{},{}\n", it.id, splits[&it.id], it.features.len(), it.captions.len());
                }
                write_file(&out, &text)?;
            }
        }
        Command::TrainXe {
            corpus,
            lexicon,
            seed,
            out,
        } => {
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            let out = out.unwrap_or_else(|| cfg.out.clone());
            let corpus = load_corpus(corpus.as_deref(), &cfg)?;
            let data = TrainingData::new(
                corpus.split(Split::Train, cfg.dev_frac, cfg.test_frac)?,
                corpus.split(Split::Dev, cfg.dev_frac, cfg.test_frac)?,
                cfg.max_vocab,
            )?;
            let scorer = cfg.scorer(load_lexicon(lexicon.as_deref(), &cfg)?);
            let eval = Evaluator {
                metric: cfg.metric,
                reward: cfg.reward_config(None),
                scorer: scorer.as_ref(),
                beam: cfg.train.eval_beam,
                max_decode: cfg.train.max_decode,
            };
            create_dir(&out)?;
            for k in 0..cfg.num_seeds as u64 {
                let mut tc = cfg.train.clone();
                tc.seed = cfg.train.seed + k;
                let res = train_xe(&data, &cfg.arch, &tc, &eval)?;
                let mut ck = Checkpoint::new(res.params, data.vocab.clone())?;
                ck.info.insert("phase".into(), "xe".into());
                ck.info.insert("seed".into(), tc.seed.to_string());
                ck.info.insert("best_epoch".into(), res.best_epoch.to_string());
                ck.info.insert("dev_cider_d".into(), format!("{:e}", res.dev.cider_d));
                ck.info.insert("dev_bleu4".into(), format!("{:e}", res.dev.bleu4));
                let stem = format!("xe_seed{}", tc.seed);
                ck.save(&out.join(format!("{stem}.ckpt")))?;
                write_file(&out.join(format!("{stem}_log.csv")), &res.log.to_csv())?;
                println!(
                    "seed {} best epoch {} dev CIDEr-D {:.2} BLEU-4 {:.2}",
                    tc.seed,
                    res.best_epoch,
                    res.dev.cider_d * 100.0,
                    res.dev.bleu4 * 100.0
                );
            }
        }
        Command::TrainRl {
            corpus,
            lexicon,
            checkpoint,
            reward,
            seed,
            out,
        } => {
            let kind = reward.unwrap_or(cfg.reward);
            cfg.reward = kind;
            let out = out.unwrap_or_else(|| cfg.out.clone());
            let corpus = load_corpus(corpus.as_deref(), &cfg)?;
            let lexicon = load_lexicon(lexicon.as_deref(), &cfg)?;
            if kind.uses_entailment() && lexicon.is_none() && cfg.scorer_endpoint().is_none() {
                return Err(Error::Config(format!(
                    "reward `{kind}` needs an entailment scorer: pass --lexicon, set paths.lexicon, or configure a remote scorer"
                )));
            }
            let scorer = cfg.scorer(lexicon);
            create_dir(&out)?;
            for path in &checkpoint {
                let start = Checkpoint::load(path)?;
                let data = TrainingData::with_vocab(
                    corpus.split(Split::Train, cfg.dev_frac, cfg.test_frac)?,
                    corpus.split(Split::Dev, cfg.dev_frac, cfg.test_frac)?,
                    start.vocab.clone(),
                )?;
                let baseline = baseline_score(&start, kind.base_metric());
                let rcfg = cfg.reward_config(baseline);
                let mut tc = cfg.train.clone();
                tc.seed = seed
                    .or_else(|| start.info.get("seed").and_then(|s| s.parse().ok()))
                    .unwrap_or(tc.seed);
                let eval = Evaluator {
                    metric: cfg.metric,
                    reward: rcfg,
                    scorer: scorer.as_ref(),
                    beam: tc.eval_beam,
                    max_decode: tc.max_decode,
                };
                let res = train_mixed(&start.params, &data, &tc, kind, &rcfg, scorer.as_ref(), &eval)?;
                let mut ck = Checkpoint::new(res.params, start.vocab.clone())?;
                ck.info = start.info.clone();
                ck.info.insert("phase".into(), "mixed".into());
                ck.info.insert("reward".into(), kind.to_string());
                ck.info.insert("lambda".into(), format!("{:e}", rcfg.lambda));
                ck.info.insert("gamma".into(), format!("{:e}", res.gamma));
                ck.info.insert("seed".into(), tc.seed.to_string());
                let stem = format!("{kind}_seed{}", tc.seed);
                ck.save(&out.join(format!("{stem}.ckpt")))?;
                write_file(&out.join(format!("{stem}_log.csv")), &res.log.to_csv())?;
                let last = res.log.epochs.last().expect("epoch 0 always logged");
                println!(
                    "seed {} reward {kind} lambda {:.4} gamma {} dev CIDEr-D {:.2} CIDEnt {:.2}",
                    tc.seed,
                    rcfg.lambda,
                    res.gamma,
                    last.dev.cider_d * 100.0,
                    last.dev.cident * 100.0
                );
            }
        }
        Command::Evaluate {
            corpus,
            lexicon,
            mut checkpoint,
            ensemble,
            reward,
            split,
            beam,
            out,
            raw,
        } => {
            checkpoint.extend(ensemble);
            if checkpoint.is_empty() {
                return Err(Error::Config("evaluate needs at least one --checkpoint".into()));
            }
            let kind = reward.unwrap_or(cfg.reward);
            cfg.reward = kind;
            let cks = checkpoint.iter().map(|p| Checkpoint::load(p)).collect::<Result<Vec<_>>>()?;
            let vocab: &Vocab = &cks[0].vocab;
            if cks.iter().any(|c| &c.vocab != vocab) {
                return Err(Error::Ensemble("checkpoints use different vocabularies".into()));
            }
            let members: Vec<ModelParams> = cks.iter().map(|c| c.params.clone()).collect();
            let corpus = load_corpus(corpus.as_deref(), &cfg)?;
            let split = corpus.split(split.unwrap_or(cfg.eval_split), cfg.dev_frac, cfg.test_frac)?;
            let scorer = cfg.scorer(load_lexicon(lexicon.as_deref(), &cfg)?);
            let baseline = cks[0]
                .info
                .get("lambda")
                .and_then(|s| s.parse().ok())
                .or_else(|| baseline_score(&cks[0], kind.base_metric()));
            let eval = Evaluator {
                metric: cfg.metric,
                reward: cfg.reward_config(baseline),
                scorer: scorer.as_ref(),
                beam: beam.unwrap_or(cfg.train.eval_beam),
                max_decode: cfg.train.max_decode,
            };
            let report = eval.evaluate(&members, vocab, &split)?;
            emit(out.as_deref(), &report.to_csv(if raw { 1.0 } else { 100.0 }))?;
        }
        Command::Score {
            candidates,
            lexicon,
            reward,
            out,
            raw,
        } => {
            let kind = reward.unwrap_or(cfg.reward);
            cfg.reward = kind;
            let scorer = cfg.scorer(load_lexicon(lexicon.as_deref(), &cfg)?);
            let text = score_file(&candidates, &cfg, scorer.as_ref(), if raw { 1.0 } else { 100.0 })?;
            emit(out.as_deref(), &text)?;
        }
        Command::Report { logs, out } => {
            let mut text = String::from(
                "log,phase,epochs,first_reward,last_reward,best_dev_cider_d,last_dev_cider_d,last_dev_cident,last_dev_bleu4\n",
            );
            for path in &logs {
                text += &summarize_log(path)?;
            }
            emit(out.as_deref(), &text)?;
        }
        Command::Config => print!("{}", cfg.to_text()),
    }
    Ok(())
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::Io {
        context: format!("creating {}", p.display()),
        source: e,
    })
}

fn write_file(p: &Path, text: &str) -> Result<()> {
    fs::write(p, text).map_err(|e| Error::Io {
        context: format!("writing {}", p.display()),
        source: e,
    })
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_file(p, text),
        None => io::stdout().write_all(text.as_bytes()).map_err(|e| Error::Io {
            context: "writing stdout".into(),
            source: e,
        }),
    }
}

fn load_corpus(flag: Option<&Path>, cfg: &RunConfig) -> Result<Corpus> {
    let path = flag
        .map(Path::to_path_buf)
        .or_else(|| cfg.corpus.clone())
        .ok_or_else(|| Error::Config("no corpus given (--corpus or paths.corpus)".into()))?;
    Corpus::load(&path)
}

fn load_lexicon(flag: Option<&Path>, cfg: &RunConfig) -> Result<Option<ContradictionLexicon>> {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.lexicon.clone())
        .map(|p| ContradictionLexicon::load(&p))
        .transpose()
}

fn split_ids(corpus: &Corpus, cfg: &RunConfig) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (split, name) in [(Split::Train, "train"), (Split::Dev, "dev"), (Split::Test, "test")] {
        // an empty split is legal for ingest; it only matters to training
        if let Ok(c) = corpus.split(split, cfg.dev_frac, cfg.test_frac) {
            for it in c.items() {
                out.insert(it.id.clone(), name.to_string());
            }
        }
    }
    Ok(out)
}

/// The XE checkpoint's dev score on `metric`, recorded at training time.
fn baseline_score(ck: &Checkpoint, metric: BaseMetric) -> Option<f64> {
    let key = match metric {
        BaseMetric::CiderD => "dev_cider_d",
        BaseMetric::Bleu4 => "dev_bleu4",
    };
    ck.info.get(key).and_then(|s| s.parse().ok())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScoreRecord {
    id: String,
    candidate: String,
    references: Vec<String>,
}

/// Scores every record; df comes from the references in the file. Rows are
/// sorted by id so the output does not depend on record order.
fn score_file(path: &Path, cfg: &RunConfig, scorer: &dyn captionrl::entailment::EntailmentScorer, scale: f64) -> Result<String> {
    let file = fs::File::open(path).map_err(|e| Error::Io {
        context: format!("reading {}", path.display()),
        source: e,
    })?;
    let mut records: BTreeMap<String, (Sentence, Vec<Sentence>)> = BTreeMap::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::Io {
            context: format!("reading {}", path.display()),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let r: ScoreRecord = serde_json::from_str(&line).map_err(|e| Error::Data(format!("line {}: {e}", n + 1)))?;
        if r.references.is_empty() {
            return Err(Error::Data(format!("line {}: no references for `{}`", n + 1, r.id)));
        }
        let refs = r.references.iter().map(|s| tokenize(s)).collect();
        if records.insert(r.id.clone(), (tokenize(&r.candidate), refs)).is_some() {
            return Err(Error::Data(format!("line {}: duplicate id `{}`", n + 1, r.id)));
        }
    }
    if records.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let df = DocFreqTable::from_reference_sets(records.values().map(|(_, refs)| refs.as_slice()))?;
    let rcfg = cfg.reward_config(None);
    let ent_col = match rcfg.base_metric {
        BaseMetric::CiderD => "cident",
        BaseMetric::Bleu4 => "bleuent",
    };
    let mut out = format!("id,bleu4,rouge_l,cider_d,{ent_col},ent,penalized\n");
    for (id, (cand, refs)) in &records {
        let b = bleu4(cand, refs, &cfg.metric)?;
        let c = cider_d(cand, refs, &df, &cfg.metric)?;
        let ent = ent_max(cand, refs, scorer)?;
        let base = match rcfg.base_metric {
            BaseMetric::CiderD => c,
            BaseMetric::Bleu4 => b,
        };
        let r = cident(base, ent, &rcfg);
        out += &format!(
            "{id},{:.6},{:.6},{:.6},{:.6},{:.6},{}\n",
            b * scale,
            rouge_l(cand, refs)? * scale,
            c * scale,
            r.value * scale,
            ent.value(),
            r.penalized
        );
    }
    Ok(out)
}

fn summarize_log(path: &Path) -> Result<String> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        context: format!("reading {}", path.display()),
        source: e,
    })?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| Error::Data(format!("{}: missing column `{name}`", path.display())))
    };
    let (phase, reward, cider, cident, bleu) = (
        col("phase")?,
        col("mean_reward")?,
        col("dev_cider_d")?,
        col("dev_cident")?,
        col("dev_bleu4")?,
    );
    let rows: Vec<Vec<&str>> = lines.filter(|l| !l.is_empty()).map(|l| l.split(',').collect()).collect();
    if rows.iter().any(|r| r.len() != header.len()) {
        return Err(Error::Data(format!("{}: ragged row", path.display())));
    }
    let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| Error::Data(format!("{}: bad number `{s}`", path.display()))) };
    let mut out = String::new();
    let mut phases: Vec<&str> = rows.iter().map(|r| r[phase]).collect();
    phases.dedup();
    for ph in phases {
        let sel: Vec<&Vec<&str>> = rows.iter().filter(|r| r[phase] == ph).collect();
        let first = sel[0];
        let last = sel[sel.len() - 1];
        let mut best = f64::NEG_INFINITY;
        for r in &sel {
            best = best.max(num(r[cider])?);
        }
        out += &format!(
            "{},{ph},{},{},{},{:.6},{},{},{}\n",
            path.display(),
            sel.len(),
            first[reward],
            last[reward],
            best,
            last[cider],
            last[cident],
            last[bleu]
        );
    }
    Ok(out)
}
