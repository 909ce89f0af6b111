//! Caption metrics: CIDEr-D, BLEU-4 and ROUGE-L, plus corpus-level reports.
//!
//! All scores are kept in raw scale (BLEU/ROUGE in [0,1], CIDEr-D roughly in
//! [0,10]). Reports multiply by 100 only when rendered.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::corpus::Corpus;
use crate::entailment::{ent_max, EntailmentScorer};
use crate::error::{Error, Result};
use crate::reward::{cident, BaseMetric, RewardConfig};
use crate::text::{all_ngrams, build_doc_freq, DocFreqTable, NGram, NGramMultiset, Sentence, MAX_ORDER};

/// ROUGE-L recall weight.
pub const ROUGE_BETA: f64 = 1.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricConfig {
    /// Width of the Gaussian length penalty in CIDEr-D.
    pub cider_sigma: f64,
    /// Floor applied to zero BLEU precisions before taking logs.
    pub bleu_epsilon: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            cider_sigma: 6.0,
            bleu_epsilon: 1e-9,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cider_sigma > 0.0) || !self.cider_sigma.is_finite() {
            return Err(Error::Config(format!("metric.cider_sigma must be > 0, got {}", self.cider_sigma)));
        }
        if !(self.bleu_epsilon > 0.0) || self.bleu_epsilon >= 1.0 {
            return Err(Error::Config(format!(
                "metric.bleu_epsilon must be in (0,1), got {}",
                self.bleu_epsilon
            )));
        }
        Ok(())
    }
}

/// TF-IDF vector of one sentence for one n-gram order.
#[derive(Debug, Clone)]
struct TfIdf {
    weights: BTreeMap<NGram, f64>,
    norm: f64,
}

fn tfidf(grams: &NGramMultiset, df: &DocFreqTable) -> TfIdf {
    let log_n = (df.num_docs() as f64).ln();
    let mut norm = 0.0;
    let weights: BTreeMap<NGram, f64> = grams
        .iter()
        .map(|(g, tf)| {
            let doc = df.df(g).max(1) as f64;
            let w = tf as f64 * (log_n - doc.ln());
            norm += w * w;
            (g.clone(), w)
        })
        .collect();
    TfIdf {
        weights,
        norm: norm.sqrt(),
    }
}

/// Clipped cosine: candidate weights are capped at the reference weight.
fn clipped_cosine(cand: &TfIdf, reference: &TfIdf) -> f64 {
    let mut num = 0.0;
    for (g, &wc) in &cand.weights {
        if let Some(&wr) = reference.weights.get(g) {
            num += wc.min(wr) * wr;
        }
    }
    if cand.norm == 0.0 || reference.norm == 0.0 {
        return 0.0;
    }
    num / (cand.norm * reference.norm)
}

/// Precomputed CIDEr-D statistics for one reference set.
#[derive(Debug, Clone)]
pub struct CiderReferences {
    refs: Vec<([TfIdf; MAX_ORDER], usize)>,
}

impl CiderReferences {
    pub fn new(refs: &[Sentence], df: &DocFreqTable) -> Result<Self> {
        if refs.is_empty() {
            return Err(Error::MissingReference);
        }
        let refs = refs
            .iter()
            .map(|r| {
                let grams = all_ngrams(r);
                (std::array::from_fn(|n| tfidf(&grams[n], df)), r.len())
            })
            .collect();
        Ok(CiderReferences { refs })
    }

    pub fn score(&self, candidate: &Sentence, df: &DocFreqTable, cfg: &MetricConfig) -> f64 {
        let grams = all_ngrams(candidate);
        let cand: [TfIdf; MAX_ORDER] = std::array::from_fn(|n| tfidf(&grams[n], df));
        let two_sigma_sq = 2.0 * cfg.cider_sigma * cfg.cider_sigma;
        let mut total = 0.0;
        for (n, cand_n) in cand.iter().enumerate() {
            let mut acc = 0.0;
            for (ref_vecs, ref_len) in &self.refs {
                let delta = candidate.len() as f64 - *ref_len as f64;
                let penalty = (-(delta * delta) / two_sigma_sq).exp();
                acc += clipped_cosine(cand_n, &ref_vecs[n]) * penalty;
            }
            total += acc / self.refs.len() as f64;
        }
        total / MAX_ORDER as f64 * 10.0
    }
}

/// CIDEr-D of `candidate` against `refs`, with document frequencies from `df`.
///
/// N-grams absent from `df` count as appearing in one document.
pub fn cider_d(candidate: &Sentence, refs: &[Sentence], df: &DocFreqTable, cfg: &MetricConfig) -> Result<f64> {
    Ok(CiderReferences::new(refs, df)?.score(candidate, df, cfg))
}

/// Sentence-level BLEU-4 with an epsilon floor on zero precisions and the
/// brevity penalty against the closest reference length (shorter on ties).
pub fn bleu4(candidate: &Sentence, refs: &[Sentence], cfg: &MetricConfig) -> Result<f64> {
    if refs.is_empty() {
        return Err(Error::MissingReference);
    }
    let c = candidate.len();
    if c == 0 {
        return Ok(0.0);
    }
    let cand = all_ngrams(candidate);
    let ref_grams: Vec<_> = refs.iter().map(all_ngrams).collect();
    let mut log_sum = 0.0;
    for n in 0..MAX_ORDER {
        let total = cand[n].total();
        let matched: usize = cand[n]
            .iter()
            .map(|(g, count)| {
                let max_ref = ref_grams.iter().map(|r| r[n].get(g)).max().unwrap_or(0);
                count.min(max_ref)
            })
            .sum();
        let p = if total == 0 { 0.0 } else { matched as f64 / total as f64 };
        log_sum += p.max(cfg.bleu_epsilon).ln();
    }
    let closest = refs
        .iter()
        .map(Sentence::len)
        .min_by_key(|&r| (r.abs_diff(c), r))
        .expect("refs non-empty");
    let bp = if c > closest {
        1.0
    } else {
        (1.0 - closest as f64 / c as f64).exp()
    };
    Ok(bp * (log_sum / MAX_ORDER as f64).exp())
}

/// Length of the longest common subsequence.
pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F-measure (recall weight [`ROUGE_BETA`]), maximized over references.
pub fn rouge_l(candidate: &Sentence, refs: &[Sentence]) -> Result<f64> {
    if refs.is_empty() {
        return Err(Error::MissingReference);
    }
    let beta_sq = ROUGE_BETA * ROUGE_BETA;
    let best = refs
        .iter()
        .map(|r| {
            let l = lcs_len(candidate.tokens(), r.tokens());
            if l == 0 {
                return 0.0;
            }
            let p = l as f64 / candidate.len() as f64;
            let rec = l as f64 / r.len() as f64;
            (1.0 + beta_sq) * p * rec / (rec + beta_sq * p)
        })
        .fold(0.0, f64::max);
    Ok(best)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ItemScores {
    pub id: String,
    pub bleu4: f64,
    pub rouge_l: f64,
    pub cider_d: f64,
    pub cident: f64,
}

/// Per-item and mean scores for a set of candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub items: Vec<ItemScores>,
    /// Base metric behind the entailment-corrected column.
    pub ent_base: BaseMetric,
}

impl MetricReport {
    pub fn mean(&self) -> ItemScores {
        let n = self.items.len().max(1) as f64;
        let sum = |f: fn(&ItemScores) -> f64| self.items.iter().map(f).sum::<f64>() / n;
        ItemScores {
            id: "mean".into(),
            bleu4: sum(|s| s.bleu4),
            rouge_l: sum(|s| s.rouge_l),
            cider_d: sum(|s| s.cider_d),
            cident: sum(|s| s.cident),
        }
    }

    /// Comma-separated table: header, one row per item, final mean row.
    pub fn to_csv(&self, scale: f64) -> String {
        let ent_col = match self.ent_base {
            BaseMetric::CiderD => "cident",
            BaseMetric::Bleu4 => "bleuent",
        };
        let mut out = format!("id,bleu4,rouge_l,cider_d,{ent_col}\n");
        for row in self.items.iter().chain(std::iter::once(&self.mean())) {
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{:.6}",
                row.id,
                row.bleu4 * scale,
                row.rouge_l * scale,
                row.cider_d * scale,
                row.cident * scale
            );
        }
        out
    }
}

/// Scores every corpus item's candidate. Document frequencies come from the
/// corpus being evaluated.
pub fn evaluate_corpus(
    candidates: &BTreeMap<String, Sentence>,
    corpus: &Corpus,
    cfg: &MetricConfig,
    reward_cfg: &RewardConfig,
    scorer: &dyn EntailmentScorer,
) -> Result<MetricReport> {
    let df = build_doc_freq(corpus)?;
    let mut items = Vec::with_capacity(corpus.len());
    for item in corpus.items() {
        let cand = candidates
            .get(&item.id)
            .ok_or_else(|| Error::IncompleteCandidates(item.id.clone()))?;
        let refs = &item.references;
        let b = bleu4(cand, refs, cfg)?;
        let c = cider_d(cand, refs, &df, cfg)?;
        let base = match reward_cfg.base_metric {
            BaseMetric::CiderD => c,
            BaseMetric::Bleu4 => b,
        };
        let ent = ent_max(cand, refs, scorer)?;
        items.push(ItemScores {
            id: item.id.clone(),
            bleu4: b,
            rouge_l: rouge_l(cand, refs)?,
            cider_d: c,
            cident: cident(base, ent, reward_cfg).value,
        });
    }
    Ok(MetricReport {
        items,
        ent_base: reward_cfg.base_metric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::tokenize;
    use proptest::prelude::*;

    fn t(s: &str) -> Sentence {
        tokenize(s)
    }

    fn df_of(sets: &[Vec<Sentence>]) -> DocFreqTable {
        DocFreqTable::from_reference_sets(sets.iter().map(Vec::as_slice)).unwrap()
    }

    #[test]
    fn cider_zero_overlap() {
        let a = vec![t("a man is cutting meat")];
        let b = vec![t("a dog runs")];
        let df = df_of(&[a.clone(), b]);
        let s = cider_d(&t("green leaves fall"), &a, &df, &MetricConfig::default()).unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn cider_worked_example() {
        let a = vec![t("a man is cutting meat")];
        let b = vec![t("a dog runs")];
        let df = df_of(&[a.clone(), b]);
        let s = cider_d(&t("a man is cutting meat"), &a, &df, &MetricConfig::default()).unwrap();
        assert!((s - 10.0).abs() < 1e-12, "{s}");
    }

    #[test]
    fn cider_all_idf_zero_is_zero() {
        let a = vec![t("a man runs")];
        let df = df_of(&[a.clone(), a.clone(), a.clone()]);
        let s = cider_d(&t("a man runs"), &a, &df, &MetricConfig::default()).unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn missing_refs_error() {
        let df = df_of(&[vec![t("x")]]);
        let cfg = MetricConfig::default();
        assert!(matches!(cider_d(&t("x"), &[], &df, &cfg), Err(Error::MissingReference)));
        assert!(matches!(bleu4(&t("x"), &[], &cfg), Err(Error::MissingReference)));
        assert!(matches!(rouge_l(&t("x"), &[]), Err(Error::MissingReference)));
    }

    #[test]
    fn bleu_examples() {
        let cfg = MetricConfig::default();
        let r = vec![t("a man is cutting meat")];
        assert_eq!(bleu4(&t("a man is cutting meat"), &r, &cfg).unwrap(), 1.0);
        let s = bleu4(&t("a man is cutting"), &r, &cfg).unwrap();
        assert!((s - (-0.25f64).exp()).abs() < 1e-12);
        let s = bleu4(&t("green leaves fall"), &r, &cfg).unwrap();
        assert_eq!((s * 1e6).round() / 1e6, 0.0);
    }

    #[test]
    fn rouge_examples() {
        let r = vec![t("a man is cutting meat")];
        assert_eq!(rouge_l(&t("a man is cutting meat"), &r).unwrap(), 1.0);
        assert_eq!(rouge_l(&t("green leaves"), &r).unwrap(), 0.0);
        let s = rouge_l(&t("a man is"), &r).unwrap();
        let want = (1.0 + 1.44) * 1.0 * 0.6 / (0.6 + 1.44 * 1.0);
        assert!((s - want).abs() < 1e-12);
        assert!((s - 0.7176).abs() < 1e-4);
    }

    #[test]
    fn config_validation() {
        let mut c = MetricConfig::default();
        assert!(c.validate().is_ok());
        c.cider_sigma = 0.0;
        assert!(c.validate().is_err());
    }

    fn sentence() -> impl Strategy<Value = Sentence> {
        prop::collection::vec(prop::sample::select(vec!["a", "man", "dog", "is", "runs", "ball", "red"]), 0..8)
            .prop_map(Sentence::from_tokens)
    }

    proptest! {
        #[test]
        fn metrics_bounded_and_permutation_invariant(
            cand in sentence(),
            refs in prop::collection::vec(sentence(), 1..4),
            other in prop::collection::vec(sentence(), 1..3),
        ) {
            let cfg = MetricConfig::default();
            let df = df_of(&[refs.clone(), other]);
            let b = bleu4(&cand, &refs, &cfg).unwrap();
            let r = rouge_l(&cand, &refs).unwrap();
            let c = cider_d(&cand, &refs, &df, &cfg).unwrap();
            prop_assert!((0.0..=1.0).contains(&b));
            prop_assert!((0.0..=1.0).contains(&r));
            prop_assert!(c >= 0.0);

            let mut rev = refs.clone();
            rev.reverse();
            prop_assert!((bleu4(&cand, &rev, &cfg).unwrap() - b).abs() < 1e-12);
            prop_assert!((rouge_l(&cand, &rev).unwrap() - r).abs() < 1e-12);
            prop_assert!((cider_d(&cand, &rev, &df, &cfg).unwrap() - c).abs() < 1e-9);

            let mut dup = refs.clone();
            dup.push(refs[0].clone());
            prop_assert_eq!(rouge_l(&cand, &dup).unwrap(), r);
            prop_assert_eq!(bleu4(&cand, &dup, &cfg).unwrap(), b);
        }

        #[test]
        fn lcs_matches_bruteforce(a in sentence(), b in sentence()) {
            // exhaustive subsequences of the shorter side
            let (s, o) = if a.len() <= b.len() { (a.tokens(), b.tokens()) } else { (b.tokens(), a.tokens()) };
            let mut best = 0;
            for mask in 0u32..(1 << s.len()) {
                let sub: Vec<&String> = (0..s.len()).filter(|i| mask & (1 << i) != 0).map(|i| &s[i]).collect();
                let mut it = o.iter();
                if sub.iter().all(|w| it.any(|x| x == *w)) {
                    best = best.max(sub.len());
                }
            }
            prop_assert_eq!(lcs_len(a.tokens(), b.tokens()), best);
        }
    }
}
