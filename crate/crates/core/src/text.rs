//! Tokenization, n-gram extraction and document-frequency statistics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::corpus::Corpus;
use crate::error::{Error, Result};

/// Highest n-gram order used by any metric.
pub const MAX_ORDER: usize = 4;

/// A tokenized caption: lowercase tokens with ASCII punctuation removed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Sentence(Vec<String>);

impl Sentence {
    /// Builds a sentence from tokens that are already normalized.
    ///
    /// Tokens are re-run through [`tokenize`] so the invariants hold no matter
    /// what the caller passes in.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut out = Vec::new();
        for t in tokens {
            out.extend(tokenize(t.as_ref()).0);
        }
        Sentence(out)
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }
}

impl fmt::Display for Sentence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join(" "))
    }
}

impl From<&str> for Sentence {
    fn from(raw: &str) -> Self {
        tokenize(raw)
    }
}

/// Lowercases, strips ASCII punctuation and splits on whitespace.
///
/// Non-ASCII characters pass through untouched.
pub fn tokenize(raw: &str) -> Sentence {
    let cleaned: String = raw
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .flat_map(char::to_lowercase)
        .collect();
    Sentence(cleaned.split_whitespace().map(str::to_owned).collect())
}

/// An n-gram key. Always holds exactly `order` tokens of the owning multiset.
pub type NGram = Vec<String>;

/// Multiset of the contiguous n-grams of one order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NGramMultiset {
    order: usize,
    counts: BTreeMap<NGram, usize>,
}

impl NGramMultiset {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn counts(&self) -> &BTreeMap<NGram, usize> {
        &self.counts
    }

    pub fn get(&self, gram: &[String]) -> usize {
        self.counts.get(gram).copied().unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&NGram, usize)> {
        self.counts.iter().map(|(g, &c)| (g, c))
    }
}

pub fn ngrams(sentence: &Sentence, n: usize) -> Result<NGramMultiset> {
    if !(1..=MAX_ORDER).contains(&n) {
        return Err(Error::InvalidOrder(n));
    }
    let mut counts = BTreeMap::new();
    for window in sentence.tokens().windows(n) {
        *counts.entry(window.to_vec()).or_insert(0) += 1;
    }
    Ok(NGramMultiset { order: n, counts })
}

/// All orders 1..=MAX_ORDER at once; index 0 holds unigrams.
pub fn all_ngrams(sentence: &Sentence) -> [NGramMultiset; MAX_ORDER] {
    std::array::from_fn(|i| ngrams(sentence, i + 1).expect("order in range"))
}

/// Per-item document frequencies over the reference sets of a corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct DocFreqTable {
    num_docs: usize,
    df: BTreeMap<NGram, usize>,
}

impl DocFreqTable {
    /// Builds the table from raw reference sets, one entry per document.
    pub fn from_reference_sets<'a, I>(sets: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [Sentence]>,
    {
        let mut df: BTreeMap<NGram, usize> = BTreeMap::new();
        let mut num_docs = 0;
        for refs in sets {
            num_docs += 1;
            let mut present: BTreeSet<&[String]> = BTreeSet::new();
            for r in refs {
                for n in 1..=MAX_ORDER {
                    present.extend(r.tokens().windows(n));
                }
            }
            for g in present {
                *df.entry(g.to_vec()).or_insert(0) += 1;
            }
        }
        if num_docs == 0 {
            return Err(Error::EmptyCorpus);
        }
        Ok(DocFreqTable { num_docs, df })
    }

    pub fn num_docs(&self) -> usize {
        self.num_docs
    }

    /// Stored count, 0 when the n-gram never occurs.
    pub fn df(&self, gram: &[String]) -> usize {
        self.df.get(gram).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.df.len()
    }

    pub fn is_empty(&self) -> bool {
        self.df.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&NGram, usize)> {
        self.df.iter().map(|(g, &c)| (g, c))
    }
}

pub fn build_doc_freq(corpus: &Corpus) -> Result<DocFreqTable> {
    DocFreqTable::from_reference_sets(corpus.items().iter().map(|it| it.references.as_slice()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(words: &[&str]) -> Sentence {
        Sentence::from_tokens(words)
    }

    fn key(words: &[&str]) -> NGram {
        words.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn tokenize_lowercases_and_strips() {
        assert_eq!(tokenize("A man is Playing!"), s(&["a", "man", "is", "playing"]));
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("a panda is eating some bamboo").len(), 6);
    }

    #[test]
    fn tokenize_keeps_unicode() {
        let t = tokenize("Café, naïve – ok.");
        assert_eq!(t.tokens(), &["café", "naïve", "–", "ok"]);
    }

    #[test]
    fn tokenize_joins_across_inner_punctuation() {
        assert_eq!(tokenize("don't stop").tokens(), &["dont", "stop"]);
    }

    #[test]
    fn ngram_examples() {
        let m = ngrams(&s(&["a", "man", "is"]), 2).unwrap();
        assert_eq!(m.get(&key(&["a", "man"])), 1);
        assert_eq!(m.get(&key(&["man", "is"])), 1);
        assert_eq!(m.counts().len(), 2);

        assert!(ngrams(&s(&["a", "man", "is"]), 4).unwrap().is_empty());

        let m = ngrams(&s(&["a", "a", "a"]), 1).unwrap();
        assert_eq!(m.get(&key(&["a"])), 3);
    }

    #[test]
    fn ngram_order_validated() {
        assert!(matches!(ngrams(&s(&["a"]), 0), Err(Error::InvalidOrder(0))));
        assert!(matches!(ngrams(&s(&["a"]), 5), Err(Error::InvalidOrder(5))));
    }

    fn refs(captions: &[&str]) -> Vec<Sentence> {
        captions.iter().map(|c| tokenize(c)).collect()
    }

    #[test]
    fn doc_freq_examples() {
        let a = refs(&["a man"]);
        let t = DocFreqTable::from_reference_sets([a.as_slice()]).unwrap();
        assert_eq!(t.num_docs(), 1);
        assert_eq!(t.df(&key(&["a", "man"])), 1);

        let a = refs(&["a man"]);
        let b = refs(&["the dog"]);
        let t = DocFreqTable::from_reference_sets([a.as_slice(), b.as_slice()]).unwrap();
        assert!(t.iter().all(|(_, c)| c == 1));

        let a = refs(&["a man runs", "a man"]);
        let b = refs(&["the dog", "a man sits"]);
        let t = DocFreqTable::from_reference_sets([a.as_slice(), b.as_slice()]).unwrap();
        assert_eq!(t.df(&key(&["a", "man"])), 2);
    }

    #[test]
    fn doc_freq_rejects_empty() {
        let none: Vec<&[Sentence]> = vec![];
        assert!(matches!(DocFreqTable::from_reference_sets(none), Err(Error::EmptyCorpus)));
    }

    fn word() -> impl Strategy<Value = String> {
        prop::sample::select(vec!["a", "man", "dog", "is", "runs", "the", "ball"]).prop_map(str::to_owned)
    }

    proptest! {
        #[test]
        fn tokenize_idempotent(raw in "[ -~]{0,40}") {
            let once = tokenize(&raw);
            let twice = tokenize(&once.to_string());
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn ngram_total_matches_windows(words in prop::collection::vec(word(), 0..12), n in 1usize..=4) {
            let sent = Sentence::from_tokens(&words);
            let m = ngrams(&sent, n).unwrap();
            prop_assert_eq!(m.total(), words.len().saturating_sub(n - 1));
            prop_assert!(m.iter().all(|(g, c)| g.len() == n && c >= 1));
        }

        #[test]
        fn doc_freq_bounded(
            items in prop::collection::vec(
                prop::collection::vec(prop::collection::vec(word(), 0..6), 1..4),
                1..6,
            )
        ) {
            let sets: Vec<Vec<Sentence>> = items
                .iter()
                .map(|refs| refs.iter().map(Sentence::from_tokens).collect())
                .collect();
            let t = DocFreqTable::from_reference_sets(sets.iter().map(Vec::as_slice)).unwrap();
            prop_assert_eq!(t.num_docs(), sets.len());
            for (_, c) in t.iter() {
                prop_assert!(c >= 1 && c <= t.num_docs());
            }
        }
    }
}
