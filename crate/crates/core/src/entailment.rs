//! Directed entailment scores, premise = reference, hypothesis = candidate.
//!
//! Two scorers ship with the crate: [`LexicalScorer`], a deterministic
//! content-overlap scorer driven by a [`ContradictionLexicon`], and
//! [`RemoteScorer`], an HTTP client for an external NLI model.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::Sentence;

/// Environment variable naming the remote scorer endpoint.
pub const SCORER_URL_ENV: &str = "ENT_SCORER_URL";

const STOPWORDS_V1: &str = include_str!("../resources/stopwords_v1.txt");

/// Probability that the hypothesis is entailed; always within [0,1].
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct EntailmentScore(f64);

impl EntailmentScore {
    pub const ZERO: EntailmentScore = EntailmentScore(0.0);
    pub const ONE: EntailmentScore = EntailmentScore(1.0);

    pub fn new(value: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::MalformedResponse(format!("entailment probability {value} outside [0,1]")));
        }
        Ok(EntailmentScore(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

pub trait EntailmentScorer: Send + Sync {
    fn score(&self, premise: &Sentence, hypothesis: &Sentence) -> Result<EntailmentScore>;
}

/// Maximum over references of `scorer.score(reference, candidate)`.
pub fn ent_max(candidate: &Sentence, refs: &[Sentence], scorer: &dyn EntailmentScorer) -> Result<EntailmentScore> {
    if refs.is_empty() {
        return Err(Error::MissingReference);
    }
    let mut best = EntailmentScore::ZERO;
    for r in refs {
        let s = scorer.score(r, candidate)?;
        if s > best {
            best = s;
        }
    }
    Ok(best)
}

/// Contradicting token pairs and negation markers.
///
/// Pairs are stored with the smaller token first so lookups are symmetric.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContradictionLexicon {
    pairs: BTreeSet<(String, String)>,
    negations: BTreeSet<String>,
}

#[derive(Serialize, Deserialize)]
struct LexiconFile {
    version: u32,
    pairs: Vec<[String; 2]>,
    negations: Vec<String>,
}

const LEXICON_VERSION: u32 = 1;

fn ordered(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_owned(), b.to_owned())
    } else {
        (b.to_owned(), a.to_owned())
    }
}

impl ContradictionLexicon {
    pub fn new<I, N, S>(pairs: I, negations: N) -> Self
    where
        I: IntoIterator<Item = (S, S)>,
        N: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        ContradictionLexicon {
            pairs: pairs.into_iter().map(|(a, b)| ordered(a.as_ref(), b.as_ref())).collect(),
            negations: negations.into_iter().map(|n| n.as_ref().to_owned()).collect(),
        }
    }

    pub fn default_negations() -> Vec<&'static str> {
        vec!["no", "not", "never", "nobody", "nothing"]
    }

    pub fn contradicts(&self, a: &str, b: &str) -> bool {
        self.pairs.contains(&ordered(a, b))
    }

    pub fn is_negation(&self, token: &str) -> bool {
        self.negations.contains(token)
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.pairs.iter().map(|(a, b)| (a.as_str(), b.as_str()))
    }

    pub fn negations(&self) -> impl Iterator<Item = &str> {
        self.negations.iter().map(String::as_str)
    }

    pub fn to_json(&self) -> String {
        let file = LexiconFile {
            version: LEXICON_VERSION,
            pairs: self.pairs.iter().map(|(a, b)| [a.clone(), b.clone()]).collect(),
            negations: self.negations.iter().cloned().collect(),
        };
        serde_json::to_string_pretty(&file).expect("lexicon serializes") + "\n"
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: LexiconFile = serde_json::from_str(s).map_err(|e| Error::Data(format!("lexicon: {e}")))?;
        if file.version != LEXICON_VERSION {
            return Err(Error::Data(format!("lexicon version {} unsupported", file.version)));
        }
        Ok(ContradictionLexicon::new(
            file.pairs.iter().map(|[a, b]| (a.as_str(), b.as_str())),
            file.negations.iter().map(String::as_str),
        ))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_json(&s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

/// The pinned stopword list (version 1).
pub fn default_stopwords() -> BTreeSet<String> {
    STOPWORDS_V1
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_owned)
        .collect()
}

/// Lexical entailment: zero on any contradiction, otherwise the share of the
/// hypothesis' content tokens that also occur in the premise.
pub fn lexical_score(
    premise: &Sentence,
    hypothesis: &Sentence,
    lex: &ContradictionLexicon,
    stopwords: &BTreeSet<String>,
) -> EntailmentScore {
    for h in hypothesis.iter() {
        if premise.iter().any(|p| lex.contradicts(h, p)) {
            return EntailmentScore::ZERO;
        }
    }
    let negs = |s: &Sentence| s.iter().filter(|t| lex.is_negation(t)).count() % 2;
    if negs(premise) != negs(hypothesis) {
        return EntailmentScore::ZERO;
    }
    let content = |s: &Sentence| -> BTreeSet<String> {
        s.iter()
            .filter(|t| !stopwords.contains(*t) && !lex.is_negation(t))
            .map(str::to_owned)
            .collect()
    };
    let hyp = content(hypothesis);
    if hyp.is_empty() {
        return EntailmentScore::ZERO;
    }
    let prem = content(premise);
    let shared = hyp.intersection(&prem).count();
    EntailmentScore(shared as f64 / hyp.len() as f64)
}

#[derive(Debug, Clone)]
pub struct LexicalScorer {
    lexicon: ContradictionLexicon,
    stopwords: BTreeSet<String>,
}

impl LexicalScorer {
    pub fn new(lexicon: ContradictionLexicon) -> Self {
        LexicalScorer {
            lexicon,
            stopwords: default_stopwords(),
        }
    }

    pub fn with_stopwords(lexicon: ContradictionLexicon, stopwords: BTreeSet<String>) -> Self {
        LexicalScorer { lexicon, stopwords }
    }

    pub fn lexicon(&self) -> &ContradictionLexicon {
        &self.lexicon
    }
}

impl EntailmentScorer for LexicalScorer {
    fn score(&self, premise: &Sentence, hypothesis: &Sentence) -> Result<EntailmentScore> {
        Ok(lexical_score(premise, hypothesis, &self.lexicon, &self.stopwords))
    }
}

#[derive(Debug, Serialize)]
pub struct RemoteRequest<'a> {
    pub premise: &'a str,
    pub hypothesis: &'a str,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteResponse {
    pub entailment: f64,
    pub neutral: f64,
    pub contradiction: f64,
}

/// Allowed deviation of the three class probabilities from summing to one.
pub const RESPONSE_SUM_TOLERANCE: f64 = 0.02;

impl RemoteResponse {
    pub fn entailment_score(&self) -> Result<EntailmentScore> {
        let probs = [self.entailment, self.neutral, self.contradiction];
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
            return Err(Error::MalformedResponse(format!("probabilities out of range: {probs:?}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > RESPONSE_SUM_TOLERANCE {
            return Err(Error::MalformedResponse(format!("probabilities sum to {sum}")));
        }
        EntailmentScore::new(self.entailment)
    }
}

/// HTTP client for an external entailment model.
///
/// POSTs `{"premise": "...", "hypothesis": "..."}` as JSON and expects
/// `{"entailment": p, "neutral": q, "contradiction": r}` back.
#[derive(Debug, Clone)]
pub struct RemoteScorer {
    endpoint: String,
    agent: ureq::Agent,
}

impl RemoteScorer {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into();
        RemoteScorer {
            endpoint: endpoint.into(),
            agent,
        }
    }

    /// Reads the endpoint from `ENT_SCORER_URL`, if set.
    pub fn from_env(timeout: Duration) -> Option<Self> {
        std::env::var(SCORER_URL_ENV)
            .ok()
            .filter(|u| !u.is_empty())
            .map(|u| RemoteScorer::new(u, timeout))
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

pub fn remote_score(premise: &Sentence, hypothesis: &Sentence, scorer: &RemoteScorer) -> Result<EntailmentScore> {
    let premise = premise.to_string();
    let hypothesis = hypothesis.to_string();
    let req = RemoteRequest {
        premise: &premise,
        hypothesis: &hypothesis,
    };
    let mut resp = scorer
        .agent
        .post(&scorer.endpoint)
        .send_json(&req)
        .map_err(|e| Error::ScorerUnavailable(format!("{}: {e}", scorer.endpoint)))?;
    let body: RemoteResponse = resp.body_mut().read_json().map_err(|e| Error::MalformedResponse(e.to_string()))?;
    body.entailment_score()
}

impl EntailmentScorer for RemoteScorer {
    fn score(&self, premise: &Sentence, hypothesis: &Sentence) -> Result<EntailmentScore> {
        remote_score(premise, hypothesis, self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::tokenize;
    use proptest::prelude::*;

    struct Table(Vec<f64>);

    impl EntailmentScorer for Table {
        fn score(&self, premise: &Sentence, _h: &Sentence) -> Result<EntailmentScore> {
            let idx: usize = premise.tokens()[0].parse().unwrap();
            EntailmentScore::new(self.0[idx])
        }
    }

    fn lex() -> ContradictionLexicon {
        ContradictionLexicon::new(
            [("football", "basketball"), ("man", "woman")],
            ContradictionLexicon::default_negations(),
        )
    }

    #[test]
    fn ent_max_takes_maximum() {
        let scorer = Table(vec![0.1, 0.9, 0.4]);
        let refs: Vec<Sentence> = ["0", "1", "2"].iter().map(|s| tokenize(s)).collect();
        let cand = tokenize("x");
        assert_eq!(ent_max(&cand, &refs, &scorer).unwrap().value(), 0.9);
        assert_eq!(ent_max(&cand, &refs[2..], &scorer).unwrap().value(), 0.4);
        assert!(matches!(ent_max(&cand, &[], &scorer), Err(Error::MissingReference)));
    }

    #[test]
    fn lexical_examples() {
        let sw = default_stopwords();
        let l = lex();
        let p = tokenize("a man is cutting meat");
        assert_eq!(lexical_score(&p, &tokenize("a man is cutting"), &l, &sw).value(), 1.0);
        assert_eq!(lexical_score(&p, &tokenize("a woman is cutting meat"), &l, &sw).value(), 0.0);
        let s = lexical_score(&p, &tokenize("a man is cutting meat into potato"), &l, &sw);
        assert_eq!(s.value(), 0.75);
    }

    #[test]
    fn pinned_stopwords_hold_fixture_words() {
        let sw = default_stopwords();
        for w in ["a", "is", "into"] {
            assert!(sw.contains(w));
        }
        for w in ["man", "cutting", "meat", "potato"] {
            assert!(!sw.contains(w));
        }
    }

    #[test]
    fn negation_parity() {
        let sw = default_stopwords();
        let l = lex();
        let p = tokenize("a man is not running");
        assert_eq!(lexical_score(&p, &tokenize("a man is running"), &l, &sw).value(), 0.0);
        assert_eq!(lexical_score(&p, &tokenize("a man is not running"), &l, &sw).value(), 1.0);
    }

    #[test]
    fn direction_is_asymmetric() {
        let sw = default_stopwords();
        let l = lex();
        let long = tokenize("a man is playing football outside");
        let short = tokenize("a man is playing");
        assert_eq!(lexical_score(&long, &short, &l, &sw).value(), 1.0);
        assert!(lexical_score(&short, &long, &l, &sw).value() < 1.0);
    }

    #[test]
    fn empty_content_scores_zero() {
        let sw = default_stopwords();
        let s = lexical_score(&tokenize("a man"), &tokenize("the a is"), &lex(), &sw);
        assert_eq!(s.value(), 0.0);
    }

    #[test]
    fn lexicon_is_symmetric_and_round_trips() {
        let l = lex();
        assert!(l.contradicts("basketball", "football"));
        assert!(l.contradicts("football", "basketball"));
        let back = ContradictionLexicon::from_json(&l.to_json()).unwrap();
        assert_eq!(back, l);
    }

    #[test]
    fn response_validation() {
        let ok = RemoteResponse {
            entailment: 0.92,
            neutral: 0.05,
            contradiction: 0.03,
        };
        assert_eq!(ok.entailment_score().unwrap().value(), 0.92);
        let bad = RemoteResponse {
            entailment: 0.5,
            neutral: 0.2,
            contradiction: 0.1,
        };
        assert!(matches!(bad.entailment_score(), Err(Error::MalformedResponse(_))));
    }

    fn words() -> impl Strategy<Value = Sentence> {
        prop::collection::vec(
            prop::sample::select(vec!["a", "man", "woman", "is", "not", "football", "basketball", "runs", "ball"]),
            0..8,
        )
        .prop_map(Sentence::from_tokens)
    }

    proptest! {
        #[test]
        fn lexical_bounded(p in words(), h in words()) {
            let s = lexical_score(&p, &h, &lex(), &default_stopwords()).value();
            prop_assert!((0.0..=1.0).contains(&s));
        }

        #[test]
        fn lexical_self_is_one(s in words()) {
            let l = lex();
            let sw = default_stopwords();
            let has_content = s.iter().any(|t| !sw.contains(t) && !l.is_negation(t));
            let self_contra = s.iter().any(|a| s.iter().any(|b| l.contradicts(a, b)));
            prop_assume!(has_content && !self_contra);
            prop_assert_eq!(lexical_score(&s, &s, &l, &sw).value(), 1.0);
        }

        #[test]
        fn ent_max_monotone(cand in words(), refs in prop::collection::vec(words(), 1..4), extra in words()) {
            let scorer = LexicalScorer::new(lex());
            let before = ent_max(&cand, &refs, &scorer).unwrap();
            let mut more = refs.clone();
            more.push(extra);
            prop_assert!(ent_max(&cand, &more, &scorer).unwrap() >= before);
        }
    }
}
