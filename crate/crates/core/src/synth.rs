//! Synthetic caption corpus built from (subject, verb, object) events.
//!
//! Every reference of an item is a paraphrase that differs from the others
//! only in stopwords and word order, so references entail each other. Some
//! tokens come in contradicting pairs whose feature embeddings are close, so
//! a model can be unsure which one it sees. Some events have no visible
//! object; their captions stop after the verb.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::corpus::{Corpus, CorpusItem, FeatureSequence};
use crate::entailment::ContradictionLexicon;
use crate::error::{Error, Result};
use crate::text::{tokenize, Sentence};

/// Paraphrase patterns for events with an object.
pub const OBJECT_TEMPLATES: [&str; 5] = [
    "a {s} is {v} {o}",
    "the {s} is {v} the {o}",
    "there is a {s} {v} {o}",
    "a {s} is {v} some {o}",
    "the {s} {v} a {o}",
];

/// Paraphrase patterns for events without a visible object.
pub const BARE_TEMPLATES: [&str; 5] = ["a {s} is {v}", "the {s} is {v}", "there is a {s} {v}", "a {s} {v}", "the {s} {v}"];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub items: usize,
    pub subjects: Vec<String>,
    pub verbs: Vec<String>,
    pub objects: Vec<String>,
    /// Contradicting token pairs; both tokens must be in the inventory.
    pub contradictions: Vec<(String, String)>,
    pub paraphrases: usize,
    pub feat_dim: usize,
    pub frames: usize,
    /// Standard deviation of per-frame feature noise.
    pub noise: f64,
    /// Distance between the embeddings of contradicting tokens, relative to
    /// the distance between unrelated tokens.
    pub pair_separation: f64,
    /// Probability that an event has no visible object.
    pub bare_rate: f64,
    /// Seed of the token embeddings and the projection, independent of the
    /// per-item draws.
    pub feature_seed: u64,
}

fn words(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            items: 200,
            subjects: words(&["man", "woman", "boy", "girl", "dog", "cat"]),
            verbs: words(&["playing", "riding", "holding", "watching"]),
            objects: words(&["football", "basketball", "guitar", "piano", "horse", "bicycle", "apple", "banana"]),
            contradictions: [
                ("man", "woman"),
                ("boy", "girl"),
                ("dog", "cat"),
                ("football", "basketball"),
                ("guitar", "piano"),
                ("horse", "bicycle"),
                ("apple", "banana"),
            ]
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect(),
            paraphrases: 4,
            feat_dim: 16,
            frames: 6,
            noise: 0.6,
            pair_separation: 0.35,
            bare_rate: 0.15,
            feature_seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.items == 0 {
            return bad("synth.items must be positive".into());
        }
        if self.subjects.is_empty() || self.verbs.is_empty() || self.objects.is_empty() {
            return bad("synth inventories must be non-empty".into());
        }
        if self.paraphrases == 0 || self.paraphrases > OBJECT_TEMPLATES.len() {
            return bad(format!("synth.paraphrases must be in 1..={}", OBJECT_TEMPLATES.len()));
        }
        if self.feat_dim == 0 || self.frames == 0 || self.frames > crate::model::MAX_ENCODER_STEPS {
            return bad("synth.feat_dim and synth.frames must be positive (frames at most 50)".into());
        }
        if !(self.noise >= 0.0) || !(self.pair_separation > 0.0) || !(0.0..1.0).contains(&self.bare_rate) {
            return bad("synth.noise >= 0, synth.pair_separation > 0 and synth.bare_rate in [0,1) required".into());
        }
        let mut seen = BTreeSet::new();
        for w in self.inventory() {
            if tokenize(w).tokens() != [w.clone()] {
                return bad(format!("inventory token `{w}` must be a single lowercase word"));
            }
            if !seen.insert(w) {
                return bad(format!("inventory token `{w}` appears twice"));
            }
        }
        for (a, b) in &self.contradictions {
            if a == b || !seen.contains(a) || !seen.contains(b) {
                return bad(format!("contradiction pair ({a}, {b}) must name two distinct inventory tokens"));
            }
        }
        Ok(())
    }

    fn inventory(&self) -> impl Iterator<Item = &String> {
        self.subjects.iter().chain(&self.verbs).chain(&self.objects)
    }

    pub fn lexicon(&self) -> ContradictionLexicon {
        ContradictionLexicon::new(
            self.contradictions.iter().map(|(a, b)| (a.as_str(), b.as_str())),
            ContradictionLexicon::default_negations(),
        )
    }
}

/// One drawn event. `object = None` is an event without a visible object.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub subject: String,
    pub verb: String,
    pub object: Option<String>,
}

impl Event {
    /// The `k`-th paraphrase of this event.
    pub fn caption(&self, k: usize) -> String {
        let t = match &self.object {
            Some(_) => OBJECT_TEMPLATES[k],
            None => BARE_TEMPLATES[k],
        };
        t.replace("{s}", &self.subject)
            .replace("{v}", &self.verb)
            .replace("{o}", self.object.as_deref().unwrap_or(""))
    }
}

/// Token embeddings: contradiction partners sit close to each other.
struct Embeddings {
    words: Vec<String>,
    vectors: Vec<Vec<f64>>,
    projection: Vec<Vec<f64>>,
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

impl Embeddings {
    fn new(spec: &SyntheticSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.feature_seed);
        let dim = spec.feat_dim;
        let words: Vec<String> = spec.inventory().cloned().collect();
        let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(words.len());
        for w in &words {
            let partner = spec.contradictions.iter().find_map(|(a, b)| (b == w).then_some(a));
            let own = gaussian(&mut rng, dim);
            let v = match partner
                .and_then(|p| words.iter().position(|x| x == p))
                .filter(|&i| i < vectors.len())
            {
                Some(i) => vectors[i]
                    .iter()
                    .zip(&own)
                    .map(|(base, d)| base + spec.pair_separation * d)
                    .collect(),
                None => own,
            };
            vectors.push(v);
        }
        // three slots (subject, verb, object) projected down to feat_dim
        let scale = 1.0 / (3.0 * dim as f64).sqrt();
        let projection = (0..dim)
            .map(|_| gaussian(&mut rng, 3 * dim).into_iter().map(|x| x * scale).collect())
            .collect();
        Embeddings {
            words,
            vectors,
            projection,
        }
    }

    fn vector(&self, w: &str) -> &[f64] {
        let i = self.words.iter().position(|x| x == w).expect("inventory word");
        &self.vectors[i]
    }

    fn features(&self, ev: &Event, spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Result<FeatureSequence> {
        let zero = vec![0.0; spec.feat_dim];
        let slots: Vec<f64> = [
            self.vector(&ev.subject),
            self.vector(&ev.verb),
            ev.object.as_deref().map_or(&zero[..], |o| self.vector(o)),
        ]
        .concat();
        let clean: Vec<f64> = self.projection.iter().map(|row| crate::model::linalg::dot(row, &slots)).collect();
        let frames = (0..spec.frames)
            .map(|_| {
                clean
                    .iter()
                    .map(|&c| {
                        let n: f64 = StandardNormal.sample(rng);
                        c + spec.noise * n
                    })
                    .collect()
            })
            .collect();
        FeatureSequence::new(frames)
    }
}

fn pick<'a>(rng: &mut ChaCha8Rng, list: &'a [String]) -> &'a str {
    &list[rng.random_range(0..list.len())]
}

/// Draws the corpus and its lexicon. Identical `(spec, seed)` always yield
/// identical output.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<(Corpus, ContradictionLexicon)> {
    spec.validate()?;
    let emb = Embeddings::new(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = spec.items.to_string().len();
    let mut items = Vec::with_capacity(spec.items);
    for i in 0..spec.items {
        let subject = pick(&mut rng, &spec.subjects).to_string();
        let verb = pick(&mut rng, &spec.verbs).to_string();
        let object = if rng.random::<f64>() < spec.bare_rate {
            None
        } else {
            Some(pick(&mut rng, &spec.objects).to_string())
        };
        let ev = Event { subject, verb, object };
        let captions = (0..spec.paraphrases).map(|k| ev.caption(k)).collect();
        let features = emb.features(&ev, spec, &mut rng)?;
        items.push(CorpusItem::new(format!("syn{i:0width$}"), features, captions)?);
    }
    Ok((Corpus::new(items)?, spec.lexicon()))
}

/// A candidate that copies a reference but swaps one token for its
/// contradicting partner.
#[derive(Debug, Clone, PartialEq)]
pub struct ContradictionCase {
    pub id: String,
    pub candidate: Sentence,
    pub refs: Vec<Sentence>,
    pub swapped: (String, String),
}

/// Builds one case per item whose first reference contains a token with a
/// contradiction partner.
pub fn contradiction_cases(corpus: &Corpus, lexicon: &ContradictionLexicon) -> Vec<ContradictionCase> {
    let partner = |w: &str| {
        lexicon
            .pairs()
            .find_map(|(a, b)| {
                if a == w {
                    Some(b)
                } else if b == w {
                    Some(a)
                } else {
                    None
                }
            })
            .map(str::to_owned)
    };
    let mut out = Vec::new();
    for item in corpus.items() {
        let first = &item.references[0];
        let Some((pos, other)) = first
            .tokens()
            .iter()
            .enumerate()
            .rev()
            .find_map(|(i, w)| partner(w).map(|p| (i, p)))
        else {
            continue;
        };
        let mut toks = first.tokens().to_vec();
        let orig = std::mem::replace(&mut toks[pos], other.clone());
        out.push(ContradictionCase {
            id: item.id.clone(),
            candidate: Sentence::from_tokens(toks),
            refs: item.references.clone(),
            swapped: (orig, other),
        });
    }
    out
}
