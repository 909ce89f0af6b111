//! Captioning corpus: feature sequences paired with reference captions.
//!
//! On disk a corpus is line-delimited JSON, one record per line:
//!
//! ```text
//! {"id":"v0001","features":[[0.1,-0.3],[0.2,0.0]],"captions":["a man is cooking","..."]}
//! ```
//!
//! Field order is fixed (`id`, `features`, `captions`) and floats use the
//! shortest round-trip representation, so writing the same corpus twice gives
//! identical bytes.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{tokenize, Sentence};

/// Frame-level feature vectors for one clip. All frames share one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    dim: usize,
    frames: Vec<Vec<f64>>,
}

impl FeatureSequence {
    pub fn new(frames: Vec<Vec<f64>>) -> Result<Self> {
        let dim = frames
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::Shape("feature sequence has no frames".into()))?;
        if dim == 0 {
            return Err(Error::Shape("feature frames have dimension 0".into()));
        }
        if let Some(bad) = frames.iter().position(|f| f.len() != dim) {
            return Err(Error::Shape(format!(
                "frame {bad} has dimension {} but frame 0 has {dim}",
                frames[bad].len()
            )));
        }
        if frames.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Data("feature sequence contains non-finite values".into()));
        }
        Ok(FeatureSequence { dim, frames })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[Vec<f64>] {
        &self.frames
    }

    pub fn reversed(&self) -> Self {
        let mut frames = self.frames.clone();
        frames.reverse();
        FeatureSequence { dim: self.dim, frames }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusItem {
    pub id: String,
    pub features: FeatureSequence,
    pub captions: Vec<String>,
    pub references: Vec<Sentence>,
}

impl CorpusItem {
    pub fn new(id: impl Into<String>, features: FeatureSequence, captions: Vec<String>) -> Result<Self> {
        let id = id.into();
        if captions.is_empty() {
            return Err(Error::Data(format!("item `{id}` has no reference captions")));
        }
        let references = captions.iter().map(|c| tokenize(c)).collect();
        Ok(CorpusItem {
            id,
            features,
            captions,
            references,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct Record {
    id: String,
    features: Vec<Vec<f64>>,
    captions: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    items: Vec<CorpusItem>,
}

/// Which slice of a corpus to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

impl Corpus {
    pub fn new(items: Vec<CorpusItem>) -> Result<Self> {
        let mut seen = HashSet::new();
        for it in &items {
            if !seen.insert(it.id.as_str()) {
                return Err(Error::Data(format!("duplicate item id `{}`", it.id)));
            }
        }
        if let Some(first) = items.first() {
            let dim = first.features.dim();
            if let Some(bad) = items.iter().find(|it| it.features.dim() != dim) {
                return Err(Error::Shape(format!(
                    "item `{}` has feature dimension {} but corpus uses {dim}",
                    bad.id,
                    bad.features.dim()
                )));
            }
        }
        Ok(Corpus { items })
    }

    pub fn items(&self) -> &[CorpusItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&CorpusItem> {
        self.items.iter().find(|it| it.id == id)
    }

    pub fn feat_dim(&self) -> Option<usize> {
        self.items.first().map(|it| it.features.dim())
    }

    /// Deterministic contiguous partition: the last `test_frac` of items form
    /// the test split, the `dev_frac` before them the dev split.
    pub fn split(&self, split: Split, dev_frac: f64, test_frac: f64) -> Result<Corpus> {
        if !(0.0..1.0).contains(&dev_frac) || !(0.0..1.0).contains(&test_frac) || dev_frac + test_frac >= 1.0 {
            return Err(Error::Config(format!(
                "split fractions dev={dev_frac} test={test_frac} must be in [0,1) with sum < 1"
            )));
        }
        let n = self.items.len();
        let n_test = (n as f64 * test_frac).round() as usize;
        let n_dev = (n as f64 * dev_frac).round() as usize;
        let n_train = n.saturating_sub(n_test + n_dev);
        let range = match split {
            Split::Train => 0..n_train,
            Split::Dev => n_train..n_train + n_dev,
            Split::Test => n_train + n_dev..n,
        };
        let items = self.items[range].to_vec();
        if items.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Ok(Corpus { items })
    }

    pub fn from_jsonl<R: BufRead>(reader: R) -> Result<Self> {
        let mut items = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io("reading corpus", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(&line).map_err(|e| Error::Data(format!("corpus line {}: {e}", lineno + 1)))?;
            let features = FeatureSequence::new(rec.features).map_err(|e| Error::Data(format!("corpus line {}: {e}", lineno + 1)))?;
            items.push(CorpusItem::new(rec.id, features, rec.captions)?);
        }
        Corpus::new(items)
    }

    pub fn write_jsonl<W: Write>(&self, mut writer: W) -> Result<()> {
        for it in &self.items {
            let rec = Record {
                id: it.id.clone(),
                features: it.features.frames().to_vec(),
                captions: it.captions.clone(),
            };
            let line = serde_json::to_string(&rec).map_err(|e| Error::Data(e.to_string()))?;
            writeln!(writer, "{line}").map_err(|e| Error::io("writing corpus", e))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
        Corpus::from_jsonl(BufReader::new(f))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        let mut w = BufWriter::new(f);
        self.write_jsonl(&mut w)?;
        w.flush().map_err(|e| Error::io("writing corpus", e))
    }
}
