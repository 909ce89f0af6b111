use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::text::Sentence;

pub const EOS: usize = 0;
pub const BOS: usize = 1;
pub const UNK: usize = 2;

const RESERVED: [&str; 3] = ["<eos>", "<bos>", "<unk>"];

/// Word list with reserved ids: 0 end-of-sequence, 1 start, 2 unknown.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Keeps the `max_size - 3` most frequent tokens; ties break alphabetically.
    pub fn build<'a, I>(sentences: I, max_size: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Sentence>,
    {
        if max_size <= RESERVED.len() {
            return Err(Error::Config(format!("vocabulary size {max_size} leaves no room for words")));
        }
        let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
        for s in sentences {
            for t in s.iter() {
                *freq.entry(t).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = freq.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let kept: BTreeSet<&str> = ranked.into_iter().take(max_size - RESERVED.len()).map(|(w, _)| w).collect();
        Self::from_words(kept.into_iter().map(str::to_owned).collect())
    }

    /// Builds from the non-reserved words in id order.
    pub fn from_words(words: Vec<String>) -> Result<Self> {
        let all: Vec<String> = RESERVED.iter().map(|s| s.to_string()).chain(words).collect();
        let mut index = HashMap::with_capacity(all.len());
        for (i, w) in all.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary word `{w}`")));
            }
        }
        Ok(Vocab { words: all, index })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    /// Non-reserved words in id order.
    pub fn words(&self) -> &[String] {
        &self.words[RESERVED.len()..]
    }

    /// Target ids for teacher forcing, terminated by [`EOS`].
    pub fn encode(&self, s: &Sentence) -> Vec<usize> {
        s.iter().map(|t| self.id(t)).chain(std::iter::once(EOS)).collect()
    }

    /// Stops at the first [`EOS`]; start tokens are dropped.
    pub fn decode(&self, ids: &[usize]) -> Sentence {
        Sentence::from_tokens(
            ids.iter()
                .take_while(|&&i| i != EOS)
                .filter(|&&i| i != BOS)
                .filter_map(|&i| self.word(i)),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::tokenize;

    #[test]
    fn reserved_ids_and_frequency_cut() {
        let s = [tokenize("a man a dog"), tokenize("a cat")];
        let v = Vocab::build(s.iter(), 5).unwrap();
        assert_eq!(v.word(EOS), Some("<eos>"));
        assert_eq!(v.word(BOS), Some("<bos>"));
        assert_eq!(v.len(), 5);
        // "a" (3) then the alphabetically first count-1 word
        assert_eq!(v.words(), &["a", "cat"]);
        assert_eq!(v.id("zebra"), UNK);
    }

    #[test]
    fn encode_decode() {
        let s = [tokenize("a man runs")];
        let v = Vocab::build(s.iter(), 10).unwrap();
        let ids = v.encode(&s[0]);
        assert_eq!(*ids.last().unwrap(), EOS);
        assert_eq!(v.decode(&ids), s[0]);
    }
}
