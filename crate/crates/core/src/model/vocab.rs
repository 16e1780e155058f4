use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::{words, Dataset, Entry};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;

const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<bos>", "<eos>"];

/// Dense token ↔ index map with the four reserved tokens at 0..4.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        let tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens, index }
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = String;

    fn try_from(tokens: Vec<String>) -> Result<Self, Self::Error> {
        if tokens.len() < RESERVED.len() || tokens[..4] != RESERVED {
            return Err("vocabulary must start with <pad>, <unk>, <bos>, <eos>".into());
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(format!("duplicate vocabulary token {t:?}"));
            }
        }
        Ok(Vocabulary { tokens, index })
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    /// Adds words in first-seen order.
    pub fn extend<'a>(&mut self, text_words: impl IntoIterator<Item = &'a str>) {
        for w in text_words {
            if !self.index.contains_key(w) {
                self.index.insert(w.to_string(), self.tokens.len());
                self.tokens.push(w.to_string());
            }
        }
    }

    /// Vocabulary over sentences, targets and any generated elements, in
    /// dataset order.
    pub fn build(dataset: &Dataset) -> Self {
        let mut v = Vocabulary::default();
        for e in dataset.iter() {
            let i = e.instance();
            v.extend(words(&i.sentence).iter().map(String::as_str));
            v.extend(words(&i.target).iter().map(String::as_str));
            if let Entry::Augmented(a) = e {
                v.extend(words(&a.aspect).iter().map(String::as_str));
                v.extend(words(&a.opinion).iter().map(String::as_str));
            }
        }
        v
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Lowercases, splits on whitespace and punctuation, maps unknown words
    /// to UNK and appends EOS.
    pub fn tokenize(&self, text: &str) -> TokenSequence {
        let mut ids: Vec<usize> = words(text).iter().map(|w| self.id(w)).collect();
        if ids.is_empty() {
            log::warn!("tokenize: empty text {text:?} becomes a lone EOS");
        }
        ids.push(EOS);
        TokenSequence { ids }
    }
}

/// Token ids ending in EOS.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    ids: Vec<usize>,
}

impl TokenSequence {
    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    /// Length including EOS.
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Ids before EOS; for input encoding.
    pub fn content(&self) -> &[usize] {
        &self.ids[..self.ids.len() - 1]
    }

    /// Content ids, or `[EOS]` for an empty sequence, so pooling always
    /// has at least one row.
    pub fn pooling_ids(&self) -> &[usize] {
        if self.ids.len() == 1 {
            &self.ids
        } else {
            self.content()
        }
    }

    /// Keeps at most `max_len` tokens, EOS included.
    pub fn truncated(mut self, max_len: usize) -> Self {
        let max_len = max_len.max(1);
        if self.ids.len() > max_len {
            self.ids.truncate(max_len - 1);
            self.ids.push(EOS);
        }
        self
    }
}
