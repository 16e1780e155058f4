use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use super::{DataError, Dataset, Entry};

/// Built-in fallback word list for the lexicon-absence heuristic. It is a
/// convenience, not a reproduction of any published implicit-slice split;
/// pass explicit per-id flags when the split matters.
pub const DEFAULT_OPINION_WORDS: &[&str] = &[
    "amazing", "annoying", "awesome", "awful", "bad", "beautiful", "best", "bland", "boring",
    "broken", "cheap", "clean", "cool", "delicious", "dirty", "disappointing", "excellent",
    "expensive", "fantastic", "fast", "fine", "fresh", "friendly", "good", "great", "happy",
    "hate", "horrible", "impressive", "lousy", "love", "loved", "mediocre", "nice", "overpriced",
    "perfect", "pleasant", "poor", "rude", "sad", "slow", "stale", "superb", "tasty", "terrible",
    "ugly", "unfriendly", "wonderful", "worst", "worse", "yummy",
];

/// Lowercased alphanumeric word split used throughout the crate.
pub fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OpinionLexicon {
    words: BTreeSet<String>,
}

impl Default for OpinionLexicon {
    fn default() -> Self {
        OpinionLexicon::from_words(DEFAULT_OPINION_WORDS.iter().copied())
    }
}

impl OpinionLexicon {
    pub fn from_words<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        OpinionLexicon {
            words: words.into_iter().map(|w| w.trim().to_lowercase()).filter(|w| !w.is_empty()).collect(),
        }
    }

    /// One word per line; blank lines and `#` comments are skipped.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        Ok(OpinionLexicon::from_words(
            text.lines().filter(|l| !l.trim_start().starts_with('#')),
        ))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Heuristic: a sentence is implicit iff none of its words is an opinion word.
    pub fn is_implicit(&self, sentence: &str) -> bool {
        !words(sentence).iter().any(|w| self.contains(w))
    }
}

fn with_flag(entry: &Entry, implicit: bool) -> Entry {
    let mut e = entry.clone();
    match &mut e {
        Entry::Plain(i) => i.implicit = implicit,
        Entry::Augmented(a) => a.base.implicit = implicit,
    }
    e
}

/// Partitions a dataset into `(explicit, implicit)`.
///
/// With `flags`, membership comes from the map, which must cover every id.
/// Without it, the lexicon heuristic decides. The `implicit` field of each
/// returned entry is set to its partition.
pub fn split_implicit(
    dataset: &Dataset,
    flags: Option<&HashMap<String, bool>>,
    lexicon: &OpinionLexicon,
) -> Result<(Dataset, Dataset), DataError> {
    if let Some(flags) = flags {
        let missing: Vec<String> = dataset
            .iter()
            .filter(|e| !flags.contains_key(e.id()))
            .map(|e| e.id().to_string())
            .collect();
        if !missing.is_empty() {
            return Err(DataError::MissingFlags(missing));
        }
    }
    let (mut explicit, mut implicit) = (Vec::new(), Vec::new());
    for e in dataset.iter() {
        let flag = match flags {
            Some(f) => f[e.id()],
            None => lexicon.is_implicit(&e.instance().sentence),
        };
        let e = with_flag(e, flag);
        if flag {
            implicit.push(e);
        } else {
            explicit.push(e);
        }
    }
    Ok((
        Dataset::new(format!("{}-explicit", dataset.name), explicit)?,
        Dataset::new(format!("{}-implicit", dataset.name), implicit)?,
    ))
}

/// Reads an id → flag map stored as a JSON object.
pub fn load_flags(path: impl AsRef<Path>) -> Result<HashMap<String, bool>, DataError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| DataError::Json {
        line: e.line(),
        message: e.to_string(),
    })
}
