//! Instance and dataset records, the JSONL interchange format, SemEval-2014
//! XML ingestion and the implicit/explicit split.

mod jsonl;
mod lexicon;
mod semeval;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use jsonl::{load_jsonl, load_jsonl_with, save_jsonl, LoadStats, Validation};
pub use lexicon::{load_flags, split_implicit, words, OpinionLexicon, DEFAULT_OPINION_WORDS};
pub use semeval::{convert_semeval_xml, parse_semeval_xml, SemevalConversion};

/// Lowest confidence kept after clipping.
pub const MIN_CONFIDENCE: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed JSON: {message}")]
    Json { line: usize, message: String },
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("unknown polarity {0:?}")]
    UnknownPolarity(String),
    #[error("duplicate instance id {0:?}")]
    DuplicateId(String),
    #[error("instance {id:?}: {message}")]
    Invalid { id: String, message: String },
    #[error("XML parse error: {0}")]
    Xml(String),
    #[error("aspectTerm {term:?} in sentence {sentence_id:?} is missing attribute {attribute:?}")]
    MissingAttribute {
        sentence_id: String,
        term: String,
        attribute: &'static str,
    },
    #[error("implicit flags missing for ids: {}", .0.join(", "))]
    MissingFlags(Vec<String>),
}

impl DataError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
    Neutral,
}

impl Polarity {
    /// Fixed label vocabulary; the position is the class index.
    pub const ALL: [Polarity; 3] = [Polarity::Positive, Polarity::Negative, Polarity::Neutral];

    pub fn index(self) -> usize {
        match self {
            Polarity::Positive => 0,
            Polarity::Negative => 1,
            Polarity::Neutral => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Polarity::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
            Polarity::Neutral => "neutral",
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Polarity {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "positive" => Ok(Polarity::Positive),
            "negative" => Ok(Polarity::Negative),
            "neutral" => Ok(Polarity::Neutral),
            other => Err(DataError::UnknownPolarity(other.to_string())),
        }
    }
}

/// A sentence, its target term and the gold polarity toward that target.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub id: String,
    pub sentence: String,
    pub target: String,
    pub polarity: Polarity,
    pub implicit: bool,
}

impl Instance {
    pub fn new(
        id: impl Into<String>,
        sentence: impl Into<String>,
        target: impl Into<String>,
        polarity: Polarity,
        implicit: bool,
    ) -> Result<Self, DataError> {
        let inst = Instance {
            id: id.into(),
            sentence: sentence.into(),
            target: target.into(),
            polarity,
            implicit,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let invalid = |message: &str| DataError::Invalid {
            id: self.id.clone(),
            message: message.to_string(),
        };
        if self.sentence.trim().is_empty() {
            return Err(invalid("sentence is empty"));
        }
        if self.target.trim().is_empty() {
            return Err(invalid("target is empty"));
        }
        Ok(())
    }
}

/// An instance enriched with generated aspect/opinion elements and their
/// (clipped) generation confidences.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedInstance {
    pub base: Instance,
    pub aspect: String,
    pub aspect_confidence: f64,
    pub opinion: String,
    pub opinion_confidence: f64,
    pub refine_epochs_used: u32,
    pub consensus_reached: bool,
}

impl AugmentedInstance {
    pub fn validate(&self) -> Result<(), DataError> {
        self.base.validate()?;
        let invalid = |message: String| DataError::Invalid {
            id: self.base.id.clone(),
            message,
        };
        if self.aspect.trim().is_empty() {
            return Err(invalid("aspect is empty".into()));
        }
        if self.opinion.trim().is_empty() {
            return Err(invalid("opinion is empty".into()));
        }
        for (name, c) in [
            ("aspect_confidence", self.aspect_confidence),
            ("opinion_confidence", self.opinion_confidence),
        ] {
            if !(MIN_CONFIDENCE..=1.0).contains(&c) {
                return Err(invalid(format!("{name} {c} outside [0.5, 1.0]")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Entry {
    Plain(Instance),
    Augmented(AugmentedInstance),
}

impl Entry {
    pub fn instance(&self) -> &Instance {
        match self {
            Entry::Plain(i) => i,
            Entry::Augmented(a) => &a.base,
        }
    }

    pub fn augmented(&self) -> Option<&AugmentedInstance> {
        match self {
            Entry::Augmented(a) => Some(a),
            Entry::Plain(_) => None,
        }
    }

    pub fn id(&self) -> &str {
        &self.instance().id
    }
}

impl From<Instance> for Entry {
    fn from(i: Instance) -> Self {
        Entry::Plain(i)
    }
}

impl From<AugmentedInstance> for Entry {
    fn from(a: AugmentedInstance) -> Self {
        Entry::Augmented(a)
    }
}

/// Ordered collection of entries with unique ids.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub name: String,
    entries: Vec<Entry>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, entries: Vec<Entry>) -> Result<Self, DataError> {
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if !seen.insert(e.id()) {
                return Err(DataError::DuplicateId(e.id().to_string()));
            }
        }
        Ok(Dataset {
            name: name.into(),
            entries,
        })
    }

    pub fn empty(name: impl Into<String>) -> Self {
        Dataset {
            name: name.into(),
            entries: Vec::new(),
        }
    }

    pub fn label_set(&self) -> [Polarity; 3] {
        Polarity::ALL
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<Entry> {
        self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Entry> {
        self.entries.iter()
    }

    pub fn instances(&self) -> impl Iterator<Item = &Instance> {
        self.entries.iter().map(Entry::instance)
    }

    /// Every entry as an augmented instance, or `None` if any is plain.
    pub fn augmented(&self) -> Option<Vec<&AugmentedInstance>> {
        self.entries.iter().map(Entry::augmented).collect()
    }
}

#[cfg(test)]
mod tests;
