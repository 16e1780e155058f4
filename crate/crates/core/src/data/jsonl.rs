use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use super::{AugmentedInstance, DataError, Dataset, Entry, Instance, Polarity, MIN_CONFIDENCE};

/// How out-of-range confidences are treated on load.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Validation {
    /// Reject the file.
    #[default]
    Strict,
    /// Clamp into `[0.5, 1.0]` and count.
    Lenient,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub lines: usize,
    pub clipped_confidences: usize,
}

/// On-disk record. Field declaration order is the canonical output order.
#[derive(Serialize, Deserialize)]
struct Record {
    id: String,
    sentence: String,
    target: String,
    polarity: String,
    #[serde(default)]
    implicit: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    aspect: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    aspect_confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    opinion: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    opinion_confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    refine_epochs_used: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    consensus_reached: Option<bool>,
}

fn nfc(s: &str) -> String {
    s.nfc().collect()
}

impl From<&Entry> for Record {
    fn from(e: &Entry) -> Self {
        let i = e.instance();
        let mut r = Record {
            id: nfc(&i.id),
            sentence: nfc(&i.sentence),
            target: nfc(&i.target),
            polarity: i.polarity.as_str().to_string(),
            implicit: i.implicit,
            aspect: None,
            aspect_confidence: None,
            opinion: None,
            opinion_confidence: None,
            refine_epochs_used: None,
            consensus_reached: None,
        };
        if let Entry::Augmented(a) = e {
            r.aspect = Some(nfc(&a.aspect));
            r.aspect_confidence = Some(a.aspect_confidence);
            r.opinion = Some(nfc(&a.opinion));
            r.opinion_confidence = Some(a.opinion_confidence);
            r.refine_epochs_used = Some(a.refine_epochs_used);
            r.consensus_reached = Some(a.consensus_reached);
        }
        r
    }
}

impl Record {
    fn into_entry(
        self,
        line: usize,
        mode: Validation,
        stats: &mut LoadStats,
    ) -> Result<Entry, DataError> {
        let polarity: Polarity = self.polarity.parse()?;
        let base = Instance {
            id: nfc(&self.id),
            sentence: nfc(&self.sentence),
            target: nfc(&self.target),
            polarity,
            implicit: self.implicit,
        };
        base.validate().map_err(|e| DataError::Schema {
            line,
            message: e.to_string(),
        })?;

        let has_any = self.aspect.is_some()
            || self.aspect_confidence.is_some()
            || self.opinion.is_some()
            || self.opinion_confidence.is_some();
        if !has_any {
            return Ok(Entry::Plain(base));
        }
        let (Some(aspect), Some(ca), Some(opinion), Some(co)) = (
            self.aspect,
            self.aspect_confidence,
            self.opinion,
            self.opinion_confidence,
        ) else {
            return Err(DataError::Schema {
                line,
                message: "augmented record needs aspect, aspect_confidence, opinion and opinion_confidence".into(),
            });
        };
        let mut check = |name: &str, c: f64| -> Result<f64, DataError> {
            if (MIN_CONFIDENCE..=1.0).contains(&c) {
                return Ok(c);
            }
            match mode {
                Validation::Strict => Err(DataError::Schema {
                    line,
                    message: format!("{name} {c} outside [0.5, 1.0]"),
                }),
                Validation::Lenient if c.is_finite() => {
                    stats.clipped_confidences += 1;
                    Ok(c.clamp(MIN_CONFIDENCE, 1.0))
                }
                Validation::Lenient => Err(DataError::Schema {
                    line,
                    message: format!("{name} is not finite"),
                }),
            }
        };
        let aspect_confidence = check("aspect_confidence", ca)?;
        let opinion_confidence = check("opinion_confidence", co)?;
        let aug = AugmentedInstance {
            base,
            aspect: nfc(&aspect),
            aspect_confidence,
            opinion: nfc(&opinion),
            opinion_confidence,
            refine_epochs_used: self.refine_epochs_used.unwrap_or(0),
            consensus_reached: self.consensus_reached.unwrap_or(false),
        };
        aug.validate().map_err(|e| DataError::Schema {
            line,
            message: e.to_string(),
        })?;
        Ok(Entry::Augmented(aug))
    }
}

/// Loads a dataset in strict mode.
pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    load_jsonl_with(path, Validation::Strict).map(|(d, _)| d)
}

pub fn load_jsonl_with(
    path: impl AsRef<Path>,
    mode: Validation,
) -> Result<(Dataset, LoadStats), DataError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    let mut stats = LoadStats::default();
    let mut entries = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| DataError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| DataError::Json {
            line: lineno,
            message: e.to_string(),
        })?;
        entries.push(record.into_entry(lineno, mode, &mut stats)?);
        stats.lines += 1;
    }
    if stats.clipped_confidences > 0 {
        log::warn!(
            "{}: clipped {} confidence value(s) into [0.5, 1.0]",
            path.display(),
            stats.clipped_confidences
        );
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok((Dataset::new(name, entries)?, stats))
}

/// Writes one canonical JSON object per line.
pub fn save_jsonl(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| DataError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for e in dataset.entries() {
        let line = serde_json::to_string(&Record::from(e)).expect("record serializes");
        writeln!(w, "{line}").map_err(|e| DataError::io(path, e))?;
    }
    w.flush().map_err(|e| DataError::io(path, e))
}
