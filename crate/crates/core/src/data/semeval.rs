use std::collections::HashMap;
use std::path::Path;

use super::{DataError, Dataset, Entry, Instance, OpinionLexicon, Polarity};

#[derive(Clone, Debug, PartialEq)]
pub struct SemevalConversion {
    pub dataset: Dataset,
    /// Aspect terms labelled `conflict`, which have no place in the
    /// three-way label set.
    pub dropped_conflict: usize,
}

/// Converts a SemEval-2014 Task 4 XML file. Instance ids are
/// `<sentence id>#<term index>`.
pub fn convert_semeval_xml(
    path: impl AsRef<Path>,
    flags: Option<&HashMap<String, bool>>,
    lexicon: &OpinionLexicon,
) -> Result<SemevalConversion, DataError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    let mut out = parse_semeval_xml(&text, flags, lexicon)?;
    out.dataset.name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(out)
}

pub fn parse_semeval_xml(
    xml: &str,
    flags: Option<&HashMap<String, bool>>,
    lexicon: &OpinionLexicon,
) -> Result<SemevalConversion, DataError> {
    let doc = roxmltree::Document::parse(xml).map_err(|e| DataError::Xml(e.to_string()))?;
    let mut entries = Vec::new();
    let mut dropped_conflict = 0;
    let mut missing_flags = Vec::new();

    for (s_idx, sentence) in doc
        .descendants()
        .filter(|n| n.has_tag_name("sentence"))
        .enumerate()
    {
        let sentence_id = sentence
            .attribute("id")
            .map(str::to_string)
            .unwrap_or_else(|| format!("s{s_idx}"));
        let text = sentence
            .children()
            .find(|n| n.has_tag_name("text"))
            .and_then(|n| n.text())
            .map(str::trim)
            .unwrap_or_default();
        let terms = sentence
            .descendants()
            .filter(|n| n.has_tag_name("aspectTerm"));
        for (t_idx, term_node) in terms.enumerate() {
            let term = term_node
                .attribute("term")
                .ok_or_else(|| DataError::MissingAttribute {
                    sentence_id: sentence_id.clone(),
                    term: format!("#{t_idx}"),
                    attribute: "term",
                })?;
            let polarity = term_node
                .attribute("polarity")
                .ok_or_else(|| DataError::MissingAttribute {
                    sentence_id: sentence_id.clone(),
                    term: term.to_string(),
                    attribute: "polarity",
                })?;
            if polarity == "conflict" {
                dropped_conflict += 1;
                continue;
            }
            let polarity: Polarity = polarity.parse()?;
            let id = format!("{sentence_id}#{t_idx}");
            let implicit = match flags {
                Some(f) => match f.get(&id) {
                    Some(&v) => v,
                    None => {
                        missing_flags.push(id.clone());
                        false
                    }
                },
                None => lexicon.is_implicit(text),
            };
            entries.push(Entry::Plain(Instance::new(id, text, term, polarity, implicit)?));
        }
    }
    if !missing_flags.is_empty() {
        return Err(DataError::MissingFlags(missing_flags));
    }
    if dropped_conflict > 0 {
        log::info!("dropped {dropped_conflict} aspect term(s) with conflict polarity");
    }
    Ok(SemevalConversion {
        dataset: Dataset::new("semeval", entries)?,
        dropped_conflict,
    })
}
