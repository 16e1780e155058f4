use std::fmt::Write;
use std::sync::LazyLock;

use regex::Regex;

use super::{AugmentError, RefineState};
use crate::data::{words, Polarity};

/// The four prompt templates of the refinement loop.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TemplateId {
    Aspect,
    Opinion,
    Polarity,
    Feedback,
}

impl TemplateId {
    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::Aspect => "aspect",
            TemplateId::Opinion => "opinion",
            TemplateId::Polarity => "polarity",
            TemplateId::Feedback => "feedback",
        }
    }
}

/// Options of the binary follow-up query used by choice-token confidence.
pub const CHOICE_OPTIONS: &str = "(A) reasonable (B) unreasonable";

static CONFIDENCE_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?im)^\s*confidence\s*:\s*([0-9]*\.?[0-9]+)\s*$").unwrap());

static ELEMENT_LABEL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^\s*(aspect|opinion|answer)\s*:\s*").unwrap());

fn missing(template: TemplateId, field: &'static str) -> AugmentError {
    AugmentError::MissingField { template, field }
}

/// Renders one template from the loop state. Output is a pure function of
/// the state.
pub fn render_prompt(template: TemplateId, state: &RefineState) -> Result<String, AugmentError> {
    let inst = &state.instance;
    let mut p = String::new();
    writeln!(p, "Sentence: {}", inst.sentence).unwrap();
    writeln!(p, "Target: {}", inst.target).unwrap();

    let aspect = || {
        state
            .current_aspect
            .as_ref()
            .map(|(a, _)| a.as_str())
            .ok_or(missing(template, "current_aspect"))
    };
    let opinion = || {
        state
            .current_opinion
            .as_ref()
            .map(|(o, _)| o.as_str())
            .ok_or(missing(template, "current_opinion"))
    };

    match template {
        TemplateId::Aspect => {}
        TemplateId::Opinion => {
            writeln!(p, "Aspect: {}", aspect()?).unwrap();
        }
        TemplateId::Polarity | TemplateId::Feedback => {
            writeln!(p, "Aspect: {}", aspect()?).unwrap();
            writeln!(p, "Opinion: {}", opinion()?).unwrap();
        }
    }
    if template == TemplateId::Feedback {
        let predicted = state
            .predicted_polarity
            .map(Polarity::as_str)
            .unwrap_or("(unrecognized answer)");
        writeln!(p, "Predicted polarity: {predicted}").unwrap();
    } else if let Some(f) = &state.feedback {
        writeln!(p, "Feedback: {f}").unwrap();
    }
    p.push('\n');
    p.push_str(match template {
        TemplateId::Aspect => {
            "Which aspect of the target does the sentence describe, even if it is only implied? \
             Answer with a short phrase on the first line, then a line \"Confidence: <0.xx>\"."
        }
        TemplateId::Opinion => {
            "What opinion does the sentence express about this aspect, even if it is only implied? \
             Answer with a short phrase on the first line, then a line \"Confidence: <0.xx>\"."
        }
        TemplateId::Polarity => {
            "Given the aspect and opinion, is the sentiment toward the target positive, negative or neutral? \
             Answer with one word."
        }
        TemplateId::Feedback => {
            "The predicted polarity may be wrong. Point out what in the aspect or opinion above \
             misreads the sentence, and how to correct it."
        }
    });
    Ok(p)
}

/// Follow-up query asking whether a generated element is reasonable.
pub fn render_choice_prompt(state: &RefineState, element: &str, answer: &str) -> String {
    format!(
        "Sentence: {}\nTarget: {}\n{element}: {answer}\n\nIs the provided answer reasonable? {CHOICE_OPTIONS}\nAnswer with A or B.",
        state.instance.sentence, state.instance.target
    )
}

/// Value of the first `Confidence: <x>` line, if any.
pub fn parse_reported_confidence(text: &str) -> Option<f64> {
    CONFIDENCE_LINE
        .captures(text)
        .and_then(|c| c[1].parse().ok())
}

/// First answer line with any `Aspect:`/`Opinion:`/`Answer:` label and
/// surrounding quotes or trailing periods removed.
pub fn extract_element(text: &str) -> String {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !CONFIDENCE_LINE.is_match(l))
        .map(|l| {
            ELEMENT_LABEL
                .replace(l, "")
                .trim()
                .trim_matches(|c: char| c == '"' || c == '\'' || c == '.')
                .trim()
                .to_string()
        })
        .find(|l| !l.is_empty())
        .unwrap_or_default()
}

/// Lowercases, strips punctuation and returns the first label word found.
pub fn parse_polarity(text: &str) -> Option<Polarity> {
    words(text).iter().find_map(|w| w.parse().ok())
}
