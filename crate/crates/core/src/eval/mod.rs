//! Classification metrics and dataset evaluation.


use serde::Serialize;

use crate::awl::Example;
use crate::data::{Dataset, Polarity};
use crate::model::{ModelError, ToyModel, Vocabulary, NUM_CLASSES};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("gold has {gold} labels but pred has {pred}")]
    LengthMismatch { gold: usize, pred: usize },
    #[error("no labels to score")]
    Empty,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Rows are gold classes, columns predicted classes.
pub type Confusion = [[usize; NUM_CLASSES]; NUM_CLASSES];

fn check(gold: &[Polarity], pred: &[Polarity]) -> Result<(), EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::LengthMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    if gold.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(())
}

pub fn confusion_matrix(gold: &[Polarity], pred: &[Polarity]) -> Result<Confusion, EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::LengthMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    let mut m = [[0; NUM_CLASSES]; NUM_CLASSES];
    for (g, p) in gold.iter().zip(pred) {
        m[g.index()][p.index()] += 1;
    }
    Ok(m)
}

pub fn accuracy(gold: &[Polarity], pred: &[Polarity]) -> Result<f64, EvalError> {
    check(gold, pred)?;
    let hits = gold.iter().zip(pred).filter(|(g, p)| g == p).count();
    Ok(hits as f64 / gold.len() as f64)
}

/// Unweighted mean of per-class F1 over the classes present in gold or
/// pred.
pub fn macro_f1(gold: &[Polarity], pred: &[Polarity]) -> Result<f64, EvalError> {
    check(gold, pred)?;
    Ok(macro_f1_from_confusion(&confusion_matrix(gold, pred)?))
}

pub fn macro_f1_from_confusion(m: &Confusion) -> f64 {
    let mut total = 0.0;
    let mut classes = 0;
    for k in 0..NUM_CLASSES {
        let tp = m[k][k];
        let gold_k: usize = m[k].iter().sum();
        let pred_k: usize = m.iter().map(|row| row[k]).sum();
        if gold_k == 0 && pred_k == 0 {
            continue;
        }
        classes += 1;
        // 2tp / (2tp + fp + fn); the denominator is positive here
        total += 2.0 * tp as f64 / (gold_k + pred_k) as f64;
    }
    if classes == 0 {
        0.0
    } else {
        total / classes as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalResult {
    pub all_accuracy: f64,
    pub all_macro_f1: f64,
    /// Absent when the dataset has no implicit instances.
    pub isa_accuracy: Option<f64>,
    pub isa_macro_f1: Option<f64>,
    pub confusion: Confusion,
    pub n_all: usize,
    pub n_implicit: usize,
}

impl EvalResult {
    /// Scores predictions; `implicit[i]` marks the ISA slice.
    pub fn from_predictions(
        gold: &[Polarity],
        pred: &[Polarity],
        implicit: &[bool],
    ) -> Result<Self, EvalError> {
        check(gold, pred)?;
        if implicit.len() != gold.len() {
            return Err(EvalError::LengthMismatch {
                gold: gold.len(),
                pred: implicit.len(),
            });
        }
        let (ig, ip): (Vec<_>, Vec<_>) = gold
            .iter()
            .zip(pred)
            .zip(implicit)
            .filter(|(_, &imp)| imp)
            .map(|((g, p), _)| (*g, *p))
            .unzip();
        let (isa_accuracy, isa_macro_f1) = if ig.is_empty() {
            (None, None)
        } else {
            (Some(accuracy(&ig, &ip)?), Some(macro_f1(&ig, &ip)?))
        };
        Ok(EvalResult {
            all_accuracy: accuracy(gold, pred)?,
            all_macro_f1: macro_f1(gold, pred)?,
            isa_accuracy,
            isa_macro_f1,
            confusion: confusion_matrix(gold, pred)?,
            n_all: gold.len(),
            n_implicit: ig.len(),
        })
    }
}

pub fn evaluate_examples(model: &ToyModel, examples: &[Example]) -> Result<EvalResult, EvalError> {
    let pred = examples
        .iter()
        .map(|e| model.predict(&e.sentence, &e.target))
        .collect::<Result<Vec<_>, _>>()?;
    let gold: Vec<_> = examples.iter().map(|e| e.polarity).collect();
    let implicit: Vec<_> = examples.iter().map(|e| e.implicit).collect();
    EvalResult::from_predictions(&gold, &pred, &implicit)
}

/// Scores the polarity head on every instance and on the implicit slice.
pub fn evaluate(model: &ToyModel, vocab: &Vocabulary, dataset: &Dataset) -> Result<EvalResult, EvalError> {
    let examples: Vec<_> = dataset
        .iter()
        .map(|e| Example::from_entry(e, vocab, usize::MAX))
        .collect();
    evaluate_examples(model, &examples)
}

/// Percentage with two decimals, as printed in result tables.
pub fn pct(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}
