//! Automatic weight learning.
//!
//! Data level: per-instance generation confidences either scale the
//! auxiliary input embeddings (`Input`), weight the per-instance auxiliary
//! losses (`Output`), or both (`InputOutput`). The polarity loss is never
//! confidence-weighted.
//!
//! Task level: each task `k` carries a trainable `s_k = log σ_k²`. The
//! combined objective is `Σ_k exp(-s_k)·L_k + Σ_k r(s_k)` with the
//! regularizer `r(s) = s` (ALF1) or `r(s) = ln(exp(s) + 1)` (ALF2).

mod trajectory;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, NodeId, Shape, Tape, Tensor};
use crate::data::{Entry, Polarity, MIN_CONFIDENCE};
use crate::model::{AuxTask, Bound, ModelError, TokenSequence, Vocabulary};

pub use trajectory::{read_trajectory, TrajectoryRow, TrajectoryWriter, TRAJECTORY_HEADER};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AwlError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("empty batch")]
    EmptyBatch,
    #[error("instance {0:?} has no auxiliary targets")]
    MissingAuxiliary(String),
    #[error("instance {0:?} has no confidence, required by the {1} strategy")]
    MissingConfidence(String, DawlStrategy),
    #[error("confidence {0} outside [0.5, 1.0]")]
    ConfidenceRange(f64),
    #[error("fixed weights must be non-negative and sum to 1, got {0:?}")]
    InvalidWeights([f64; 3]),
    #[error("stationary point needs a positive loss, got {0}")]
    NonPositiveLoss(f64),
    #[error("stationary point is only defined for alf1/alf2")]
    NoStationaryPoint,
    #[error("unknown {kind} {value:?}")]
    Parse { kind: &'static str, value: String },
}

/// Task order used for σ, weights and reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Task {
    Polarity,
    Aspect,
    Opinion,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Polarity, Task::Aspect, Task::Opinion];
}

/// Trainable task noise, stored as log-variances `s_k = log σ_k²`.
#[derive(Clone, Debug, PartialEq)]
pub struct SigmaParams {
    log_var: Tensor,
}

impl Default for SigmaParams {
    /// σ² = 1 for every task.
    fn default() -> Self {
        SigmaParams::from_log_variances([0.0; 3])
    }
}

impl SigmaParams {
    pub fn from_log_variances(s: [f64; 3]) -> Self {
        let log_var = Tensor::vector(s.to_vec())
            .expect("finite log-variances")
            .with_grad();
        SigmaParams { log_var }
    }

    pub fn from_variances(var: [f64; 3]) -> Self {
        SigmaParams::from_log_variances(var.map(f64::ln))
    }

    pub fn log_variances(&self) -> [f64; 3] {
        let d = self.log_var.data();
        [d[0], d[1], d[2]]
    }

    pub fn variances(&self) -> [f64; 3] {
        self.log_variances().map(f64::exp)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.log_var
    }

    pub fn tensor_mut(&mut self) -> &mut Tensor {
        &mut self.log_var
    }

    pub fn bind(&self, tape: &mut Tape) -> NodeId {
        tape.leaf(&self.log_var)
    }

    pub fn accumulate_grad(&mut self, tape: &Tape, node: NodeId) -> Result<(), AwlError> {
        Ok(tape.accumulate_grad(node, &mut self.log_var)?)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum DawlStrategy {
    #[default]
    None,
    Input,
    Output,
    InputOutput,
}

impl DawlStrategy {
    pub fn scales_input(self) -> bool {
        matches!(self, DawlStrategy::Input | DawlStrategy::InputOutput)
    }

    pub fn weights_output(self) -> bool {
        matches!(self, DawlStrategy::Output | DawlStrategy::InputOutput)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DawlStrategy::None => "none",
            DawlStrategy::Input => "input",
            DawlStrategy::Output => "output",
            DawlStrategy::InputOutput => "input-output",
        }
    }
}

impl fmt::Display for DawlStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DawlStrategy {
    type Err = AwlError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(DawlStrategy::None),
            "input" => Ok(DawlStrategy::Input),
            "output" => Ok(DawlStrategy::Output),
            "input-output" | "input_output" => Ok(DawlStrategy::InputOutput),
            other => Err(AwlError::Parse {
                kind: "strategy",
                value: other.into(),
            }),
        }
    }
}

/// Task-level combination of the three losses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum AlfVariant {
    Alf1,
    Alf2,
    /// Constant weights in (polarity, aspect, opinion) order.
    Fixed([f64; 3]),
}

impl AlfVariant {
    /// Hand-set weights used as the no-learning baseline.
    pub const BASE_WEIGHTS: [f64; 3] = [0.4, 0.3, 0.3];

    pub fn fixed(weights: [f64; 3]) -> Result<Self, AwlError> {
        validate_weights(weights)?;
        Ok(AlfVariant::Fixed(weights))
    }

    pub fn learns_sigma(self) -> bool {
        !matches!(self, AlfVariant::Fixed(_))
    }

    pub fn name(self) -> &'static str {
        match self {
            AlfVariant::Alf1 => "alf1",
            AlfVariant::Alf2 => "alf2",
            AlfVariant::Fixed(_) => "fixed",
        }
    }
}

impl fmt::Display for AlfVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AlfVariant::Fixed(w) => write!(f, "fixed({},{},{})", w[0], w[1], w[2]),
            other => f.write_str(other.name()),
        }
    }
}

fn validate_weights(w: [f64; 3]) -> Result<(), AwlError> {
    if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(AwlError::InvalidWeights(w));
    }
    Ok(())
}

/// One instance's auxiliary targets and confidences, already tokenized.
#[derive(Clone, Debug, PartialEq)]
pub struct AuxTargets {
    pub aspect: TokenSequence,
    pub aspect_confidence: f64,
    pub opinion: TokenSequence,
    pub opinion_confidence: f64,
}

/// A training instance in token-id form.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    pub sentence: Vec<usize>,
    pub target: Vec<usize>,
    pub polarity: Polarity,
    pub implicit: bool,
    pub aux: Option<AuxTargets>,
}

impl Example {
    pub fn from_entry(entry: &Entry, vocab: &Vocabulary, max_target_len: usize) -> Self {
        let i = entry.instance();
        let aux = entry.augmented().map(|a| AuxTargets {
            aspect: vocab.tokenize(&a.aspect).truncated(max_target_len),
            aspect_confidence: a.aspect_confidence,
            opinion: vocab.tokenize(&a.opinion).truncated(max_target_len),
            opinion_confidence: a.opinion_confidence,
        });
        Example {
            id: i.id.clone(),
            sentence: vocab.tokenize(&i.sentence).pooling_ids().to_vec(),
            target: vocab.tokenize(&i.target).pooling_ids().to_vec(),
            polarity: i.polarity,
            implicit: i.implicit,
            aux,
        }
    }
}

/// Per-instance auxiliary loss with the confidence that may weight it.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceLoss {
    pub id: String,
    pub loss: NodeId,
    pub confidence: f64,
}

/// Scalar loss nodes for the three tasks of one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskLosses {
    pub polarity: NodeId,
    pub aspect: NodeId,
    pub opinion: NodeId,
    pub aspect_instances: Vec<InstanceLoss>,
    pub opinion_instances: Vec<InstanceLoss>,
    pub predictions: Vec<Polarity>,
}

impl TaskLosses {
    /// Losses without per-instance detail, e.g. frozen constants.
    pub fn new(polarity: NodeId, aspect: NodeId, opinion: NodeId) -> Self {
        TaskLosses {
            polarity,
            aspect,
            opinion,
            aspect_instances: Vec::new(),
            opinion_instances: Vec::new(),
            predictions: Vec::new(),
        }
    }

    /// Losses in (polarity, aspect, opinion) order.
    pub fn nodes(&self) -> [NodeId; 3] {
        [self.polarity, self.aspect, self.opinion]
    }

    pub fn values(&self, tape: &Tape) -> [f64; 3] {
        self.nodes().map(|n| tape.scalar(n))
    }
}

/// `(1/N) Σ l_i`.
pub fn mean_reduce(tape: &mut Tape, losses: &[NodeId]) -> Result<NodeId, AwlError> {
    if losses.is_empty() {
        return Err(AwlError::EmptyBatch);
    }
    let stacked = tape.concat(losses)?;
    let total = tape.sum(stacked);
    Ok(tape.scale(total, 1.0 / losses.len() as f64))
}

/// `(1/N) Σ c_i · l_i` over per-instance losses.
pub fn dawl_output_reduce(tape: &mut Tape, per_instance: &[(NodeId, f64)]) -> Result<NodeId, AwlError> {
    if per_instance.is_empty() {
        return Err(AwlError::EmptyBatch);
    }
    let mut weighted = Vec::with_capacity(per_instance.len());
    for &(loss, c) in per_instance {
        if !(MIN_CONFIDENCE..=1.0).contains(&c) {
            return Err(AwlError::ConfidenceRange(c));
        }
        weighted.push(tape.scale(loss, c));
    }
    mean_reduce(tape, &weighted)
}

/// Builds L_p, L_a and L_o for a batch under a data-level strategy.
pub fn assemble_task_losses(
    tape: &mut Tape,
    model: &Bound,
    batch: &[&Example],
    strategy: DawlStrategy,
) -> Result<TaskLosses, AwlError> {
    if batch.is_empty() {
        return Err(AwlError::EmptyBatch);
    }
    let mut polarity = Vec::with_capacity(batch.len());
    let mut predictions = Vec::with_capacity(batch.len());
    let mut aspect_instances = Vec::with_capacity(batch.len());
    let mut opinion_instances = Vec::with_capacity(batch.len());

    for ex in batch {
        let aux = ex.aux.as_ref().ok_or_else(|| {
            if strategy == DawlStrategy::None {
                AwlError::MissingAuxiliary(ex.id.clone())
            } else {
                AwlError::MissingConfidence(ex.id.clone(), strategy)
            }
        })?;
        let out = model.polarity_loss(tape, &ex.sentence, &ex.target, ex.polarity)?;
        polarity.push(out.loss);
        predictions.push(out.prediction);

        for (task, seq, c, sink) in [
            (AuxTask::Aspect, &aux.aspect, aux.aspect_confidence, &mut aspect_instances),
            (AuxTask::Opinion, &aux.opinion, aux.opinion_confidence, &mut opinion_instances),
        ] {
            let scale = if strategy.scales_input() { c } else { 1.0 };
            let nll = model.generation_nll(tape, &ex.sentence, &ex.target, task, seq.ids(), scale)?;
            sink.push(InstanceLoss {
                id: ex.id.clone(),
                loss: nll.total,
                confidence: c,
            });
        }
    }

    let mut reduce = |items: &[InstanceLoss]| -> Result<NodeId, AwlError> {
        if strategy.weights_output() {
            let pairs: Vec<_> = items.iter().map(|i| (i.loss, i.confidence)).collect();
            dawl_output_reduce(tape, &pairs)
        } else {
            let nodes: Vec<_> = items.iter().map(|i| i.loss).collect();
            mean_reduce(tape, &nodes)
        }
    };
    let aspect = reduce(&aspect_instances)?;
    let opinion = reduce(&opinion_instances)?;
    let polarity = mean_reduce(tape, &polarity)?;
    Ok(TaskLosses {
        polarity,
        aspect,
        opinion,
        aspect_instances,
        opinion_instances,
        predictions,
    })
}

fn precision_weighted(tape: &mut Tape, losses: &TaskLosses, log_var: NodeId) -> Result<NodeId, AwlError> {
    let stacked = tape.concat(&losses.nodes())?;
    let neg = tape.neg(log_var);
    let precision = tape.exp(neg);
    let weighted = tape.mul(precision, stacked)?;
    Ok(tape.sum(weighted))
}

/// `Σ exp(-s_k) L_k + Σ s_k`.
pub fn combine_alf1(tape: &mut Tape, losses: &TaskLosses, log_var: NodeId) -> Result<NodeId, AwlError> {
    let data = precision_weighted(tape, losses, log_var)?;
    let reg = tape.sum(log_var);
    Ok(tape.add(data, reg)?)
}

/// `Σ exp(-s_k) L_k + Σ ln(exp(s_k) + 1)`.
pub fn combine_alf2(tape: &mut Tape, losses: &TaskLosses, log_var: NodeId) -> Result<NodeId, AwlError> {
    let data = precision_weighted(tape, losses, log_var)?;
    let var = tape.exp(log_var);
    let shifted = tape.add_scalar(var, 1.0);
    let logs = tape.log(shifted)?;
    let reg = tape.sum(logs);
    Ok(tape.add(data, reg)?)
}

/// `w_p L_p + w_a L_a + w_o L_o`.
pub fn combine_fixed(tape: &mut Tape, losses: &TaskLosses, weights: [f64; 3]) -> Result<NodeId, AwlError> {
    validate_weights(weights)?;
    let stacked = tape.concat(&losses.nodes())?;
    let w = tape.constant(Shape::vector(3), weights.to_vec())?;
    let weighted = tape.mul(w, stacked)?;
    Ok(tape.sum(weighted))
}

pub fn combine(
    tape: &mut Tape,
    variant: AlfVariant,
    losses: &TaskLosses,
    log_var: NodeId,
) -> Result<NodeId, AwlError> {
    match variant {
        AlfVariant::Alf1 => combine_alf1(tape, losses, log_var),
        AlfVariant::Alf2 => combine_alf2(tape, losses, log_var),
        AlfVariant::Fixed(w) => combine_fixed(tape, losses, w),
    }
}

/// `w_k = exp(-s_k) / Σ_j exp(-s_j)`, in (polarity, aspect, opinion) order.
pub fn normalized_task_weights(sigma: &SigmaParams) -> [f64; 3] {
    let s = sigma.log_variances();
    // shift by the minimum for stability; the ratio is unchanged
    let min = s.iter().copied().fold(f64::INFINITY, f64::min);
    let raw = s.map(|v| (min - v).exp());
    let total: f64 = raw.iter().sum();
    raw.map(|r| r / total)
}

/// Weights as reported for a given variant: learned ones for ALF, the
/// configured ones for fixed mode.
pub fn reported_weights(variant: AlfVariant, sigma: &SigmaParams) -> [f64; 3] {
    match variant {
        AlfVariant::Fixed(w) => w,
        _ => normalized_task_weights(sigma),
    }
}

/// Two-decimal rounding used in printed weight tables.
pub fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// Minimizer σ*² of one task's term `L/σ² + r(σ²)` for a frozen loss `L`.
pub fn stationary_sigma(variant: AlfVariant, loss: f64) -> Result<f64, AwlError> {
    if !(loss > 0.0) {
        return Err(AwlError::NonPositiveLoss(loss));
    }
    match variant {
        AlfVariant::Alf1 => Ok(loss),
        AlfVariant::Alf2 => Ok((loss + (loss * loss + 4.0 * loss).sqrt()) / 2.0),
        AlfVariant::Fixed(_) => Err(AwlError::NoStationaryPoint),
    }
}

impl FromStr for AlfVariant {
    type Err = AwlError;

    /// `alf1`, `alf2`, `fixed` (base weights) or `fixed(a,b,c)`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "alf1" => Ok(AlfVariant::Alf1),
            "alf2" => Ok(AlfVariant::Alf2),
            "fixed" => Ok(AlfVariant::Fixed(AlfVariant::BASE_WEIGHTS)),
            other => match other.strip_prefix("fixed(").and_then(|r| r.strip_suffix(')')) {
                Some(w) => AlfVariant::fixed(parse_weights(w)?),
                None => Err(AwlError::Parse {
                    kind: "loss variant",
                    value: other.into(),
                }),
            },
        }
    }
}

/// Parses `a,b,c` into (polarity, aspect, opinion) weights.
pub fn parse_weights(s: &str) -> Result<[f64; 3], AwlError> {
    let bad = || AwlError::Parse {
        kind: "weights",
        value: s.into(),
    };
    let parts = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<Vec<_>, _>>()?;
    let w: [f64; 3] = parts.try_into().map_err(|_| bad())?;
    validate_weights(w)?;
    Ok(w)
}

impl From<AlfVariant> for String {
    fn from(v: AlfVariant) -> String {
        v.to_string()
    }
}

impl TryFrom<String> for AlfVariant {
    type Error = AwlError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<DawlStrategy> for String {
    fn from(v: DawlStrategy) -> String {
        v.as_str().to_string()
    }
}

impl TryFrom<String> for DawlStrategy {
    type Error = AwlError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

#[cfg(test)]
mod tests;
