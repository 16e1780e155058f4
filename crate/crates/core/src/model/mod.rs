//! The small shared-parameter model trained on all three tasks.
//!
//! A sentence/target pair is encoded as the concatenation of the mean-pooled
//! sentence embeddings (optionally scaled by a confidence) and the mean-pooled
//! target embeddings. A shared projection maps that context to `d`
//! dimensions; the polarity head classifies it, and the generation head
//! predicts each target token from the projected context plus the embedding
//! of the previous gold token and a per-task tag.

mod vocab;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AutodiffError, NodeId, Shape, Tape, Tensor};
use crate::data::Polarity;

pub use vocab::{TokenSequence, Vocabulary, BOS, EOS, PAD, UNK};

pub const NUM_CLASSES: usize = 3;
pub const INIT_RANGE: f64 = 0.1;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("input scale must lie in (0, 1], got {0}")]
    InvalidScale(f64),
    #[error("empty {0} sequence")]
    EmptySequence(&'static str),
    #[error("embedding dimension must be at least 2, got {0}")]
    InvalidDim(usize),
    #[error("parameter {name}: expected shape {expected}, got {actual}")]
    ParamShape {
        name: &'static str,
        expected: Shape,
        actual: Shape,
    },
}

/// Which auxiliary generation task a loss belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AuxTask {
    Aspect,
    Opinion,
}

impl AuxTask {
    pub fn tag_index(self) -> usize {
        match self {
            AuxTask::Aspect => 0,
            AuxTask::Opinion => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamId {
    Embedding,
    ContextW,
    ContextB,
    PolarityW,
    PolarityB,
    TaskTags,
    GenerationW,
    GenerationB,
}

impl ParamId {
    pub const ALL: [ParamId; 8] = [
        ParamId::Embedding,
        ParamId::ContextW,
        ParamId::ContextB,
        ParamId::PolarityW,
        ParamId::PolarityB,
        ParamId::TaskTags,
        ParamId::GenerationW,
        ParamId::GenerationB,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamId::Embedding => "embedding",
            ParamId::ContextW => "context.weight",
            ParamId::ContextB => "context.bias",
            ParamId::PolarityW => "polarity.weight",
            ParamId::PolarityB => "polarity.bias",
            ParamId::TaskTags => "task_tags",
            ParamId::GenerationW => "generation.weight",
            ParamId::GenerationB => "generation.bias",
        }
    }

    fn index(self) -> usize {
        self as usize
    }

    fn is_bias(self) -> bool {
        matches!(
            self,
            ParamId::ContextB | ParamId::PolarityB | ParamId::GenerationB
        )
    }

    pub fn shape(self, vocab_size: usize, dim: usize) -> Shape {
        match self {
            ParamId::Embedding => Shape::matrix(vocab_size, dim),
            ParamId::ContextW => Shape::matrix(dim, 2 * dim),
            ParamId::ContextB => Shape::vector(dim),
            ParamId::PolarityW => Shape::matrix(NUM_CLASSES, dim),
            ParamId::PolarityB => Shape::vector(NUM_CLASSES),
            ParamId::TaskTags => Shape::matrix(2, dim),
            ParamId::GenerationW => Shape::matrix(vocab_size, 2 * dim),
            ParamId::GenerationB => Shape::vector(vocab_size),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyModel {
    vocab_size: usize,
    dim: usize,
    params: Vec<Tensor>,
}

impl ToyModel {
    /// Weights uniform in ±0.1 from a seeded ChaCha stream, biases zero.
    pub fn new(vocab_size: usize, dim: usize, seed: u64) -> Result<Self, ModelError> {
        if dim < 2 {
            return Err(ModelError::InvalidDim(dim));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = ParamId::ALL
            .iter()
            .map(|&p| {
                let shape = p.shape(vocab_size, dim);
                let mut t = Tensor::zeros(shape);
                if !p.is_bias() {
                    for v in t.data_mut() {
                        *v = rng.random_range(-INIT_RANGE..INIT_RANGE);
                    }
                }
                t.with_grad()
            })
            .collect();
        Ok(ToyModel {
            vocab_size,
            dim,
            params,
        })
    }

    /// Rebuilds a model from stored tensors, checking every shape.
    pub fn from_params(
        vocab_size: usize,
        dim: usize,
        params: Vec<Tensor>,
        trainable: bool,
    ) -> Result<Self, ModelError> {
        if dim < 2 {
            return Err(ModelError::InvalidDim(dim));
        }
        if params.len() != ParamId::ALL.len() {
            return Err(ModelError::EmptySequence("parameter"));
        }
        for (p, t) in ParamId::ALL.iter().zip(&params) {
            let expected = p.shape(vocab_size, dim);
            if t.shape() != &expected {
                return Err(ModelError::ParamShape {
                    name: p.name(),
                    expected,
                    actual: t.shape().clone(),
                });
            }
        }
        let mut m = ToyModel {
            vocab_size,
            dim,
            params,
        };
        m.set_trainable(trainable);
        Ok(m)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn param(&self, id: ParamId) -> &Tensor {
        &self.params[id.index()]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.index()]
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    /// Evaluation mode drops all gradient buffers.
    pub fn set_trainable(&mut self, on: bool) {
        self.params.iter_mut().for_each(|p| p.set_requires_grad(on));
    }

    pub fn is_trainable(&self) -> bool {
        self.params.iter().all(Tensor::requires_grad)
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Copies the parameters onto `tape` for one forward pass.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        let nodes = self.params.iter().map(|p| tape.leaf(p)).collect();
        Bound {
            nodes,
            dim: self.dim,
        }
    }

    /// Adds the tape's gradients for `bound` into the parameter buffers.
    pub fn accumulate_grads(&mut self, tape: &Tape, bound: &Bound) -> Result<(), ModelError> {
        for (p, &n) in self.params.iter_mut().zip(&bound.nodes) {
            tape.accumulate_grad(n, p)?;
        }
        Ok(())
    }

    /// Argmax class of the polarity head, without recording gradients.
    pub fn predict(&self, sentence: &[usize], target: &[usize]) -> Result<Polarity, ModelError> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let logits = bound.polarity_logits(&mut tape, sentence, target)?;
        Ok(argmax_polarity(tape.value(logits)))
    }
}

pub fn argmax_polarity(logits: &[f64]) -> Polarity {
    let mut best = 0;
    for (i, v) in logits.iter().enumerate() {
        if *v > logits[best] {
            best = i;
        }
    }
    Polarity::from_index(best).expect("three logits")
}

/// A model's parameters as nodes on one tape.
#[derive(Clone, Debug)]
pub struct Bound {
    nodes: Vec<NodeId>,
    dim: usize,
}

/// Result of a polarity forward pass.
#[derive(Clone, Copy, Debug)]
pub struct PolarityOutput {
    pub loss: NodeId,
    pub prediction: Polarity,
}

/// Result of a teacher-forced generation pass.
#[derive(Clone, Debug)]
pub struct GenerationOutput {
    pub total: NodeId,
    pub per_token: Vec<f64>,
}

impl Bound {
    pub fn node(&self, id: ParamId) -> NodeId {
        self.nodes[id.index()]
    }

    /// Replaces one parameter node, e.g. with a variable under gradient check.
    pub fn with_node(mut self, id: ParamId, node: NodeId) -> Self {
        self.nodes[id.index()] = node;
        self
    }

    /// `[mean(c · Emb[sentence]) ; mean(Emb[target])]`, a `2d` vector.
    pub fn encode(
        &self,
        tape: &mut Tape,
        sentence: &[usize],
        target: &[usize],
        input_scale: f64,
    ) -> Result<NodeId, ModelError> {
        if !(input_scale > 0.0 && input_scale <= 1.0) {
            return Err(ModelError::InvalidScale(input_scale));
        }
        if sentence.is_empty() {
            return Err(ModelError::EmptySequence("sentence"));
        }
        if target.is_empty() {
            return Err(ModelError::EmptySequence("target"));
        }
        let table = self.node(ParamId::Embedding);
        let s = tape.embed(table, sentence)?;
        let s = tape.scale(s, input_scale);
        let s = tape.mean_pool(s, 0)?;
        let t = tape.embed(table, target)?;
        let t = tape.mean_pool(t, 0)?;
        Ok(tape.concat(&[s, t])?)
    }

    fn project(&self, tape: &mut Tape, context: NodeId) -> Result<NodeId, ModelError> {
        Ok(tape.affine(
            self.node(ParamId::ContextW),
            self.node(ParamId::ContextB),
            context,
        )?)
    }

    pub fn polarity_logits(
        &self,
        tape: &mut Tape,
        sentence: &[usize],
        target: &[usize],
    ) -> Result<NodeId, ModelError> {
        let ctx = self.encode(tape, sentence, target, 1.0)?;
        let hidden = self.project(tape, ctx)?;
        Ok(tape.affine(
            self.node(ParamId::PolarityW),
            self.node(ParamId::PolarityB),
            hidden,
        )?)
    }

    /// Cross-entropy of the polarity head against the gold label, plus the
    /// argmax prediction.
    pub fn polarity_loss(
        &self,
        tape: &mut Tape,
        sentence: &[usize],
        target: &[usize],
        gold: Polarity,
    ) -> Result<PolarityOutput, ModelError> {
        let logits = self.polarity_logits(tape, sentence, target)?;
        let prediction = argmax_polarity(tape.value(logits));
        let loss = tape.softmax_xent(logits, gold.index())?;
        Ok(PolarityOutput { loss, prediction })
    }

    /// Teacher-forced negative log-likelihood of `output` (ending in EOS).
    ///
    /// Step `t` sees the projected context and `Emb[s_{t-1}] + tag`, with
    /// `s_0 = BOS`. Only the sentence half of the context is scaled.
    pub fn generation_nll(
        &self,
        tape: &mut Tape,
        sentence: &[usize],
        target: &[usize],
        task: AuxTask,
        output: &[usize],
        input_scale: f64,
    ) -> Result<GenerationOutput, ModelError> {
        if output.is_empty() {
            return Err(ModelError::EmptySequence("generation target"));
        }
        let steps = output.len();
        let ctx = self.encode(tape, sentence, target, input_scale)?;
        let hidden = self.project(tape, ctx)?;
        let hidden = tape.repeat_rows(hidden, steps)?;

        let prev: Vec<usize> = std::iter::once(BOS)
            .chain(output[..steps - 1].iter().copied())
            .collect();
        let table = self.node(ParamId::Embedding);
        let prev = tape.embed(table, &prev)?;
        let tags = tape.embed(self.node(ParamId::TaskTags), &vec![task.tag_index(); steps])?;
        let prev = tape.add(prev, tags)?;

        let inputs = tape.concat_cols(hidden, prev)?;
        let logits = tape.affine(
            self.node(ParamId::GenerationW),
            self.node(ParamId::GenerationB),
            inputs,
        )?;
        let losses = tape.softmax_xent_rows(logits, output)?;
        let per_token = tape.value(losses).to_vec();
        let total = tape.sum(losses);
        Ok(GenerationOutput { total, per_token })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}
