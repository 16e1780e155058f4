//! Joint optimization of the toy model and the task log-variances.

mod checkpoint;
mod optim;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Tape, Tensor};
use crate::awl::{
    assemble_task_losses, combine, reported_weights, AlfVariant, AwlError, DawlStrategy, Example,
    SigmaParams, TrajectoryRow, TrajectoryWriter,
};
use crate::data::Dataset;
use crate::eval::{evaluate_examples, EvalError, EvalResult};
use crate::model::{ModelError, ToyModel, Vocabulary};

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, LoadMode, CHECKPOINT_VERSION,
};
pub use optim::{clip_global_norm, global_grad_norm, Adam};

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("training set is empty")]
    EmptyDataset,
    #[error(transparent)]
    Awl(#[from] AwlError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("trajectory: {0}")]
    Csv(#[from] csv::Error),
    #[error("trajectory: {0}")]
    Io(#[from] std::io::Error),
    #[error("combined loss became non-finite at step {step}")]
    NonFinite { step: u64 },
    #[error("diverged at step {step}; last good parameters saved to {}", .checkpoint.display())]
    Diverged { step: u64, checkpoint: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub alf: AlfVariant,
    pub strategy: DawlStrategy,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub embedding_dim: usize,
    pub max_target_len: usize,
    pub clip_grad_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alf: AlfVariant::Alf2,
            strategy: DawlStrategy::Output,
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 42,
            embedding_dim: 64,
            max_target_len: 16,
            clip_grad_norm: Some(5.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning_rate must be a non-negative number");
        }
        if self.embedding_dim < 2 {
            return bad("embedding_dim must be at least 2");
        }
        if self.max_target_len == 0 {
            return bad("max_target_len must be positive");
        }
        if let Some(c) = self.clip_grad_norm {
            if !(c.is_finite() && c > 0.0) {
                return bad("clip_grad_norm must be positive");
            }
        }
        if let AlfVariant::Fixed(w) = self.alf {
            AlfVariant::fixed(w)?;
        }
        Ok(())
    }
}

/// Result of one optimizer step. Weights and variances are the ones used in
/// the forward pass, before the update.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub combined: f64,
    pub losses: [f64; 3],
    pub weights: [f64; 3],
    pub variances: [f64; 3],
    pub grad_norm: f64,
    pub clipped: bool,
}

/// Model, σ and optimizer state.
pub struct Trainer {
    pub model: ToyModel,
    pub sigma: SigmaParams,
    config: TrainConfig,
    optimizer: Adam,
    steps: u64,
    clipped_steps: u64,
}

impl Trainer {
    pub fn new(model: ToyModel, config: TrainConfig) -> Result<Self, TrainError> {
        Self::with_sigma(model, SigmaParams::default(), config)
    }

    pub fn with_sigma(model: ToyModel, mut sigma: SigmaParams, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        sigma.tensor_mut().set_requires_grad(config.alf.learns_sigma());
        let mut sizes: Vec<usize> = model.params().iter().map(Tensor::numel).collect();
        sizes.push(3);
        Ok(Trainer {
            optimizer: Adam::new(config.learning_rate, &sizes),
            model,
            sigma,
            config,
            steps: 0,
            clipped_steps: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn clipped_steps(&self) -> u64 {
        self.clipped_steps
    }

    /// Forward, backward and one update of model and σ together.
    pub fn step(&mut self, batch: &[&Example]) -> Result<StepOutcome, TrainError> {
        self.model.zero_grad();
        self.sigma.tensor_mut().zero_grad();
        let weights = reported_weights(self.config.alf, &self.sigma);
        let variances = self.sigma.variances();

        let mut tape = Tape::new();
        let bound = self.model.bind(&mut tape);
        let log_var = self.sigma.bind(&mut tape);
        let losses = assemble_task_losses(&mut tape, &bound, batch, self.config.strategy)?;
        let total = combine(&mut tape, self.config.alf, &losses, log_var)?;
        let combined = tape.scalar(total);
        if !combined.is_finite() {
            return Err(TrainError::NonFinite { step: self.steps });
        }
        tape.backward(total)?;
        self.model.accumulate_grads(&tape, &bound)?;
        self.sigma.accumulate_grad(&tape, log_var)?;

        let mut tensors: Vec<&mut Tensor> = self.model.params_mut().iter_mut().collect();
        tensors.push(self.sigma.tensor_mut());
        let grad_norm = global_grad_norm(&tensors);
        if !grad_norm.is_finite() {
            return Err(TrainError::NonFinite { step: self.steps });
        }
        let clipped = self
            .config
            .clip_grad_norm
            .is_some_and(|c| clip_global_norm(&mut tensors, c));
        self.optimizer.update(&mut tensors);

        self.steps += 1;
        if clipped {
            self.clipped_steps += 1;
        }
        Ok(StepOutcome {
            combined,
            losses: losses.values(&tape),
            weights,
            variances,
            grad_norm,
            clipped,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochReport {
    /// 1-based.
    pub epoch: usize,
    pub loss_polarity: f64,
    pub loss_aspect: f64,
    pub loss_opinion: f64,
    pub combined: f64,
    pub weights: [f64; 3],
    pub dev: Option<EvalResult>,
}

impl EpochReport {
    /// Progress line with the machine-parsable `EPOCH k:` prefix.
    pub fn progress_line(&self) -> String {
        let mut line = format!(
            "EPOCH {}: loss={:.6} L_p={:.6} L_a={:.6} L_o={:.6} w={:.4},{:.4},{:.4}",
            self.epoch,
            self.combined,
            self.loss_polarity,
            self.loss_aspect,
            self.loss_opinion,
            self.weights[0],
            self.weights[1],
            self.weights[2]
        );
        if let Some(d) = &self.dev {
            line += &format!(" dev_acc={:.4} dev_f1={:.4}", d.all_accuracy, d.all_macro_f1);
        }
        line
    }
}

pub struct TrainReport {
    pub epochs: Vec<EpochReport>,
    pub checkpoint: PathBuf,
    pub trajectory: PathBuf,
    pub steps: u64,
    pub clipped_steps: u64,
    /// Per-step combined loss, in step order.
    pub step_losses: Vec<f64>,
    pub vocab: Vocabulary,
    pub model: ToyModel,
    pub sigma: SigmaParams,
}

/// Trains on `train`, evaluating `dev` after each epoch, and writes the
/// trajectory CSV and final checkpoint into `out_dir`.
pub fn train(
    train: &Dataset,
    dev: Option<&Dataset>,
    config: &TrainConfig,
    out_dir: &Path,
    on_epoch: &mut dyn FnMut(&EpochReport),
) -> Result<TrainReport, TrainError> {
    config.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    std::fs::create_dir_all(out_dir)?;
    let vocab = Vocabulary::build(train);
    let examples: Vec<Example> = train
        .iter()
        .map(|e| Example::from_entry(e, &vocab, config.max_target_len))
        .collect();
    let dev_examples: Option<Vec<Example>> = dev.map(|d| {
        d.iter()
            .map(|e| Example::from_entry(e, &vocab, config.max_target_len))
            .collect()
    });

    let model = ToyModel::new(vocab.len(), config.embedding_dim, config.seed)?;
    let mut trainer = Trainer::new(model, config.clone())?;
    let trajectory = out_dir.join(TRAJECTORY_FILE);
    let checkpoint = out_dir.join(CHECKPOINT_FILE);
    let mut writer = TrajectoryWriter::create(&trajectory)?;

    // Separate stream from the one used for initialization.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut step_losses = Vec::new();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0; 4];
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &examples[i]).collect();
            let out = match trainer.step(&batch) {
                Ok(out) => out,
                Err(TrainError::NonFinite { step }) => {
                    writer.flush()?;
                    save_checkpoint(&checkpoint, &vocab, &trainer.model, &trainer.sigma, config)?;
                    return Err(TrainError::Diverged { step, checkpoint });
                }
                Err(e) => return Err(e),
            };
            writer.write(&TrajectoryRow {
                step: trainer.steps() - 1,
                w_polarity: out.weights[0],
                w_aspect: out.weights[1],
                w_opinion: out.weights[2],
                sigma2_polarity: out.variances[0],
                sigma2_aspect: out.variances[1],
                sigma2_opinion: out.variances[2],
                loss_polarity: out.losses[0],
                loss_aspect: out.losses[1],
                loss_opinion: out.losses[2],
            })?;
            for (s, v) in sums.iter_mut().zip(out.losses.iter().chain([&out.combined])) {
                *s += v;
            }
            step_losses.push(out.combined);
            batches += 1;
        }
        writer.flush()?;
        let n = batches as f64;
        let dev = dev_examples
            .as_deref()
            .filter(|d| !d.is_empty())
            .map(|d| evaluate_examples(&trainer.model, d))
            .transpose()?;
        let report = EpochReport {
            epoch,
            loss_polarity: sums[0] / n,
            loss_aspect: sums[1] / n,
            loss_opinion: sums[2] / n,
            combined: sums[3] / n,
            weights: reported_weights(config.alf, &trainer.sigma),
            dev,
        };
        on_epoch(&report);
        epochs.push(report);
    }
    writer.flush()?;
    save_checkpoint(&checkpoint, &vocab, &trainer.model, &trainer.sigma, config)?;
    Ok(TrainReport {
        epochs,
        checkpoint,
        trajectory,
        steps: trainer.steps(),
        clipped_steps: trainer.clipped_steps(),
        step_losses,
        vocab,
        model: trainer.model,
        sigma: trainer.sigma,
    })
}
