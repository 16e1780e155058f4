use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use sha2::{Digest, Sha256};

use super::TrainConfig;
use crate::autodiff::{AutodiffError, Shape, Tensor};
use crate::awl::SigmaParams;
use crate::model::{ModelError, ParamId, ToyModel, Vocabulary};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint: {0}")]
    Format(#[from] serde_json::Error),
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint checksum mismatch: recorded {recorded}, computed {computed}")]
    Checksum { recorded: String, computed: String },
    #[error("checkpoint parameter {index} is {found}, expected {expected}")]
    ParamName {
        index: usize,
        found: String,
        expected: &'static str,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LoadMode {
    Train,
    /// No gradient buffers are allocated.
    Eval,
}

pub struct Checkpoint {
    pub vocab: Vocabulary,
    pub model: ToyModel,
    pub sigma: SigmaParams,
    pub config: TrainConfig,
}

#[derive(Serialize, Deserialize)]
struct StoredTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Payload {
    vocab: Vocabulary,
    dim: usize,
    params: Vec<StoredTensor>,
    log_variances: [f64; 3],
    config: TrainConfig,
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    version: u32,
    checksum: String,
    payload: Box<RawValue>,
}

#[derive(Deserialize)]
struct VersionOnly {
    version: u32,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes a versioned JSON envelope whose checksum covers the payload bytes.
/// Floats are written in shortest round-trip form, so a reload is exact.
pub fn save_checkpoint(
    path: &Path,
    vocab: &Vocabulary,
    model: &ToyModel,
    sigma: &SigmaParams,
    config: &TrainConfig,
) -> Result<(), CheckpointError> {
    let payload = Payload {
        vocab: vocab.clone(),
        dim: model.dim(),
        params: ParamId::ALL
            .iter()
            .map(|&p| {
                let t = model.param(p);
                StoredTensor {
                    name: p.name().to_string(),
                    shape: t.shape().dims().to_vec(),
                    data: t.data().to_vec(),
                }
            })
            .collect(),
        log_variances: sigma.log_variances(),
        config: config.clone(),
    };
    let raw = serde_json::to_string(&payload)?;
    let envelope = Envelope {
        version: CHECKPOINT_VERSION,
        checksum: sha256_hex(raw.as_bytes()),
        payload: RawValue::from_string(raw)?,
    };
    let mut text = serde_json::to_string(&envelope)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path, mode: LoadMode) -> Result<Checkpoint, CheckpointError> {
    let text = std::fs::read_to_string(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let VersionOnly { version } = serde_json::from_str(&text)?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let envelope: Envelope = serde_json::from_str(&text)?;
    let computed = sha256_hex(envelope.payload.get().as_bytes());
    if computed != envelope.checksum {
        return Err(CheckpointError::Checksum {
            recorded: envelope.checksum,
            computed,
        });
    }
    let payload: Payload = serde_json::from_str(envelope.payload.get())?;
    let mut params = Vec::with_capacity(payload.params.len());
    for (index, (stored, id)) in payload.params.into_iter().zip(ParamId::ALL).enumerate() {
        if stored.name != id.name() {
            return Err(CheckpointError::ParamName {
                index,
                found: stored.name,
                expected: id.name(),
            });
        }
        params.push(Tensor::new(Shape::new(stored.shape)?, stored.data)?);
    }
    let trainable = mode == LoadMode::Train;
    let model = ToyModel::from_params(payload.vocab.len(), payload.dim, params, trainable)?;
    let mut sigma = SigmaParams::from_log_variances(payload.log_variances);
    sigma.tensor_mut().set_requires_grad(trainable);
    Ok(Checkpoint {
        vocab: payload.vocab,
        model,
        sigma,
        config: payload.config,
    })
}
