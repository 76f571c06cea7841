//! Cross-entropy training with Adadelta on the classifier and Adam on a
//! trainable SSL encoder, keeping the epoch with the lowest validation
//! phone error rate.

mod dataset;
mod trainer;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::EvalError;
use crate::features::FeatureError;
use crate::models::ModelError;
use crate::optim::OptimizerConfig;

pub use dataset::{Dataset, InputKind, InputSpace};
pub use trainer::{predict_dataset, train, validate, CheckpointSink, TrainOutcome, Trainer, ValidationResult};

pub const CNN_BATCH_SIZE: usize = 256;
pub const SSL_BATCH_SIZE: usize = 32;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl TrainError {
    pub(crate) fn io(path: &std::path::Path, e: impl ToString) -> Self {
        TrainError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub epochs: usize,
    /// Classifier head, and the CNN encoder which trains with it.
    pub head_optimizer: OptimizerConfig,
    /// SSL encoder; used only when the backend is trainable.
    pub encoder_optimizer: OptimizerConfig,
    /// `None` picks 256 for the CNN path and 32 for SSL.
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub shuffle: bool,
    /// Write `epoch_{k}.ckpt` for every epoch, not only the best one.
    pub keep_all_epochs: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            head_optimizer: OptimizerConfig::adadelta(0.9),
            encoder_optimizer: OptimizerConfig::adam(1e-4),
            batch_size: None,
            seed: 0,
            shuffle: true,
            keep_all_epochs: true,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::Contract("epochs must be at least 1".into()));
        }
        if self.batch_size == Some(0) {
            return Err(TrainError::Contract("batch_size must be positive".into()));
        }
        for (name, opt) in [("head", &self.head_optimizer), ("encoder", &self.encoder_optimizer)] {
            opt.validate()
                .map_err(|m| TrainError::Contract(format!("{name} optimizer: {m}")))?;
        }
        Ok(())
    }

    pub fn batch_size_for(&self, ssl: bool) -> usize {
        self.batch_size.unwrap_or(if ssl { SSL_BATCH_SIZE } else { CNN_BATCH_SIZE })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    /// Frame accuracy on the training set during the epoch, percent.
    pub train_accuracy: f64,
    pub validation_phone_error_rate: f64,
    /// Percent, silence excluded.
    pub validation_balanced_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub path: Option<PathBuf>,
    pub epoch: usize,
    pub validation_phone_error_rate: f64,
    pub config: TrainingConfig,
}

/// Index of the minimum error rate, earliest on ties.
pub fn select_best(history: &[EpochMetrics]) -> Option<&EpochMetrics> {
    history.iter().fold(None, |best: Option<&EpochMetrics>, m| match best {
        Some(b) if b.validation_phone_error_rate <= m.validation_phone_error_rate => Some(b),
        _ => Some(m),
    })
}
