use std::path::Path;

use thiserror::Error;

use crate::corpus::CorpusError;
use crate::evaluation::EvalError;
use crate::features::FeatureError;
use crate::inventory::InventoryError;
use crate::models::ModelError;
use crate::perceptual::PerceptualError;
use crate::training::TrainError;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

/// Crate-wide error; [`Error::exit_code`] maps it onto the CLI contract.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("run {run_id}: {message}")]
    RunExists { run_id: String, message: String },
    #[error("run directory {path} is locked by another process (remove {path}/.lock if stale)")]
    Locked { path: String },
    #[error("tabulate: {0}")]
    Tabulate(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Inventory(#[from] InventoryError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Perceptual(#[from] PerceptualError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: &Path, e: impl ToString) -> Self {
        Error::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }

    /// 2 for configuration problems, 3 for bad input data, 4 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::RunExists { .. } | Error::Inventory(_) => EXIT_CONFIG,
            Error::Data(_) | Error::Tabulate(_) | Error::Corpus(_) => EXIT_DATA,
            Error::Locked { .. } | Error::Io { .. } => EXIT_RUNTIME,
            Error::Feature(e) => feature_code(e),
            Error::Model(e) => model_code(e),
            Error::Train(e) => match e {
                TrainError::Feature(f) => feature_code(f),
                TrainError::Model(m) => model_code(m),
                TrainError::Eval(v) => eval_code(v),
                TrainError::Contract(_) | TrainError::NonFiniteLoss { .. } | TrainError::Io { .. } => EXIT_RUNTIME,
            },
            Error::Eval(e) => eval_code(e),
            Error::Perceptual(e) => match e {
                PerceptualError::Validation(_) => EXIT_DATA,
                PerceptualError::Io { .. } => EXIT_DATA,
                PerceptualError::Correlation(_) | PerceptualError::Export(_) => EXIT_RUNTIME,
            },
        }
    }
}

fn feature_code(e: &FeatureError) -> i32 {
    match e {
        FeatureError::Config(_) => EXIT_CONFIG,
        FeatureError::Cache { .. } | FeatureError::Resample(_) => EXIT_RUNTIME,
        _ => EXIT_DATA,
    }
}

fn model_code(e: &ModelError) -> i32 {
    match e {
        ModelError::Config(_) | ModelError::Backend { .. } => EXIT_CONFIG,
        ModelError::Checkpoint { .. } => EXIT_DATA,
        ModelError::Contract(_) | ModelError::Prediction(_) => EXIT_RUNTIME,
    }
}

fn eval_code(e: &EvalError) -> i32 {
    match e {
        EvalError::Group(_) => EXIT_CONFIG,
        EvalError::Empty | EvalError::Label { .. } | EvalError::AbsentPhone(_) => EXIT_DATA,
        EvalError::Bootstrap(_) | EvalError::Contract(_) | EvalError::Io { .. } => EXIT_RUNTIME,
    }
}
