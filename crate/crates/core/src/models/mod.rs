//! Encoders (CNN over log-mel context, SSL over raw waveform) and the shared
//! classifier head, composed as window → 32 logits.

mod checkpoint;
mod classifier;
mod cnn;
mod head;
mod ssl;

use thiserror::Error;

pub use checkpoint::{load_checkpoint, load_checkpoint_with, read_params, save_checkpoint, write_params, CheckpointHeader};
pub use classifier::{predict_phone, EncoderConfig, Logits, ModelConfig, PhoneClassifier};
pub use cnn::{CnnEncoderConfig, ConvStage};
pub use head::ClassifierHeadConfig;
pub use ssl::{
    BackendFactory, BackendRegistry, ReferenceBackend, SslBackend, SslBackendHandle, SSL_FRAME_COUNT,
    SSL_KERNELS, SSL_STRIDES,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("SSL backend {backend_id}: {message}")]
    Backend { backend_id: String, message: String },
    #[error("prediction failed: {0}")]
    Prediction(String),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
}

/// Deterministic RNG seed derived from a string tag.
pub(crate) fn seed_from_tag(tag: &str) -> u64 {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(tag.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}
