//! Model inputs: 11-frame log-mel context windows with deltas for the CNN
//! path, fixed-length raw waveform slices for the SSL path.

mod audio;
mod cache;
mod deltas;
mod mel;
mod window;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use audio::{load_waveform, resample};
pub use cache::{CacheKind, FeatureCache, FeatureCacheHeader};
pub use deltas::{append_deltas, deltas, DELTA_WINDOW};
pub use mel::{hz_to_mel, mel_frames, mel_to_hz, normalize_utterance, utterance_features, MelFilterbank};
pub use window::{
    context_span_samples, context_window, frame_index_for_time, waveform_window,
    waveform_window_len, FeatureWindow, WaveformWindow, SSL_WINDOW_S,
};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("{path}: {message}")]
    Audio { path: String, message: String },
    #[error("signal of {len} samples is shorter than one {frame_len}-sample frame")]
    TooShort { len: usize, frame_len: usize },
    #[error("window center {center_s}s lies beyond the signal end ({duration_s}s)")]
    WindowOutOfRange { center_s: f64, duration_s: f64 },
    #[error("invalid feature config: {0}")]
    Config(String),
    #[error("resampling failed: {0}")]
    Resample(String),
    #[error("feature cache {path}: {message}")]
    Cache { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MelConfig {
    pub sample_rate_hz: u32,
    pub frame_length_s: f64,
    pub frame_hop_s: f64,
    pub n_mels: usize,
    pub context_frames: usize,
    pub f_min_hz: f64,
    pub f_max_hz: f64,
    /// Per-utterance mean/variance normalization of the static log-mels.
    pub normalize: bool,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: 16_000,
            frame_length_s: 0.020,
            frame_hop_s: 0.010,
            n_mels: 40,
            context_frames: 11,
            f_min_hz: 0.0,
            f_max_hz: 8_000.0,
            normalize: false,
        }
    }
}

impl MelConfig {
    pub fn validate(&self) -> Result<(), FeatureError> {
        let bad = |m: &str| Err(FeatureError::Config(m.to_string()));
        if self.sample_rate_hz == 0 {
            return bad("sample rate must be positive");
        }
        if self.n_mels == 0 {
            return bad("n_mels must be positive");
        }
        if self.context_frames.is_multiple_of(2) {
            return bad("context_frames must be odd");
        }
        if !(self.frame_length_s > self.frame_hop_s && self.frame_hop_s > 0.0) {
            return bad("need frame_length_s > frame_hop_s > 0");
        }
        if !(self.f_max_hz > self.f_min_hz && self.f_min_hz >= 0.0) {
            return bad("need f_max_hz > f_min_hz >= 0");
        }
        Ok(())
    }

    pub fn frame_len_samples(&self) -> usize {
        (self.frame_length_s * self.sample_rate_hz as f64).round() as usize
    }

    pub fn hop_samples(&self) -> usize {
        (self.frame_hop_s * self.sample_rate_hz as f64).round() as usize
    }

    /// Width of a feature row once deltas are appended.
    pub fn feature_width(&self) -> usize {
        3 * self.n_mels
    }

    /// Flattened length of one context window.
    pub fn window_len(&self) -> usize {
        self.context_frames * self.feature_width()
    }
}
