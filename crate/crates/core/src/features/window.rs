use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use super::{FeatureError, MelConfig};

/// Target span of the SSL input slice: six 25 ms receptive fields at a
/// ~20 ms stride, padded, come to roughly 127 ms.
pub const SSL_WINDOW_S: f64 = 0.127;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureWindow {
    /// `context_frames × 3·n_mels`, zero rows where the context runs off the utterance.
    pub values: Array2<f64>,
    pub center_frame_index: usize,
}

impl FeatureWindow {
    pub fn flatten(&self) -> Vec<f64> {
        self.values.iter().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveformWindow {
    pub samples: Vec<f32>,
    pub center_s: f64,
}

/// Samples covered by a context window: `(context − 1)·hop + frame_len`.
pub fn context_span_samples(config: &MelConfig) -> usize {
    (config.context_frames - 1) * config.hop_samples() + config.frame_len_samples()
}

/// Index of the filterbank frame whose centre is nearest `center_s`.
///
/// Frame `k` spans `[k·hop, k·hop + frame_len)`; the result is clamped to
/// `n_frames − 1`.
pub fn frame_index_for_time(center_s: f64, config: &MelConfig, n_frames: usize) -> usize {
    let half = config.frame_length_s / 2.0;
    let k = ((center_s - half) / config.frame_hop_s).round();
    (k.max(0.0) as usize).min(n_frames.saturating_sub(1))
}

/// `context_frames` rows centred on `center_frame`, zero-padded at the edges.
///
/// Panics if `center_frame` is outside `feats`.
pub fn context_window(feats: &Array2<f64>, center_frame: usize, context_frames: usize) -> FeatureWindow {
    let n = feats.nrows();
    assert!(center_frame < n, "center frame {center_frame} outside {n} frames");
    let half = context_frames / 2;
    let mut values = Array2::zeros((context_frames, feats.ncols()));
    let first = center_frame as isize - half as isize;
    let lo = first.max(0) as usize;
    let hi = (center_frame + half + 1).min(n);
    let dst = (lo as isize - first) as usize;
    values
        .slice_mut(s![dst..dst + (hi - lo), ..])
        .assign(&feats.slice(s![lo..hi, ..]));
    FeatureWindow {
        values,
        center_frame_index: center_frame,
    }
}

pub fn waveform_window_len(sample_rate_hz: u32) -> usize {
    (SSL_WINDOW_S * sample_rate_hz as f64).round() as usize
}

/// Fixed-length slice centred on `center_s`, zero-padded symmetrically
/// where it runs off the signal.
pub fn waveform_window(
    samples: &[f32],
    center_s: f64,
    sample_rate_hz: u32,
) -> Result<WaveformWindow, FeatureError> {
    let rate = sample_rate_hz as f64;
    let center = (center_s * rate).round();
    if center_s.is_nan() || center_s < 0.0 || center as usize >= samples.len() {
        return Err(FeatureError::WindowOutOfRange {
            center_s,
            duration_s: samples.len() as f64 / rate,
        });
    }
    let len = waveform_window_len(sample_rate_hz);
    let start = center as isize - (len / 2) as isize;
    let mut out = vec![0.0f32; len];
    for (i, slot) in out.iter_mut().enumerate() {
        let src = start + i as isize;
        if src >= 0 && (src as usize) < samples.len() {
            *slot = samples[src as usize];
        }
    }
    Ok(WaveformWindow {
        samples: out,
        center_s,
    })
}
