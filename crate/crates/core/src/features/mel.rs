use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array2, Axis};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{append_deltas, FeatureError, MelConfig};

const LOG_FLOOR: f64 = 1e-10;

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Hamming-windowed power spectrum folded through triangular mel filters.
pub struct MelFilterbank {
    config: MelConfig,
    n_fft: usize,
    window: Vec<f64>,
    /// `n_mels` rows of `(first_bin, weights)`.
    filters: Vec<(usize, Vec<f64>)>,
    fft: Arc<dyn Fft<f64>>,
}

impl MelFilterbank {
    pub fn new(config: &MelConfig) -> Result<Self, FeatureError> {
        config.validate()?;
        let frame_len = config.frame_len_samples();
        let n_fft = frame_len.next_power_of_two();
        let sr = config.sample_rate_hz as f64;
        let f_max = config.f_max_hz.min(sr / 2.0);

        let window = (0..frame_len)
            .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (frame_len - 1) as f64).cos())
            .collect();

        let (mel_lo, mel_hi) = (hz_to_mel(config.f_min_hz), hz_to_mel(f_max));
        let edges: Vec<f64> = (0..config.n_mels + 2)
            .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (config.n_mels + 1) as f64))
            .collect();
        let bin_hz = sr / n_fft as f64;
        let n_bins = n_fft / 2 + 1;
        let filters = (0..config.n_mels)
            .map(|m| {
                let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
                let weights: Vec<(usize, f64)> = (0..n_bins)
                    .filter_map(|k| {
                        let f = k as f64 * bin_hz;
                        let w = if f > lo && f <= mid {
                            (f - lo) / (mid - lo)
                        } else if f > mid && f < hi {
                            (hi - f) / (hi - mid)
                        } else {
                            0.0
                        };
                        (w > 0.0).then_some((k, w))
                    })
                    .collect();
                let first = weights.first().map_or(0, |&(k, _)| k);
                (first, weights.into_iter().map(|(_, w)| w).collect())
            })
            .collect();

        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        Ok(Self {
            config: config.clone(),
            n_fft,
            window,
            filters,
            fft,
        })
    }

    pub fn config(&self) -> &MelConfig {
        &self.config
    }

    pub fn n_frames(&self, len: usize) -> usize {
        let frame_len = self.config.frame_len_samples();
        if len < frame_len {
            0
        } else {
            1 + (len - frame_len) / self.config.hop_samples()
        }
    }

    /// Log-mel energies, one row per frame.
    pub fn compute(&self, samples: &[f32]) -> Result<Array2<f64>, FeatureError> {
        let frame_len = self.config.frame_len_samples();
        let hop = self.config.hop_samples();
        let n_frames = self.n_frames(samples.len());
        if n_frames == 0 {
            return Err(FeatureError::TooShort {
                len: samples.len(),
                frame_len,
            });
        }
        let mut out = Array2::zeros((n_frames, self.config.n_mels));
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        let mut power = vec![0.0; self.n_fft / 2 + 1];
        for (t, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            let frame = &samples[t * hop..t * hop + frame_len];
            for (slot, (&s, &w)) in buf.iter_mut().zip(frame.iter().zip(&self.window)) {
                *slot = Complex::new(s as f64 * w, 0.0);
            }
            for slot in buf.iter_mut().skip(frame_len) {
                *slot = Complex::new(0.0, 0.0);
            }
            self.fft.process(&mut buf);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            for (value, (first, weights)) in row.iter_mut().zip(&self.filters) {
                let energy: f64 = weights
                    .iter()
                    .zip(&power[*first..])
                    .map(|(w, p)| w * p)
                    .sum();
                *value = energy.max(LOG_FLOOR).ln();
            }
        }
        Ok(out)
    }
}

/// Log-mel frames with the configured 20 ms window and 10 ms hop.
pub fn mel_frames(samples: &[f32], config: &MelConfig) -> Result<Array2<f64>, FeatureError> {
    MelFilterbank::new(config)?.compute(samples)
}

/// Zero-mean, unit-variance columns over one utterance.
pub fn normalize_utterance(feats: &mut Array2<f64>) {
    let n = feats.nrows() as f64;
    if n == 0.0 {
        return;
    }
    for mut col in feats.axis_iter_mut(Axis(1)) {
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let scale = if var > 1e-12 { var.sqrt().recip() } else { 1.0 };
        col.mapv_inplace(|v| (v - mean) * scale);
    }
}

/// Full CNN-path feature matrix for an utterance: statics, deltas, delta-deltas.
pub fn utterance_features(
    samples: &[f32],
    filterbank: &MelFilterbank,
) -> Result<Array2<f64>, FeatureError> {
    let mut statics = filterbank.compute(samples)?;
    if filterbank.config().normalize {
        normalize_utterance(&mut statics);
    }
    Ok(append_deltas(&statics))
}
