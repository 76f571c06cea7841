use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{balanced_accuracy_indices, EvalError, PredictionSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResampleUnit {
    /// Frames drawn with replacement within each true phone.
    Frames,
    /// Whole speakers drawn with replacement.
    Speakers,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapConfig {
    pub n_resamples: usize,
    pub alpha: f64,
    pub seed: u64,
    pub unit: ResampleUnit,
    /// Redraws allowed per resample when the metric is undefined on it.
    pub max_redraws: usize,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            n_resamples: 1000,
            alpha: 0.05,
            seed: 0,
            unit: ResampleUnit::Frames,
            max_redraws: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCI {
    /// Metric on the full set, percent.
    pub point: f64,
    pub low: f64,
    pub high: f64,
    pub half_width: f64,
    pub n_resamples: usize,
    pub alpha: f64,
    pub seed: u64,
    pub unit: ResampleUnit,
}

impl BootstrapCI {
    pub fn overlaps(&self, other: &BootstrapCI) -> bool {
        self.low <= other.high && other.low <= self.high
    }
}

/// Linear-interpolation quantile of sorted values.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bootstrap interval of `metric` at level `1 − alpha`.
///
/// `metric` receives the full set and the record indices of one resample.
/// Resample `i` draws from its own ChaCha stream `(seed, i)`, so results do
/// not depend on evaluation order.
pub fn bootstrap_ci<F>(preds: &PredictionSet, mut metric: F, config: &BootstrapConfig) -> Result<BootstrapCI, EvalError>
where
    F: FnMut(&PredictionSet, &[usize]) -> Result<f64, EvalError>,
{
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    if config.n_resamples < 100 {
        return Err(EvalError::Bootstrap(format!("need at least 100 resamples, got {}", config.n_resamples)));
    }
    if !(config.alpha > 0.0 && config.alpha < 1.0) {
        return Err(EvalError::Bootstrap(format!("alpha must be in (0, 1), got {}", config.alpha)));
    }
    let all: Vec<usize> = (0..preds.len()).collect();
    let point = metric(preds, &all)?;

    let strata: Vec<Vec<usize>> = match config.unit {
        ResampleUnit::Frames => {
            let mut by_class = vec![Vec::new(); preds.num_classes()];
            for (i, r) in preds.records().iter().enumerate() {
                by_class[r.true_label].push(i);
            }
            by_class.retain(|v| !v.is_empty());
            by_class
        }
        ResampleUnit::Speakers => {
            let mut by_speaker: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (i, r) in preds.records().iter().enumerate() {
                by_speaker.entry(&r.speaker_id).or_default().push(i);
            }
            by_speaker.into_values().collect()
        }
    };

    let mut values = Vec::with_capacity(config.n_resamples);
    let mut indices = Vec::with_capacity(preds.len());
    for b in 0..config.n_resamples {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(b as u64);
        let mut attempt = 0;
        let value = loop {
            indices.clear();
            match config.unit {
                ResampleUnit::Frames => {
                    for stratum in &strata {
                        indices.extend((0..stratum.len()).map(|_| stratum[rng.gen_range(0..stratum.len())]));
                    }
                }
                ResampleUnit::Speakers => {
                    for _ in 0..strata.len() {
                        indices.extend_from_slice(&strata[rng.gen_range(0..strata.len())]);
                    }
                }
            }
            match metric(preds, &indices) {
                Ok(v) => break v,
                Err(e) if attempt >= config.max_redraws => {
                    return Err(EvalError::Bootstrap(format!(
                        "resample {b}: metric undefined after {attempt} redraws ({e})"
                    )))
                }
                Err(_) => attempt += 1,
            }
        };
        values.push(value);
    }
    values.sort_by(f64::total_cmp);
    let low = percentile(&values, config.alpha / 2.0).min(point);
    let high = percentile(&values, 1.0 - config.alpha / 2.0).max(point);
    Ok(BootstrapCI {
        point,
        low,
        high,
        half_width: (high - low) / 2.0,
        n_resamples: config.n_resamples,
        alpha: config.alpha,
        seed: config.seed,
        unit: config.unit,
    })
}

/// Bootstrap of phone-balanced accuracy over `phones`.
pub fn bootstrap_balanced_accuracy(
    preds: &PredictionSet,
    phones: &[usize],
    config: &BootstrapConfig,
) -> Result<BootstrapCI, EvalError> {
    let mut scratch = vec![0u64; 2 * preds.num_classes()];
    bootstrap_ci(
        preds,
        |set, idx| balanced_accuracy_indices(set, idx, phones, &mut scratch),
        config,
    )
}
