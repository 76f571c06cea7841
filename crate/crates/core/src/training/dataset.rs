use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::PathBuf;

use ndarray::{s, Array2};

use super::TrainError;
use crate::corpus::FrameRecord;
use crate::features::{
    context_window, frame_index_for_time, load_waveform, utterance_features, waveform_window, waveform_window_len,
    CacheKind, FeatureCache, FeatureCacheHeader, MelConfig, MelFilterbank,
};
use crate::models::PhoneClassifier;

/// What a model consumes per frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputKind {
    /// Flattened log-mel context window.
    Context,
    /// Raw waveform slice.
    Waveform,
}

impl InputKind {
    pub fn for_model(model: &PhoneClassifier) -> Self {
        if model.is_ssl() {
            InputKind::Waveform
        } else {
            InputKind::Context
        }
    }

    pub fn cache_kind(self) -> CacheKind {
        match self {
            InputKind::Context => CacheKind::Context,
            InputKind::Waveform => CacheKind::Waveform,
        }
    }
}

/// Whether rows are model inputs or precomputed encoder outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputSpace {
    Window,
    Embedding,
}

/// Labeled frames held as one row per frame.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub inputs: Array2<f64>,
    pub labels: Vec<usize>,
    pub speaker_ids: Vec<String>,
    pub utterance_ids: Vec<String>,
    pub centers_s: Vec<f64>,
    pub space: InputSpace,
}

impl Dataset {
    /// In-memory dataset without frame provenance.
    pub fn from_arrays(inputs: Array2<f64>, labels: Vec<usize>) -> Result<Self, TrainError> {
        let n = inputs.nrows();
        if labels.len() != n {
            return Err(TrainError::Contract(format!("{} labels for {n} rows", labels.len())));
        }
        Ok(Self {
            inputs,
            labels,
            speaker_ids: vec![String::new(); n],
            utterance_ids: (0..n).map(|i| format!("row{i}")).collect(),
            centers_s: vec![0.0; n],
            space: InputSpace::Window,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.inputs.ncols()
    }

    /// Reads audio once per utterance and cuts one window per frame.
    ///
    /// `audio` maps utterance ids to WAV paths.
    pub fn from_frames(
        frames: &[FrameRecord],
        audio: &HashMap<String, PathBuf>,
        kind: InputKind,
        mel: &MelConfig,
    ) -> Result<Self, TrainError> {
        mel.validate()?;
        let width = match kind {
            InputKind::Context => mel.window_len(),
            InputKind::Waveform => waveform_window_len(mel.sample_rate_hz),
        };
        let filterbank = MelFilterbank::new(mel)?;
        let mut by_utt: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, f) in frames.iter().enumerate() {
            by_utt.entry(&f.utterance_id).or_default().push(i);
        }
        let mut inputs = Array2::zeros((frames.len(), width));
        for (utt, rows) in by_utt {
            let path = audio
                .get(utt)
                .ok_or_else(|| TrainError::Contract(format!("no audio for utterance {utt}")))?;
            let samples = load_waveform(path, mel.sample_rate_hz)?;
            match kind {
                InputKind::Context => {
                    let feats = utterance_features(&samples, &filterbank)?;
                    for i in rows {
                        let k = frame_index_for_time(frames[i].center_s, mel, feats.nrows());
                        let w = context_window(&feats, k, mel.context_frames);
                        inputs
                            .row_mut(i)
                            .iter_mut()
                            .zip(w.values.iter())
                            .for_each(|(d, &v)| *d = v);
                    }
                }
                InputKind::Waveform => {
                    for i in rows {
                        let w = waveform_window(&samples, frames[i].center_s, mel.sample_rate_hz)?;
                        inputs
                            .row_mut(i)
                            .iter_mut()
                            .zip(&w.samples)
                            .for_each(|(d, &v)| *d = v as f64);
                    }
                }
            }
        }
        Ok(Self {
            inputs,
            labels: frames.iter().map(|f| f.label).collect(),
            speaker_ids: frames.iter().map(|f| f.speaker_id.clone()).collect(),
            utterance_ids: frames.iter().map(|f| f.utterance_id.clone()).collect(),
            centers_s: frames.iter().map(|f| f.center_s).collect(),
            space: InputSpace::Window,
        })
    }

    pub fn to_cache(&self, kind: InputKind, mel: &MelConfig) -> FeatureCache {
        let mut cache = FeatureCache::new(FeatureCacheHeader {
            kind: kind.cache_kind(),
            mel_config: mel.clone(),
            record_len: self.width(),
        });
        for (i, row) in self.inputs.outer_iter().enumerate() {
            cache.insert(
                &self.utterance_ids[i],
                self.centers_s[i],
                row.iter().map(|&v| v as f32).collect(),
            );
        }
        cache
    }

    /// Rebuilds the rows of `frames` from a cache; missing entries are an error.
    pub fn from_cache(frames: &[FrameRecord], cache: &FeatureCache) -> Result<Self, TrainError> {
        let width = cache.header().record_len;
        let mut inputs = Array2::zeros((frames.len(), width));
        for (i, f) in frames.iter().enumerate() {
            let values = cache.get(&f.utterance_id, f.center_s).ok_or_else(|| {
                TrainError::Contract(format!("feature cache lacks {} @ {}s", f.utterance_id, f.center_s))
            })?;
            inputs
                .row_mut(i)
                .iter_mut()
                .zip(values)
                .for_each(|(d, &v)| *d = v as f64);
        }
        Ok(Self {
            inputs,
            labels: frames.iter().map(|f| f.label).collect(),
            speaker_ids: frames.iter().map(|f| f.speaker_id.clone()).collect(),
            utterance_ids: frames.iter().map(|f| f.utterance_id.clone()).collect(),
            centers_s: frames.iter().map(|f| f.center_s).collect(),
            space: InputSpace::Window,
        })
    }

    /// Same frames with rows replaced by the model's encoder outputs.
    pub fn embedded(&self, model: &PhoneClassifier, batch: usize) -> Result<Self, TrainError> {
        if self.space != InputSpace::Window {
            return Err(TrainError::Contract("dataset is already embedded".into()));
        }
        let mut out = Array2::zeros((self.len(), model.embedding_dim()));
        for start in (0..self.len()).step_by(batch.max(1)) {
            let end = (start + batch).min(self.len());
            let emb = model.embed(&self.inputs.slice(s![start..end, ..]).to_owned())?;
            out.slice_mut(s![start..end, ..]).assign(&emb);
        }
        Ok(Self {
            inputs: out,
            space: InputSpace::Embedding,
            ..self.clone_meta()
        })
    }

    fn clone_meta(&self) -> Self {
        Self {
            inputs: Array2::zeros((0, 0)),
            labels: self.labels.clone(),
            speaker_ids: self.speaker_ids.clone(),
            utterance_ids: self.utterance_ids.clone(),
            centers_s: self.centers_s.clone(),
            space: self.space,
        }
    }

    pub fn batch(&self, rows: &[usize]) -> (Array2<f64>, Vec<usize>) {
        let mut x = Array2::zeros((rows.len(), self.width()));
        for (dst, &src) in rows.iter().enumerate() {
            x.row_mut(dst).assign(&self.inputs.row(src));
        }
        (x, rows.iter().map(|&r| self.labels[r]).collect())
    }

    /// True when no (utterance, center) pair appears in both sets.
    pub fn is_disjoint(&self, other: &Dataset) -> bool {
        let keys: HashSet<(&str, u64)> = self
            .utterance_ids
            .iter()
            .zip(&self.centers_s)
            .map(|(u, c)| (u.as_str(), c.to_bits()))
            .collect();
        !other
            .utterance_ids
            .iter()
            .zip(&other.centers_s)
            .any(|(u, c)| keys.contains(&(u.as_str(), c.to_bits())))
    }
}
