use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::ArrayD;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{select_best, CheckpointMeta, Dataset, EpochMetrics, InputSpace, TrainError, TrainingConfig};
use crate::evaluation::{balanced_accuracy, phone_error_rate, present_phones, PredictionRecord, PredictionSet};
use crate::inventory::NUM_CLASSES;
use crate::models::{predict_phone, save_checkpoint, CheckpointHeader, PhoneClassifier};
use crate::nn::softmax_cross_entropy;
use crate::optim::Optimizer;

const INFER_BATCH: usize = 256;

#[derive(Debug, Clone)]
pub struct ValidationResult {
    pub phone_error_rate: f64,
    /// Percent over present phones, silence excluded.
    pub balanced_accuracy: f64,
    pub predictions: PredictionSet,
}

/// Inference-mode predictions for every row.
pub fn predict_dataset(model: &PhoneClassifier, data: &Dataset) -> Result<PredictionSet, TrainError> {
    let mut records = Vec::with_capacity(data.len());
    let rows: Vec<usize> = (0..data.len()).collect();
    for chunk in rows.chunks(INFER_BATCH) {
        let (x, labels) = data.batch(chunk);
        let logits = match data.space {
            InputSpace::Window => model.logits(&x)?,
            InputSpace::Embedding => model.head_logits(&x)?,
        };
        for ((row, &label), &i) in logits.outer_iter().zip(&labels).zip(chunk) {
            records.push(PredictionRecord {
                true_label: label,
                predicted_label: predict_phone(row.as_slice().expect("contiguous"))?,
                speaker_id: data.speaker_ids[i].clone(),
                utterance_id: data.utterance_ids[i].clone(),
            });
        }
    }
    Ok(PredictionSet::new(records, NUM_CLASSES)?)
}

/// Micro phone error rate plus silence-free balanced accuracy.
pub fn validate(model: &PhoneClassifier, data: &Dataset) -> Result<ValidationResult, TrainError> {
    if data.is_empty() {
        return Err(TrainError::Contract("validation set is empty".into()));
    }
    let predictions = predict_dataset(model, data)?;
    let per = phone_error_rate(&predictions)?;
    let mut phones = present_phones(&predictions, Some(NUM_CLASSES - 1));
    if phones.is_empty() {
        phones = present_phones(&predictions, None);
    }
    let balanced = balanced_accuracy(&predictions, &phones)?.value;
    Ok(ValidationResult {
        phone_error_rate: per,
        balanced_accuracy: balanced,
        predictions,
    })
}

/// Where `train` writes checkpoints and its JSON-lines log.
#[derive(Debug, Clone)]
pub struct CheckpointSink {
    pub dir: PathBuf,
    pub inventory_hash: String,
}

impl CheckpointSink {
    pub fn epoch_path(&self, epoch: usize) -> PathBuf {
        self.dir.join(format!("epoch_{epoch}.ckpt"))
    }

    pub fn best_checkpoint_path(&self) -> PathBuf {
        self.dir.join("best.ckpt")
    }

    pub fn best_record_path(&self) -> PathBuf {
        self.dir.join("best.json")
    }

    pub fn log_path(&self) -> PathBuf {
        self.dir.join("train_log.jsonl")
    }
}

/// Steps a model through epochs; `train` drives it for a full run.
#[derive(Debug)]
pub struct Trainer {
    model: PhoneClassifier,
    config: TrainingConfig,
    head_opt: Optimizer,
    encoder_opt: Optimizer,
    epoch: usize,
    history: Vec<EpochMetrics>,
    best: Option<(usize, Vec<ArrayD<f64>>)>,
}

impl Trainer {
    pub fn new(model: PhoneClassifier, config: TrainingConfig) -> Result<Self, TrainError> {
        config.validate()?;
        Ok(Self {
            head_opt: Optimizer::new(config.head_optimizer.clone()),
            encoder_opt: Optimizer::new(config.encoder_optimizer.clone()),
            model,
            config,
            epoch: 0,
            history: Vec::new(),
            best: None,
        })
    }

    pub fn model(&self) -> &PhoneClassifier {
        &self.model
    }

    pub fn history(&self) -> &[EpochMetrics] {
        &self.history
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Epoch of the lowest validation error seen so far.
    pub fn best_epoch(&self) -> Option<usize> {
        self.best.as_ref().map(|(e, _)| *e)
    }

    /// Model with the best epoch's weights restored.
    pub fn into_best_model(mut self) -> Result<PhoneClassifier, TrainError> {
        if let Some((_, snapshot)) = &self.best {
            self.model.restore(snapshot)?;
        }
        Ok(self.model)
    }

    pub fn into_model(self) -> PhoneClassifier {
        self.model
    }

    /// One pass over `train` followed by validation.
    pub fn run_epoch(&mut self, train: &Dataset, validation: &Dataset) -> Result<EpochMetrics, TrainError> {
        if train.is_empty() || validation.is_empty() {
            return Err(TrainError::Contract("train and validation sets must be non-empty".into()));
        }
        self.epoch += 1;
        let epoch = self.epoch;
        let batch_size = self.config.batch_size_for(self.model.is_ssl());
        let through_encoder = train.space == InputSpace::Window && self.model.encoder_trainable();
        if train.space == InputSpace::Embedding && self.model.encoder_trainable() {
            return Err(TrainError::Contract("embedded datasets need a frozen encoder".into()));
        }

        let mut order: Vec<usize> = (0..train.len()).collect();
        if self.config.shuffle {
            let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
            rng.set_stream(epoch as u64);
            order.shuffle(&mut rng);
        }

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (b, rows) in order.chunks(batch_size).enumerate() {
            let (x, labels) = train.batch(rows);
            self.model.zero_grad();
            let logits = match train.space {
                InputSpace::Window => self.model.forward(&x, through_encoder)?,
                InputSpace::Embedding => self.model.forward_head(&x)?,
            };
            let (loss, grad) = softmax_cross_entropy(&logits, &labels);
            if !loss.is_finite() {
                self.model.clear_cache();
                return Err(TrainError::NonFiniteLoss { epoch, batch: b, loss });
            }
            for (row, &label) in logits.outer_iter().zip(&labels) {
                if predict_phone(row.as_slice().expect("contiguous")).ok() == Some(label) {
                    correct += 1;
                }
            }
            loss_sum += loss * rows.len() as f64;
            self.model.backward(&grad, through_encoder);
            self.step_optimizers(through_encoder);
        }

        let val = validate(&self.model, validation)?;
        let metrics = EpochMetrics {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64 * 100.0,
            validation_phone_error_rate: val.phone_error_rate,
            validation_balanced_accuracy: val.balanced_accuracy,
        };
        let improved = select_best(&self.history)
            .is_none_or(|b| metrics.validation_phone_error_rate < b.validation_phone_error_rate);
        if improved {
            self.best = Some((epoch, self.model.snapshot()));
        }
        self.history.push(metrics.clone());
        Ok(metrics)
    }

    fn step_optimizers(&mut self, through_encoder: bool) {
        if self.model.is_ssl() {
            self.head_opt.step(self.model.head_params_mut());
            if through_encoder {
                self.encoder_opt.step(self.model.encoder_params_mut());
            }
        } else {
            self.head_opt.step(self.model.params_mut());
        }
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Weights of the selected epoch.
    pub model: PhoneClassifier,
    pub checkpoint: CheckpointMeta,
    pub history: Vec<EpochMetrics>,
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), TrainError> {
    let mut f = BufWriter::new(File::create(path).map_err(|e| TrainError::io(path, e))?);
    serde_json::to_writer_pretty(&mut f, value).map_err(|e| TrainError::io(path, e))?;
    f.write_all(b"\n").map_err(|e| TrainError::io(path, e))
}

/// Full run: `config.epochs` epochs, best epoch by validation phone error
/// rate (earliest on ties). A frozen SSL encoder is applied once up front.
pub fn train(
    model: PhoneClassifier,
    train_set: &Dataset,
    validation_set: &Dataset,
    config: &TrainingConfig,
    sink: Option<&CheckpointSink>,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if train_set.is_empty() || validation_set.is_empty() {
        return Err(TrainError::Contract("train and validation sets must be non-empty".into()));
    }
    if !train_set.is_disjoint(validation_set) {
        return Err(TrainError::Contract("train and validation sets share frames".into()));
    }
    let (train_data, val_data);
    let (train_ref, val_ref) = if model.is_ssl() && !model.encoder_trainable() {
        let batch = config.batch_size_for(true);
        train_data = train_set.embedded(&model, batch)?;
        val_data = validation_set.embedded(&model, batch)?;
        (&train_data, &val_data)
    } else {
        (train_set, validation_set)
    };

    let mut log = match sink {
        Some(s) => {
            fs::create_dir_all(&s.dir).map_err(|e| TrainError::io(&s.dir, e))?;
            let path = s.log_path();
            Some(BufWriter::new(File::create(&path).map_err(|e| TrainError::io(&path, e))?))
        }
        None => None,
    };

    let mut trainer = Trainer::new(model, config.clone())?;
    for _ in 0..config.epochs {
        let metrics = trainer.run_epoch(train_ref, val_ref)?;
        if let (Some(s), Some(w)) = (sink, log.as_mut()) {
            let line = serde_json::to_string(&metrics).expect("metrics serialize");
            writeln!(w, "{line}").and_then(|_| w.flush()).map_err(|e| TrainError::io(&s.log_path(), e))?;
            let header = CheckpointHeader {
                model_config: trainer.model().config().clone(),
                inventory_hash: s.inventory_hash.clone(),
                epoch: Some(metrics.epoch),
                extra: serde_json::to_value(&metrics).expect("metrics serialize"),
            };
            if config.keep_all_epochs {
                save_checkpoint(&s.epoch_path(metrics.epoch), trainer.model(), &header)?;
            }
            if trainer.best_epoch() == Some(metrics.epoch) {
                save_checkpoint(&s.best_checkpoint_path(), trainer.model(), &header)?;
            }
        }
    }

    let history = trainer.history().to_vec();
    let best = select_best(&history).expect("at least one epoch").clone();
    let path = sink.map(|s| s.best_checkpoint_path());
    let checkpoint = CheckpointMeta {
        path: path.clone(),
        epoch: best.epoch,
        validation_phone_error_rate: best.validation_phone_error_rate,
        config: config.clone(),
    };
    if let Some(s) = sink {
        write_json(&s.best_record_path(), &checkpoint)?;
    }
    Ok(TrainOutcome {
        model: trainer.into_best_model()?,
        checkpoint,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{CnnEncoderConfig, ModelConfig, SslBackendHandle};
    use crate::optim::OptimizerConfig;
    use ndarray::Array2;
    use rand::Rng;

    /// Class `c` lights up a distinct block of the 11×120 window.
    fn separable(per_class: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = per_class * NUM_CLASSES;
        let mut x = Array2::zeros((n, 1320));
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % NUM_CLASSES;
            for j in 0..1320 {
                x[[i, j]] = rng.gen_range(-0.1..0.1);
            }
            for row in 3..8 {
                for col in 0..3 {
                    x[[i, row * 120 + c * 3 + col + 12]] += 1.0;
                }
            }
            labels.push(c);
        }
        Dataset::from_arrays(x, labels).unwrap()
    }

    fn tiny_model(seed: u64) -> PhoneClassifier {
        PhoneClassifier::new(ModelConfig::cnn(CnnEncoderConfig::with_channels(2, 2), seed)).unwrap()
    }

    fn shifted(mut d: Dataset) -> Dataset {
        for u in &mut d.utterance_ids {
            u.push('v');
        }
        d
    }

    #[test]
    fn two_epoch_toy_run() {
        let train_set = separable(2, 1);
        let val = shifted(separable(1, 2));
        let cfg = TrainingConfig {
            epochs: 2,
            batch_size: Some(16),
            ..Default::default()
        };
        let out = train(tiny_model(0), &train_set, &val, &cfg, None).unwrap();
        assert_eq!(out.history.len(), 2);
        assert_eq!(out.checkpoint.epoch, select_best(&out.history).unwrap().epoch);
        let restored = validate(&out.model, &val).unwrap();
        assert_eq!(restored.phone_error_rate, out.checkpoint.validation_phone_error_rate);
    }

    #[test]
    fn zero_learning_rate_freezes_everything() {
        let train_set = separable(2, 3);
        let val = shifted(separable(1, 4));
        let cfg = TrainingConfig {
            epochs: 3,
            batch_size: Some(64),
            head_optimizer: OptimizerConfig::adadelta(0.0),
            shuffle: false,
            ..Default::default()
        };
        let model = tiny_model(1);
        let before = model.snapshot();
        let out = train(model, &train_set, &val, &cfg, None).unwrap();
        assert_eq!(out.model.snapshot(), before);
        let losses: Vec<f64> = out.history.iter().map(|m| m.train_loss).collect();
        assert!(losses.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn identical_seeds_identical_metrics() {
        let train_set = separable(2, 5);
        let val = shifted(separable(1, 6));
        let cfg = TrainingConfig {
            epochs: 2,
            batch_size: Some(32),
            ..Default::default()
        };
        let a = train(tiny_model(2), &train_set, &val, &cfg, None).unwrap();
        let b = train(tiny_model(2), &train_set, &val, &cfg, None).unwrap();
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn nan_inputs_abort_with_position() {
        let mut train_set = separable(2, 7);
        train_set.inputs[[40, 600]] = f64::NAN;
        let val = shifted(separable(1, 8));
        let cfg = TrainingConfig {
            epochs: 1,
            batch_size: Some(16),
            shuffle: false,
            ..Default::default()
        };
        match train(tiny_model(3), &train_set, &val, &cfg, None) {
            Err(TrainError::NonFiniteLoss { epoch: 1, batch: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn contract_errors() {
        let d = separable(1, 9);
        let cfg = TrainingConfig::default();
        assert!(matches!(train(tiny_model(0), &d, &d, &cfg, None), Err(TrainError::Contract(_))));
        let empty = Dataset::from_arrays(Array2::zeros((0, 1320)), vec![]).unwrap();
        assert!(matches!(train(tiny_model(0), &empty, &d, &cfg, None), Err(TrainError::Contract(_))));
    }

    #[test]
    fn frozen_ssl_only_moves_the_head() {
        let handle = SslBackendHandle {
            backend_id: "reference:unit".into(),
            hidden_layers: 6,
            trainable: false,
            embedding_dim: 4,
            layer_index: None,
            weights: None,
        };
        let model = PhoneClassifier::new(ModelConfig::ssl(handle, 0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Array2::from_shape_fn((64, 2032), |_| rng.gen_range(-0.5..0.5));
        let labels = (0..64).map(|i| i % 32).collect();
        let train_set = Dataset::from_arrays(x.clone(), labels).unwrap();
        let val = shifted(train_set.clone());
        let enc_before = model.encoder_snapshot();
        let head_before: Vec<_> = model.head_params().iter().map(|p| p.value.clone()).collect();
        let cfg = TrainingConfig {
            epochs: 2,
            ..Default::default()
        };
        let out = train(model, &train_set, &val, &cfg, None).unwrap();
        assert_eq!(out.model.encoder_snapshot(), enc_before);
        let head_after: Vec<_> = out.model.head_params().iter().map(|p| p.value.clone()).collect();
        assert_ne!(head_after, head_before);
    }

    #[test]
    fn sink_writes_log_and_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let sink = CheckpointSink {
            dir: dir.path().join("run"),
            inventory_hash: "h".into(),
        };
        let cfg = TrainingConfig {
            epochs: 2,
            batch_size: Some(32),
            ..Default::default()
        };
        let out = train(tiny_model(4), &separable(1, 10), &shifted(separable(1, 11)), &cfg, Some(&sink)).unwrap();
        let log = fs::read_to_string(sink.log_path()).unwrap();
        assert_eq!(log.lines().count(), 2);
        assert!(sink.epoch_path(1).exists() && sink.epoch_path(2).exists());
        let record: CheckpointMeta = serde_json::from_str(&fs::read_to_string(sink.best_record_path()).unwrap()).unwrap();
        assert_eq!(record.epoch, out.checkpoint.epoch);
        let (loaded, header) = crate::models::load_checkpoint(&sink.best_checkpoint_path()).unwrap();
        assert_eq!(header.epoch, Some(out.checkpoint.epoch));
        assert_eq!(loaded.snapshot(), out.model.snapshot());
    }
}
