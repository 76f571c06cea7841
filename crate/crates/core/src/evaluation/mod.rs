//! Phone-balanced accuracy, bootstrap intervals and confusion matrices.

mod bootstrap;
mod confusion;
mod metrics;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bootstrap::{bootstrap_balanced_accuracy, bootstrap_ci, percentile, BootstrapCI, BootstrapConfig, ResampleUnit};
pub use confusion::{
    compare_matrices, confusion_matrix, default_groups, parse_groups, submatrix, CellChange, ColumnSelection,
    ConfusionMatrix, MatrixComparison, PhoneClassGroup, DEFAULT_GROUPS,
};
pub use metrics::{
    balanced_accuracy, balanced_accuracy_indices, micro_accuracy, per_phone_accuracy, phone_error_rate,
    present_phones, BalancedAccuracyResult,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction set is empty")]
    Empty,
    #[error("label {label} outside 0..{num_classes}")]
    Label { label: usize, num_classes: usize },
    #[error("phone {0} has no true occurrences")]
    AbsentPhone(String),
    #[error("bootstrap: {0}")]
    Bootstrap(String),
    #[error("phone group: {0}")]
    Group(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl EvalError {
    pub(crate) fn io(path: &Path, e: impl ToString) -> Self {
        EvalError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub true_label: usize,
    pub predicted_label: usize,
    pub speaker_id: String,
    pub utterance_id: String,
}

/// Frame-level predictions with labels validated against `num_classes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    records: Vec<PredictionRecord>,
    num_classes: usize,
}

impl PredictionSet {
    pub fn new(records: Vec<PredictionRecord>, num_classes: usize) -> Result<Self, EvalError> {
        for r in &records {
            for label in [r.true_label, r.predicted_label] {
                if label >= num_classes {
                    return Err(EvalError::Label { label, num_classes });
                }
            }
        }
        Ok(Self { records, num_classes })
    }

    /// Anonymous records from `(true, predicted)` pairs.
    pub fn from_pairs(pairs: &[(usize, usize)], num_classes: usize) -> Result<Self, EvalError> {
        let records = pairs
            .iter()
            .map(|&(t, p)| PredictionRecord {
                true_label: t,
                predicted_label: p,
                speaker_id: String::new(),
                utterance_id: String::new(),
            })
            .collect();
        Self::new(records, num_classes)
    }

    pub fn records(&self) -> &[PredictionRecord] {
        &self.records
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn filter(&self, keep: impl Fn(&PredictionRecord) -> bool) -> Self {
        Self {
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
            num_classes: self.num_classes,
        }
    }

    /// Speaker ids in sorted order.
    pub fn speakers(&self) -> Vec<String> {
        let mut s: Vec<String> = self.records.iter().map(|r| r.speaker_id.clone()).collect();
        s.sort();
        s.dedup();
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_path(path).map_err(|e| EvalError::io(path, e))?;
        for r in &self.records {
            w.serialize(r).map_err(|e| EvalError::io(path, e))?;
        }
        w.flush().map_err(|e| EvalError::io(path, e))
    }

    pub fn read_csv(path: &Path, num_classes: usize) -> Result<Self, EvalError> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| EvalError::io(path, e))?;
        let records = rdr
            .deserialize()
            .collect::<Result<Vec<PredictionRecord>, _>>()
            .map_err(|e| EvalError::io(path, e))?;
        Self::new(records, num_classes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn out_of_range_labels_rejected() {
        assert!(matches!(
            PredictionSet::from_pairs(&[(0, 32)], 32),
            Err(EvalError::Label { label: 32, .. })
        ));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("preds.csv");
        let set = PredictionSet::new(
            vec![PredictionRecord {
                true_label: 3,
                predicted_label: 4,
                speaker_id: "s1".into(),
                utterance_id: "u,1".into(),
            }],
            32,
        )
        .unwrap();
        set.write_csv(&p).unwrap();
        assert_eq!(PredictionSet::read_csv(&p, 32).unwrap(), set);
    }
}
