use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{EvalError, PredictionSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalancedAccuracyResult {
    /// Percent.
    pub value: f64,
    /// Class index → percent, for every included phone.
    pub per_phone: BTreeMap<usize, f64>,
    pub phones_included: Vec<usize>,
}

fn class_counts(preds: &PredictionSet) -> (Vec<u64>, Vec<u64>) {
    let mut total = vec![0u64; preds.num_classes()];
    let mut correct = vec![0u64; preds.num_classes()];
    for r in preds.records() {
        total[r.true_label] += 1;
        correct[r.true_label] += u64::from(r.true_label == r.predicted_label);
    }
    (correct, total)
}

/// Percent correct for each phone with at least one true occurrence.
pub fn per_phone_accuracy(preds: &PredictionSet) -> BTreeMap<usize, f64> {
    let (correct, total) = class_counts(preds);
    (0..preds.num_classes())
        .filter(|&c| total[c] > 0)
        .map(|c| (c, correct[c] as f64 / total[c] as f64 * 100.0))
        .collect()
}

/// Phones with at least one true occurrence, minus `exclude`.
pub fn present_phones(preds: &PredictionSet, exclude: Option<usize>) -> Vec<usize> {
    let (_, total) = class_counts(preds);
    (0..preds.num_classes())
        .filter(|&c| total[c] > 0 && Some(c) != exclude)
        .collect()
}

/// Unweighted mean of per-phone accuracies over `phones_included`.
pub fn balanced_accuracy(preds: &PredictionSet, phones_included: &[usize]) -> Result<BalancedAccuracyResult, EvalError> {
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    if phones_included.is_empty() {
        return Err(EvalError::Contract("no phones included".into()));
    }
    let all = per_phone_accuracy(preds);
    let mut per_phone = BTreeMap::new();
    for &c in phones_included {
        let acc = all.get(&c).ok_or_else(|| EvalError::AbsentPhone(c.to_string()))?;
        per_phone.insert(c, *acc);
    }
    let value = per_phone.values().sum::<f64>() / per_phone.len() as f64;
    Ok(BalancedAccuracyResult {
        value,
        per_phone,
        phones_included: phones_included.to_vec(),
    })
}

/// Balanced accuracy over a multiset of record indices; used by the bootstrap.
///
/// `scratch` must hold `2 · num_classes` slots.
pub fn balanced_accuracy_indices(
    preds: &PredictionSet,
    indices: &[usize],
    phones_included: &[usize],
    scratch: &mut [u64],
) -> Result<f64, EvalError> {
    let k = preds.num_classes();
    let (correct, total) = scratch[..2 * k].split_at_mut(k);
    correct.fill(0);
    total.fill(0);
    let records = preds.records();
    for &i in indices {
        let r = &records[i];
        total[r.true_label] += 1;
        correct[r.true_label] += u64::from(r.true_label == r.predicted_label);
    }
    let mut sum = 0.0;
    for &c in phones_included {
        if total[c] == 0 {
            return Err(EvalError::AbsentPhone(c.to_string()));
        }
        sum += correct[c] as f64 / total[c] as f64 * 100.0;
    }
    Ok(sum / phones_included.len() as f64)
}

/// Percent of frames classified correctly.
pub fn micro_accuracy(preds: &PredictionSet) -> Result<f64, EvalError> {
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    let correct = preds.records().iter().filter(|r| r.true_label == r.predicted_label).count();
    Ok(correct as f64 / preds.len() as f64 * 100.0)
}

/// Frame-level micro error rate in `[0, 1]`.
pub fn phone_error_rate(preds: &PredictionSet) -> Result<f64, EvalError> {
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    let correct = preds.records().iter().filter(|r| r.true_label == r.predicted_label).count();
    Ok(1.0 - correct as f64 / preds.len() as f64)
}
