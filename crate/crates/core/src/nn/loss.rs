use ndarray::{Array1, Array2, ArrayView1};

pub fn log_softmax(logits: ArrayView1<'_, f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    logits.mapv(|v| v - lse)
}

pub fn softmax(logits: ArrayView1<'_, f64>) -> Array1<f64> {
    log_softmax(logits).mapv(f64::exp)
}

/// Mean cross-entropy over the batch and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> (f64, Array2<f64>) {
    assert_eq!(logits.nrows(), labels.len());
    let n = labels.len() as f64;
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    for ((row, mut g), &label) in logits.outer_iter().zip(grad.outer_iter_mut()).zip(labels) {
        let logp = log_softmax(row);
        loss -= logp[label];
        g.assign(&logp.mapv(|v| v.exp() / n));
        g[label] -= 1.0 / n;
    }
    (loss / n, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn uniform_logits_give_log_k() {
        let (loss, _) = softmax_cross_entropy(&Array2::zeros((2, 32)), &[0, 5]);
        assert!((loss - (32f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let logits = array![[0.3, -1.2, 2.0], [1.0, 0.0, -0.5]];
        let labels = [2, 0];
        let (_, grad) = softmax_cross_entropy(&logits, &labels);
        let eps = 1e-6;
        for i in 0..2 {
            for j in 0..3 {
                let mut up = logits.clone();
                up[[i, j]] += eps;
                let mut down = logits.clone();
                down[[i, j]] -= eps;
                let num = (softmax_cross_entropy(&up, &labels).0 - softmax_cross_entropy(&down, &labels).0) / (2.0 * eps);
                assert!((num - grad[[i, j]]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn large_logits_stay_finite() {
        let (loss, grad) = softmax_cross_entropy(&array![[1000.0, -1000.0]], &[1]);
        assert!(loss.is_finite() && grad.iter().all(|v| v.is_finite()));
    }
}
