use ndarray::{concatenate, Array2, Axis};

/// Half-width of the regression window.
pub const DELTA_WINDOW: usize = 2;

/// Regression deltas over `±DELTA_WINDOW` frames with edge replication:
/// `d[t] = Σ n·(c[t+n] − c[t−n]) / (2·Σ n²)`.
pub fn deltas(feats: &Array2<f64>) -> Array2<f64> {
    let n = feats.nrows();
    let mut out = Array2::zeros(feats.raw_dim());
    if n == 0 {
        return out;
    }
    let denom: f64 = 2.0 * (1..=DELTA_WINDOW).map(|k| (k * k) as f64).sum::<f64>();
    let clamp = |t: isize| t.clamp(0, n as isize - 1) as usize;
    for t in 0..n {
        let mut row = out.row_mut(t);
        for k in 1..=DELTA_WINDOW {
            let ahead = feats.row(clamp(t as isize + k as isize));
            let behind = feats.row(clamp(t as isize - k as isize));
            row.scaled_add(k as f64, &(&ahead - &behind));
        }
        row /= denom;
    }
    out
}

/// Statics, first and second derivatives side by side: `n × 3d`.
pub fn append_deltas(feats: &Array2<f64>) -> Array2<f64> {
    let d1 = deltas(feats);
    let d2 = deltas(&d1);
    concatenate(Axis(1), &[feats.view(), d1.view(), d2.view()]).expect("equal row counts")
}
