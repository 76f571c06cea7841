use ndarray::Array2;

/// Non-overlapping max pooling (stride = window, floor mode).
#[derive(Debug, Clone)]
pub struct MaxPool2d {
    pub in_shape: [usize; 3],
    pub pool: [usize; 2],
    pub(super) argmax: Option<Vec<usize>>,
}

impl MaxPool2d {
    pub fn new(in_shape: [usize; 3], pool: [usize; 2]) -> Self {
        let p = Self {
            in_shape,
            pool,
            argmax: None,
        };
        assert!(p.out_shape()[1] > 0 && p.out_shape()[2] > 0, "pool larger than input");
        p
    }

    pub fn out_shape(&self) -> [usize; 3] {
        let [c, h, w] = self.in_shape;
        [c, h / self.pool[0], w / self.pool[1]]
    }

    pub fn out_dim(&self) -> usize {
        self.out_shape().iter().product()
    }

    fn run(&self, x: &Array2<f64>, mut record: Option<&mut Vec<usize>>) -> Array2<f64> {
        let [c, h, w] = self.in_shape;
        let [_, oh, ow] = self.out_shape();
        let [ph, pw] = self.pool;
        let mut y = Array2::zeros((x.nrows(), c * oh * ow));
        for (src, mut dst) in x.outer_iter().zip(y.outer_iter_mut()) {
            for ci in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best_idx = (ci * h + oy * ph) * w + ox * pw;
                        let mut best = src[best_idx];
                        for dy in 0..ph {
                            for dx in 0..pw {
                                let idx = (ci * h + oy * ph + dy) * w + ox * pw + dx;
                                if src[idx] > best || (src[idx].is_nan() && !best.is_nan()) {
                                    best = src[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        dst[(ci * oh + oy) * ow + ox] = best;
                        if let Some(rec) = record.as_deref_mut() {
                            rec.push(best_idx);
                        }
                    }
                }
            }
        }
        y
    }

    pub(super) fn infer(&self, x: &Array2<f64>) -> Array2<f64> {
        self.run(x, None)
    }

    pub(super) fn forward(&mut self, x: &Array2<f64>) -> Array2<f64> {
        let mut argmax = Vec::with_capacity(x.nrows() * self.out_dim());
        let y = self.run(x, Some(&mut argmax));
        self.argmax = Some(argmax);
        y
    }

    pub(super) fn backward(&mut self, grad: &Array2<f64>) -> Array2<f64> {
        let argmax = self.argmax.take().expect("pool backward without forward");
        let in_dim: usize = self.in_shape.iter().product();
        let out_dim = self.out_dim();
        let mut dx = Array2::zeros((grad.nrows(), in_dim));
        for (b, (g, mut d)) in grad.outer_iter().zip(dx.outer_iter_mut()).enumerate() {
            for (j, &v) in g.iter().enumerate() {
                d[argmax[b * out_dim + j]] += v;
            }
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::super::{gradcheck, Layer};
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn floor_mode_shapes() {
        assert_eq!(MaxPool2d::new([64, 11, 120], [2, 2]).out_shape(), [64, 5, 60]);
        assert_eq!(MaxPool2d::new([128, 5, 60], [2, 2]).out_shape(), [128, 2, 30]);
    }

    #[test]
    fn picks_window_maximum() {
        let p = MaxPool2d::new([1, 2, 4], [2, 2]);
        let x = Array2::from_shape_vec((1, 8), vec![1.0, 5.0, 0.0, 0.0, 2.0, 3.0, 9.0, -1.0]).unwrap();
        assert_eq!(p.infer(&x).as_slice().unwrap(), &[5.0, 9.0]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut layer = Layer::MaxPool2d(MaxPool2d::new([2, 5, 6], [2, 2]));
        let x = Array2::from_shape_fn((3, 60), |_| rng.gen_range(-1.0..1.0));
        assert!(gradcheck::check_layer(&mut layer, &x, 1e-7) < 1e-6);
    }
}
