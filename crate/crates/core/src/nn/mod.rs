//! Minimal batched layers with hand-written backward passes.
//!
//! Every layer maps a `batch × in_dim` matrix to `batch × out_dim`.
//! Spatial layers interpret each row as a channel-major `C × H × W` image.
//! `forward` caches what `backward` needs; `infer` is the read-only path.

mod conv;
mod linear;
mod loss;
mod pool;

use ndarray::{Array2, ArrayD, IxDyn};
use rand::Rng;

pub use conv::Conv2d;
pub use linear::Linear;
pub use loss::{log_softmax, softmax, softmax_cross_entropy};
pub use pool::MaxPool2d;

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: ArrayD<f64>,
    pub grad: ArrayD<f64>,
}

impl Param {
    pub fn new(value: ArrayD<f64>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Self { value, grad }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(ArrayD::zeros(IxDyn(shape)))
    }

    /// Uniform in `±sqrt(6 / fan_in)`.
    pub fn he_uniform(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / fan_in as f64).sqrt();
        Self::new(ArrayD::from_shape_fn(IxDyn(shape), |_| {
            rng.gen_range(-bound..bound)
        }))
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    input: Option<Array2<f64>>,
}

impl Relu {
    fn infer(&self, x: &Array2<f64>) -> Array2<f64> {
        // NaN passes through so a corrupted input still surfaces in the loss
        x.mapv(|v| if v <= 0.0 { 0.0 } else { v })
    }

    fn forward(&mut self, x: &Array2<f64>) -> Array2<f64> {
        let y = self.infer(x);
        self.input = Some(x.clone());
        y
    }

    fn backward(&mut self, grad: &Array2<f64>) -> Array2<f64> {
        let x = self.input.take().expect("relu backward without forward");
        let mut g = grad.clone();
        g.zip_mut_with(&x, |g, &x| {
            if x <= 0.0 {
                *g = 0.0
            }
        });
        g
    }
}

/// Reorders a channel-major `C × T` row into `T × C` (frame-major).
#[derive(Debug, Clone)]
pub struct ChannelsLast {
    pub channels: usize,
    pub steps: usize,
}

impl ChannelsLast {
    fn permute(x: &Array2<f64>, rows: usize, cols: usize) -> Array2<f64> {
        let mut y = Array2::zeros(x.raw_dim());
        for (src, mut dst) in x.outer_iter().zip(y.outer_iter_mut()) {
            for r in 0..rows {
                for c in 0..cols {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
        y
    }
}

#[derive(Debug, Clone)]
pub enum Layer {
    Linear(Linear),
    Relu(Relu),
    Conv2d(Conv2d),
    MaxPool2d(MaxPool2d),
    ChannelsLast(ChannelsLast),
}

impl Layer {
    pub fn relu() -> Self {
        Layer::Relu(Relu::default())
    }

    pub fn infer(&self, x: &Array2<f64>) -> Array2<f64> {
        match self {
            Layer::Linear(l) => l.infer(x),
            Layer::Relu(l) => l.infer(x),
            Layer::Conv2d(l) => l.infer(x),
            Layer::MaxPool2d(l) => l.infer(x),
            Layer::ChannelsLast(l) => ChannelsLast::permute(x, l.channels, l.steps),
        }
    }

    pub fn forward(&mut self, x: &Array2<f64>) -> Array2<f64> {
        match self {
            Layer::Linear(l) => l.forward(x),
            Layer::Relu(l) => l.forward(x),
            Layer::Conv2d(l) => l.forward(x),
            Layer::MaxPool2d(l) => l.forward(x),
            Layer::ChannelsLast(l) => ChannelsLast::permute(x, l.channels, l.steps),
        }
    }

    pub fn backward(&mut self, grad: &Array2<f64>) -> Array2<f64> {
        match self {
            Layer::Linear(l) => l.backward(grad),
            Layer::Relu(l) => l.backward(grad),
            Layer::Conv2d(l) => l.backward(grad),
            Layer::MaxPool2d(l) => l.backward(grad),
            Layer::ChannelsLast(l) => ChannelsLast::permute(grad, l.steps, l.channels),
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        match self {
            Layer::Linear(l) => vec![&l.weight, &l.bias],
            Layer::Conv2d(l) => vec![&l.weight, &l.bias],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Layer::Linear(l) => vec![&mut l.weight, &mut l.bias],
            Layer::Conv2d(l) => vec![&mut l.weight, &mut l.bias],
            _ => Vec::new(),
        }
    }

    pub fn clear_cache(&mut self) {
        match self {
            Layer::Linear(l) => l.input = None,
            Layer::Relu(l) => l.input = None,
            Layer::Conv2d(l) => l.input = None,
            Layer::MaxPool2d(l) => l.argmax = None,
            Layer::ChannelsLast(_) => {}
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    pub fn infer(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.infer(&h);
        }
        h
    }

    /// Like `infer`, stopping after the first `n` layers.
    pub fn infer_prefix(&self, x: &Array2<f64>, n: usize) -> Array2<f64> {
        let mut h = x.clone();
        for layer in self.layers.iter().take(n) {
            h = layer.infer(&h);
        }
        h
    }

    pub fn forward(&mut self, x: &Array2<f64>) -> Array2<f64> {
        let mut h = x.clone();
        for layer in &mut self.layers {
            h = layer.forward(&h);
        }
        h
    }

    pub fn backward(&mut self, grad: &Array2<f64>) -> Array2<f64> {
        let mut g = grad.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g);
        }
        g
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn clear_cache(&mut self) {
        for layer in &mut self.layers {
            layer.clear_cache();
        }
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

#[cfg(test)]
pub(crate) mod gradcheck {
    //! Central-difference gradient checking shared by layer tests.
    use super::*;

    /// Loss used for checks: `Σ y ⊙ probe`.
    pub fn probe_loss(y: &Array2<f64>, probe: &Array2<f64>) -> f64 {
        (y * probe).sum()
    }

    pub fn rel_err(a: f64, b: f64) -> f64 {
        let scale = a.abs().max(b.abs());
        if scale < 1e-10 {
            0.0
        } else {
            (a - b).abs() / scale
        }
    }

    /// Max relative error over parameters and input of a single layer.
    pub fn check_layer(layer: &mut Layer, x: &Array2<f64>, eps: f64) -> f64 {
        let y = layer.forward(x);
        let probe = Array2::from_shape_fn(y.raw_dim(), |(i, j)| ((i * 31 + j * 17) % 13) as f64 / 13.0 - 0.4);
        for p in layer.params_mut() {
            p.zero_grad();
        }
        let dx = layer.backward(&probe);
        let mut worst: f64 = 0.0;

        let n_params = layer.params().len();
        for pi in 0..n_params {
            let len = layer.params()[pi].len();
            for idx in (0..len).step_by((len / 23).max(1)) {
                let analytic = layer.params()[pi].grad.as_slice().unwrap()[idx];
                let orig = layer.params()[pi].value.as_slice().unwrap()[idx];
                layer.params_mut()[pi].value.as_slice_mut().unwrap()[idx] = orig + eps;
                let up = probe_loss(&layer.infer(x), &probe);
                layer.params_mut()[pi].value.as_slice_mut().unwrap()[idx] = orig - eps;
                let down = probe_loss(&layer.infer(x), &probe);
                layer.params_mut()[pi].value.as_slice_mut().unwrap()[idx] = orig;
                worst = worst.max(rel_err(analytic, (up - down) / (2.0 * eps)));
            }
        }
        let mut xp = x.clone();
        let n = xp.len();
        for idx in (0..n).step_by((n / 29).max(1)) {
            let orig = xp.as_slice().unwrap()[idx];
            xp.as_slice_mut().unwrap()[idx] = orig + eps;
            let up = probe_loss(&layer.infer(&xp), &probe);
            xp.as_slice_mut().unwrap()[idx] = orig - eps;
            let down = probe_loss(&layer.infer(&xp), &probe);
            xp.as_slice_mut().unwrap()[idx] = orig;
            worst = worst.max(rel_err(dx.as_slice().unwrap()[idx], (up - down) / (2.0 * eps)));
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_masks_gradient() {
        let mut r = Layer::relu();
        let x = Array2::from_shape_vec((1, 4), vec![-1.0, 2.0, 0.0, 3.0]).unwrap();
        assert_eq!(r.forward(&x).as_slice().unwrap(), &[0.0, 2.0, 0.0, 3.0]);
        let g = r.backward(&Array2::ones((1, 4)));
        assert_eq!(g.as_slice().unwrap(), &[0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn channels_last_round_trips() {
        let mut l = Layer::ChannelsLast(ChannelsLast { channels: 2, steps: 3 });
        let x = Array2::from_shape_vec((1, 6), vec![0.0, 1.0, 2.0, 10.0, 11.0, 12.0]).unwrap();
        let y = l.forward(&x);
        assert_eq!(y.as_slice().unwrap(), &[0.0, 10.0, 1.0, 11.0, 2.0, 12.0]);
        assert_eq!(l.backward(&y), x);
    }
}
