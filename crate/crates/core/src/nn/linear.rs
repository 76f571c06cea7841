use ndarray::{Array2, ArrayView1, ArrayView2, Axis, Ix1, Ix2};
use rand::Rng;

use super::Param;

/// `y = x·W + b` with `W: in × out`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
    pub(super) input: Option<Array2<f64>>,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: Param::he_uniform(&[in_dim, out_dim], in_dim, rng),
            bias: Param::zeros(&[out_dim]),
            input: None,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value.shape()[1]
    }

    fn w(&self) -> ArrayView2<'_, f64> {
        self.weight.value.view().into_dimensionality::<Ix2>().expect("2-d weight")
    }

    fn b(&self) -> ArrayView1<'_, f64> {
        self.bias.value.view().into_dimensionality::<Ix1>().expect("1-d bias")
    }

    pub(super) fn infer(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w()) + self.b()
    }

    pub(super) fn forward(&mut self, x: &Array2<f64>) -> Array2<f64> {
        let y = self.infer(x);
        self.input = Some(x.clone());
        y
    }

    pub(super) fn backward(&mut self, grad: &Array2<f64>) -> Array2<f64> {
        let x = self.input.take().expect("linear backward without forward");
        let dx = grad.dot(&self.w().t());
        {
            let mut dw = self
                .weight
                .grad
                .view_mut()
                .into_dimensionality::<Ix2>()
                .expect("2-d weight");
            dw += &x.t().dot(grad);
        }
        let mut db = self
            .bias
            .grad
            .view_mut()
            .into_dimensionality::<Ix1>()
            .expect("1-d bias");
        db += &grad.sum_axis(Axis(0));
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::super::{gradcheck, Layer};
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut layer = Layer::Linear(Linear::new(7, 5, &mut rng));
        let x = Array2::from_shape_fn((3, 7), |_| rng.gen_range(-1.0..1.0));
        assert!(gradcheck::check_layer(&mut layer, &x, 1e-6) < 1e-6);
    }

    #[test]
    fn shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = Linear::new(4, 9, &mut rng);
        assert_eq!(l.infer(&Array2::zeros((2, 4))).dim(), (2, 9));
    }
}
