use ndarray::{s, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis, Ix1, Ix2};
use rand::Rng;

use super::Param;

/// Samples per im2col block; fixed so results do not depend on batch size.
const CHUNK: usize = 16;

/// 2-d convolution over channel-major rows, lowered to GEMM via im2col.
#[derive(Debug, Clone)]
pub struct Conv2d {
    /// `[channels, height, width]` of each input row.
    pub in_shape: [usize; 3],
    pub out_channels: usize,
    pub kernel: [usize; 2],
    pub stride: [usize; 2],
    pub padding: [usize; 2],
    /// `out_channels × (channels·kh·kw)`
    pub weight: Param,
    pub bias: Param,
    pub(super) input: Option<Array2<f64>>,
}

impl Conv2d {
    pub fn new(
        in_shape: [usize; 3],
        out_channels: usize,
        kernel: [usize; 2],
        stride: [usize; 2],
        padding: [usize; 2],
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_shape[0] * kernel[0] * kernel[1];
        let conv = Self {
            in_shape,
            out_channels,
            kernel,
            stride,
            padding,
            weight: Param::he_uniform(&[out_channels, fan_in], fan_in, rng),
            bias: Param::zeros(&[out_channels]),
            input: None,
        };
        assert!(conv.out_hw().0 > 0 && conv.out_hw().1 > 0, "kernel larger than padded input");
        conv
    }

    pub fn out_hw(&self) -> (usize, usize) {
        let [_, h, w] = self.in_shape;
        let oh = (h + 2 * self.padding[0]).saturating_sub(self.kernel[0]) / self.stride[0] + 1;
        let ow = (w + 2 * self.padding[1]).saturating_sub(self.kernel[1]) / self.stride[1] + 1;
        (oh, ow)
    }

    pub fn out_shape(&self) -> [usize; 3] {
        let (oh, ow) = self.out_hw();
        [self.out_channels, oh, ow]
    }

    pub fn in_dim(&self) -> usize {
        self.in_shape.iter().product()
    }

    pub fn out_dim(&self) -> usize {
        self.out_shape().iter().product()
    }

    fn patch_len(&self) -> usize {
        self.in_shape[0] * self.kernel[0] * self.kernel[1]
    }

    fn w(&self) -> ArrayView2<'_, f64> {
        self.weight.value.view().into_dimensionality::<Ix2>().expect("2-d weight")
    }

    /// Fills `cols` (`patch_len × oh·ow`) from one input row.
    fn im2col(&self, x: ArrayView1<'_, f64>, mut cols: ArrayViewMut2<'_, f64>) {
        let [c, h, w] = self.in_shape;
        let [kh, kw] = self.kernel;
        let (oh, ow) = self.out_hw();
        for ci in 0..c {
            for ki in 0..kh {
                for kj in 0..kw {
                    let mut col = cols.row_mut((ci * kh + ki) * kw + kj);
                    for oy in 0..oh {
                        let iy = (oy * self.stride[0] + ki) as isize - self.padding[0] as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let base = (ci * h + iy as usize) * w;
                        for ox in 0..ow {
                            let ix = (ox * self.stride[1] + kj) as isize - self.padding[1] as isize;
                            if ix >= 0 && ix < w as isize {
                                col[oy * ow + ox] = x[base + ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds `cols` back onto one input-gradient row.
    fn col2im(&self, cols: ArrayView2<'_, f64>, mut dx: ArrayViewMut1<'_, f64>) {
        let [c, h, w] = self.in_shape;
        let [kh, kw] = self.kernel;
        let (oh, ow) = self.out_hw();
        for ci in 0..c {
            for ki in 0..kh {
                for kj in 0..kw {
                    let col = cols.row((ci * kh + ki) * kw + kj);
                    for oy in 0..oh {
                        let iy = (oy * self.stride[0] + ki) as isize - self.padding[0] as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let base = (ci * h + iy as usize) * w;
                        for ox in 0..ow {
                            let ix = (ox * self.stride[1] + kj) as isize - self.padding[1] as isize;
                            if ix >= 0 && ix < w as isize {
                                dx[base + ix as usize] += col[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    fn chunk_cols(&self, x: &Array2<f64>, start: usize, len: usize) -> Array2<f64> {
        let p = self.out_hw().0 * self.out_hw().1;
        let mut cols = Array2::zeros((self.patch_len(), len * p));
        for b in 0..len {
            self.im2col(x.row(start + b), cols.slice_mut(s![.., b * p..(b + 1) * p]));
        }
        cols
    }

    pub(super) fn infer(&self, x: &Array2<f64>) -> Array2<f64> {
        assert_eq!(x.ncols(), self.in_dim(), "conv input width");
        let batch = x.nrows();
        let (oh, ow) = self.out_hw();
        let p = oh * ow;
        let oc = self.out_channels;
        let bias = self.bias.value.view().into_dimensionality::<Ix1>().expect("1-d bias");
        let mut y = Array2::zeros((batch, oc * p));
        for start in (0..batch).step_by(CHUNK) {
            let len = CHUNK.min(batch - start);
            let out = self.w().dot(&self.chunk_cols(x, start, len));
            for b in 0..len {
                let mut row = y.row_mut(start + b);
                for o in 0..oc {
                    let mut dst = row.slice_mut(s![o * p..(o + 1) * p]);
                    dst.assign(&out.slice(s![o, b * p..(b + 1) * p]));
                    dst += bias[o];
                }
            }
        }
        y
    }

    pub(super) fn forward(&mut self, x: &Array2<f64>) -> Array2<f64> {
        let y = self.infer(x);
        self.input = Some(x.clone());
        y
    }

    pub(super) fn backward(&mut self, grad: &Array2<f64>) -> Array2<f64> {
        let x = self.input.take().expect("conv backward without forward");
        let batch = x.nrows();
        let (oh, ow) = self.out_hw();
        let p = oh * ow;
        let oc = self.out_channels;
        let mut dx = Array2::zeros(x.raw_dim());
        let mut dw = Array2::<f64>::zeros((oc, self.patch_len()));
        let mut db = ndarray::Array1::<f64>::zeros(oc);

        for start in (0..batch).step_by(CHUNK) {
            let len = CHUNK.min(batch - start);
            let cols = self.chunk_cols(&x, start, len);
            let mut g = Array2::zeros((oc, len * p));
            for b in 0..len {
                let row = grad.row(start + b);
                for o in 0..oc {
                    g.slice_mut(s![o, b * p..(b + 1) * p])
                        .assign(&row.slice(s![o * p..(o + 1) * p]));
                }
            }
            dw += &g.dot(&cols.t());
            db += &g.sum_axis(Axis(1));
            let dcols = self.w().t().dot(&g);
            for b in 0..len {
                self.col2im(dcols.slice(s![.., b * p..(b + 1) * p]), dx.row_mut(start + b));
            }
        }
        let mut wg = self.weight.grad.view_mut().into_dimensionality::<Ix2>().expect("2-d weight");
        wg += &dw;
        let mut bg = self.bias.grad.view_mut().into_dimensionality::<Ix1>().expect("1-d bias");
        bg += &db;
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
    fn same_padding_keeps_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = Conv2d::new([1, 11, 120], 64, [3, 3], [1, 1], [1, 1], &mut rng);
        assert_eq!(c.out_shape(), [64, 11, 120]);
    }

    #[test]
    fn strided_one_d_geometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = Conv2d::new([1, 1, 2032], 4, [1, 10], [1, 5], [0, 0], &mut rng);
        assert_eq!(c.out_hw(), (1, 405));
    }

    #[test]
    fn matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let conv = Conv2d::new([2, 4, 5], 3, [3, 2], [1, 2], [1, 0], &mut rng);
        let x = Array2::from_shape_fn((2, 40), |_| rng.gen_range(-1.0..1.0));
        let y = conv.infer(&x);
        let (oh, ow) = conv.out_hw();
        let w = conv.weight.value.clone().into_dimensionality::<Ix2>().unwrap();
        for b in 0..2 {
            for o in 0..3 {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for ci in 0..2 {
                            for ki in 0..3 {
                                for kj in 0..2 {
                                    let iy = (oy + ki) as isize - 1;
                                    let ix = (ox * 2 + kj) as isize;
                                    if (0..4).contains(&iy) && (0..5).contains(&ix) {
                                        acc += w[[o, (ci * 3 + ki) * 2 + kj]]
                                            * x[[b, (ci * 4 + iy as usize) * 5 + ix as usize]];
                                    }
                                }
                            }
                        }
                        assert!((y[[b, (o * oh + oy) * ow + ox]] - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let conv = Conv2d::new([2, 5, 6], 3, [3, 3], [1, 1], [1, 1], &mut rng);
        let mut layer = Layer::Conv2d(conv);
        let x = Array2::from_shape_fn((20, 60), |_| rng.gen_range(-1.0..1.0));
        assert!(gradcheck::check_layer(&mut layer, &x, 1e-6) < 1e-6);
    }
}
