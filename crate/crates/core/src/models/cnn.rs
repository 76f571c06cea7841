use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::nn::{Conv2d, Layer, MaxPool2d, Sequential};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvStage {
    pub out_channels: usize,
    pub kernel: [usize; 2],
    pub pool: [usize; 2],
}

/// Two conv → ReLU → max-pool stages over a `frames × features` image.
///
/// Convolutions use stride 1 and `kernel / 2` zero padding, so odd kernels
/// keep the spatial size and only pooling shrinks it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CnnEncoderConfig {
    pub conv_layers: Vec<ConvStage>,
    pub input_shape: [usize; 2],
}

impl Default for CnnEncoderConfig {
    fn default() -> Self {
        Self {
            conv_layers: vec![
                ConvStage {
                    out_channels: 64,
                    kernel: [3, 3],
                    pool: [2, 2],
                },
                ConvStage {
                    out_channels: 128,
                    kernel: [3, 3],
                    pool: [2, 2],
                },
            ],
            input_shape: [11, 120],
        }
    }
}

impl CnnEncoderConfig {
    /// Same geometry with different channel counts.
    pub fn with_channels(first: usize, second: usize) -> Self {
        let mut cfg = Self::default();
        cfg.conv_layers[0].out_channels = first;
        cfg.conv_layers[1].out_channels = second;
        cfg
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.conv_layers.len() != 2 {
            return bad(format!("CNN encoder needs exactly 2 conv stages, got {}", self.conv_layers.len()));
        }
        if self.input_shape.contains(&0) {
            return bad("input shape must be non-empty".into());
        }
        let mut shape = [1, self.input_shape[0], self.input_shape[1]];
        for (i, stage) in self.conv_layers.iter().enumerate() {
            if stage.out_channels == 0 || stage.kernel.contains(&0) || stage.pool.contains(&0) {
                return bad(format!("stage {i}: channels, kernel and pool must be positive"));
            }
            let conv = conv_shape(shape, stage);
            if conv[1] < stage.pool[0] || conv[2] < stage.pool[1] {
                return bad(format!("stage {i}: pool {:?} larger than {:?}", stage.pool, &conv[1..]));
            }
            shape = [stage.out_channels, conv[1] / stage.pool[0], conv[2] / stage.pool[1]];
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.input_shape[0] * self.input_shape[1]
    }

    /// `[channels, height, width]` after each stage.
    pub fn stage_shapes(&self) -> Vec<[usize; 3]> {
        let mut shape = [1, self.input_shape[0], self.input_shape[1]];
        self.conv_layers
            .iter()
            .map(|stage| {
                let conv = conv_shape(shape, stage);
                shape = [stage.out_channels, conv[1] / stage.pool[0], conv[2] / stage.pool[1]];
                shape
            })
            .collect()
    }

    pub fn output_dim(&self) -> usize {
        self.stage_shapes().last().map_or(0, |s| s.iter().product())
    }

    pub fn build(&self, rng: &mut impl Rng) -> Result<Sequential, ModelError> {
        self.validate()?;
        let mut layers = Vec::new();
        let mut shape = [1, self.input_shape[0], self.input_shape[1]];
        for stage in &self.conv_layers {
            let padding = [stage.kernel[0] / 2, stage.kernel[1] / 2];
            let conv = Conv2d::new(shape, stage.out_channels, stage.kernel, [1, 1], padding, rng);
            let conv_out = conv.out_shape();
            layers.push(Layer::Conv2d(conv));
            layers.push(Layer::relu());
            let pool = MaxPool2d::new(conv_out, stage.pool);
            shape = pool.out_shape();
            layers.push(Layer::MaxPool2d(pool));
        }
        Ok(Sequential::new(layers))
    }
}

fn conv_shape(input: [usize; 3], stage: &ConvStage) -> [usize; 3] {
    let [_, h, w] = input;
    let [kh, kw] = stage.kernel;
    let oh = (h + 2 * (kh / 2)).saturating_sub(kh) + 1;
    let ow = (w + 2 * (kw / 2)).saturating_sub(kw) + 1;
    [stage.out_channels, oh, ow]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_geometry_by_hand() {
        // 11×120 → same-padded conv → pool 2 → 5×60 → pool 2 → 2×30, 128 channels
        let cfg = CnnEncoderConfig::default();
        assert_eq!(cfg.stage_shapes(), vec![[64, 5, 60], [128, 2, 30]]);
        assert_eq!(cfg.output_dim(), 7680);
    }

    #[test]
    fn built_network_matches_analytic_dim() {
        let cfg = CnnEncoderConfig::with_channels(4, 6);
        let net = cfg.build(&mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let y = net.infer(&ndarray::Array2::zeros((3, 1320)));
        assert_eq!(y.dim(), (3, 6 * 2 * 30));
    }

    #[test]
    fn rejects_wrong_stage_count() {
        let mut cfg = CnnEncoderConfig::default();
        cfg.conv_layers.pop();
        assert!(cfg.validate().is_err());
    }
}
