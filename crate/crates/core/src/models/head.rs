use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::inventory::NUM_CLASSES;
use crate::nn::{Layer, Linear, Sequential};

pub const HEAD_HIDDEN_WIDTH: usize = 1024;
pub const HEAD_HIDDEN_LAYERS: usize = 3;

/// Fully connected layers with ReLU in between; no softmax (the loss and
/// `Logits` apply it).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierHeadConfig {
    pub hidden_dims: Vec<usize>,
    pub n_classes: usize,
}

impl Default for ClassifierHeadConfig {
    fn default() -> Self {
        Self {
            hidden_dims: vec![HEAD_HIDDEN_WIDTH; HEAD_HIDDEN_LAYERS],
            n_classes: NUM_CLASSES,
        }
    }
}

impl ClassifierHeadConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.hidden_dims != [HEAD_HIDDEN_WIDTH; HEAD_HIDDEN_LAYERS] {
            return Err(ModelError::Config(format!(
                "classifier head must have {HEAD_HIDDEN_LAYERS} hidden layers of {HEAD_HIDDEN_WIDTH}, got {:?}",
                self.hidden_dims
            )));
        }
        if self.n_classes != NUM_CLASSES {
            return Err(ModelError::Config(format!(
                "classifier head must emit {NUM_CLASSES} logits, got {}",
                self.n_classes
            )));
        }
        Ok(())
    }

    pub fn build(&self, in_dim: usize, rng: &mut impl Rng) -> Result<Sequential, ModelError> {
        self.validate()?;
        if in_dim == 0 {
            return Err(ModelError::Config("head input width is zero".into()));
        }
        let mut layers = Vec::new();
        let mut width = in_dim;
        for &h in &self.hidden_dims {
            layers.push(Layer::Linear(Linear::new(width, h, rng)));
            layers.push(Layer::relu());
            width = h;
        }
        layers.push(Layer::Linear(Linear::new(width, self.n_classes, rng)));
        Ok(Sequential::new(layers))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_head_is_valid() {
        let head = ClassifierHeadConfig::default()
            .build(10, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        assert_eq!(head.layers.len(), 7);
        assert_eq!(head.infer(&ndarray::Array2::zeros((2, 10))).ncols(), 32);
    }

    #[test]
    fn other_shapes_are_rejected() {
        let cfg = ClassifierHeadConfig {
            hidden_dims: vec![512, 512, 512],
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = ClassifierHeadConfig {
            n_classes: 31,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
