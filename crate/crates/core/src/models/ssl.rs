use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{read_params, seed_from_tag, ModelError};
use crate::nn::{ChannelsLast, Conv2d, Layer, Param, Sequential};

/// Kernel sizes of the wav2vec2 convolutional feature extractor.
pub const SSL_KERNELS: [usize; 7] = [10, 3, 3, 3, 3, 2, 2];
/// Strides of the wav2vec2 convolutional feature extractor (320× overall).
pub const SSL_STRIDES: [usize; 7] = [5, 2, 2, 2, 2, 2, 2];
/// Frames emitted for a 2032-sample window by the stack above.
pub const SSL_FRAME_COUNT: usize = 6;

const ALLOWED_DEPTHS: [usize; 3] = [6, 12, 24];

/// What an experiment config says about an SSL encoder.
///
/// `backend_id` is `scheme:tag`; the scheme picks a factory from the
/// [`BackendRegistry`] and the tag names the pretrained variant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SslBackendHandle {
    pub backend_id: String,
    pub hidden_layers: usize,
    #[serde(default)]
    pub trainable: bool,
    pub embedding_dim: usize,
    /// Hidden layer whose output is flattened; `None` means the last one.
    #[serde(default)]
    pub layer_index: Option<usize>,
    /// Parameter file overriding the backend's own initialization.
    #[serde(default)]
    pub weights: Option<PathBuf>,
}

impl SslBackendHandle {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if !ALLOWED_DEPTHS.contains(&self.hidden_layers) {
            return bad(format!("hidden_layers must be one of {ALLOWED_DEPTHS:?}, got {}", self.hidden_layers));
        }
        if self.embedding_dim == 0 {
            return bad("embedding_dim must be positive".into());
        }
        if let Some(k) = self.layer_index {
            if k > self.hidden_layers {
                return bad(format!("layer_index {k} exceeds {} hidden layers", self.hidden_layers));
            }
        }
        Ok(())
    }

    pub fn scheme(&self) -> &str {
        self.backend_id.split(':').next().unwrap_or("")
    }

    pub fn output_layer(&self) -> usize {
        self.layer_index.unwrap_or(self.hidden_layers)
    }
}

/// Plugin contract for waveform encoders.
///
/// Inputs are `batch × input_len` waveform rows; outputs are frame-major
/// flattened embeddings of `n_frames · embedding_dim` columns.
pub trait SslBackend: fmt::Debug + Send + Sync {
    fn backend_id(&self) -> &str;
    fn input_len(&self) -> usize;
    fn n_frames(&self) -> usize;
    fn embedding_dim(&self) -> usize;

    fn output_dim(&self) -> usize {
        self.n_frames() * self.embedding_dim()
    }

    /// Read-only forward pass.
    fn embed(&self, x: &Array2<f64>) -> Array2<f64>;
    /// Forward pass that keeps what `backward` needs.
    fn forward(&mut self, x: &Array2<f64>) -> Array2<f64>;
    /// Accumulates parameter gradients for the last `forward`.
    fn backward(&mut self, grad: &Array2<f64>);
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;
    fn clear_cache(&mut self);
}

pub type BackendFactory = fn(&SslBackendHandle) -> Result<Box<dyn SslBackend>, ModelError>;

/// Maps backend schemes to factories. `reference` is always available.
#[derive(Clone)]
pub struct BackendRegistry {
    factories: BTreeMap<String, BackendFactory>,
}

impl fmt::Debug for BackendRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BackendRegistry")
            .field("schemes", &self.factories.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl Default for BackendRegistry {
    fn default() -> Self {
        let mut registry = Self {
            factories: BTreeMap::new(),
        };
        registry.register("reference", ReferenceBackend::factory);
        registry
    }
}

impl BackendRegistry {
    pub fn register(&mut self, scheme: &str, factory: BackendFactory) {
        self.factories.insert(scheme.to_string(), factory);
    }

    pub fn schemes(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn contains(&self, handle: &SslBackendHandle) -> bool {
        self.factories.contains_key(handle.scheme())
    }

    pub fn resolve(&self, handle: &SslBackendHandle) -> Result<Box<dyn SslBackend>, ModelError> {
        handle.validate()?;
        let factory = self.factories.get(handle.scheme()).ok_or_else(|| ModelError::Backend {
            backend_id: handle.backend_id.clone(),
            message: format!("no backend registered for scheme {:?}", handle.scheme()),
        })?;
        let backend = factory(handle)?;
        if backend.embedding_dim() != handle.embedding_dim {
            return Err(ModelError::Backend {
                backend_id: handle.backend_id.clone(),
                message: format!(
                    "backend emits {}-dim frames, handle declares {}",
                    backend.embedding_dim(),
                    handle.embedding_dim
                ),
            });
        }
        Ok(backend)
    }
}

/// Small stand-in with wav2vec2 geometry: the seven-layer strided conv
/// feature extractor followed by `hidden_layers` pointwise ReLU layers.
///
/// Weights come from a seed derived from `backend_id`, or from the handle's
/// `weights` file. Inputs are standardized per window before the first conv.
#[derive(Debug, Clone)]
pub struct ReferenceBackend {
    backend_id: String,
    dim: usize,
    net: Sequential,
}

impl ReferenceBackend {
    pub const INPUT_LEN: usize = 2032;

    pub fn new(handle: &SslBackendHandle) -> Result<Self, ModelError> {
        handle.validate()?;
        let dim = handle.embedding_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed_from_tag(&handle.backend_id));
        let mut layers = Vec::new();
        let mut shape = [1, 1, Self::INPUT_LEN];
        for (&k, &s) in SSL_KERNELS.iter().zip(&SSL_STRIDES) {
            let conv = Conv2d::new(shape, dim, [1, k], [1, s], [0, 0], &mut rng);
            shape = conv.out_shape();
            layers.push(Layer::Conv2d(conv));
            layers.push(Layer::relu());
        }
        debug_assert_eq!(shape[2], SSL_FRAME_COUNT);
        for _ in 0..handle.output_layer() {
            layers.push(Layer::Conv2d(Conv2d::new(shape, dim, [1, 1], [1, 1], [0, 0], &mut rng)));
            layers.push(Layer::relu());
        }
        layers.push(Layer::ChannelsLast(ChannelsLast {
            channels: dim,
            steps: shape[2],
        }));
        let mut backend = Self {
            backend_id: handle.backend_id.clone(),
            dim,
            net: Sequential::new(layers),
        };
        if let Some(path) = &handle.weights {
            let values = read_params(path)?;
            backend.load(values).map_err(|message| ModelError::Backend {
                backend_id: handle.backend_id.clone(),
                message,
            })?;
        }
        Ok(backend)
    }

    fn factory(handle: &SslBackendHandle) -> Result<Box<dyn SslBackend>, ModelError> {
        Ok(Box::new(Self::new(handle)?))
    }

    fn load(&mut self, values: Vec<ndarray::ArrayD<f64>>) -> Result<(), String> {
        let mut params = self.net.params_mut();
        if params.len() != values.len() {
            return Err(format!("weights file has {} tensors, expected {}", values.len(), params.len()));
        }
        for (i, (p, v)) in params.iter_mut().zip(values).enumerate() {
            if p.value.shape() != v.shape() {
                return Err(format!("tensor {i}: shape {:?}, expected {:?}", v.shape(), p.value.shape()));
            }
            p.value = v;
        }
        Ok(())
    }

    fn standardize(x: &Array2<f64>) -> Array2<f64> {
        let mut y = x.clone();
        for mut row in y.axis_iter_mut(Axis(0)) {
            let n = row.len() as f64;
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let scale = (var + 1e-7).sqrt().recip();
            row.mapv_inplace(|v| (v - mean) * scale);
        }
        y
    }
}

impl SslBackend for ReferenceBackend {
    fn backend_id(&self) -> &str {
        &self.backend_id
    }

    fn input_len(&self) -> usize {
        Self::INPUT_LEN
    }

    fn n_frames(&self) -> usize {
        SSL_FRAME_COUNT
    }

    fn embedding_dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, x: &Array2<f64>) -> Array2<f64> {
        self.net.infer(&Self::standardize(x))
    }

    fn forward(&mut self, x: &Array2<f64>) -> Array2<f64> {
        self.net.forward(&Self::standardize(x))
    }

    fn backward(&mut self, grad: &Array2<f64>) {
        self.net.backward(grad);
    }

    fn params(&self) -> Vec<&Param> {
        self.net.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.net.params_mut()
    }

    fn clear_cache(&mut self) {
        self.net.clear_cache();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn handle(depth: usize, dim: usize) -> SslBackendHandle {
        SslBackendHandle {
            backend_id: "reference:test".into(),
            hidden_layers: depth,
            trainable: false,
            embedding_dim: dim,
            layer_index: None,
            weights: None,
        }
    }

    #[test]
    fn extractor_emits_six_frames_for_2032_samples() {
        // 2032 → 405 → 202 → 100 → 49 → 24 → 12 → 6
        let mut len = 2032;
        for (k, s) in SSL_KERNELS.iter().zip(&SSL_STRIDES) {
            len = (len - k) / s + 1;
        }
        assert_eq!(len, SSL_FRAME_COUNT);
        let backend = ReferenceBackend::new(&handle(6, 8)).unwrap();
        let y = backend.embed(&Array2::zeros((2, 2032)));
        assert_eq!(y.dim(), (2, 6 * 8));
    }

    #[test]
    fn same_id_same_weights() {
        let a = ReferenceBackend::new(&handle(6, 4)).unwrap();
        let b = ReferenceBackend::new(&handle(6, 4)).unwrap();
        let x = Array2::from_shape_fn((1, 2032), |(_, j)| (j as f64 * 0.01).sin());
        assert_eq!(a.embed(&x), b.embed(&x));
        let mut other = handle(6, 4);
        other.backend_id = "reference:other".into();
        assert_ne!(ReferenceBackend::new(&other).unwrap().embed(&x), a.embed(&x));
    }

    #[test]
    fn registry_rejects_unknown_scheme_and_depth() {
        let reg = BackendRegistry::default();
        let mut h = handle(12, 4);
        h.backend_id = "hub:wav2vec2".into();
        assert!(matches!(reg.resolve(&h), Err(ModelError::Backend { .. })));
        assert!(reg.resolve(&handle(7, 4)).is_err());
        assert!(reg.resolve(&handle(24, 4)).is_ok());
    }

    #[test]
    fn layer_index_truncates() {
        let mut h = handle(12, 4);
        h.layer_index = Some(3);
        let b = ReferenceBackend::new(&h).unwrap();
        assert_eq!(b.params().len(), 2 * (7 + 3));
    }
}
