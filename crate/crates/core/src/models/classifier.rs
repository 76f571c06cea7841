use ndarray::{Array1, Array2, ArrayD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BackendRegistry, ClassifierHeadConfig, CnnEncoderConfig, ModelError, SslBackend, SslBackendHandle};
use crate::features::{FeatureWindow, WaveformWindow};
use crate::nn::{softmax, Param, Sequential};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EncoderConfig {
    Cnn(CnnEncoderConfig),
    Ssl(SslBackendHandle),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub head: ClassifierHeadConfig,
    /// Seeds CNN and head initialization.
    #[serde(default)]
    pub init_seed: u64,
}

impl ModelConfig {
    pub fn cnn(encoder: CnnEncoderConfig, init_seed: u64) -> Self {
        Self {
            encoder: EncoderConfig::Cnn(encoder),
            head: ClassifierHeadConfig::default(),
            init_seed,
        }
    }

    pub fn ssl(handle: SslBackendHandle, init_seed: u64) -> Self {
        Self {
            encoder: EncoderConfig::Ssl(handle),
            head: ClassifierHeadConfig::default(),
            init_seed,
        }
    }
}

/// Raw classifier outputs for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Logits(pub Vec<f64>);

impl Logits {
    pub fn softmax(&self) -> Vec<f64> {
        softmax(Array1::from(self.0.clone()).view()).to_vec()
    }

    pub fn predict(&self) -> Result<usize, ModelError> {
        predict_phone(&self.0)
    }
}

/// Argmax with ties broken towards the lower index; NaN is an error.
pub fn predict_phone(logits: &[f64]) -> Result<usize, ModelError> {
    if logits.is_empty() {
        return Err(ModelError::Prediction("empty logits".into()));
    }
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v.is_nan() {
            return Err(ModelError::Prediction(format!("NaN logit at index {i}")));
        }
        if v > logits[best] {
            best = i;
        }
    }
    Ok(best)
}

#[derive(Debug)]
enum Encoder {
    Cnn(Sequential),
    Ssl(Box<dyn SslBackend>),
}

/// Encoder plus classifier head.
///
/// All batch methods take one flattened window per row: `11·120` log-mel
/// values for the CNN, raw samples for SSL.
#[derive(Debug)]
pub struct PhoneClassifier {
    config: ModelConfig,
    encoder: Encoder,
    head: Sequential,
}

impl PhoneClassifier {
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        Self::with_registry(config, &BackendRegistry::default())
    }

    pub fn with_registry(config: ModelConfig, registry: &BackendRegistry) -> Result<Self, ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let (encoder, emb_dim) = match &config.encoder {
            EncoderConfig::Cnn(cfg) => (Encoder::Cnn(cfg.build(&mut rng)?), cfg.output_dim()),
            EncoderConfig::Ssl(handle) => {
                let backend = registry.resolve(handle)?;
                let dim = backend.output_dim();
                (Encoder::Ssl(backend), dim)
            }
        };
        let head = config.head.build(emb_dim, &mut rng)?;
        Ok(Self { config, encoder, head })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn input_len(&self) -> usize {
        match (&self.encoder, &self.config.encoder) {
            (Encoder::Cnn(_), EncoderConfig::Cnn(cfg)) => cfg.input_dim(),
            (Encoder::Ssl(b), _) => b.input_len(),
            _ => unreachable!("encoder and config disagree"),
        }
    }

    pub fn embedding_dim(&self) -> usize {
        match &self.config.encoder {
            EncoderConfig::Cnn(cfg) => cfg.output_dim(),
            EncoderConfig::Ssl(_) => match &self.encoder {
                Encoder::Ssl(b) => b.output_dim(),
                Encoder::Cnn(_) => unreachable!("encoder and config disagree"),
            },
        }
    }

    pub fn is_ssl(&self) -> bool {
        matches!(self.encoder, Encoder::Ssl(_))
    }

    /// The CNN is always trained; an SSL backend only when its handle says so.
    pub fn encoder_trainable(&self) -> bool {
        match &self.config.encoder {
            EncoderConfig::Cnn(_) => true,
            EncoderConfig::Ssl(h) => h.trainable,
        }
    }

    fn check_width(&self, x: &Array2<f64>, want: usize, what: &str) -> Result<(), ModelError> {
        if x.ncols() != want {
            return Err(ModelError::Contract(format!("{what} width {} != expected {want}", x.ncols())));
        }
        Ok(())
    }

    pub fn embed(&self, x: &Array2<f64>) -> Result<Array2<f64>, ModelError> {
        self.check_width(x, self.input_len(), "input")?;
        Ok(match &self.encoder {
            Encoder::Cnn(net) => net.infer(x),
            Encoder::Ssl(b) => b.embed(x),
        })
    }

    pub fn head_logits(&self, embeddings: &Array2<f64>) -> Result<Array2<f64>, ModelError> {
        self.check_width(embeddings, self.embedding_dim(), "embedding")?;
        Ok(self.head.infer(embeddings))
    }

    pub fn logits(&self, x: &Array2<f64>) -> Result<Array2<f64>, ModelError> {
        self.head_logits(&self.embed(x)?)
    }

    pub fn predict(&self, x: &Array2<f64>) -> Result<Vec<usize>, ModelError> {
        self.logits(x)?
            .outer_iter()
            .map(|row| predict_phone(row.as_slice().expect("contiguous row")))
            .collect()
    }

    pub fn cnn_forward(&self, window: &FeatureWindow) -> Result<Vec<f64>, ModelError> {
        let EncoderConfig::Cnn(cfg) = &self.config.encoder else {
            return Err(ModelError::Contract("cnn_forward on an SSL model".into()));
        };
        let (h, w) = window.values.dim();
        if [h, w] != cfg.input_shape {
            return Err(ModelError::Contract(format!("window {h}×{w} != expected {:?}", cfg.input_shape)));
        }
        let x = Array2::from_shape_vec((1, h * w), window.flatten()).expect("window size");
        Ok(self.embed(&x)?.into_raw_vec_and_offset().0)
    }

    pub fn ssl_forward(&self, window: &WaveformWindow) -> Result<Vec<f64>, ModelError> {
        if !self.is_ssl() {
            return Err(ModelError::Contract("ssl_forward on a CNN model".into()));
        }
        let x = Array2::from_shape_fn((1, window.samples.len()), |(_, j)| window.samples[j] as f64);
        Ok(self.embed(&x)?.into_raw_vec_and_offset().0)
    }

    pub fn classifier_forward(&self, embedding: &[f64]) -> Result<Logits, ModelError> {
        let x = Array2::from_shape_vec((1, embedding.len()), embedding.to_vec()).expect("row");
        let y = self.head_logits(&x)?;
        Ok(Logits(y.into_raw_vec_and_offset().0))
    }

    /// Training forward pass. With `through_encoder` false the encoder runs
    /// read-only and `backward` stops at the head.
    pub fn forward(&mut self, x: &Array2<f64>, through_encoder: bool) -> Result<Array2<f64>, ModelError> {
        self.check_width(x, self.input_len(), "input")?;
        let emb = if through_encoder {
            match &mut self.encoder {
                Encoder::Cnn(net) => net.forward(x),
                Encoder::Ssl(b) => b.forward(x),
            }
        } else {
            self.embed(x)?
        };
        Ok(self.head.forward(&emb))
    }

    /// Training forward pass starting from precomputed embeddings.
    pub fn forward_head(&mut self, embeddings: &Array2<f64>) -> Result<Array2<f64>, ModelError> {
        self.check_width(embeddings, self.embedding_dim(), "embedding")?;
        Ok(self.head.forward(embeddings))
    }

    pub fn backward(&mut self, grad: &Array2<f64>, through_encoder: bool) {
        let g = self.head.backward(grad);
        if through_encoder {
            match &mut self.encoder {
                Encoder::Cnn(net) => {
                    net.backward(&g);
                }
                Encoder::Ssl(b) => b.backward(&g),
            }
        }
    }

    pub fn encoder_params(&self) -> Vec<&Param> {
        match &self.encoder {
            Encoder::Cnn(net) => net.params(),
            Encoder::Ssl(b) => b.params(),
        }
    }

    pub fn encoder_params_mut(&mut self) -> Vec<&mut Param> {
        match &mut self.encoder {
            Encoder::Cnn(net) => net.params_mut(),
            Encoder::Ssl(b) => b.params_mut(),
        }
    }

    pub fn head_params(&self) -> Vec<&Param> {
        self.head.params()
    }

    pub fn head_params_mut(&mut self) -> Vec<&mut Param> {
        self.head.params_mut()
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut all = self.encoder_params();
        all.extend(self.head_params());
        all
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let Self { encoder, head, .. } = self;
        let mut all = match encoder {
            Encoder::Cnn(net) => net.params_mut(),
            Encoder::Ssl(b) => b.params_mut(),
        };
        all.extend(head.params_mut());
        all
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn clear_cache(&mut self) {
        match &mut self.encoder {
            Encoder::Cnn(net) => net.clear_cache(),
            Encoder::Ssl(b) => b.clear_cache(),
        }
        self.head.clear_cache();
    }

    /// Copies of all parameter values, encoder first.
    pub fn snapshot(&self) -> Vec<ArrayD<f64>> {
        self.params().iter().map(|p| p.value.clone()).collect()
    }

    pub fn encoder_snapshot(&self) -> Vec<ArrayD<f64>> {
        self.encoder_params().iter().map(|p| p.value.clone()).collect()
    }

    pub fn restore(&mut self, values: &[ArrayD<f64>]) -> Result<(), ModelError> {
        let mut params = self.params_mut();
        if params.len() != values.len() {
            return Err(ModelError::Contract(format!(
                "{} tensors supplied for {} parameters",
                values.len(),
                params.len()
            )));
        }
        for (i, (p, v)) in params.iter_mut().zip(values).enumerate() {
            if p.value.shape() != v.shape() {
                return Err(ModelError::Contract(format!(
                    "tensor {i}: shape {:?} != {:?}",
                    v.shape(),
                    p.value.shape()
                )));
            }
            p.value.assign(v);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::context_window;
    use proptest::prelude::*;

    fn small_cnn() -> PhoneClassifier {
        PhoneClassifier::new(ModelConfig::cnn(CnnEncoderConfig::with_channels(2, 3), 7)).unwrap()
    }

    #[test]
    fn zero_windows_share_an_embedding() {
        let m = small_cnn();
        let w = context_window(&Array2::zeros((20, 120)), 5, 11);
        let a = m.cnn_forward(&w).unwrap();
        let b = m.cnn_forward(&w.clone()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3 * 2 * 30);
    }

    #[test]
    fn batch_rows_match_single_rows() {
        let m = small_cnn();
        let x = Array2::from_shape_fn((4, 1320), |(i, j)| ((i * 7 + j) % 11) as f64 * 0.1);
        let batch = m.logits(&x).unwrap();
        for i in 0..4 {
            let single = m.logits(&x.slice(ndarray::s![i..i + 1, ..]).to_owned()).unwrap();
            assert_eq!(single.row(0), batch.row(i));
        }
    }

    #[test]
    fn wrong_widths_are_contract_errors() {
        let m = small_cnn();
        assert!(matches!(m.logits(&Array2::zeros((1, 100))), Err(ModelError::Contract(_))));
        assert!(matches!(m.classifier_forward(&[0.0; 3]), Err(ModelError::Contract(_))));
        let w = context_window(&Array2::zeros((20, 60)), 5, 11);
        assert!(m.cnn_forward(&w).is_err());
    }

    #[test]
    fn zero_final_layer_gives_uniform_softmax() {
        let mut m = small_cnn();
        let n = m.head_params().len();
        for p in m.head_params_mut().into_iter().skip(n - 2) {
            p.value.fill(0.0);
        }
        let logits = m.classifier_forward(&vec![0.0; m.embedding_dim()]).unwrap();
        assert_eq!(logits.0.len(), 32);
        for p in logits.softmax() {
            assert!((p - 1.0 / 32.0).abs() < 1e-12);
        }
    }

    #[test]
    fn predict_phone_conventions() {
        let mut one_hot = vec![0.0; 32];
        one_hot[0] = 10.0;
        assert_eq!(predict_phone(&one_hot).unwrap(), 0);
        let mut tie = vec![0.0; 32];
        tie[4] = 3.0;
        tie[9] = 3.0;
        assert_eq!(predict_phone(&tie).unwrap(), 4);
        tie[2] = f64::NAN;
        assert!(predict_phone(&tie).is_err());
    }

    #[test]
    fn frozen_ssl_embedding_ignores_cnn_seed() {
        let handle = SslBackendHandle {
            backend_id: "reference:probe".into(),
            hidden_layers: 6,
            trainable: false,
            embedding_dim: 4,
            layer_index: None,
            weights: None,
        };
        let a = PhoneClassifier::new(ModelConfig::ssl(handle.clone(), 1)).unwrap();
        let b = PhoneClassifier::new(ModelConfig::ssl(handle, 2)).unwrap();
        let w = WaveformWindow {
            samples: (0..2032).map(|i| (i as f32 * 0.05).sin()).collect(),
            center_s: 0.5,
        };
        assert_eq!(a.ssl_forward(&w).unwrap(), b.ssl_forward(&w).unwrap());
        assert_eq!(a.embedding_dim(), 24);
        assert!(!a.encoder_trainable());
    }

    #[test]
    fn snapshot_restore_round_trip() {
        let mut m = small_cnn();
        let snap = m.snapshot();
        for p in m.params_mut() {
            p.value.fill(0.5);
        }
        m.restore(&snap).unwrap();
        assert_eq!(m.snapshot(), snap);
    }

    proptest! {
        #[test]
        fn argmax_of_logits_is_argmax_of_softmax(v in prop::collection::vec(-50.0f64..50.0, 32)) {
            let probs = Logits(v.clone()).softmax();
            prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert_eq!(predict_phone(&v).unwrap(), predict_phone(&probs).unwrap());
        }

        #[test]
        fn softmax_is_shift_invariant(v in prop::collection::vec(-20.0f64..20.0, 32), c in -100.0f64..100.0) {
            let a = Logits(v.clone()).softmax();
            let b = Logits(v.iter().map(|x| x + c).collect()).softmax();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
