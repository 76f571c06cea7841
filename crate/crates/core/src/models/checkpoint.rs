//! Parameter files and model checkpoints.
//!
//! Both share one layout: 4-byte magic, `u32` version, `u64` header length,
//! a JSON header carrying tensor shapes, then every tensor as little-endian
//! `f64` in order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use super::{BackendRegistry, ModelConfig, ModelError, PhoneClassifier};

const PARAMS_MAGIC: &[u8; 4] = b"PHPM";
const CHECKPOINT_MAGIC: &[u8; 4] = b"PHCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model_config: ModelConfig,
    /// Content hash of the inventory the model was trained against.
    pub inventory_hash: String,
    #[serde(default)]
    pub epoch: Option<usize>,
    /// Free-form metadata (training config, validation scores).
    #[serde(default)]
    pub extra: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Envelope<H> {
    #[serde(flatten)]
    header: H,
    shapes: Vec<Vec<usize>>,
}

fn ck_err(path: &Path, message: impl ToString) -> ModelError {
    ModelError::Checkpoint {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

fn write_file<H: Serialize>(path: &Path, magic: &[u8; 4], header: H, tensors: &[&ArrayD<f64>]) -> Result<(), ModelError> {
    let envelope = Envelope {
        header,
        shapes: tensors.iter().map(|t| t.shape().to_vec()).collect(),
    };
    let json = serde_json::to_vec(&envelope).map_err(|e| ck_err(path, e))?;
    let file = File::create(path).map_err(|e| ck_err(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e: std::io::Error| ck_err(path, e);
    w.write_all(magic).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(json.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&json).map_err(io)?;
    for t in tensors {
        for v in t.iter() {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

fn read_file<H: for<'de> Deserialize<'de>>(path: &Path, magic: &[u8; 4]) -> Result<(H, Vec<ArrayD<f64>>), ModelError> {
    let file = File::open(path).map_err(|e| ck_err(path, e))?;
    let mut r = BufReader::new(file);
    let io = |e: std::io::Error| ck_err(path, format!("truncated or unreadable: {e}"));
    let mut m = [0u8; 4];
    r.read_exact(&mut m).map_err(io)?;
    if &m != magic {
        return Err(ck_err(path, "bad magic"));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4).map_err(io)?;
    let version = u32::from_le_bytes(b4);
    if version != VERSION {
        return Err(ck_err(path, format!("unsupported version {version}")));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8).map_err(io)?;
    let mut json = vec![0u8; u64::from_le_bytes(b8) as usize];
    r.read_exact(&mut json).map_err(io)?;
    let envelope: Envelope<H> = serde_json::from_slice(&json).map_err(|e| ck_err(path, e))?;
    let mut tensors = Vec::with_capacity(envelope.shapes.len());
    for shape in &envelope.shapes {
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 8];
        r.read_exact(&mut bytes).map_err(io)?;
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.push(ArrayD::from_shape_vec(IxDyn(shape), values).expect("shape matches length"));
    }
    if r.read(&mut [0u8; 1]).map_err(io)? != 0 {
        return Err(ck_err(path, "trailing bytes"));
    }
    Ok((envelope.header, tensors))
}

/// Writes bare tensors, e.g. backend weights.
pub fn write_params(path: &Path, tensors: &[&ArrayD<f64>]) -> Result<(), ModelError> {
    write_file(path, PARAMS_MAGIC, serde_json::json!({}), tensors)
}

pub fn read_params(path: &Path) -> Result<Vec<ArrayD<f64>>, ModelError> {
    read_file::<serde_json::Value>(path, PARAMS_MAGIC).map(|(_, t)| t)
}

pub fn save_checkpoint(path: &Path, model: &PhoneClassifier, header: &CheckpointHeader) -> Result<(), ModelError> {
    if &header.model_config != model.config() {
        return Err(ck_err(path, "header config does not describe the model"));
    }
    let params = model.params();
    let tensors: Vec<&ArrayD<f64>> = params.iter().map(|p| &p.value).collect();
    write_file(path, CHECKPOINT_MAGIC, header, &tensors)
}

/// Rebuilds the model from its embedded config and loads the weights.
pub fn load_checkpoint(path: &Path) -> Result<(PhoneClassifier, CheckpointHeader), ModelError> {
    load_checkpoint_with(path, &BackendRegistry::default())
}

/// [`load_checkpoint`] resolving SSL backends through `registry`.
pub fn load_checkpoint_with(
    path: &Path,
    registry: &BackendRegistry,
) -> Result<(PhoneClassifier, CheckpointHeader), ModelError> {
    let (header, tensors): (CheckpointHeader, _) = read_file(path, CHECKPOINT_MAGIC)?;
    let mut model = PhoneClassifier::with_registry(header.model_config.clone(), registry)?;
    model.restore(&tensors).map_err(|e| ck_err(path, e))?;
    Ok((model, header))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::CnnEncoderConfig;
    use ndarray::Array2;

    #[test]
    fn checkpoint_round_trip_reproduces_logits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut model = PhoneClassifier::new(ModelConfig::cnn(CnnEncoderConfig::with_channels(2, 2), 3)).unwrap();
        for p in model.params_mut() {
            p.value.mapv_inplace(|v| v * 1.5 + 0.01);
        }
        let header = CheckpointHeader {
            model_config: model.config().clone(),
            inventory_hash: "abc".into(),
            epoch: Some(4),
            extra: serde_json::json!({"per": 0.5}),
        };
        save_checkpoint(&path, &model, &header).unwrap();
        let (loaded, h) = load_checkpoint(&path).unwrap();
        assert_eq!(h, header);
        let x = Array2::from_shape_fn((2, 1320), |(i, j)| ((i + j) % 5) as f64);
        assert_eq!(loaded.logits(&x).unwrap(), model.logits(&x).unwrap());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"PHCKxxxx").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(ModelError::Checkpoint { .. })));
        let params = dir.path().join("p.bin");
        let t = ArrayD::from_elem(IxDyn(&[2, 3]), 1.25);
        write_params(&params, &[&t]).unwrap();
        assert_eq!(read_params(&params).unwrap(), vec![t]);
        assert!(load_checkpoint(&params).is_err());
    }
}
