//! On-disk feature cache.
//!
//! Layout: `b"PHFC"`, `u32` version, `u64` header length, JSON header, then
//! `count` records of `u16` id length, utterance id bytes, `f64` center
//! seconds and `record_len` little-endian `f32` values.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FeatureError, MelConfig};

const MAGIC: &[u8; 4] = b"PHFC";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CacheKind {
    /// Flattened `context_frames × 3·n_mels` windows.
    Context,
    /// Raw waveform slices.
    Waveform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureCacheHeader {
    pub kind: CacheKind,
    pub mel_config: MelConfig,
    pub record_len: usize,
}

#[derive(Debug, Clone)]
pub struct FeatureCache {
    header: FeatureCacheHeader,
    order: Vec<(String, u64)>,
    entries: HashMap<(String, u64), Vec<f32>>,
}

impl FeatureCache {
    pub fn new(header: FeatureCacheHeader) -> Self {
        Self {
            header,
            order: Vec::new(),
            entries: HashMap::new(),
        }
    }

    pub fn header(&self) -> &FeatureCacheHeader {
        &self.header
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn insert(&mut self, utterance_id: &str, center_s: f64, values: Vec<f32>) {
        assert_eq!(values.len(), self.header.record_len, "record length mismatch");
        let key = (utterance_id.to_string(), center_s.to_bits());
        if self.entries.insert(key.clone(), values).is_none() {
            self.order.push(key);
        }
    }

    pub fn get(&self, utterance_id: &str, center_s: f64) -> Option<&[f32]> {
        self.entries
            .get(&(utterance_id.to_string(), center_s.to_bits()))
            .map(Vec::as_slice)
    }

    pub fn write(&self, path: &Path) -> Result<(), FeatureError> {
        let err = |e: std::io::Error| cache_err(path, e.to_string());
        let mut out = BufWriter::new(File::create(path).map_err(err)?);
        let header = serde_json::to_vec(&self.header).map_err(|e| cache_err(path, e.to_string()))?;
        out.write_all(MAGIC).map_err(err)?;
        out.write_all(&VERSION.to_le_bytes()).map_err(err)?;
        out.write_all(&(header.len() as u64).to_le_bytes()).map_err(err)?;
        out.write_all(&header).map_err(err)?;
        out.write_all(&(self.order.len() as u64).to_le_bytes()).map_err(err)?;
        for key in &self.order {
            let id = key.0.as_bytes();
            let id_len = u16::try_from(id.len()).map_err(|_| cache_err(path, "utterance id too long".into()))?;
            out.write_all(&id_len.to_le_bytes()).map_err(err)?;
            out.write_all(id).map_err(err)?;
            out.write_all(&key.1.to_le_bytes()).map_err(err)?;
            for v in &self.entries[key] {
                out.write_all(&v.to_le_bytes()).map_err(err)?;
            }
        }
        out.flush().map_err(err)
    }

    pub fn read(path: &Path) -> Result<Self, FeatureError> {
        let err = |e: std::io::Error| cache_err(path, e.to_string());
        let mut input = BufReader::new(File::open(path).map_err(err)?);
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic).map_err(err)?;
        if &magic != MAGIC {
            return Err(cache_err(path, "bad magic".into()));
        }
        let version = u32::from_le_bytes(read_array(&mut input).map_err(err)?);
        if version != VERSION {
            return Err(cache_err(path, format!("unsupported version {version}")));
        }
        let header_len = u64::from_le_bytes(read_array(&mut input).map_err(err)?) as usize;
        let mut header = vec![0u8; header_len];
        input.read_exact(&mut header).map_err(err)?;
        let header: FeatureCacheHeader =
            serde_json::from_slice(&header).map_err(|e| cache_err(path, e.to_string()))?;
        let count = u64::from_le_bytes(read_array(&mut input).map_err(err)?) as usize;

        let mut cache = Self::new(header);
        let mut buf = vec![0u8; 4 * cache.header.record_len];
        for _ in 0..count {
            let id_len = u16::from_le_bytes(read_array(&mut input).map_err(err)?) as usize;
            let mut id = vec![0u8; id_len];
            input.read_exact(&mut id).map_err(err)?;
            let id = String::from_utf8(id).map_err(|e| cache_err(path, e.to_string()))?;
            let center = f64::from_bits(u64::from_le_bytes(read_array(&mut input).map_err(err)?));
            input.read_exact(&mut buf).map_err(err)?;
            let values = buf
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            cache.insert(&id, center, values);
        }
        Ok(cache)
    }

    /// Loads the cache only if it was built with exactly `expected` settings.
    pub fn read_if_valid(path: &Path, expected: &FeatureCacheHeader) -> Option<Self> {
        Self::read(path).ok().filter(|c| &c.header == expected)
    }
}

fn read_array<const N: usize>(r: &mut impl Read) -> std::io::Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn cache_err(path: &Path, message: String) -> FeatureError {
    FeatureError::Cache {
        path: path.display().to_string(),
        message,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> FeatureCacheHeader {
        FeatureCacheHeader {
            kind: CacheKind::Context,
            mel_config: MelConfig::default(),
            record_len: 4,
        }
    }

    #[test]
    fn round_trip_and_lookup() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.feat");
        let mut cache = FeatureCache::new(header());
        cache.insert("utt-é", 0.125, vec![1.0, -2.0, 3.5, 0.0]);
        cache.insert("utt-2", 0.01, vec![0.5; 4]);
        cache.write(&path).unwrap();

        let back = FeatureCache::read(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.get("utt-é", 0.125), Some(&[1.0, -2.0, 3.5, 0.0][..]));
        assert!(back.get("utt-é", 0.126).is_none());
    }

    #[test]
    fn changed_config_invalidates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.feat");
        FeatureCache::new(header()).write(&path).unwrap();
        assert!(FeatureCache::read_if_valid(&path, &header()).is_some());
        let mut other = header();
        other.mel_config.n_mels = 80;
        assert!(FeatureCache::read_if_valid(&path, &other).is_none());
    }
}
