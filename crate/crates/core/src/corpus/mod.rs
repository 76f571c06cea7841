//! Corpus ingestion: aligned utterances to labeled frames, phone/gender
//! balancing and phone-balanced train/validation splits.

mod alignment;
mod balance;
mod frames;
mod manifest;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use alignment::{parse_alignment_file, parse_alignments};
pub use balance::{balance, class_histogram, split_train_validation, BalancingPolicy};
pub use frames::{extract_frames, extract_frames_with_hop, DEFAULT_HOP_S};
pub use manifest::{read_frames, write_frames, CorpusManifest, Usage, FRAME_LENGTH_S};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("utterance {utterance_id}: {message}")]
    Alignment {
        utterance_id: String,
        message: String,
    },
    #[error("utterance {utterance_id}: unknown phone symbol {symbol:?}")]
    UnknownPhone {
        utterance_id: String,
        symbol: String,
    },
    #[error("balancing: {0}")]
    Balancing(String),
    #[error("split: {0}")]
    Split(String),
    #[error("{path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
}

impl CorpusError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.into().display().to_string(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Gender {
    #[serde(rename = "F")]
    Female,
    #[serde(rename = "M")]
    Male,
    #[serde(rename = "unknown")]
    Unknown,
}

impl FromStr for Gender {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "f" | "female" | "w" => Gender::Female,
            "m" | "male" => Gender::Male,
            _ => Gender::Unknown,
        })
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::Female => "F",
            Gender::Male => "M",
            Gender::Unknown => "unknown",
        })
    }
}

/// One aligned phone segment, already folded onto the inventory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentSegment {
    pub start_s: f64,
    pub end_s: f64,
    /// Inventory symbol after archi-phone merging.
    pub phone: String,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub utterance_id: String,
    pub audio_path: PathBuf,
    pub speaker_id: String,
    pub gender: Gender,
    pub corpus_tag: String,
    pub segments: Vec<AlignmentSegment>,
}

/// A labeled classification instance centred on `center_s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub corpus_tag: String,
    pub utterance_id: String,
    pub center_s: f64,
    pub label: usize,
    pub speaker_id: String,
    pub gender: Gender,
}

impl FrameRecord {
    /// Stable ordering key used wherever output order must be deterministic.
    pub fn sort_key(&self) -> (&str, &str, u64) {
        (
            &self.corpus_tag,
            &self.utterance_id,
            self.center_s.to_bits(),
        )
    }
}

pub(crate) fn sort_frames(frames: &mut [FrameRecord]) {
    frames.sort_by(|a, b| {
        a.corpus_tag
            .cmp(&b.corpus_tag)
            .then_with(|| a.utterance_id.cmp(&b.utterance_id))
            .then_with(|| a.center_s.total_cmp(&b.center_s))
            .then_with(|| a.label.cmp(&b.label))
            .then_with(|| a.speaker_id.cmp(&b.speaker_id))
    });
}
