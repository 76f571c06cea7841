use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{class_histogram, CorpusError, FrameRecord};

/// Audio span each frame record stands for on the SSL path (~127 ms).
pub const FRAME_LENGTH_S: f64 = 0.127;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Usage {
    Train,
    Validation,
    Test,
}

/// Frame and duration bookkeeping for one dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub corpus_tag: String,
    pub usage: Usage,
    pub frame_count: usize,
    pub frame_length_s: f64,
    /// `frame_count × frame_length_s / 3600`; overlapping frames are counted
    /// in full, so this exceeds the summed recording length.
    pub duration_hours: f64,
    pub class_counts: Vec<usize>,
    /// Seed of the balancing/split run that produced the file, if any.
    pub seed: Option<u64>,
}

impl CorpusManifest {
    pub fn describe(
        corpus_tag: &str,
        usage: Usage,
        frames: &[FrameRecord],
        num_classes: usize,
        seed: Option<u64>,
    ) -> Self {
        Self {
            corpus_tag: corpus_tag.to_string(),
            usage,
            frame_count: frames.len(),
            frame_length_s: FRAME_LENGTH_S,
            duration_hours: hours_for(frames.len(), FRAME_LENGTH_S),
            class_counts: class_histogram(frames, num_classes),
            seed,
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), CorpusError> {
        let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
        serde_json::to_writer_pretty(BufWriter::new(file), self).map_err(|source| {
            CorpusError::Json {
                path: path.display().to_string(),
                source,
            }
        })
    }

    pub fn read(path: &Path) -> Result<Self, CorpusError> {
        let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
        serde_json::from_reader(BufReader::new(file)).map_err(|source| CorpusError::Json {
            path: path.display().to_string(),
            source,
        })
    }
}

pub(crate) fn hours_for(frame_count: usize, frame_length_s: f64) -> f64 {
    frame_count as f64 * frame_length_s / 3600.0
}

/// Writes frames as JSON lines.
pub fn write_frames(path: &Path, frames: &[FrameRecord]) -> Result<(), CorpusError> {
    let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
    let mut out = BufWriter::new(file);
    for f in frames {
        serde_json::to_writer(&mut out, f).map_err(|source| CorpusError::Json {
            path: path.display().to_string(),
            source,
        })?;
        out.write_all(b"\n").map_err(|e| CorpusError::io(path, e))?;
    }
    out.flush().map_err(|e| CorpusError::io(path, e))
}

pub fn read_frames(path: &Path) -> Result<Vec<FrameRecord>, CorpusError> {
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let mut frames = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CorpusError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let frame = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        frames.push(frame);
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Gender;

    #[test]
    fn hours_follow_frame_accounting() {
        // BREF: 3,118k frames, reported as 110 h
        assert!((hours_for(3_118_000, FRAME_LENGTH_S) - 110.0).abs() < 0.5);
        // Common Phone: 236k frames, 8.3 h
        assert!((hours_for(236_000, FRAME_LENGTH_S) - 8.3).abs() < 0.05);
        // BREF-Int: 85k frames, 3 h
        assert!((hours_for(85_000, FRAME_LENGTH_S) - 3.0).abs() < 0.05);
        // C2SI-LEC: 43k frames, 1.5 h
        assert!((hours_for(43_000, FRAME_LENGTH_S) - 1.5).abs() < 0.05);
    }

    #[test]
    fn frames_round_trip_through_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frames.jsonl");
        let frames = vec![FrameRecord {
            corpus_tag: "c".into(),
            utterance_id: "u1".into(),
            center_s: 0.123456789,
            label: 4,
            speaker_id: "s".into(),
            gender: Gender::Male,
        }];
        write_frames(&path, &frames).unwrap();
        assert_eq!(read_frames(&path).unwrap(), frames);

        let manifest = CorpusManifest::describe("c", Usage::Train, &frames, 32, Some(9));
        let mpath = dir.path().join("m.json");
        manifest.write(&mpath).unwrap();
        assert_eq!(CorpusManifest::read(&mpath).unwrap(), manifest);
        assert_eq!(manifest.class_counts[4], 1);
    }
}
