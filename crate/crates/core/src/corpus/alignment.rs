use std::fs::File;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{AlignmentSegment, CorpusError, Gender, UtteranceRecord};
use crate::inventory::PhoneInventory;

#[derive(Debug, Deserialize)]
struct ManifestRow {
    utterance_id: String,
    audio_path: String,
    speaker_id: String,
    gender: String,
    corpus_tag: String,
    alignment_path: String,
}

/// Reads an alignment manifest CSV and every alignment file it references.
///
/// Relative `audio_path`/`alignment_path` entries resolve against the
/// manifest's directory. Utterances come back sorted by `utterance_id`.
pub fn parse_alignments(
    manifest_path: impl AsRef<Path>,
    inventory: &PhoneInventory,
) -> Result<Vec<UtteranceRecord>, CorpusError> {
    let manifest_path = manifest_path.as_ref();
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let file = File::open(manifest_path).map_err(|e| CorpusError::io(manifest_path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);

    let mut utterances = Vec::new();
    for (i, row) in reader.deserialize::<ManifestRow>().enumerate() {
        let row = row.map_err(|e| CorpusError::Parse {
            path: manifest_path.display().to_string(),
            line: i + 2,
            message: e.to_string(),
        })?;
        if row.speaker_id.is_empty() {
            return Err(CorpusError::Alignment {
                utterance_id: row.utterance_id,
                message: "empty speaker_id".into(),
            });
        }
        let alignment_path = resolve(base, &row.alignment_path);
        let segments = parse_alignment_file(&alignment_path, &row.utterance_id, inventory)?;
        utterances.push(UtteranceRecord {
            utterance_id: row.utterance_id,
            audio_path: resolve(base, &row.audio_path),
            speaker_id: row.speaker_id,
            gender: row.gender.parse().unwrap_or(Gender::Unknown),
            corpus_tag: row.corpus_tag,
            segments,
        });
    }
    utterances.sort_by(|a, b| a.utterance_id.cmp(&b.utterance_id));
    for pair in utterances.windows(2) {
        if pair[0].utterance_id == pair[1].utterance_id {
            return Err(CorpusError::Alignment {
                utterance_id: pair[0].utterance_id.clone(),
                message: "listed twice in manifest".into(),
            });
        }
    }
    Ok(utterances)
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Parses one `start_s,end_s,phone` file. A leading header row is skipped.
pub fn parse_alignment_file(
    path: &Path,
    utterance_id: &str,
    inventory: &PhoneInventory,
) -> Result<Vec<AlignmentSegment>, CorpusError> {
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    parse_alignment_reader(file, &path.display().to_string(), utterance_id, inventory)
}

pub(crate) fn parse_alignment_reader<R: std::io::Read>(
    reader: R,
    source_name: &str,
    utterance_id: &str,
    inventory: &PhoneInventory,
) -> Result<Vec<AlignmentSegment>, CorpusError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);

    let mut segments = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 1;
        let parse_error = |message: String| CorpusError::Parse {
            path: source_name.to_string(),
            line,
            message,
        };
        let record = record.map_err(|e| parse_error(e.to_string()))?;
        if record.len() != 3 {
            return Err(parse_error(format!("expected 3 fields, found {}", record.len())));
        }
        if i == 0 && &record[0] == "start_s" {
            continue;
        }
        let start_s: f64 = record[0]
            .parse()
            .map_err(|_| parse_error(format!("bad start time {:?}", &record[0])))?;
        let end_s: f64 = record[1]
            .parse()
            .map_err(|_| parse_error(format!("bad end time {:?}", &record[1])))?;
        if !(start_s.is_finite() && end_s.is_finite()) || start_s < 0.0 || end_s <= start_s {
            return Err(CorpusError::Alignment {
                utterance_id: utterance_id.to_string(),
                message: format!("invalid segment [{start_s}, {end_s}) at line {line}"),
            });
        }
        let raw = &record[2];
        let label = inventory
            .lookup(raw)
            .ok_or_else(|| CorpusError::UnknownPhone {
                utterance_id: utterance_id.to_string(),
                symbol: raw.to_string(),
            })?;
        segments.push(AlignmentSegment {
            start_s,
            end_s,
            phone: inventory.merge(raw).to_string(),
            label,
        });
    }

    segments.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    for pair in segments.windows(2) {
        if pair[1].start_s < pair[0].end_s {
            return Err(CorpusError::Alignment {
                utterance_id: utterance_id.to_string(),
                message: format!(
                    "overlapping segments [{}, {}) and [{}, {})",
                    pair[0].start_s, pair[0].end_s, pair[1].start_s, pair[1].end_s
                ),
            });
        }
    }
    Ok(segments)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Vec<AlignmentSegment>, CorpusError> {
        parse_alignment_reader(text.as_bytes(), "mem", "utt1", &PhoneInventory::french())
    }

    #[test]
    fn three_segments_in_order() {
        let segs = parse("start_s,end_s,phone\n0.0,0.1,sil\n0.1,0.25,a\n0.25,0.3,t\n").unwrap();
        assert_eq!(segs.len(), 3);
        assert_eq!(segs[1].phone, "a");
        assert!(segs.windows(2).all(|w| w[0].end_s <= w[1].start_s));
    }

    #[test]
    fn unordered_rows_are_sorted() {
        let segs = parse("0.1,0.2,a\n0.0,0.1,t\n").unwrap();
        assert_eq!(segs[0].phone, "t");
    }

    #[test]
    fn end_before_start_rejected() {
        assert!(matches!(
            parse("0.2,0.1,a\n"),
            Err(CorpusError::Alignment { .. })
        ));
    }

    #[test]
    fn overlap_rejected_with_utterance() {
        match parse("0.0,0.2,a\n0.1,0.3,t\n") {
            Err(CorpusError::Alignment { utterance_id, .. }) => assert_eq!(utterance_id, "utt1"),
            other => panic!("expected alignment error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_phone_rejected() {
        assert!(matches!(
            parse("0.0,0.2,ŋ\n"),
            Err(CorpusError::UnknownPhone { .. })
        ));
    }

    #[test]
    fn raw_symbol_is_merged() {
        let inv = PhoneInventory::french();
        let segs = parse("0.0,0.2,ɛ\n").unwrap();
        assert_eq!(segs[0].phone, "Ê");
        assert_eq!(segs[0].label, inv.lookup("Ê").unwrap());
    }
}
