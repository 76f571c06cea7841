use super::{FrameRecord, UtteranceRecord};

/// Frame spacing shared by the alignment grid and the filterbank hop.
pub const DEFAULT_HOP_S: f64 = 0.010;

const NANOS: f64 = 1e9;

fn to_ns(t: f64) -> i64 {
    (t * NANOS).round() as i64
}

/// Frames on the default 10 ms grid.
pub fn extract_frames(utterance: &UtteranceRecord) -> Vec<FrameRecord> {
    extract_frames_with_hop(utterance, DEFAULT_HOP_S)
}

/// Lays a grid of centers spaced `hop_s` apart, starting at the first
/// segment's start, and labels every center that falls inside a segment.
///
/// Segments are half-open `[start, end)`, so a center on a boundary belongs
/// to the later segment. Times are compared on an integer nanosecond grid.
pub fn extract_frames_with_hop(utterance: &UtteranceRecord, hop_s: f64) -> Vec<FrameRecord> {
    assert!(hop_s > 0.0, "hop must be positive");
    let Some(first) = utterance.segments.first() else {
        return Vec::new();
    };
    let hop = to_ns(hop_s).max(1);
    let anchor = to_ns(first.start_s);

    let mut frames = Vec::new();
    let mut k: i64 = 0;
    for seg in &utterance.segments {
        let (start, end) = (to_ns(seg.start_s), to_ns(seg.end_s));
        // first grid point at or after the segment start
        if anchor + k * hop < start {
            k = (start - anchor + hop - 1) / hop;
        }
        while anchor + k * hop < end {
            let center = anchor + k * hop;
            frames.push(FrameRecord {
                corpus_tag: utterance.corpus_tag.clone(),
                utterance_id: utterance.utterance_id.clone(),
                center_s: center as f64 / NANOS,
                label: seg.label,
                speaker_id: utterance.speaker_id.clone(),
                gender: utterance.gender,
            });
            k += 1;
        }
    }
    frames
}
