//! Line-delimited JSON annotations, one video/query pair per line.
//!
//! ```text
//! {"video_id": "v1", "fps": 1.0, "num_frames": 10, "query": "door",
//!  "events": [[2.0, 5.0]], "captions": ["person opens door"]}
//! ```
//!
//! Event times are seconds. Frame `t` covers `[(t-1)/fps, t/fps)`, so an
//! event `[s, e)` maps to frames `floor(s*fps)+1 ..= min(ceil(e*fps), T)`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, RecordError, Result};
use crate::temporal::{segment_to_seconds, EventAnnotation, Segment};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    video_id: String,
    fps: f64,
    num_frames: usize,
    query: String,
    events: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    captions: Option<Vec<String>>,
}

/// One validated annotation line.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRecord {
    pub video_id: String,
    pub fps: f64,
    pub num_frames: usize,
    pub annotation: EventAnnotation,
}

/// Converts a `[start, end)` span in seconds to an inclusive frame segment.
pub fn seconds_to_segment(start: f64, end: f64, fps: f64, num_frames: usize) -> Result<Segment> {
    if !start.is_finite() || !end.is_finite() {
        return Err(Error::invalid("event times must be finite"));
    }
    if end <= start {
        return Err(Error::invalid("empty event"));
    }
    if start < 0.0 {
        return Err(Error::invalid(format!("event starts before 0 s ({start})")));
    }
    let first = (start * fps).floor() as usize + 1;
    let last = ((end * fps).ceil() as usize).min(num_frames);
    if first > num_frames {
        return Err(Error::invalid(format!(
            "event starting at {start} s is beyond frame {num_frames}"
        )));
    }
    if last < first {
        return Err(Error::invalid(format!(
            "event [{start}, {end}) covers no frame"
        )));
    }
    Segment::new(first, last)
}

fn convert(raw: RawRecord) -> Result<AnnotationRecord> {
    if !(raw.fps > 0.0) || !raw.fps.is_finite() {
        return Err(Error::invalid(format!(
            "fps must be positive, got {}",
            raw.fps
        )));
    }
    if raw.num_frames == 0 {
        return Err(Error::invalid("num_frames must be positive"));
    }
    let events = raw
        .events
        .iter()
        .map(|&[s, e]| seconds_to_segment(s, e, raw.fps, raw.num_frames))
        .collect::<Result<Vec<_>>>()?;
    Ok(AnnotationRecord {
        video_id: raw.video_id,
        fps: raw.fps,
        num_frames: raw.num_frames,
        annotation: EventAnnotation::new(raw.query, events, raw.captions)?,
    })
}

fn reason(e: Error) -> String {
    match e {
        Error::InvalidInput(m) => m,
        other => other.to_string(),
    }
}

/// Parses annotation text. Blank lines are skipped; every invalid line is
/// reported with its 1-based line number.
pub fn parse_annotations(text: &str) -> Result<Vec<AnnotationRecord>> {
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<RawRecord>(line)
            .map_err(|e| Error::invalid(e.to_string()))
            .and_then(convert);
        match parsed {
            Ok(r) => records.push(r),
            Err(e) => errors.push(RecordError {
                line: i + 1,
                reason: reason(e),
            }),
        }
    }
    if errors.is_empty() {
        Ok(records)
    } else {
        Err(Error::Records(errors))
    }
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<Vec<AnnotationRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text)
}

/// Serializes one record as a single line, events in seconds.
pub fn annotation_line(record: &AnnotationRecord) -> Result<String> {
    let events = record
        .annotation
        .events()
        .iter()
        .map(|&s| segment_to_seconds(s, record.fps).map(|iv| [iv.start, iv.end]))
        .collect::<Result<Vec<_>>>()?;
    let raw = RawRecord {
        video_id: record.video_id.clone(),
        fps: record.fps,
        num_frames: record.num_frames,
        query: record.annotation.query.clone(),
        events,
        captions: record.annotation.captions().map(<[String]>::to_vec),
    };
    serde_json::to_string(&raw).map_err(|e| Error::Serde(e.to_string()))
}
