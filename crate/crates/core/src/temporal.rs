//! Segment algebra shared by every other module.
//!
//! Frames are addressed with 1-based inclusive indices, so a `T`-frame video
//! spans `1..=T`. Real-valued time lives in [`Interval`], a half-open span in
//! seconds (or any other common unit).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inclusive range of 1-based frame indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "(usize, usize)", into = "(usize, usize)")]
pub struct Segment {
    start: usize,
    end: usize,
}

impl Segment {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if start == 0 {
            return Err(Error::invalid(format!(
                "segment start must be >= 1 (frames are 1-based), got ({start}, {end})"
            )));
        }
        if end < start {
            return Err(Error::invalid(format!(
                "segment end precedes start: ({start}, {end})"
            )));
        }
        Ok(Self { start, end })
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn end(&self) -> usize {
        self.end
    }

    /// Number of frames covered, `end - start + 1`.
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, frame: usize) -> bool {
        self.start <= frame && frame <= self.end
    }

    /// Zero-based frame range, convenient for slicing per-frame arrays.
    pub fn zero_based(&self) -> std::ops::Range<usize> {
        self.start - 1..self.end
    }
}

impl TryFrom<(usize, usize)> for Segment {
    type Error = Error;

    fn try_from((start, end): (usize, usize)) -> Result<Self> {
        Segment::new(start, end)
    }
}

impl From<Segment> for (usize, usize) {
    fn from(s: Segment) -> Self {
        (s.start, s.end)
    }
}

impl fmt::Display for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.start, self.end)
    }
}

/// Half-open real interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

impl Interval {
    pub fn new(start: f64, end: f64) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> f64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        !(self.end > self.start)
    }
}

/// A single broken rule reported by [`validate_partition`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PartitionViolation {
    NoFrames,
    NoSegments,
    /// The first segment does not begin at frame 1.
    FirstStart {
        start: usize,
    },
    /// The last segment does not end at frame `T`.
    LastEnd {
        end: usize,
        total_frames: usize,
    },
    /// Frames are missing between segment `index` and `index + 1` (0-based).
    Gap {
        index: usize,
    },
    /// Segment `index + 1` starts before segment `index` has ended.
    Overlap {
        index: usize,
    },
}

impl fmt::Display for PartitionViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Reported indices are 1-based to match frame numbering.
        match self {
            PartitionViolation::NoFrames => write!(f, "video has zero frames"),
            PartitionViolation::NoSegments => write!(f, "partition has no segments"),
            PartitionViolation::FirstStart { start } => {
                write!(f, "first segment must start at 1, starts at {start}")
            }
            PartitionViolation::LastEnd { end, total_frames } => write!(
                f,
                "last segment must end at T={total_frames}, ends at {end}"
            ),
            PartitionViolation::Gap { index } => {
                write!(f, "gap between index {} and {}", index + 1, index + 2)
            }
            PartitionViolation::Overlap { index } => {
                write!(f, "overlap between index {} and {}", index + 1, index + 2)
            }
        }
    }
}

/// Checks that `segments` tile `1..=total_frames` exactly, in order.
pub fn validate_partition(
    segments: &[Segment],
    total_frames: usize,
) -> std::result::Result<(), Vec<PartitionViolation>> {
    let mut violations = Vec::new();
    if total_frames == 0 {
        violations.push(PartitionViolation::NoFrames);
    }
    match (segments.first(), segments.last()) {
        (Some(first), Some(last)) => {
            if first.start != 1 {
                violations.push(PartitionViolation::FirstStart { start: first.start });
            }
            if last.end != total_frames {
                violations.push(PartitionViolation::LastEnd {
                    end: last.end,
                    total_frames,
                });
            }
        }
        _ => violations.push(PartitionViolation::NoSegments),
    }
    for (index, pair) in segments.windows(2).enumerate() {
        let next_expected = pair[0].end + 1;
        if pair[1].start > next_expected {
            violations.push(PartitionViolation::Gap { index });
        } else if pair[1].start < next_expected {
            violations.push(PartitionViolation::Overlap { index });
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

/// Ordered segments that cover a video without gaps or overlaps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SegmentPartition {
    segments: Vec<Segment>,
    total_frames: usize,
}

impl SegmentPartition {
    pub fn new(segments: Vec<Segment>, total_frames: usize) -> Result<Self> {
        validate_partition(&segments, total_frames).map_err(|v| {
            let msgs: Vec<String> = v.iter().map(ToString::to_string).collect();
            Error::invalid(format!("invalid partition: {}", msgs.join("; ")))
        })?;
        Ok(Self {
            segments,
            total_frames,
        })
    }

    /// The trivial partition: one segment spanning the whole video.
    pub fn whole(total_frames: usize) -> Result<Self> {
        Self::new(vec![Segment::new(1, total_frames.max(1))?], total_frames)
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn total_frames(&self) -> usize {
        self.total_frames
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// `(1/M') * sum_i ln(len_i)`, the infimum of the grounding loss.
    pub fn loss_lower_bound(&self) -> f64 {
        let m = self.segments.len() as f64;
        self.segments
            .iter()
            .map(|s| (s.len() as f64).ln())
            .sum::<f64>()
            / m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenKind {
    Event,
    Transition,
}

impl TokenKind {
    pub fn symbol(self) -> &'static str {
        match self {
            TokenKind::Event => "<ent>",
            TokenKind::Transition => "<tst>",
        }
    }
}

/// One structural token per partition segment, in temporal order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuralTokenSeq {
    labels: Vec<TokenKind>,
}

impl StructuralTokenSeq {
    pub fn new(labels: Vec<TokenKind>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::invalid("structural token sequence is empty"));
        }
        Ok(Self { labels })
    }

    pub fn labels(&self) -> &[TokenKind] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Zero-based positions of the event tokens.
    pub fn ent_indices(&self) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, k)| **k == TokenKind::Event)
            .map(|(i, _)| i)
            .collect()
    }

    /// Keeps only the event tokens.
    pub fn events_only(&self) -> Result<Self> {
        Self::new(vec![TokenKind::Event; self.ent_indices().len()])
    }
}

/// Queried events of one video. Events are sorted and strictly disjoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventAnnotation {
    pub query: String,
    events: Vec<Segment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    captions: Option<Vec<String>>,
}

impl EventAnnotation {
    pub fn new(
        query: impl Into<String>,
        events: Vec<Segment>,
        captions: Option<Vec<String>>,
    ) -> Result<Self> {
        check_events(&events)?;
        if let Some(caps) = &captions {
            if caps.len() != events.len() {
                return Err(Error::invalid(format!(
                    "{} captions for {} events",
                    caps.len(),
                    events.len()
                )));
            }
        }
        Ok(Self {
            query: query.into(),
            events,
            captions,
        })
    }

    pub fn events(&self) -> &[Segment] {
        &self.events
    }

    pub fn captions(&self) -> Option<&[String]> {
        self.captions.as_deref()
    }
}

fn check_events(events: &[Segment]) -> Result<()> {
    for (i, pair) in events.windows(2).enumerate() {
        if pair[1].start < pair[0].start {
            return Err(Error::invalid(format!(
                "events not sorted at index {}: {} after {}",
                i + 2,
                pair[1],
                pair[0]
            )));
        }
        if pair[1].start <= pair[0].end {
            return Err(Error::invalid(format!(
                "events overlap at index {}: {} and {}",
                i + 1,
                pair[0],
                pair[1]
            )));
        }
    }
    Ok(())
}

/// Fills the gaps around `events` with transition segments so the result
/// covers `1..=total_frames`. Touching events stay separate.
pub fn augment_with_transitions(
    events: &[Segment],
    total_frames: usize,
) -> Result<(SegmentPartition, StructuralTokenSeq)> {
    if total_frames == 0 {
        return Err(Error::invalid("video must have at least one frame"));
    }
    check_events(events)?;
    if let Some(last) = events.last() {
        if last.end > total_frames {
            return Err(Error::invalid(format!(
                "event {last} exceeds video length {total_frames}"
            )));
        }
    }

    let mut segments = Vec::with_capacity(2 * events.len() + 1);
    let mut labels = Vec::with_capacity(2 * events.len() + 1);
    let mut cursor = 1;
    for event in events {
        if event.start > cursor {
            segments.push(Segment::new(cursor, event.start - 1)?);
            labels.push(TokenKind::Transition);
        }
        segments.push(*event);
        labels.push(TokenKind::Event);
        cursor = event.end + 1;
    }
    if cursor <= total_frames {
        segments.push(Segment::new(cursor, total_frames)?);
        labels.push(TokenKind::Transition);
    }

    Ok((
        SegmentPartition::new(segments, total_frames)?,
        StructuralTokenSeq::new(labels)?,
    ))
}

/// Maximal runs of frames whose label equals `target`, as 1-based segments.
pub fn merge_consecutive<L: PartialEq>(frame_labels: &[L], target: &L) -> Vec<Segment> {
    let mut runs = Vec::new();
    let mut open: Option<usize> = None;
    for (i, label) in frame_labels.iter().enumerate() {
        match (label == target, open) {
            (true, None) => open = Some(i + 1),
            (false, Some(start)) => {
                runs.push(Segment { start, end: i });
                open = None;
            }
            _ => {}
        }
    }
    if let Some(start) = open {
        runs.push(Segment {
            start,
            end: frame_labels.len(),
        });
    }
    runs
}

/// Converts a frame segment to `[(start - 1) / fps, end / fps)`.
pub fn segment_to_seconds(segment: Segment, fps: f64) -> Result<Interval> {
    if !(fps > 0.0) || !fps.is_finite() {
        return Err(Error::invalid(format!("fps must be positive, got {fps}")));
    }
    Ok(Interval::new(
        (segment.start - 1) as f64 / fps,
        segment.end as f64 / fps,
    ))
}
