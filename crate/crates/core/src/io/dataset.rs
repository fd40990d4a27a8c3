//! Directory layout shared by `synth`, `infer`, and `baseline`:
//! `<id>.csem` frame features, `<id>.queries.csem` one query row per event,
//! and `annotations.jsonl` with one record per event query.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::segmenter::{baseline_clip_localize, cosine_scores};
use crate::temporal::{EventAnnotation, Segment};
use crate::trainer::{GroundingParams, SyntheticScenario};

use super::annotations::{annotation_line, AnnotationRecord};
use super::config::DecodingConfig;
use super::embeddings::{load_embeddings, save_embeddings};
use super::experiment::{cosine_prediction, decode_video, QueryResult};

pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";

pub fn frames_path(dir: &Path, video_id: &str) -> PathBuf {
    dir.join(format!("{video_id}.csem"))
}

pub fn queries_path(dir: &Path, video_id: &str) -> PathBuf {
    dir.join(format!("{video_id}.queries.csem"))
}

/// All events of one video, gathered from its annotation records.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoEvents {
    pub video_id: String,
    pub fps: f64,
    pub num_frames: usize,
    pub events: Vec<Segment>,
}

/// Groups records by video in order of first appearance. Records of one
/// video must agree on fps and length, and their events must not overlap.
pub fn group_by_video(records: &[AnnotationRecord]) -> Result<Vec<VideoEvents>> {
    let mut out: Vec<VideoEvents> = Vec::new();
    for r in records {
        match out.iter_mut().find(|v| v.video_id == r.video_id) {
            Some(v) => {
                if v.fps != r.fps || v.num_frames != r.num_frames {
                    return Err(Error::invalid(format!(
                        "video {} has conflicting fps or length across records",
                        r.video_id
                    )));
                }
                v.events.extend_from_slice(r.annotation.events());
            }
            None => out.push(VideoEvents {
                video_id: r.video_id.clone(),
                fps: r.fps,
                num_frames: r.num_frames,
                events: r.annotation.events().to_vec(),
            }),
        }
    }
    for v in &mut out {
        v.events.sort_by_key(|s| (s.start(), s.end()));
        EventAnnotation::new("", v.events.clone(), None)
            .map_err(|e| Error::invalid(format!("video {}: {e}", v.video_id)))?;
    }
    Ok(out)
}

fn load_frames(dir: &Path, video: &VideoEvents) -> Result<ndarray::Array2<f64>> {
    let frames = load_embeddings(frames_path(dir, &video.video_id))?;
    if frames.nrows() != video.num_frames {
        return Err(Error::invalid(format!(
            "video {}: feature file has {} frames, annotation says {}",
            video.video_id,
            frames.nrows(),
            video.num_frames
        )));
    }
    Ok(frames)
}

/// Writes draws `draws` of `scenario` to `dir` and returns their records.
pub fn write_synthetic_dataset(
    scenario: &SyntheticScenario,
    draws: std::ops::Range<u64>,
    dir: &Path,
) -> Result<Vec<AnnotationRecord>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut records = Vec::new();
    for draw in draws {
        let video = scenario.generate(draw)?;
        let id = format!("draw{draw}");
        save_embeddings(video.timeline.frames().view(), frames_path(dir, &id))?;
        save_embeddings(video.query_embeddings.view(), queries_path(dir, &id))?;
        for (i, &event) in video.annotation.events().iter().enumerate() {
            records.push(AnnotationRecord {
                video_id: id.clone(),
                fps: video.timeline.fps,
                num_frames: video.timeline.num_frames(),
                annotation: EventAnnotation::new(
                    format!("event {i}"),
                    vec![event],
                    Some(vec![format!("event {i}")]),
                )?,
            });
        }
    }
    let mut text = String::new();
    for r in &records {
        text.push_str(&annotation_line(r)?);
        text.push('\n');
    }
    let path = dir.join(ANNOTATIONS_FILE);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(records)
}

/// Decodes every annotated video found in `dir` with trained parameters.
pub fn infer_dataset(
    params: &GroundingParams,
    records: &[AnnotationRecord],
    dir: &Path,
    decoding: &DecodingConfig,
    event_only: bool,
) -> Result<Vec<QueryResult>> {
    let mut out = Vec::new();
    for video in group_by_video(records)? {
        let frames = load_frames(dir, &video)?;
        out.extend(decode_video(
            params,
            &video.video_id,
            video.fps,
            frames.view(),
            &video.events,
            decoding,
            event_only,
        )?);
    }
    Ok(out)
}

/// Cosine-threshold localization from stored query embeddings.
pub fn baseline_dataset(
    records: &[AnnotationRecord],
    dir: &Path,
    theta: f64,
) -> Result<Vec<QueryResult>> {
    let mut out = Vec::new();
    for video in group_by_video(records)? {
        let frames = load_frames(dir, &video)?;
        let queries = load_embeddings(queries_path(dir, &video.video_id))?;
        if queries.nrows() != video.events.len() {
            return Err(Error::invalid(format!(
                "video {}: {} query rows for {} events",
                video.video_id,
                queries.nrows(),
                video.events.len()
            )));
        }
        for (i, &gt) in video.events.iter().enumerate() {
            let q = queries.row(i);
            let scores = cosine_scores(q, frames.view())?;
            let segments = baseline_clip_localize(q, frames.view(), theta)?;
            out.push(QueryResult {
                video_id: video.video_id.clone(),
                fps: video.fps,
                prediction: cosine_prediction(format!("query{i}"), segments, &scores),
                frame_scores: scores,
                ground_truth: gt,
            });
        }
    }
    Ok(out)
}
