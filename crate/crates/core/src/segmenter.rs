//! Inference-time decoding of similarity tables into event segments.

use ndarray::{ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grounding::{frame_given_token_probs, l2_normalize, normalize_rows, ProbabilityTable};
use crate::temporal::{merge_consecutive, Segment, StructuralTokenSeq, TokenKind};

/// Localized segments for one query (or one event token).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryPrediction {
    pub query_id: String,
    pub segments: Vec<Segment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidences: Option<Vec<f64>>,
}

impl QueryPrediction {
    /// Segment with the highest confidence; ties and missing confidences
    /// resolve to the earliest segment.
    pub fn top(&self) -> Option<Segment> {
        match &self.confidences {
            Some(conf) => self
                .segments
                .iter()
                .zip(conf)
                .fold(None::<(Segment, f64)>, |best, (s, &c)| match best {
                    Some((_, bc)) if bc >= c => best,
                    _ => Some((*s, c)),
                })
                .map(|(s, _)| s),
            None => self.segments.first().copied(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub queries: Vec<QueryPrediction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_scores: Option<Vec<f64>>,
}

impl PredictionSet {
    pub fn validate(&self) -> Result<()> {
        for q in &self.queries {
            for w in q.segments.windows(2) {
                if w[1].start() <= w[0].end() {
                    return Err(Error::invalid(format!(
                        "query {}: segments {} and {} are unsorted or overlapping",
                        q.query_id, w[0], w[1]
                    )));
                }
            }
            if let Some(conf) = &q.confidences {
                if conf.len() != q.segments.len() {
                    return Err(Error::invalid(format!(
                        "query {}: {} confidences for {} segments",
                        q.query_id,
                        conf.len(),
                        q.segments.len()
                    )));
                }
                if let Some(c) = conf.iter().find(|c| !(0.0..=1.0).contains(*c)) {
                    return Err(Error::invalid(format!(
                        "query {}: confidence {c} outside [0, 1]",
                        q.query_id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// How event tokens compete for frames.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    /// One labeling over all tokens; event tokens compete with each other.
    #[default]
    Joint,
    /// Each event token is decoded against the transition tokens only.
    PerEvent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    /// Zero-based token index assigned to every frame (joint labeling).
    pub frame_labels: Vec<usize>,
    pub predictions: PredictionSet,
}

/// Index of the largest value; ties go to the lowest index.
fn argmax(values: impl Iterator<Item = (usize, f64)>) -> usize {
    let mut best = (usize::MAX, f64::NEG_INFINITY);
    for (i, v) in values {
        if best.0 == usize::MAX || v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

fn label_frames(probs: &ProbabilityTable, columns: &[usize]) -> Vec<usize> {
    probs
        .view()
        .axis_iter(Axis(0))
        .map(|row| argmax(columns.iter().map(|&c| (c, row[c]))))
        .collect()
}

fn event_prediction(probs: &ProbabilityTable, labels: &[usize], token: usize) -> QueryPrediction {
    let column = probs.view().column(token).to_owned();
    let segments = merge_consecutive(labels, &token);
    let confidences = segments
        .iter()
        .map(|s| column.slice(ndarray::s![s.zero_based()]).sum().min(1.0))
        .collect();
    QueryPrediction {
        query_id: format!("ent{token}"),
        segments,
        confidences: Some(confidences),
    }
}

/// Assigns every frame to the token with the highest frame-given-token
/// probability and reads the event segments off the event tokens.
///
/// Segment confidence is the probability mass the event column puts on the
/// segment's frames.
pub fn holistic_segmentation(
    sim: ArrayView2<'_, f64>,
    tau: f64,
    tokens: &StructuralTokenSeq,
    mode: DecodeMode,
) -> Result<Segmentation> {
    if sim.ncols() != tokens.len() {
        return Err(Error::invalid(format!(
            "similarity table has {} columns for {} structural tokens",
            sim.ncols(),
            tokens.len()
        )));
    }
    let probs = frame_given_token_probs(sim, tau)?;
    let all: Vec<usize> = (0..tokens.len()).collect();
    let frame_labels = label_frames(&probs, &all);
    let ent = tokens.ent_indices();

    let queries = match mode {
        DecodeMode::Joint => ent
            .iter()
            .map(|&i| event_prediction(&probs, &frame_labels, i))
            .collect(),
        DecodeMode::PerEvent => {
            let transitions: Vec<usize> = tokens
                .labels()
                .iter()
                .enumerate()
                .filter(|(_, k)| **k == TokenKind::Transition)
                .map(|(i, _)| i)
                .collect();
            ent.iter()
                .map(|&i| {
                    let mut cols = transitions.clone();
                    cols.push(i);
                    cols.sort_unstable();
                    let labels = label_frames(&probs, &cols);
                    event_prediction(&probs, &labels, i)
                })
                .collect()
        }
    };

    Ok(Segmentation {
        frame_labels,
        predictions: PredictionSet {
            queries,
            frame_scores: None,
        },
    })
}

/// Maximal runs of frames whose score is at least `threshold`.
pub fn threshold_retrieval(scores: &[f64], threshold: f64) -> Vec<Segment> {
    let above: Vec<bool> = scores.iter().map(|&s| s >= threshold).collect();
    merge_consecutive(&above, &true)
}

/// Thresholding with one global threshold shared by every task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedThresholdDecoder {
    pub theta_fixed: f64,
}

impl FixedThresholdDecoder {
    pub fn decode(&self, scores: &[f64]) -> Vec<Segment> {
        ablation_threshold_decode(scores, self.theta_fixed)
    }
}

pub fn ablation_threshold_decode(scores: &[f64], theta_fixed: f64) -> Vec<Segment> {
    threshold_retrieval(scores, theta_fixed)
}

/// Scale used for per-frame highlight scores.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HighlightScale {
    #[default]
    Probability,
    RawCosine,
}

/// Per-frame saliency for one event token.
pub fn highlight_scores(
    sim: ArrayView2<'_, f64>,
    tau: f64,
    tokens: &StructuralTokenSeq,
    ent_index: usize,
    scale: HighlightScale,
) -> Result<Vec<f64>> {
    match tokens.labels().get(ent_index) {
        Some(TokenKind::Event) => {}
        Some(TokenKind::Transition) => {
            return Err(Error::invalid(format!(
                "token {ent_index} is a transition token"
            )))
        }
        None => {
            return Err(Error::invalid(format!(
                "token index {ent_index} out of range for {} tokens",
                tokens.len()
            )))
        }
    }
    if sim.ncols() != tokens.len() {
        return Err(Error::invalid(format!(
            "similarity table has {} columns for {} structural tokens",
            sim.ncols(),
            tokens.len()
        )));
    }
    Ok(match scale {
        HighlightScale::Probability => frame_given_token_probs(sim, tau)?
            .column(ent_index)
            .to_vec(),
        HighlightScale::RawCosine => sim.column(ent_index).to_vec(),
    })
}

/// Cosine similarity of every frame to `query`.
pub fn cosine_scores(query: ArrayView1<'_, f64>, frames: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    if query.len() != frames.ncols() {
        return Err(Error::invalid(format!(
            "query has dimension {}, frames have {}",
            query.len(),
            frames.ncols()
        )));
    }
    let q = l2_normalize(&query.to_vec())?;
    let q = ndarray::Array1::from(q);
    let (unit, _) = normalize_rows(frames)?;
    Ok(unit.dot(&q).to_vec())
}

/// Contrastive-model baseline: threshold the query/frame cosine similarities
/// and merge contiguous frames above the threshold.
pub fn baseline_clip_localize(
    query: ArrayView1<'_, f64>,
    frames: ArrayView2<'_, f64>,
    threshold: f64,
) -> Result<Vec<Segment>> {
    Ok(threshold_retrieval(
        &cosine_scores(query, frames)?,
        threshold,
    ))
}
