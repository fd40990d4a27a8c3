//! Temporal localization metrics: tIoU, R@1, mAP for moment retrieval and
//! highlight detection, HIT@0.1, and a greedy segment-level F1.
//!
//! Ranking ties are broken by earlier temporal position.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::temporal::{Interval, Segment};

/// tIoU thresholds 0.50, 0.55, ..., 0.95 used for mAP over moment retrieval.
pub fn mr_thresholds() -> Vec<f64> {
    (0..10).map(|k| (50 + 5 * k) as f64 / 100.0).collect()
}

fn check_interval(x: &Interval) -> Result<()> {
    if !(x.end > x.start) || !x.start.is_finite() || !x.end.is_finite() {
        return Err(Error::invalid(format!(
            "interval [{}, {}) must have positive length",
            x.start, x.end
        )));
    }
    Ok(())
}

/// Temporal intersection over union of two half-open intervals.
pub fn tiou(a: Interval, b: Interval) -> Result<f64> {
    check_interval(&a)?;
    check_interval(&b)?;
    let inter = (a.end.min(b.end) - a.start.max(b.start)).max(0.0);
    Ok(inter / (a.len() + b.len() - inter))
}

/// Fraction of queries whose top prediction reaches each tIoU threshold
/// against at least one ground truth. A query without a prediction counts
/// as a miss.
pub fn recall_at_1(
    top: &[Option<Interval>],
    gts: &[Vec<Interval>],
    thresholds: &[f64],
) -> Result<Vec<f64>> {
    if top.is_empty() {
        return Err(Error::invalid("recall@1 needs at least one query"));
    }
    if top.len() != gts.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} queries",
            top.len(),
            gts.len()
        )));
    }
    let mut best = Vec::with_capacity(top.len());
    for (q, (pred, gt)) in top.iter().zip(gts).enumerate() {
        if gt.is_empty() {
            return Err(Error::invalid(format!("query {q} has no ground truth")));
        }
        let score = match pred {
            Some(p) => gt
                .iter()
                .try_fold(0.0f64, |m, g| Ok::<_, Error>(m.max(tiou(*p, *g)?)))?,
            None => 0.0,
        };
        best.push(score);
    }
    let n = best.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&th| best.iter().filter(|&&b| b >= th).count() as f64 / n)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredInterval {
    pub interval: Interval,
    pub score: f64,
}

/// Descending score, then earlier start, then earlier end.
fn rank_order(a: &ScoredInterval, b: &ScoredInterval) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.interval.start.total_cmp(&b.interval.start))
        .then(a.interval.end.total_cmp(&b.interval.end))
}

/// Precision-at-each-hit average precision with greedy one-to-one matching.
///
/// Predictions are visited in rank order; each claims the unmatched ground
/// truth with the highest tIoU (lowest index on ties) if that tIoU reaches
/// `threshold`. With no ground truth the AP is 0.
pub fn average_precision(
    preds: &[ScoredInterval],
    gts: &[Interval],
    threshold: f64,
) -> Result<f64> {
    for p in preds {
        check_interval(&p.interval)?;
        if !p.score.is_finite() {
            return Err(Error::invalid(format!("non-finite score {}", p.score)));
        }
    }
    gts.iter().try_for_each(check_interval)?;
    if gts.is_empty() {
        return Ok(0.0);
    }

    let mut ranked: Vec<&ScoredInterval> = preds.iter().collect();
    ranked.sort_by(|a, b| rank_order(a, b));

    let mut taken = vec![false; gts.len()];
    let mut hits = 0usize;
    let mut precision_sum = 0.0;
    for (rank, pred) in ranked.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let iou = tiou(pred.interval, *gt)?;
            if iou >= threshold && best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
            hits += 1;
            precision_sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(precision_sum / gts.len() as f64)
}

/// Mean over queries of the AP averaged across [`mr_thresholds`].
pub fn map_mr(preds: &[Vec<ScoredInterval>], gts: &[Vec<Interval>]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::invalid("mAP needs at least one query"));
    }
    if preds.len() != gts.len() {
        return Err(Error::invalid(format!(
            "{} prediction lists for {} queries",
            preds.len(),
            gts.len()
        )));
    }
    let grid = mr_thresholds();
    let mut total = 0.0;
    for (p, g) in preds.iter().zip(gts) {
        let mut per_query = 0.0;
        for &th in &grid {
            per_query += average_precision(p, g, th)?;
        }
        total += per_query / grid.len() as f64;
    }
    Ok(total / preds.len() as f64)
}

/// Clip scores and binary relevance for one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighlightVideo {
    pub scores: Vec<f64>,
    pub relevant: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HighlightReport {
    pub map_hl: f64,
    pub hit_at_0_1: f64,
}

/// Clip indices ordered by descending score, earlier clip first on ties.
fn clip_ranking(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// mAP over score-ranked clips against binary relevance, plus the fraction
/// of videos whose top clip is relevant.
pub fn map_hl(videos: &[HighlightVideo]) -> Result<HighlightReport> {
    if videos.is_empty() {
        return Err(Error::invalid("highlight metrics need at least one video"));
    }
    let mut ap_sum = 0.0;
    let mut hits = 0usize;
    for (v, video) in videos.iter().enumerate() {
        if video.scores.len() != video.relevant.len() {
            return Err(Error::invalid(format!(
                "video {v}: {} scores but {} relevance labels",
                video.scores.len(),
                video.relevant.len()
            )));
        }
        if video.scores.is_empty() {
            return Err(Error::invalid(format!("video {v} has no clips")));
        }
        let order = clip_ranking(&video.scores);
        if video.relevant[order[0]] {
            hits += 1;
        }
        let n_rel = video.relevant.iter().filter(|&&r| r).count();
        if n_rel > 0 {
            let mut found = 0usize;
            let mut psum = 0.0;
            for (rank, &clip) in order.iter().enumerate() {
                if video.relevant[clip] {
                    found += 1;
                    psum += found as f64 / (rank + 1) as f64;
                }
            }
            ap_sum += psum / n_rel as f64;
        }
    }
    let n = videos.len() as f64;
    Ok(HighlightReport {
        map_hl: ap_sum / n,
        hit_at_0_1: hits as f64 / n,
    })
}

/// Averages per-frame scores into fixed-length clips of `clip_seconds`.
pub fn clip_scores(frame_scores: &[f64], fps: f64, clip_seconds: f64) -> Result<Vec<f64>> {
    let clips = clip_assignment(frame_scores.len(), fps, clip_seconds)?;
    let n = clips.last().map_or(0, |&c| c + 1);
    let mut sums = vec![0.0; n];
    let mut counts = vec![0usize; n];
    for (&c, &s) in clips.iter().zip(frame_scores) {
        sums[c] += s;
        counts[c] += 1;
    }
    Ok(sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| s / c as f64)
        .collect())
}

/// A clip is relevant when its mean saliency reaches `level`.
pub fn clip_relevance(
    frame_saliency: &[f64],
    fps: f64,
    clip_seconds: f64,
    level: f64,
) -> Result<Vec<bool>> {
    Ok(clip_scores(frame_saliency, fps, clip_seconds)?
        .into_iter()
        .map(|s| s >= level)
        .collect())
}

fn clip_assignment(frames: usize, fps: f64, clip_seconds: f64) -> Result<Vec<usize>> {
    if !(fps > 0.0) || !(clip_seconds > 0.0) {
        return Err(Error::invalid(format!(
            "fps ({fps}) and clip length ({clip_seconds}) must be positive"
        )));
    }
    // Frame t (0-based) starts at t / fps seconds.
    Ok((0..frames)
        .map(|t| ((t as f64 / fps) / clip_seconds + 1e-9).floor() as usize)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Score {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Greedy one-to-one matching by descending tIoU; pairs below `threshold`
/// never match. Equal tIoUs resolve to the lower prediction index, then the
/// lower ground-truth index.
pub fn segment_prf(preds: &[Interval], gts: &[Interval], threshold: f64) -> Result<F1Score> {
    let mut pairs = Vec::new();
    for (p, pred) in preds.iter().enumerate() {
        for (g, gt) in gts.iter().enumerate() {
            let iou = tiou(*pred, *gt)?;
            if iou >= threshold {
                pairs.push((iou, p, g));
            }
        }
    }
    gts.iter().try_for_each(check_interval)?;
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut pred_used = vec![false; preds.len()];
    let mut gt_used = vec![false; gts.len()];
    let mut matches = 0usize;
    for (_, p, g) in pairs {
        if !pred_used[p] && !gt_used[g] {
            pred_used[p] = true;
            gt_used[g] = true;
            matches += 1;
        }
    }
    if preds.is_empty() || gts.is_empty() || matches == 0 {
        return Ok(F1Score {
            precision: if preds.is_empty() {
                0.0
            } else {
                matches as f64 / preds.len() as f64
            },
            recall: if gts.is_empty() {
                0.0
            } else {
                matches as f64 / gts.len() as f64
            },
            f1: 0.0,
        });
    }
    let precision = matches as f64 / preds.len() as f64;
    let recall = matches as f64 / gts.len() as f64;
    Ok(F1Score {
        precision,
        recall,
        f1: 2.0 * precision * recall / (precision + recall),
    })
}

pub fn segment_f1(preds: &[Interval], gts: &[Interval], threshold: f64) -> Result<f64> {
    segment_prf(preds, gts, threshold).map(|s| s.f1)
}

/// Frame-level IoU between the union of `decoded` segments and `planted`.
pub fn frame_iou(decoded: &[Segment], planted: Segment) -> f64 {
    let mut covered = std::collections::BTreeSet::new();
    for s in decoded {
        covered.extend(s.start()..=s.end());
    }
    let inter = (planted.start()..=planted.end())
        .filter(|f| covered.contains(f))
        .count();
    let union = covered.len() + planted.len() - inter;
    inter as f64 / union as f64
}

/// Mean of [`frame_iou`] over events; `decoded[k]` belongs to `planted[k]`.
pub fn mean_event_iou(decoded: &[Vec<Segment>], planted: &[Segment]) -> Result<f64> {
    if decoded.len() != planted.len() || planted.is_empty() {
        return Err(Error::invalid(format!(
            "{} decoded event lists for {} planted events",
            decoded.len(),
            planted.len()
        )));
    }
    Ok(decoded
        .iter()
        .zip(planted)
        .map(|(d, &p)| frame_iou(d, p))
        .sum::<f64>()
        / planted.len() as f64)
}

/// Named metric values with the counts and settings that produced them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metrics: Vec<(String, f64)>,
    pub n_queries: usize,
    pub n_videos: usize,
    pub settings: Vec<(String, f64)>,
}

impl MetricReport {
    pub fn push(&mut self, name: impl Into<String>, value: f64) -> Result<()> {
        let name = name.into();
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::invalid(format!(
                "metric {name} = {value} outside [0, 1]"
            )));
        }
        self.metrics.push((name, value));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
    }
}
