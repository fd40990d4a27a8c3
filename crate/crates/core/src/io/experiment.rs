//! Config-driven generate, train, decode, evaluate pipeline.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{
    clip_relevance, clip_scores, frame_iou, map_hl, map_mr, recall_at_1, segment_f1,
    HighlightVideo, MetricReport, ScoredInterval,
};
use crate::segmenter::{
    baseline_clip_localize, cosine_scores, highlight_scores, DecodeMode, FixedThresholdDecoder,
    HighlightScale, QueryPrediction,
};
use crate::temporal::{augment_with_transitions, segment_to_seconds, Segment, TokenKind};
use crate::trainer::{
    decode_event_threshold, decode_holistic, holistic_sample, train_batch, GroundingParams,
    SyntheticVideo, TrainOutcome, TrainingSample,
};

use super::config::{DecodingConfig, DecodingMode, ExperimentConfig, MetricKind};

pub const R1_THRESHOLDS: [f64; 3] = [0.3, 0.5, 0.7];

/// One scored query: decoded segments, per-frame scores, and its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub video_id: String,
    pub fps: f64,
    pub prediction: QueryPrediction,
    pub frame_scores: Vec<f64>,
    pub ground_truth: Segment,
}

/// Decodes every event of one video with a trained model.
pub fn decode_video(
    params: &GroundingParams,
    video_id: &str,
    fps: f64,
    frames: ArrayView2<'_, f64>,
    events: &[Segment],
    decoding: &DecodingConfig,
    event_only: bool,
) -> Result<Vec<QueryResult>> {
    if events.is_empty() {
        return Ok(Vec::new());
    }
    let result = |i: usize, prediction: QueryPrediction, frame_scores: Vec<f64>| QueryResult {
        video_id: video_id.to_string(),
        fps,
        prediction,
        frame_scores,
        ground_truth: events[i],
    };
    if event_only {
        let decoder = FixedThresholdDecoder {
            theta_fixed: decoding.theta_fixed,
        };
        let decoded = decode_event_threshold(params, frames, events.len(), &decoder)?;
        let kinds = vec![TokenKind::Event; events.len()];
        let sim = params.similarity(frames, &kinds)?;
        return Ok(decoded
            .into_iter()
            .enumerate()
            .map(|(i, segments)| {
                let scores = sim.column(i).to_vec();
                let prediction = cosine_prediction(format!("ent{i}"), segments, &scores);
                result(i, prediction, scores)
            })
            .collect());
    }
    let (partition, tokens) = augment_with_transitions(events, frames.nrows())?;
    debug_assert_eq!(partition.len(), tokens.len());
    let mode = if decoding.per_event {
        DecodeMode::PerEvent
    } else {
        DecodeMode::Joint
    };
    let seg = decode_holistic(params, frames, &tokens, mode)?;
    let sim = params.similarity(frames, tokens.labels())?;
    let tau = params.temperature.tau();
    seg.predictions
        .queries
        .into_iter()
        .zip(tokens.ent_indices())
        .enumerate()
        .map(|(i, (prediction, ent))| {
            let scores =
                highlight_scores(sim.view(), tau, &tokens, ent, HighlightScale::Probability)?;
            Ok(result(i, prediction, scores))
        })
        .collect()
}

/// Confidence of a cosine-thresholded segment: mean score mapped to [0, 1].
pub(crate) fn cosine_prediction(
    query_id: String,
    segments: Vec<Segment>,
    scores: &[f64],
) -> QueryPrediction {
    let confidences = segments
        .iter()
        .map(|s| {
            let r = s.zero_based();
            let mean = scores[r.clone()].iter().sum::<f64>() / r.len() as f64;
            ((mean + 1.0) / 2.0).clamp(0.0, 1.0)
        })
        .collect();
    QueryPrediction {
        query_id,
        segments,
        confidences: Some(confidences),
    }
}

/// Baseline localization of each event from its query embedding.
pub fn baseline_video(
    video_id: &str,
    video: &SyntheticVideo,
    theta: f64,
) -> Result<Vec<QueryResult>> {
    let frames = video.timeline.frames().view();
    video
        .annotation
        .events()
        .iter()
        .enumerate()
        .map(|(i, &gt)| {
            let q = video.query_embeddings.row(i);
            let scores = cosine_scores(q, frames)?;
            let segments = baseline_clip_localize(q, frames, theta)?;
            Ok(QueryResult {
                video_id: video_id.to_string(),
                fps: video.timeline.fps,
                prediction: cosine_prediction(format!("query{i}"), segments, &scores),
                frame_scores: scores,
                ground_truth: gt,
            })
        })
        .collect()
}

/// Computes the selected metrics over all queries, names prefixed by `prefix`.
pub fn score_queries(
    results: &[QueryResult],
    metrics: &[MetricKind],
    decoding: &DecodingConfig,
    prefix: &str,
    report: &mut MetricReport,
) -> Result<()> {
    if results.is_empty() {
        return Err(Error::invalid("no queries to score"));
    }
    let mut tops = Vec::new();
    let mut ranked = Vec::new();
    let mut gts = Vec::new();
    let mut highlights = Vec::new();
    let mut f1_sum = 0.0;
    let mut iou_sum = 0.0;
    for r in results {
        let gt = segment_to_seconds(r.ground_truth, r.fps)?;
        let intervals = r
            .prediction
            .segments
            .iter()
            .map(|&s| segment_to_seconds(s, r.fps))
            .collect::<Result<Vec<_>>>()?;
        tops.push(
            r.prediction
                .top()
                .map(|s| segment_to_seconds(s, r.fps))
                .transpose()?,
        );
        let conf = r
            .prediction
            .confidences
            .clone()
            .unwrap_or_else(|| vec![1.0; intervals.len()]);
        ranked.push(
            intervals
                .iter()
                .zip(&conf)
                .map(|(&interval, &score)| ScoredInterval { interval, score })
                .collect::<Vec<_>>(),
        );
        gts.push(vec![gt]);
        let mut saliency = vec![0.0; r.frame_scores.len()];
        for t in r.ground_truth.zero_based() {
            saliency[t] = 1.0;
        }
        highlights.push(HighlightVideo {
            scores: clip_scores(&r.frame_scores, r.fps, decoding.clip_seconds)?,
            relevant: clip_relevance(
                &saliency,
                r.fps,
                decoding.clip_seconds,
                decoding.saliency_level,
            )?,
        });
        f1_sum += segment_f1(&intervals, &[gt], 0.5)?;
        iou_sum += frame_iou(&r.prediction.segments, r.ground_truth);
    }
    let n = results.len() as f64;
    for metric in metrics {
        match metric {
            MetricKind::R1 => {
                let recalls = recall_at_1(&tops, &gts, &R1_THRESHOLDS)?;
                for (th, r) in R1_THRESHOLDS.iter().zip(recalls) {
                    report.push(format!("{prefix}r1@{th:.1}"), r)?;
                }
            }
            MetricKind::MapMr => report.push(format!("{prefix}map_mr"), map_mr(&ranked, &gts)?)?,
            MetricKind::MapHl => {
                let hl = map_hl(&highlights)?;
                report.push(format!("{prefix}map_hl"), hl.map_hl)?;
                report.push(format!("{prefix}hit@0.1"), hl.hit_at_0_1)?;
            }
            MetricKind::F1 => report.push(format!("{prefix}f1@0.5"), f1_sum / n)?,
            MetricKind::EventIou => report.push(format!("{prefix}event_iou"), iou_sum / n)?,
        }
    }
    Ok(())
}

/// Writes a metrics CSV: `metric,value,n_queries,config_hash`, six decimals.
pub fn emit_report(report: &MetricReport, config_hash: &str, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, render_report(report, config_hash)).map_err(|e| Error::io(path, e))
}

pub fn render_report(report: &MetricReport, config_hash: &str) -> String {
    let mut out = String::from("metric,value,n_queries,config_hash\n");
    for (name, value) in &report.metrics {
        out.push_str(&format!(
            "{name},{value:.6},{},{config_hash}\n",
            report.n_queries
        ));
    }
    out
}

/// Paths of the files written by [`run_experiment`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifacts {
    pub config: PathBuf,
    pub loss_curve: PathBuf,
    pub params: PathBuf,
    pub predictions: PathBuf,
    pub metrics: PathBuf,
}

impl Artifacts {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            config: dir.join("config.json"),
            loss_curve: dir.join("loss_curve.csv"),
            params: dir.join("params.json"),
            predictions: dir.join("predictions.json"),
            metrics: dir.join("metrics.csv"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub report: MetricReport,
    pub config_hash: String,
    pub training: TrainOutcome,
    pub artifacts: Artifacts,
}

#[derive(Serialize, Deserialize)]
struct Stamped<T> {
    config_hash: String,
    #[serde(flatten)]
    body: T,
}

#[derive(Serialize, Deserialize)]
struct ConfigEcho {
    config: ExperimentConfig,
}

#[derive(Serialize, Deserialize)]
struct ParamsFile {
    params: GroundingParams,
}

/// Decoded queries, optionally with baseline rows, as stored on disk.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    pub queries: Vec<QueryResult>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub baseline: Vec<QueryResult>,
}

fn write_json<T: Serialize>(path: &Path, hash: &str, body: T) -> Result<()> {
    let stamped = Stamped {
        config_hash: hash.to_string(),
        body,
    };
    let mut text =
        serde_json::to_string_pretty(&stamped).map_err(|e| Error::Serde(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Stamped<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))
}

pub fn save_params(
    params: &GroundingParams,
    config_hash: &str,
    path: impl AsRef<Path>,
) -> Result<()> {
    write_json(
        path.as_ref(),
        config_hash,
        ParamsFile {
            params: params.clone(),
        },
    )
}

/// Reads saved parameters and the config hash they were trained under.
pub fn load_params(path: impl AsRef<Path>) -> Result<(GroundingParams, String)> {
    let stamped: Stamped<ParamsFile> = read_json(path.as_ref())?;
    stamped.body.params.check()?;
    Ok((stamped.body.params, stamped.config_hash))
}

pub fn save_predictions(
    predictions: &Predictions,
    config_hash: &str,
    path: impl AsRef<Path>,
) -> Result<()> {
    write_json(path.as_ref(), config_hash, predictions)
}

/// Reads saved predictions and the config hash they were produced under.
pub fn load_predictions(path: impl AsRef<Path>) -> Result<(Predictions, String)> {
    let stamped: Stamped<Predictions> = read_json(path.as_ref())?;
    for q in stamped.body.queries.iter().chain(&stamped.body.baseline) {
        if q.frame_scores.is_empty() || q.ground_truth.end() > q.frame_scores.len() {
            return Err(Error::invalid(format!(
                "{}/{}: ground truth {} outside {} frames",
                q.video_id,
                q.prediction.query_id,
                q.ground_truth,
                q.frame_scores.len()
            )));
        }
    }
    Ok((stamped.body, stamped.config_hash))
}

/// Scores saved predictions: main rows unprefixed, baseline rows as `baseline_*`.
pub fn evaluate_predictions(
    predictions: &Predictions,
    metrics: &[MetricKind],
    decoding: &DecodingConfig,
) -> Result<MetricReport> {
    let videos: std::collections::BTreeSet<&str> = predictions
        .queries
        .iter()
        .map(|q| q.video_id.as_str())
        .collect();
    let mut report = MetricReport {
        n_queries: predictions.queries.len(),
        n_videos: videos.len(),
        ..Default::default()
    };
    score_queries(&predictions.queries, metrics, decoding, "", &mut report)?;
    if !predictions.baseline.is_empty() {
        score_queries(
            &predictions.baseline,
            metrics,
            decoding,
            "baseline_",
            &mut report,
        )?;
    }
    Ok(report)
}

fn loss_curve_csv(losses: &[f64], hash: &str) -> String {
    let mut out = String::from("step,loss,config_hash\n");
    for (step, loss) in losses.iter().enumerate() {
        out.push_str(&format!("{step},{loss:.12e},{hash}\n"));
    }
    out
}

/// Runs generate, train, decode, and evaluate, writing every artifact to
/// `config.output_dir`. Identical configs produce identical files.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let hash = config.hash();
    let scenario = config.scenario();
    let event_only = config.decoding.mode == DecodingMode::Threshold;
    let n_train = config.optimizer.batch_size as u64;

    let (train_videos, eval_videos) = (|| -> Result<_> {
        let train = (0..n_train)
            .map(|d| scenario.generate(d))
            .collect::<Result<Vec<_>>>()?;
        let eval = (n_train..n_train + config.eval_videos as u64)
            .map(|d| scenario.generate(d))
            .collect::<Result<Vec<_>>>()?;
        Ok((train, eval))
    })()
    .map_err(|e| e.in_stage("generate"))?;

    let training = (|| -> Result<_> {
        let samples = train_videos
            .iter()
            .map(|v| {
                if event_only {
                    TrainingSample::events_only(
                        v.timeline.frames().as_array().clone(),
                        v.annotation.events(),
                    )
                } else {
                    holistic_sample(v).map(|(s, _)| s)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let init = GroundingParams::init(&config.model, scenario.dim, scenario.seed)?;
        train_batch(init, &samples, &config.optimizer, config.steps)
    })()
    .map_err(|e| e.in_stage("train"))?;

    let (queries, baseline) = (|| -> Result<_> {
        let mut queries = Vec::new();
        let mut baseline = Vec::new();
        for (k, v) in eval_videos.iter().enumerate() {
            let id = format!("draw{}", n_train + k as u64);
            queries.extend(decode_video(
                &training.params,
                &id,
                v.timeline.fps,
                v.timeline.frames().view(),
                v.annotation.events(),
                &config.decoding,
                event_only,
            )?);
            if config.decoding.mode == DecodingMode::Baseline {
                baseline.extend(baseline_video(&id, v, config.decoding.theta)?);
            }
        }
        Ok((queries, baseline))
    })()
    .map_err(|e| e.in_stage("decode"))?;

    let predictions = Predictions { queries, baseline };
    let report = (|| -> Result<_> {
        let mut report = evaluate_predictions(&predictions, &config.metrics, &config.decoding)?;
        report.settings = vec![
            ("final_loss".into(), training.final_loss),
            ("steps".into(), config.steps as f64),
        ];
        Ok(report)
    })()
    .map_err(|e| e.in_stage("evaluate"))?;

    let artifacts = Artifacts::in_dir(&config.output_dir);
    (|| -> Result<()> {
        fs::create_dir_all(&config.output_dir).map_err(|e| Error::io(&config.output_dir, e))?;
        write_json(
            &artifacts.config,
            &hash,
            ConfigEcho {
                config: config.clone(),
            },
        )?;
        let curve = loss_curve_csv(&training.losses, &hash);
        fs::write(&artifacts.loss_curve, curve).map_err(|e| Error::io(&artifacts.loss_curve, e))?;
        save_params(&training.params, &hash, &artifacts.params)?;
        write_json(&artifacts.predictions, &hash, &predictions)?;
        emit_report(&report, &hash, &artifacts.metrics)
    })()
    .map_err(|e| e.in_stage("write"))?;

    Ok(ExperimentOutput {
        report,
        config_hash: hash,
        training,
        artifacts,
    })
}
