//! Desk-scale training of the grounding pipeline on synthetic timelines.

mod assemble;
mod model;
mod optim;
mod synthetic;

pub use assemble::{assemble_interleaved_sequence, Vocabulary, ENT, EOS, TST};
pub use model::{
    forward, loss_and_grad, positional_code, CaptionHead, ForwardCache, GroundingParams, Mlp,
    ModelConfig, Projector, TokenEmbeddings, TrainingSample,
};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};
pub use synthetic::{
    generate_synthetic_timeline, SyntheticScenario, SyntheticVideo, VideoTimeline,
};

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::mean_event_iou;
use crate::segmenter::{holistic_segmentation, DecodeMode, FixedThresholdDecoder, Segmentation};
use crate::temporal::{augment_with_transitions, Segment, StructuralTokenSeq, TokenKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub params: GroundingParams,
    /// Loss before each update.
    pub losses: Vec<f64>,
    /// Loss after the last update.
    pub final_loss: f64,
}

/// Runs `steps` optimizer updates on one sample.
pub fn train_sample(
    params: GroundingParams,
    sample: &TrainingSample,
    config: &OptimizerConfig,
    steps: usize,
) -> Result<TrainOutcome> {
    train_batch(params, std::slice::from_ref(sample), config, steps)
}

/// Mean loss and gradient over `samples`.
pub fn batch_loss_and_grad(
    params: &GroundingParams,
    samples: &[TrainingSample],
) -> Result<(f64, GroundingParams)> {
    if samples.is_empty() {
        return Err(Error::invalid("batch is empty"));
    }
    let scale = 1.0 / samples.len() as f64;
    let mut total = 0.0;
    let mut grad = params.zeros_like();
    for sample in samples {
        let (loss, g) = loss_and_grad(params, sample)?;
        total += loss * scale;
        let flat = g.to_flat();
        let mut offset = 0;
        for tensor in grad.tensors_mut() {
            for v in tensor.iter_mut() {
                *v += flat[offset] * scale;
                offset += 1;
            }
        }
    }
    Ok((total, grad))
}

/// Runs `steps` full-batch optimizer updates over `samples`.
pub fn train_batch(
    mut params: GroundingParams,
    samples: &[TrainingSample],
    config: &OptimizerConfig,
    steps: usize,
) -> Result<TrainOutcome> {
    if steps == 0 {
        return Err(Error::invalid("training needs at least one step"));
    }
    params.check()?;
    let mut optimizer = Optimizer::new(config.clone(), &params, steps)?;
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        // Inputs were accepted at step 0, so later failures mean the
        // parameters left the valid range.
        let (loss, grad) = match batch_loss_and_grad(&params, samples) {
            Ok(v) => v,
            Err(e) if step == 0 => return Err(e),
            Err(_) => {
                return Err(Error::Training {
                    step,
                    loss: f64::NAN,
                })
            }
        };
        if !loss.is_finite() {
            return Err(Error::Training { step, loss });
        }
        losses.push(loss);
        optimizer.step(&mut params, &grad);
    }
    let final_loss = batch_loss_and_grad(&params, samples).map_or(f64::NAN, |(l, _)| l);
    if !final_loss.is_finite() {
        return Err(Error::Training {
            step: steps,
            loss: final_loss,
        });
    }
    Ok(TrainOutcome {
        params,
        losses,
        final_loss,
    })
}

/// Event and transition sample for a synthetic video.
pub fn holistic_sample(video: &SyntheticVideo) -> Result<(TrainingSample, StructuralTokenSeq)> {
    let (partition, tokens) =
        augment_with_transitions(video.annotation.events(), video.timeline.num_frames())?;
    let sample = TrainingSample::holistic(
        video.timeline.frames().as_array().clone(),
        &partition,
        &tokens,
    )?;
    Ok((sample, tokens))
}

/// Trains on draws `0..batch_size` of `scenario` with event and transition
/// tokens. Parameters are initialized from the scenario seed.
pub fn train(
    scenario: &SyntheticScenario,
    model: &ModelConfig,
    optimizer: &OptimizerConfig,
    steps: usize,
) -> Result<TrainOutcome> {
    if steps == 0 {
        return Err(Error::invalid("training needs at least one step"));
    }
    let samples = training_draws(scenario, optimizer.batch_size)?
        .iter()
        .map(|v| holistic_sample(v).map(|(s, _)| s))
        .collect::<Result<Vec<_>>>()?;
    let params = GroundingParams::init(model, scenario.dim, scenario.seed)?;
    train_batch(params, &samples, optimizer, steps)
}

fn training_draws(scenario: &SyntheticScenario, batch_size: usize) -> Result<Vec<SyntheticVideo>> {
    (0..batch_size.max(1) as u64)
        .map(|d| scenario.generate(d))
        .collect()
}

/// Mean event IoU of both decoders on one held-out draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoderComparison {
    pub holistic: f64,
    pub fixed_threshold: f64,
}

/// Trains a holistic model and an event-only model on the same draws, then
/// scores both on the next unseen draw.
pub fn compare_decoders(
    scenario: &SyntheticScenario,
    model: &ModelConfig,
    optimizer: &OptimizerConfig,
    steps: usize,
    decoder: &FixedThresholdDecoder,
) -> Result<DecoderComparison> {
    let draws = training_draws(scenario, optimizer.batch_size)?;
    let holistic_samples = draws
        .iter()
        .map(|v| holistic_sample(v).map(|(s, _)| s))
        .collect::<Result<Vec<_>>>()?;
    let event_samples = draws
        .iter()
        .map(|v| {
            TrainingSample::events_only(
                v.timeline.frames().as_array().clone(),
                v.annotation.events(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let init = GroundingParams::init(model, scenario.dim, scenario.seed)?;
    let holistic = train_batch(init.clone(), &holistic_samples, optimizer, steps)?;
    let event_only = train_batch(init, &event_samples, optimizer, steps)?;

    let test = scenario.generate(draws.len() as u64)?;
    let planted = test.annotation.events();
    let (_, tokens) = holistic_sample(&test)?;
    let seg = decode_holistic(
        &holistic.params,
        test.timeline.frames().view(),
        &tokens,
        DecodeMode::Joint,
    )?;
    let decoded: Vec<Vec<Segment>> = seg
        .predictions
        .queries
        .iter()
        .map(|q| q.segments.clone())
        .collect();
    let thresholded = decode_event_threshold(
        &event_only.params,
        test.timeline.frames().view(),
        planted.len(),
        decoder,
    )?;
    Ok(DecoderComparison {
        holistic: mean_event_iou(&decoded, planted)?,
        fixed_threshold: mean_event_iou(&thresholded, planted)?,
    })
}

/// Holistic decoding of `frames` with trained parameters.
pub fn decode_holistic(
    params: &GroundingParams,
    frames: ArrayView2<'_, f64>,
    tokens: &StructuralTokenSeq,
    mode: DecodeMode,
) -> Result<Segmentation> {
    let sim = params.similarity(frames, tokens.labels())?;
    holistic_segmentation(sim.view(), params.temperature.tau(), tokens, mode)
}

/// Event-only decoding: threshold each `<ent>` token's cosine similarities.
pub fn decode_event_threshold(
    params: &GroundingParams,
    frames: ArrayView2<'_, f64>,
    num_events: usize,
    decoder: &FixedThresholdDecoder,
) -> Result<Vec<Vec<Segment>>> {
    let kinds = vec![TokenKind::Event; num_events];
    let sim = params.similarity(frames, &kinds)?;
    Ok((0..num_events)
        .map(|i| decoder.decode(&sim.column(i).to_vec()))
        .collect())
}

/// Central difference `(f(x + eps) - f(x - eps)) / (2 eps)`.
pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, eps: f64) -> f64 {
    (f(x + eps) - f(x - eps)) / (2.0 * eps)
}

/// `|a - n| / max(|a|, |n|)`, or `None` when both are negligible.
pub fn relative_error(analytic: f64, numeric: f64) -> Option<f64> {
    let scale = analytic.abs() + numeric.abs();
    if scale <= 1e-8 {
        return None;
    }
    Some((analytic - numeric).abs() / analytic.abs().max(numeric.abs()))
}

fn with_offset(params: &GroundingParams, index: usize, delta: f64) -> GroundingParams {
    let mut p = params.clone();
    let mut remaining = index;
    for tensor in p.tensors_mut() {
        if remaining < tensor.len() {
            tensor[remaining] += delta;
            break;
        }
        remaining -= tensor.len();
    }
    p
}

/// Central differences extrapolated to zero step (Ridders). Starts at
/// step `h` and shrinks it geometrically; returns the estimate and its error.
pub fn ridders_derivative(f: impl Fn(f64) -> f64, x: f64, h: f64) -> (f64, f64) {
    const SHRINK: f64 = 1.4;
    const TABLE: usize = 10;
    const SAFE: f64 = 2.0;
    let shrink2 = SHRINK * SHRINK;
    let mut a = [[0.0f64; TABLE]; TABLE];
    let mut hh = h;
    a[0][0] = central_difference(&f, x, hh);
    let mut best = a[0][0];
    let mut err = f64::MAX;
    for i in 1..TABLE {
        hh /= SHRINK;
        a[0][i] = central_difference(&f, x, hh);
        let mut fac = shrink2;
        for j in 1..=i {
            a[j][i] = (a[j - 1][i] * fac - a[j - 1][i - 1]) / (fac - 1.0);
            fac *= shrink2;
            let e = (a[j][i] - a[j - 1][i])
                .abs()
                .max((a[j][i] - a[j - 1][i - 1]).abs());
            if e <= err {
                err = e;
                best = a[j][i];
            }
        }
        if (a[i][i] - a[i - 1][i - 1]).abs() >= SAFE * err {
            break;
        }
    }
    (best, err)
}

/// Largest relative error between the analytic gradient and extrapolated
/// central differences over coordinates where `|a| + |n| > 1e-8`. `step`
/// is the largest initial difference step tried.
pub fn finite_diff_check(
    params: &GroundingParams,
    sample: &TrainingSample,
    step: f64,
) -> Result<f64> {
    if !(step > 0.0) {
        return Err(Error::invalid(format!("step must be positive, got {step}")));
    }
    let (_, grad) = loss_and_grad(params, sample)?;
    let analytic = grad.to_flat();
    let mut worst: f64 = 0.0;
    for (j, &a) in analytic.iter().enumerate() {
        let loss_at = |delta: f64| {
            forward(&with_offset(params, j, delta), sample).map_or(f64::NAN, |(l, _)| l)
        };
        // The loss can bend sharply where a projected vector nears zero, so
        // keep whichever starting step reports the smallest error.
        let (numeric, _) = [step, step / 10.0, step / 100.0]
            .into_iter()
            .map(|h| ridders_derivative(loss_at, 0.0, h))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("non-empty");
        if !numeric.is_finite() {
            return Err(Error::Degenerate(format!(
                "loss is not finite near coordinate {j}"
            )));
        }
        if let Some(err) = relative_error(a, numeric) {
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grounding::{
        grounding_loss_from_sim, normalize_rows, similarity_matrix, Temperature,
    };
    use crate::temporal::SegmentPartition;
    use ndarray::{array, Array2};

    #[test]
    fn scalar_probe() {
        let d = central_difference(|x| x * x, 1.0, 1e-5);
        assert!(relative_error(2.0, d).unwrap() < 1e-8);
        let (d, err) = ridders_derivative(f64::exp, 0.5, 0.1);
        assert!((d - 0.5f64.exp()).abs() < 1e-10 && err < 1e-8);
        assert_eq!(relative_error(0.0, 1e-10), None);
    }

    #[test]
    fn identity_projectors_reproduce_engine_loss() {
        let frames = array![[0.6, 0.8], [1.0, 0.0], [0.0, 1.0], [0.8, 0.6]];
        let tokens = array![[1.0, 0.0], [0.0, 1.0]];
        let (frames_u, _) = normalize_rows(frames.view()).unwrap();
        let (tokens_u, _) = normalize_rows(tokens.view()).unwrap();
        let partition = SegmentPartition::new(
            vec![Segment::new(1, 2).unwrap(), Segment::new(3, 4).unwrap()],
            4,
        )
        .unwrap();
        let kinds = StructuralTokenSeq::new(vec![TokenKind::Event, TokenKind::Transition]).unwrap();
        let params = GroundingParams {
            frame_projector: Projector::Identity,
            token_projector: Projector::Identity,
            token_embeddings: TokenEmbeddings::PerOccurrence {
                rows: tokens_u.clone(),
            },
            temperature: Temperature::from_tau(0.3).unwrap(),
            caption_head: None,
        };
        let sample = TrainingSample::holistic(frames_u.clone(), &partition, &kinds).unwrap();
        let (loss, _) = forward(&params, &sample).unwrap();
        let sim = similarity_matrix(frames_u.view(), tokens_u.view()).unwrap();
        let engine = grounding_loss_from_sim(sim.view(), 0.3, &partition).unwrap();
        assert_eq!(loss, engine);
    }

    #[test]
    fn uniform_inputs_give_ln_t() {
        let frames = Array2::from_elem((5, 3), 1.0);
        let partition = SegmentPartition::new(
            vec![Segment::new(1, 2).unwrap(), Segment::new(3, 5).unwrap()],
            5,
        )
        .unwrap();
        let kinds = StructuralTokenSeq::new(vec![TokenKind::Event, TokenKind::Transition]).unwrap();
        let params = GroundingParams::init(&ModelConfig::desk(), 3, 1).unwrap();
        let sample = TrainingSample::holistic(frames, &partition, &kinds).unwrap();
        let (loss, _) = forward(&params, &sample).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn single_frame_check_is_zero() {
        let partition = SegmentPartition::whole(1).unwrap();
        let kinds = StructuralTokenSeq::new(vec![TokenKind::Event]).unwrap();
        let params = GroundingParams::init(&ModelConfig::desk(), 4, 9).unwrap();
        let sample =
            TrainingSample::holistic(array![[0.1, -0.3, 0.7, 0.2]], &partition, &kinds).unwrap();
        assert_eq!(finite_diff_check(&params, &sample, 1e-3).unwrap(), 0.0);
    }

    #[test]
    fn zero_steps_rejected() {
        let scenario = SyntheticScenario::default();
        assert!(matches!(
            train(
                &scenario,
                &ModelConfig::desk(),
                &OptimizerConfig::default(),
                0
            ),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn divergence_reports_step() {
        let scenario = SyntheticScenario {
            num_frames: 12,
            event_lengths: vec![3],
            ..Default::default()
        };
        let video = scenario.generate(0).unwrap();
        let (sample, _) = holistic_sample(&video).unwrap();
        let mut params = GroundingParams::init(&ModelConfig::desk(), scenario.dim, 0).unwrap();
        params.temperature.log_tau = f64::NAN;
        assert!(train_sample(params, &sample, &OptimizerConfig::default(), 3).is_err());

        let params = GroundingParams::init(&ModelConfig::desk(), scenario.dim, 0).unwrap();
        let huge = OptimizerConfig {
            kind: OptimizerKind::Sgd,
            learning_rate: 1e300,
            warmup_ratio: 0.0,
            ..Default::default()
        };
        match train_sample(params, &sample, &huge, 5) {
            Err(Error::Training { step, .. }) => assert!(step >= 1),
            Err(e) => panic!("unexpected error {e}"),
            Ok(_) => panic!("expected divergence"),
        }
    }
}
