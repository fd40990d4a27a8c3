#![allow(dead_code)]

pub mod oracles;

use chronoseg::grounding::Temperature;
use chronoseg::temporal::{Segment, SegmentPartition, StructuralTokenSeq, TokenKind};
use chronoseg::trainer::{CaptionHead, GroundingParams, ModelConfig, TrainingSample};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

/// Random tiling of `1..=t` into `m` segments.
pub fn random_partition(rng: &mut ChaCha8Rng, t: usize, m: usize) -> SegmentPartition {
    let mut cuts: Vec<usize> = (2..=t).collect();
    while cuts.len() > m - 1 {
        cuts.remove(rng.random_range(0..cuts.len()));
    }
    let mut starts = vec![1];
    starts.extend(cuts);
    let segs = starts
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let e = starts.get(i + 1).map_or(t, |n| n - 1);
            Segment::new(s, e).unwrap()
        })
        .collect();
    SegmentPartition::new(segs, t).unwrap()
}

pub fn random_kinds(rng: &mut ChaCha8Rng, m: usize) -> StructuralTokenSeq {
    StructuralTokenSeq::new(
        (0..m)
            .map(|_| {
                if rng.random_bool(0.5) {
                    TokenKind::Event
                } else {
                    TokenKind::Transition
                }
            })
            .collect(),
    )
    .unwrap()
}

/// Small random model and sample: T <= 16, M' <= 4, C <= 8. With
/// `captions`, a bigram caption head and a random caption are attached.
pub fn gradient_instance(
    rng: &mut ChaCha8Rng,
    captions: bool,
) -> (GroundingParams, TrainingSample) {
    let t = rng.random_range(1..=16);
    let m = rng.random_range(1..=t.min(4));
    let c = rng.random_range(1..=8);
    let partition = random_partition(rng, t, m);
    let kinds = random_kinds(rng, m);
    let frames = normal_matrix(rng, t, c);
    let config = ModelConfig {
        hidden_size: rng.random_range(2..=8),
        output_size: rng.random_range(2..=8),
        token_dim: rng.random_range(2..=8),
        positional_scale: 1.0,
        initial_temperature: 0.07,
    };
    let mut params = GroundingParams::init(&config, c, rng.random()).unwrap();
    params.temperature = Temperature::from_tau(rng.random_range(0.05..1.0)).unwrap();
    let mut sample = TrainingSample::holistic(frames, &partition, &kinds).unwrap();
    if captions {
        let vocab = 5;
        params.caption_head = Some(CaptionHead {
            weights: normal_matrix(rng, vocab, vocab),
        });
        let len = rng.random_range(1..=6);
        let ids = (0..len).map(|_| rng.random_range(0..vocab)).collect();
        sample = sample.with_captions(ids, 2);
    }
    (params, sample)
}
