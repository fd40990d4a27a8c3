mod common;

use chronoseg::grounding::{
    grounding_loss_for_segments, grounding_loss_grad, normalize_rows, similarity_matrix,
};
use chronoseg::trainer::{central_difference, finite_diff_check, relative_error};
use common::*;

#[test]
fn full_pipeline_matches_central_differences() {
    let mut rng = rng(2024);
    let mut worst: f64 = 0.0;
    for i in 0..120 {
        let (params, sample) = gradient_instance(&mut rng, i % 3 == 0);
        let err = finite_diff_check(&params, &sample, 1e-3).unwrap();
        worst = worst.max(err);
        assert!(err < 1e-4, "instance {i}: relative error {err}");
    }
    println!("worst relative error {worst:.3e}");
}

/// Loss computed from scratch: normalize, similarity, column softmax,
/// mean per-segment log-likelihood.
fn loss_from_raw(
    frames: &ndarray::Array2<f64>,
    tokens: &ndarray::Array2<f64>,
    log_tau: f64,
    p: &chronoseg::temporal::SegmentPartition,
) -> f64 {
    let (f, _) = normalize_rows(frames.view()).unwrap();
    let (t, _) = normalize_rows(tokens.view()).unwrap();
    let sim = similarity_matrix(f.view(), t.view()).unwrap();
    grounding_loss_for_segments(sim.view(), log_tau.exp(), p.segments()).unwrap()
}

#[test]
fn engine_gradient_matches_central_differences() {
    let mut rng = rng(77);
    for _ in 0..100 {
        let t = rand::Rng::random_range(&mut rng, 1..=16);
        let m = rand::Rng::random_range(&mut rng, 1..=t.min(4));
        let c = rand::Rng::random_range(&mut rng, 1..=8);
        let p = random_partition(&mut rng, t, m);
        let frames = normal_matrix(&mut rng, t, c);
        let tokens = normal_matrix(&mut rng, m, c);
        let log_tau = rand::Rng::random_range(&mut rng, -3.0..0.0);
        let g = grounding_loss_grad(frames.view(), tokens.view(), log_tau, &p).unwrap();
        let check = |a: f64, n: f64| {
            if let Some(e) = relative_error(a, n) {
                assert!(e < 1e-4, "analytic {a} numeric {n}");
            }
        };
        for idx in ndarray::indices_of(&frames) {
            let n = central_difference(
                |x| {
                    let mut f = frames.clone();
                    f[idx] = x;
                    loss_from_raw(&f, &tokens, log_tau, &p)
                },
                frames[idx],
                1e-5,
            );
            check(g.frames[idx], n);
        }
        for idx in ndarray::indices_of(&tokens) {
            let n = central_difference(
                |x| {
                    let mut k = tokens.clone();
                    k[idx] = x;
                    loss_from_raw(&frames, &k, log_tau, &p)
                },
                tokens[idx],
                1e-5,
            );
            check(g.tokens[idx], n);
        }
        let n = central_difference(|x| loss_from_raw(&frames, &tokens, x, &p), log_tau, 1e-5);
        check(g.log_tau, n);
        assert_eq!(g.loss, loss_from_raw(&frames, &tokens, log_tau, &p));
    }
}
