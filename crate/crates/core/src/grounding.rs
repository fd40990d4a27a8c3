//! Contrastive grounding between structural tokens and frames.
//!
//! Frames and tokens are L2-normalized, compared by dot product, and each
//! token's similarity column is turned into a distribution over frames with a
//! temperature-scaled softmax. The grounding loss is the mean, over tokens,
//! of the per-frame average negative log-probability of the frames inside the
//! token's own segment.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::temporal::{Segment, SegmentPartition};

/// Vectors with norm at or below this are treated as directionless.
pub const NORM_EPS: f64 = 1e-12;

/// Initial temperature for the grounding softmax.
pub const DEFAULT_TEMPERATURE: f64 = 0.07;

/// Row-major `rows x dim` matrix of finite reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Array2<f64>", into = "Array2<f64>")]
pub struct EmbeddingMatrix(Array2<f64>);

impl EmbeddingMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let (rows, dim) = data.dim();
        if rows == 0 || dim == 0 {
            return Err(Error::invalid(format!(
                "embedding matrix must be non-empty, got {rows}x{dim}"
            )));
        }
        if let Some(((r, c), v)) = data.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite embedding entry {v} at ({r}, {c})"
            )));
        }
        Ok(Self(data.as_standard_layout().into_owned()))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

impl TryFrom<Array2<f64>> for EmbeddingMatrix {
    type Error = Error;

    fn try_from(a: Array2<f64>) -> Result<Self> {
        Self::new(a)
    }
}

impl From<EmbeddingMatrix> for Array2<f64> {
    fn from(m: EmbeddingMatrix) -> Self {
        m.0
    }
}

/// The `P x C` token grid of one frame before spatial pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatureMap(Array2<f64>);

impl FrameFeatureMap {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        EmbeddingMatrix::new(data).map(|m| Self(m.into_inner()))
    }

    pub fn tokens_per_frame(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }
}

/// Softmax temperature stored in log space so that `tau > 0` always holds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Temperature {
    pub log_tau: f64,
}

impl Temperature {
    pub fn from_tau(tau: f64) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::invalid(format!(
                "temperature must be positive, got {tau}"
            )));
        }
        Ok(Self { log_tau: tau.ln() })
    }

    pub fn tau(&self) -> f64 {
        self.log_tau.exp()
    }
}

impl Default for Temperature {
    fn default() -> Self {
        Self {
            log_tau: DEFAULT_TEMPERATURE.ln(),
        }
    }
}

/// `T x M'` table whose column `i` is the distribution of frames given token `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityTable(Array2<f64>);

impl ProbabilityTable {
    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn num_frames(&self) -> usize {
        self.0.nrows()
    }

    pub fn num_tokens(&self) -> usize {
        self.0.ncols()
    }

    pub fn column(&self, i: usize) -> Array1<f64> {
        self.0.column(i).to_owned()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > NORM_EPS) {
        return Err(Error::Degenerate(format!(
            "cannot normalize vector with norm {norm:e}"
        )));
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

/// Normalizes every row; returns the unit rows and the original norms.
pub fn normalize_rows(m: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Array1<f64>)> {
    let mut out = m.to_owned();
    let mut norms = Array1::zeros(m.nrows());
    for (r, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let norm = row.dot(&row).sqrt();
        if !(norm > NORM_EPS) {
            return Err(Error::Degenerate(format!(
                "row {r} has norm {norm:e} and cannot be normalized"
            )));
        }
        row /= norm;
        norms[r] = norm;
    }
    Ok((out, norms))
}

/// Mean over the `P` spatial tokens of a frame.
pub fn spatial_pool(frame: &FrameFeatureMap) -> Array1<f64> {
    frame
        .0
        .mean_axis(Axis(0))
        .expect("feature map has at least one row")
}

/// `frames · tokensᵀ`; with unit rows this is the cosine similarity table.
pub fn similarity_matrix(
    frames: ArrayView2<'_, f64>,
    tokens: ArrayView2<'_, f64>,
) -> Result<Array2<f64>> {
    if frames.ncols() != tokens.ncols() {
        return Err(Error::invalid(format!(
            "dimension mismatch: frames have {} columns, tokens have {}",
            frames.ncols(),
            tokens.ncols()
        )));
    }
    Ok(frames.dot(&tokens.t()))
}

fn check_tau<F: Float + std::fmt::Display>(tau: F) -> Result<()> {
    if !(tau > F::zero()) || !tau.is_finite() {
        return Err(Error::invalid(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    Ok(())
}

/// Column-wise log-softmax of `sim / tau` with max subtraction.
fn column_log_softmax<F: Float>(sim: ArrayView2<'_, F>, tau: F) -> Array2<F> {
    let mut out = sim.mapv(|s| s / tau);
    for mut col in out.axis_iter_mut(Axis(1)) {
        let max = col.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
        let sum = col.iter().fold(F::zero(), |acc, &v| acc + (v - max).exp());
        let lse = max + sum.ln();
        col.mapv_inplace(|v| v - lse);
    }
    out
}

/// Distribution over frames for each token: softmax of `sim[:, i] / tau`.
pub fn frame_given_token_probs(sim: ArrayView2<'_, f64>, tau: f64) -> Result<ProbabilityTable> {
    check_tau(tau)?;
    if sim.nrows() == 0 || sim.ncols() == 0 {
        return Err(Error::invalid("similarity matrix is empty"));
    }
    Ok(ProbabilityTable(
        column_log_softmax(sim, tau).mapv(f64::exp),
    ))
}

/// 32-bit variant of [`frame_given_token_probs`].
pub fn frame_given_token_probs_f32(sim: ArrayView2<'_, f32>, tau: f32) -> Result<Array2<f32>> {
    check_tau(tau)?;
    Ok(column_log_softmax(sim, tau).mapv(f32::exp))
}

fn check_columns(cols: usize, partition: &SegmentPartition) -> Result<()> {
    if cols != partition.len() {
        return Err(Error::invalid(format!(
            "probability table has {cols} columns but partition has {} segments",
            partition.len()
        )));
    }
    Ok(())
}

fn check_rows(rows: usize, partition: &SegmentPartition) -> Result<()> {
    if rows != partition.total_frames() {
        return Err(Error::invalid(format!(
            "table has {rows} frames but partition covers {}",
            partition.total_frames()
        )));
    }
    Ok(())
}

fn check_segments(rows: usize, cols: usize, segments: &[Segment]) -> Result<()> {
    if segments.is_empty() {
        return Err(Error::invalid("no segments to ground"));
    }
    if cols != segments.len() {
        return Err(Error::invalid(format!(
            "{cols} token columns for {} segments",
            segments.len()
        )));
    }
    if let Some(s) = segments.iter().find(|s| s.end() > rows) {
        return Err(Error::invalid(format!("segment {s} exceeds {rows} frames")));
    }
    Ok(())
}

/// Mean over segments of the per-frame average of `-log_p[t, i]` inside segment `i`.
fn segment_average_nll<F: Float>(log_p: ArrayView2<'_, F>, segments: &[Segment]) -> F {
    let mut total = F::zero();
    for (i, seg) in segments.iter().enumerate() {
        let col = log_p.column(i);
        let sum = seg.zero_based().fold(F::zero(), |acc, t| acc + col[t]);
        total = total - sum / F::from(seg.len()).unwrap();
    }
    total / F::from(segments.len()).unwrap()
}

/// Grounding loss from an already-computed probability table.
///
/// Each segment's log-probabilities are averaged over its inclusive frame
/// count `end - start + 1`, so single-frame segments are well defined.
pub fn grounding_loss(probs: &ProbabilityTable, partition: &SegmentPartition) -> Result<f64> {
    check_columns(probs.num_tokens(), partition)?;
    check_rows(probs.num_frames(), partition)?;
    let log_p = probs.0.mapv(f64::ln);
    Ok(segment_average_nll(log_p.view(), partition.segments()))
}

/// Grounding loss straight from similarities, without materializing probabilities.
///
/// Preferable to [`grounding_loss`] when `tau` is small enough that some
/// probabilities underflow.
pub fn grounding_loss_from_sim(
    sim: ArrayView2<'_, f64>,
    tau: f64,
    partition: &SegmentPartition,
) -> Result<f64> {
    check_tau(tau)?;
    check_columns(sim.ncols(), partition)?;
    check_rows(sim.nrows(), partition)?;
    Ok(segment_average_nll(
        column_log_softmax(sim, tau).view(),
        partition.segments(),
    ))
}

/// Grounding loss for token `i` on `segments[i]`; the segments need not
/// cover the video.
pub fn grounding_loss_for_segments(
    sim: ArrayView2<'_, f64>,
    tau: f64,
    segments: &[Segment],
) -> Result<f64> {
    check_tau(tau)?;
    check_segments(sim.nrows(), sim.ncols(), segments)?;
    Ok(segment_average_nll(
        column_log_softmax(sim, tau).view(),
        segments,
    ))
}

/// 32-bit fast path of [`grounding_loss_from_sim`].
pub fn grounding_loss_from_sim_f32(
    sim: ArrayView2<'_, f32>,
    tau: f32,
    partition: &SegmentPartition,
) -> Result<f32> {
    check_tau(tau)?;
    check_columns(sim.ncols(), partition)?;
    check_rows(sim.nrows(), partition)?;
    Ok(segment_average_nll(
        column_log_softmax(sim, tau).view(),
        partition.segments(),
    ))
}

/// Loss value together with gradients w.r.t. the raw (unnormalized) inputs.
#[derive(Debug, Clone)]
pub struct GroundingGrad {
    pub loss: f64,
    pub frames: Array2<f64>,
    pub tokens: Array2<f64>,
    pub log_tau: f64,
}

/// Gradient of `x / |x|` applied row-wise: `(g - u (u·g)) / |x|`.
fn backprop_normalize(unit: &Array2<f64>, norms: &Array1<f64>, grad: &Array2<f64>) -> Array2<f64> {
    let mut out = grad.clone();
    for ((mut g, u), &n) in out
        .axis_iter_mut(Axis(0))
        .zip(unit.axis_iter(Axis(0)))
        .zip(norms.iter())
    {
        let proj = u.dot(&g);
        g.scaled_add(-proj, &u);
        g /= n;
    }
    out
}

/// Analytic gradient of the grounding loss through row normalization,
/// the similarity product, and the log-temperature.
pub fn grounding_loss_grad(
    frames_raw: ArrayView2<'_, f64>,
    tokens_raw: ArrayView2<'_, f64>,
    log_tau: f64,
    partition: &SegmentPartition,
) -> Result<GroundingGrad> {
    check_columns(tokens_raw.nrows(), partition)?;
    check_rows(frames_raw.nrows(), partition)?;
    grounding_loss_grad_segments(frames_raw, tokens_raw, log_tau, partition.segments())
}

/// [`grounding_loss_grad`] for token `i` grounded on `segments[i]`, where the
/// segments need not cover the video (event-only training).
pub fn grounding_loss_grad_segments(
    frames_raw: ArrayView2<'_, f64>,
    tokens_raw: ArrayView2<'_, f64>,
    log_tau: f64,
    segments: &[Segment],
) -> Result<GroundingGrad> {
    let tau = log_tau.exp();
    check_tau(tau)?;
    let (frames, frame_norms) = normalize_rows(frames_raw)?;
    let (tokens, token_norms) = normalize_rows(tokens_raw)?;
    let sim = similarity_matrix(frames.view(), tokens.view())?;
    check_segments(sim.nrows(), sim.ncols(), segments)?;

    let log_p = column_log_softmax(sim.view(), tau);
    let loss = segment_average_nll(log_p.view(), segments);

    // dL/dA where A = sim / tau: -(w - p) / M', w the in-segment averaging weights.
    let m = segments.len() as f64;
    let mut d_logits = log_p.mapv(f64::exp);
    for (i, seg) in segments.iter().enumerate() {
        let w = 1.0 / seg.len() as f64;
        let mut col = d_logits.column_mut(i);
        for t in seg.zero_based() {
            col[t] -= w;
        }
    }
    d_logits /= m;

    // A depends on log_tau through A = sim * exp(-log_tau).
    let d_log_tau = -(&d_logits * &sim).sum() / tau;
    let d_sim = d_logits / tau;

    let d_frames_unit = d_sim.dot(&tokens);
    let d_tokens_unit = d_sim.t().dot(&frames);

    Ok(GroundingGrad {
        loss,
        frames: backprop_normalize(&frames, &frame_norms, &d_frames_unit),
        tokens: backprop_normalize(&tokens, &token_norms, &d_tokens_unit),
        log_tau: d_log_tau,
    })
}

fn log_softmax_rows(logits: ArrayView2<'_, f64>) -> Array2<f64> {
    column_log_softmax(logits.t(), 1.0).reversed_axes()
}

fn check_targets(logits: ArrayView2<'_, f64>, targets: &[usize]) -> Result<()> {
    let (n, vocab) = logits.dim();
    if n != targets.len() {
        return Err(Error::invalid(format!(
            "{n} logit rows but {} targets",
            targets.len()
        )));
    }
    if n == 0 {
        return Err(Error::invalid(
            "language modeling loss needs at least one position",
        ));
    }
    if let Some((pos, &t)) = targets.iter().enumerate().find(|(_, &t)| t >= vocab) {
        return Err(Error::invalid(format!(
            "target id {t} at position {pos} outside vocabulary of size {vocab}"
        )));
    }
    Ok(())
}

/// Mean next-token cross entropy over `N` positions of `N x V` logits.
pub fn lm_loss(logits: ArrayView2<'_, f64>, targets: &[usize]) -> Result<f64> {
    check_targets(logits, targets)?;
    let log_p = log_softmax_rows(logits);
    let nll: f64 = targets
        .iter()
        .enumerate()
        .map(|(n, &t)| -log_p[[n, t]])
        .sum();
    Ok(nll / targets.len() as f64)
}

/// [`lm_loss`] and its gradient with respect to the logits.
pub fn lm_loss_grad(logits: ArrayView2<'_, f64>, targets: &[usize]) -> Result<(f64, Array2<f64>)> {
    check_targets(logits, targets)?;
    let log_p = log_softmax_rows(logits);
    let n = targets.len() as f64;
    let mut grad = log_p.mapv(f64::exp);
    let mut nll = 0.0;
    for (row, &t) in targets.iter().enumerate() {
        nll -= log_p[[row, t]];
        grad[[row, t]] -= 1.0;
    }
    grad /= n;
    Ok((nll / n, grad))
}

/// Unweighted sum of the grounding and language modeling terms.
pub fn combined_loss(grounding: f64, lm: f64) -> f64 {
    grounding + lm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::temporal::Segment;
    use ndarray::array;
    use proptest::prelude::*;

    fn partition(bounds: &[(usize, usize)], t: usize) -> SegmentPartition {
        SegmentPartition::new(
            bounds
                .iter()
                .map(|&(s, e)| Segment::new(s, e).unwrap())
                .collect(),
            t,
        )
        .unwrap()
    }

    #[test]
    fn normalize_examples() {
        let v = l2_normalize(&[3.0, 4.0]).unwrap();
        assert!((v[0] - 0.6).abs() < 1e-15 && (v[1] - 0.8).abs() < 1e-15);
        assert_eq!(l2_normalize(&[1.0, 0.0, 0.0]).unwrap(), vec![1.0, 0.0, 0.0]);
        assert!(matches!(
            l2_normalize(&[0.0, 0.0]),
            Err(Error::Degenerate(_))
        ));
        assert!(normalize_rows(array![[1.0, 1.0], [0.0, 0.0]].view()).is_err());
    }

    #[test]
    fn pool_examples() {
        let f = FrameFeatureMap::new(array![[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(spatial_pool(&f), array![2.0, 3.0]);
        let same = FrameFeatureMap::new(array![[0.5, -1.0], [0.5, -1.0], [0.5, -1.0]]).unwrap();
        assert_eq!(spatial_pool(&same), array![0.5, -1.0]);
        let one = FrameFeatureMap::new(array![[7.0, 8.0, 9.0]]).unwrap();
        assert_eq!(spatial_pool(&one), array![7.0, 8.0, 9.0]);
    }

    #[test]
    fn embedding_matrix_rejects_empty_and_nan() {
        assert!(EmbeddingMatrix::new(Array2::zeros((0, 3))).is_err());
        assert!(EmbeddingMatrix::new(array![[1.0, f64::NAN]]).is_err());
    }

    #[test]
    fn similarity_examples() {
        let eye = array![[1.0, 0.0], [0.0, 1.0]];
        assert_eq!(similarity_matrix(eye.view(), eye.view()).unwrap(), eye);
        let s = similarity_matrix(array![[0.6, 0.8]].view(), array![[0.8, 0.6]].view()).unwrap();
        assert!((s[[0, 0]] - 0.96).abs() < 1e-15);
        let u = l2_normalize(&[0.3, -1.2, 2.0]).unwrap();
        let u = Array2::from_shape_vec((1, 3), u).unwrap();
        assert!((similarity_matrix(u.view(), u.view()).unwrap()[[0, 0]] - 1.0).abs() < 1e-12);
        assert!(similarity_matrix(eye.view(), array![[1.0, 0.0, 0.0]].view()).is_err());
    }

    #[test]
    fn probability_examples() {
        let p = frame_given_token_probs(Array2::from_elem((3, 2), 0.4).view(), 0.3).unwrap();
        assert!(p.view().iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));

        let e = std::f64::consts::E;
        let p = frame_given_token_probs(array![[1.0], [0.0]].view(), 1.0).unwrap();
        assert!((p.view()[[0, 0]] - e / (e + 1.0)).abs() < 1e-12);
        assert!((p.view()[[0, 0]] - 0.73106).abs() < 1e-5);
        assert!((p.view()[[1, 0]] - 0.26894).abs() < 1e-5);

        let p = frame_given_token_probs(array![[1.0], [0.0]].view(), 100.0).unwrap();
        assert!(p.view().iter().all(|&x| (x - 0.5).abs() < 0.0025));

        assert!(frame_given_token_probs(array![[1.0]].view(), 0.0).is_err());
        assert!(frame_given_token_probs(array![[1.0]].view(), -1.0).is_err());
    }

    #[test]
    fn loss_examples() {
        let part = partition(&[(1, 1), (2, 3), (4, 4)], 4);
        let uniform = frame_given_token_probs(Array2::from_elem((4, 3), 0.2).view(), 0.07).unwrap();
        assert!((grounding_loss(&uniform, &part).unwrap() - 4f64.ln()).abs() < 1e-12);

        let single = frame_given_token_probs(array![[0.3]].view(), 0.07).unwrap();
        assert_eq!(
            grounding_loss(&single, &partition(&[(1, 1)], 1)).unwrap(),
            0.0
        );

        let p = frame_given_token_probs(array![[1.0], [0.0]].view(), 1.0).unwrap();
        let oracle = -((0.7310585786300049f64).ln() + (0.2689414213699951f64).ln()) / 2.0;
        let got = grounding_loss(&p, &partition(&[(1, 2)], 2)).unwrap();
        assert!((got - oracle).abs() < 1e-12);
        assert!((got - 0.81326).abs() < 1e-5);

        assert!(grounding_loss(&p, &partition(&[(1, 1), (2, 2)], 2)).is_err());
    }

    #[test]
    fn loss_from_sim_matches_table_path() {
        let sim = array![[0.2, -0.4], [0.9, 0.1], [-0.3, 0.5]];
        let part = partition(&[(1, 2), (3, 3)], 3);
        let a = grounding_loss(&frame_given_token_probs(sim.view(), 0.5).unwrap(), &part).unwrap();
        let b = grounding_loss_from_sim(sim.view(), 0.5, &part).unwrap();
        assert!((a - b).abs() < 1e-14);
        let c = grounding_loss_from_sim_f32(sim.mapv(|x| x as f32).view(), 0.5, &part).unwrap();
        assert!(((c as f64) - b).abs() / b < 1e-4);
    }

    #[test]
    fn gradient_zero_for_single_frame() {
        let g = grounding_loss_grad(
            array![[0.3, -0.2]].view(),
            array![[1.0, 0.5]].view(),
            0.07f64.ln(),
            &partition(&[(1, 1)], 1),
        )
        .unwrap();
        assert_eq!(g.loss, 0.0);
        assert!(g.frames.iter().chain(g.tokens.iter()).all(|&x| x == 0.0));
        assert_eq!(g.log_tau, 0.0);
    }

    #[test]
    fn gradient_of_log_tau_vanishes_at_uniform_point() {
        let frames = Array2::from_elem((4, 3), 0.5);
        let tokens = Array2::from_elem((2, 3), 0.5);
        let g = grounding_loss_grad(
            frames.view(),
            tokens.view(),
            0.2f64.ln(),
            &partition(&[(1, 1), (2, 4)], 4),
        )
        .unwrap();
        assert!(g.log_tau.abs() < 1e-14);
        assert!((g.loss - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn lm_examples() {
        let uniform = Array2::zeros((3, 8));
        assert!((lm_loss(uniform.view(), &[0, 5, 7]).unwrap() - 8f64.ln()).abs() < 1e-12);

        let l = lm_loss(array![[10.0, 0.0]].view(), &[0]).unwrap();
        assert!((l - (-10f64).exp().ln_1p()).abs() < 1e-15);
        assert!((l - 4.5399e-5).abs() < 1e-9);

        let a = lm_loss(array![[1.0, 2.0, 0.0]].view(), &[2]).unwrap();
        let b = lm_loss(array![[0.5, -1.0, 3.0]].view(), &[1]).unwrap();
        let both = lm_loss(array![[1.0, 2.0, 0.0], [0.5, -1.0, 3.0]].view(), &[2, 1]).unwrap();
        assert!((both - (a + b) / 2.0).abs() < 1e-15);

        assert!(lm_loss(uniform.view(), &[0, 8, 1]).is_err());
        assert!(lm_loss(uniform.view(), &[0]).is_err());
    }

    #[test]
    fn lm_grad_matches_finite_differences() {
        let logits = array![[0.3, -1.2, 0.8], [2.0, 0.1, -0.5]];
        let targets = [2, 0];
        let (_, grad) = lm_loss_grad(logits.view(), &targets).unwrap();
        let h = 1e-6;
        for idx in [[0, 0], [0, 2], [1, 1]] {
            let mut plus = logits.clone();
            plus[idx] += h;
            let mut minus = logits.clone();
            minus[idx] -= h;
            let fd = (lm_loss(plus.view(), &targets).unwrap()
                - lm_loss(minus.view(), &targets).unwrap())
                / (2.0 * h);
            assert!((fd - grad[idx]).abs() < 1e-8);
        }
    }

    #[test]
    fn combined_examples() {
        assert_eq!(combined_loss(1.0, 2.0), 3.0);
        assert_eq!(combined_loss(0.7, 0.0), 0.7);
        assert!((combined_loss(4f64.ln(), 8f64.ln()) - 32f64.ln()).abs() < 1e-12);
        assert!((32f64.ln() - 3.4657).abs() < 1e-4);
    }

    #[test]
    fn temperature_defaults() {
        let t = Temperature::default();
        assert!((t.tau() - 0.07).abs() < 1e-15);
        assert!(Temperature::from_tau(0.0).is_err());
    }

    fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
        prop::collection::vec(-1.0f64..1.0, rows * cols)
            .prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
    }

    fn sim_and_tau() -> impl Strategy<Value = (Array2<f64>, f64)> {
        (1usize..12, 1usize..5).prop_flat_map(|(t, m)| (matrix(t, m), 0.01f64..10.0))
    }

    proptest! {
        #[test]
        fn columns_sum_to_one((sim, tau) in sim_and_tau()) {
            let p = frame_given_token_probs(sim.view(), tau).unwrap();
            for col in p.view().axis_iter(Axis(1)) {
                prop_assert!((col.sum() - 1.0).abs() < 1e-9);
                prop_assert!(col.iter().all(|&x| x > 0.0 && x <= 1.0));
            }
        }

        #[test]
        fn column_order_follows_similarity((sim, tau) in sim_and_tau()) {
            let p = frame_given_token_probs(sim.view(), tau).unwrap();
            for i in 0..sim.ncols() {
                for a in 0..sim.nrows() {
                    for b in 0..sim.nrows() {
                        if sim[[a, i]] > sim[[b, i]] {
                            prop_assert!(p.view()[[a, i]] >= p.view()[[b, i]]);
                        }
                    }
                }
            }
        }

        #[test]
        fn column_shift_invariance((sim, tau) in sim_and_tau(), shift in prop::collection::vec(-5.0f64..5.0, 5)) {
            let mut shifted = sim.clone();
            for (i, mut col) in shifted.axis_iter_mut(Axis(1)).enumerate() {
                col += shift[i];
            }
            let a = frame_given_token_probs(sim.view(), tau).unwrap();
            let b = frame_given_token_probs(shifted.view(), tau).unwrap();
            for (x, y) in a.view().iter().zip(b.view().iter()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn f32_path_agrees((sim, tau) in sim_and_tau()) {
            let tau = tau.max(0.1);
            let part = SegmentPartition::whole(sim.nrows()).unwrap();
            let col = sim.column(0).to_owned().insert_axis(Axis(1));
            let full = grounding_loss_from_sim(col.view(), tau, &part).unwrap();
            let fast = grounding_loss_from_sim_f32(col.mapv(|x| x as f32).view(), tau as f32, &part).unwrap();
            prop_assert!(((fast as f64) - full).abs() <= 1e-4 * full.abs().max(1e-3));
        }
    }
}
