//! Learnable pieces of the grounding pipeline and their hand-written backward pass.
//!
//! pooled frames ──frame projector──┐
//!                                  ├─ normalize ─ similarity ─ softmax/τ ─ loss
//! token embeddings ─token projector┘
//!
//! Token embeddings stand in for LLM hidden states: each occurrence is its
//! type embedding (`<ent>` or `<tst>`) plus a fixed sinusoidal code for its
//! position in the token sequence.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grounding::{
    grounding_loss_grad_segments, lm_loss_grad, normalize_rows, similarity_matrix, GroundingGrad,
    Temperature,
};
use crate::temporal::{Segment, SegmentPartition, StructuralTokenSeq, TokenKind};

/// `tanh`-approximated GELU.
fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let inner = C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let d_inner = C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner
}

/// Two affine layers with a GELU in between: `W2 · gelu(W1 x + b1) + b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl Mlp {
    /// Xavier-normal weights, zero biases.
    pub fn init(rng: &mut ChaCha8Rng, input: usize, hidden: usize, output: usize) -> Self {
        let mut xavier = |rows: usize, cols: usize| {
            let std = (2.0 / (rows + cols) as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| std * rng.sample::<f64, _>(StandardNormal))
        };
        let w1 = xavier(hidden, input);
        let w2 = xavier(output, hidden);
        Self {
            w1,
            b1: Array1::zeros(hidden),
            w2,
            b2: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.nrows()
    }

    fn zeros_like(&self) -> Self {
        Self {
            w1: Array2::zeros(self.w1.raw_dim()),
            b1: Array1::zeros(self.b1.raw_dim()),
            w2: Array2::zeros(self.w2.raw_dim()),
            b2: Array1::zeros(self.b2.raw_dim()),
        }
    }

    fn check_shapes(&self) -> Result<()> {
        let ok = self.b1.len() == self.w1.nrows()
            && self.w2.ncols() == self.w1.nrows()
            && self.b2.len() == self.w2.nrows();
        if !ok {
            return Err(Error::invalid("inconsistent projector weight shapes"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum Projector {
    Identity,
    Mlp(Mlp),
}

/// Values kept from a projector's forward pass.
#[derive(Debug, Clone)]
struct ProjectorCache {
    input: Array2<f64>,
    pre_activation: Option<Array2<f64>>,
    hidden: Option<Array2<f64>>,
}

impl Projector {
    fn forward(&self, x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, ProjectorCache)> {
        match self {
            Projector::Identity => Ok((
                x.to_owned(),
                ProjectorCache {
                    input: x.to_owned(),
                    pre_activation: None,
                    hidden: None,
                },
            )),
            Projector::Mlp(m) => {
                if x.ncols() != m.input_dim() {
                    return Err(Error::invalid(format!(
                        "projector expects dimension {}, got {}",
                        m.input_dim(),
                        x.ncols()
                    )));
                }
                let pre = x.dot(&m.w1.t()) + &m.b1;
                let hidden = pre.mapv(gelu);
                let out = hidden.dot(&m.w2.t()) + &m.b2;
                Ok((
                    out,
                    ProjectorCache {
                        input: x.to_owned(),
                        pre_activation: Some(pre),
                        hidden: Some(hidden),
                    },
                ))
            }
        }
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    fn backward(
        &self,
        cache: &ProjectorCache,
        d_out: &Array2<f64>,
        grad: &mut Projector,
    ) -> Array2<f64> {
        match (self, grad) {
            (Projector::Mlp(m), Projector::Mlp(g)) => {
                let pre = cache.pre_activation.as_ref().expect("mlp cache");
                let hidden = cache.hidden.as_ref().expect("mlp cache");
                g.w2 += &d_out.t().dot(hidden);
                g.b2 += &d_out.sum_axis(Axis(0));
                let d_hidden = d_out.dot(&m.w2);
                let d_pre = d_hidden * pre.mapv(gelu_grad);
                g.w1 += &d_pre.t().dot(&cache.input);
                g.b1 += &d_pre.sum_axis(Axis(0));
                d_pre.dot(&m.w1)
            }
            _ => d_out.clone(),
        }
    }

    fn zeros_like(&self) -> Self {
        match self {
            Projector::Identity => Projector::Identity,
            Projector::Mlp(m) => Projector::Mlp(m.zeros_like()),
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Projector::Identity => Vec::new(),
            Projector::Mlp(m) => vec![
                m.w1.as_slice_mut().expect("standard layout"),
                m.b1.as_slice_mut().expect("standard layout"),
                m.w2.as_slice_mut().expect("standard layout"),
                m.b2.as_slice_mut().expect("standard layout"),
            ],
        }
    }
}

/// Fixed sinusoidal code for occurrence `position` (0-based) in `dim` dimensions.
pub fn positional_code(position: usize, dim: usize) -> Array1<f64> {
    Array1::from_shape_fn(dim, |j| {
        let pair = (j / 2) as f64;
        let freq = 10000f64.powf(-2.0 * pair / dim as f64);
        let angle = position as f64 * freq;
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// Where structural-token embeddings come from before projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TokenEmbeddings {
    /// Shared `2 x D` type table (row 0 `<ent>`, row 1 `<tst>`) plus positional codes.
    Typed {
        types: Array2<f64>,
        positional_scale: f64,
    },
    /// One free row per occurrence; the sequence length is fixed.
    PerOccurrence { rows: Array2<f64> },
}

impl TokenEmbeddings {
    fn type_row(kind: TokenKind) -> usize {
        match kind {
            TokenKind::Event => 0,
            TokenKind::Transition => 1,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            TokenEmbeddings::Typed { types, .. } => types.ncols(),
            TokenEmbeddings::PerOccurrence { rows } => rows.ncols(),
        }
    }

    /// `M' x D` embeddings for a token sequence.
    pub fn embed(&self, kinds: &[TokenKind]) -> Result<Array2<f64>> {
        match self {
            TokenEmbeddings::Typed {
                types,
                positional_scale,
            } => {
                let dim = types.ncols();
                let mut out = Array2::zeros((kinds.len(), dim));
                for (i, (mut row, &k)) in out.axis_iter_mut(Axis(0)).zip(kinds).enumerate() {
                    row.assign(&types.row(Self::type_row(k)));
                    row.scaled_add(*positional_scale, &positional_code(i, dim));
                }
                Ok(out)
            }
            TokenEmbeddings::PerOccurrence { rows } => {
                if rows.nrows() != kinds.len() {
                    return Err(Error::invalid(format!(
                        "{} token embeddings for {} tokens",
                        rows.nrows(),
                        kinds.len()
                    )));
                }
                Ok(rows.clone())
            }
        }
    }

    fn accumulate(&self, kinds: &[TokenKind], d_embed: &Array2<f64>, grad: &mut TokenEmbeddings) {
        match grad {
            TokenEmbeddings::Typed { types, .. } => {
                for (row, &k) in d_embed.axis_iter(Axis(0)).zip(kinds) {
                    let mut target = types.row_mut(Self::type_row(k));
                    target += &row;
                }
            }
            TokenEmbeddings::PerOccurrence { rows } => *rows += d_embed,
        }
    }

    fn zeros_like(&self) -> Self {
        match self {
            TokenEmbeddings::Typed {
                types,
                positional_scale,
            } => TokenEmbeddings::Typed {
                types: Array2::zeros(types.raw_dim()),
                positional_scale: *positional_scale,
            },
            TokenEmbeddings::PerOccurrence { rows } => TokenEmbeddings::PerOccurrence {
                rows: Array2::zeros(rows.raw_dim()),
            },
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            TokenEmbeddings::Typed { types, .. } => {
                vec![types.as_slice_mut().expect("standard layout")]
            }
            TokenEmbeddings::PerOccurrence { rows } => {
                vec![rows.as_slice_mut().expect("standard layout")]
            }
        }
    }
}

/// Bigram caption head: logits for the next token are row `prev` of a `V x V` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionHead {
    pub weights: Array2<f64>,
}

impl CaptionHead {
    pub fn zeros(vocab_size: usize) -> Self {
        Self {
            weights: Array2::zeros((vocab_size, vocab_size)),
        }
    }

    fn logits(&self, context: &[usize]) -> Result<Array2<f64>> {
        let v = self.weights.nrows();
        let mut out = Array2::zeros((context.len(), v));
        for (mut row, &c) in out.axis_iter_mut(Axis(0)).zip(context) {
            if c >= v {
                return Err(Error::invalid(format!(
                    "token id {c} outside vocabulary of {v}"
                )));
            }
            row.assign(&self.weights.row(c));
        }
        Ok(out)
    }
}

/// Dimensions of the learnable pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_size: usize,
    pub output_size: usize,
    pub token_dim: usize,
    #[serde(default = "default_positional_scale")]
    pub positional_scale: f64,
    #[serde(default = "default_tau")]
    pub initial_temperature: f64,
}

fn default_positional_scale() -> f64 {
    1.0
}

fn default_tau() -> f64 {
    crate::grounding::DEFAULT_TEMPERATURE
}

impl Default for ModelConfig {
    /// Full-scale projector shape: two layers, hidden 1536, output 3072.
    fn default() -> Self {
        Self {
            hidden_size: 1536,
            output_size: 3072,
            token_dim: 3072,
            positional_scale: 1.0,
            initial_temperature: default_tau(),
        }
    }
}

impl ModelConfig {
    /// Small shape for desk-scale runs.
    pub fn desk() -> Self {
        Self {
            hidden_size: 32,
            output_size: 16,
            token_dim: 16,
            positional_scale: 1.0,
            initial_temperature: default_tau(),
        }
    }
}

/// All trainable state. Gradients use the same type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingParams {
    pub frame_projector: Projector,
    pub token_projector: Projector,
    pub token_embeddings: TokenEmbeddings,
    pub temperature: Temperature,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption_head: Option<CaptionHead>,
}

impl GroundingParams {
    pub fn init(config: &ModelConfig, frame_dim: usize, seed: u64) -> Result<Self> {
        if config.hidden_size == 0 || config.output_size == 0 || config.token_dim == 0 {
            return Err(Error::invalid("model sizes must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::MAX);
        let frame_projector = Projector::Mlp(Mlp::init(
            &mut rng,
            frame_dim,
            config.hidden_size,
            config.output_size,
        ));
        let token_projector = Projector::Mlp(Mlp::init(
            &mut rng,
            config.token_dim,
            config.hidden_size,
            config.output_size,
        ));
        let types = Array2::from_shape_fn((2, config.token_dim), |_| {
            rng.sample::<f64, _>(StandardNormal)
        });
        Ok(Self {
            frame_projector,
            token_projector,
            token_embeddings: TokenEmbeddings::Typed {
                types,
                positional_scale: config.positional_scale,
            },
            temperature: Temperature::from_tau(config.initial_temperature)?,
            caption_head: None,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            frame_projector: self.frame_projector.zeros_like(),
            token_projector: self.token_projector.zeros_like(),
            token_embeddings: self.token_embeddings.zeros_like(),
            temperature: Temperature { log_tau: 0.0 },
            caption_head: self
                .caption_head
                .as_ref()
                .map(|h| CaptionHead::zeros(h.weights.nrows())),
        }
    }

    /// Every trainable tensor, in a fixed order shared by parameters and gradients.
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.frame_projector.tensors_mut();
        out.extend(self.token_projector.tensors_mut());
        out.extend(self.token_embeddings.tensors_mut());
        out.push(std::slice::from_mut(&mut self.temperature.log_tau));
        if let Some(h) = &mut self.caption_head {
            out.push(h.weights.as_slice_mut().expect("standard layout"));
        }
        out
    }

    /// Flattened copy of all trainable values.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut copy = self.clone();
        copy.tensors_mut()
            .into_iter()
            .flat_map(|t| t.to_vec())
            .collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.to_flat().len()
    }

    pub fn check(&self) -> Result<()> {
        for p in [&self.frame_projector, &self.token_projector] {
            if let Projector::Mlp(m) = p {
                m.check_shapes()?;
            }
        }
        if self.to_flat().iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("parameters contain non-finite values"));
        }
        Ok(())
    }

    /// Normalized frame and token embeddings and their `T x M'` similarity table.
    pub fn similarity(
        &self,
        frames: ArrayView2<'_, f64>,
        kinds: &[TokenKind],
    ) -> Result<Array2<f64>> {
        let (f, _) = self.frame_projector.forward(frames)?;
        let (t, _) = self
            .token_projector
            .forward(self.token_embeddings.embed(kinds)?.view())?;
        let (f, _) = normalize_rows(f.view())?;
        let (t, _) = normalize_rows(t.view())?;
        similarity_matrix(f.view(), t.view())
    }
}

/// One video's worth of supervision.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    /// Pooled `T x C` frame features.
    pub frames: Array2<f64>,
    /// Token `i` is grounded on `segments[i]`.
    pub segments: Vec<Segment>,
    pub kinds: Vec<TokenKind>,
    /// Interleaved caption/structural token ids ending in `<eos>`, for the LM term.
    pub caption_ids: Option<Vec<usize>>,
    /// Id used as the context of the first LM position.
    pub bos_id: usize,
}

impl TrainingSample {
    /// Event and transition tokens over a full partition.
    pub fn holistic(
        frames: Array2<f64>,
        partition: &SegmentPartition,
        tokens: &StructuralTokenSeq,
    ) -> Result<Self> {
        if frames.nrows() != partition.total_frames() {
            return Err(Error::invalid(format!(
                "{} frames for a partition of {}",
                frames.nrows(),
                partition.total_frames()
            )));
        }
        if tokens.len() != partition.len() {
            return Err(Error::invalid(format!(
                "{} tokens for {} segments",
                tokens.len(),
                partition.len()
            )));
        }
        Ok(Self {
            frames,
            segments: partition.segments().to_vec(),
            kinds: tokens.labels().to_vec(),
            caption_ids: None,
            bos_id: 0,
        })
    }

    /// Event tokens only; frames outside the events act purely as negatives.
    pub fn events_only(frames: Array2<f64>, events: &[Segment]) -> Result<Self> {
        if events.is_empty() {
            return Err(Error::invalid("event-only sample needs at least one event"));
        }
        if let Some(e) = events.iter().find(|e| e.end() > frames.nrows()) {
            return Err(Error::invalid(format!(
                "event {e} exceeds {} frames",
                frames.nrows()
            )));
        }
        Ok(Self {
            frames,
            segments: events.to_vec(),
            kinds: vec![TokenKind::Event; events.len()],
            caption_ids: None,
            bos_id: 0,
        })
    }

    pub fn with_captions(mut self, ids: Vec<usize>, bos_id: usize) -> Self {
        self.caption_ids = Some(ids);
        self.bos_id = bos_id;
        self
    }
}

/// Intermediate values from [`forward`] needed by [`ForwardCache::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub grounding_loss: f64,
    pub lm_loss: Option<f64>,
    frame_cache: ProjectorCache,
    token_cache: ProjectorCache,
    grounding: GroundingGrad,
    kinds: Vec<TokenKind>,
    lm_context: Vec<usize>,
    lm_targets: Vec<usize>,
}

/// pool → project → normalize → softmax over frames → grounding loss,
/// plus the LM term when both a caption head and caption ids are present.
pub fn forward(params: &GroundingParams, sample: &TrainingSample) -> Result<(f64, ForwardCache)> {
    let embeddings = params.token_embeddings.embed(&sample.kinds)?;
    let (projected_frames, frame_cache) = params.frame_projector.forward(sample.frames.view())?;
    let (projected_tokens, token_cache) = params.token_projector.forward(embeddings.view())?;
    let g = grounding_loss_grad_segments(
        projected_frames.view(),
        projected_tokens.view(),
        params.temperature.log_tau,
        &sample.segments,
    )?;

    let (lm_loss, lm_context, lm_targets) = match (&params.caption_head, &sample.caption_ids) {
        (Some(head), Some(ids)) if !ids.is_empty() => {
            let mut context = vec![sample.bos_id];
            context.extend_from_slice(&ids[..ids.len() - 1]);
            let (l, _) = lm_loss_grad(head.logits(&context)?.view(), ids)?;
            (Some(l), context, ids.clone())
        }
        _ => (None, Vec::new(), Vec::new()),
    };

    let total = g.loss + lm_loss.unwrap_or(0.0);
    Ok((
        total,
        ForwardCache {
            grounding_loss: g.loss,
            lm_loss,
            frame_cache,
            token_cache,
            grounding: g,
            kinds: sample.kinds.clone(),
            lm_context,
            lm_targets,
        },
    ))
}

impl ForwardCache {
    pub fn backward(&self, params: &GroundingParams) -> Result<GroundingParams> {
        let mut grad = params.zeros_like();
        let g = &self.grounding;
        grad.temperature.log_tau = g.log_tau;
        params
            .frame_projector
            .backward(&self.frame_cache, &g.frames, &mut grad.frame_projector);
        let d_embed = params.token_projector.backward(
            &self.token_cache,
            &g.tokens,
            &mut grad.token_projector,
        );
        params
            .token_embeddings
            .accumulate(&self.kinds, &d_embed, &mut grad.token_embeddings);

        if let (Some(head), Some(gh)) = (&params.caption_head, &mut grad.caption_head) {
            if !self.lm_targets.is_empty() {
                let (_, d_logits) =
                    lm_loss_grad(head.logits(&self.lm_context)?.view(), &self.lm_targets)?;
                for (row, &c) in d_logits.axis_iter(Axis(0)).zip(&self.lm_context) {
                    let mut target = gh.weights.row_mut(c);
                    target += &row;
                }
            }
        }
        Ok(grad)
    }
}

/// Loss and gradient in one call.
pub fn loss_and_grad(
    params: &GroundingParams,
    sample: &TrainingSample,
) -> Result<(f64, GroundingParams)> {
    let (loss, cache) = forward(params, sample)?;
    Ok((loss, cache.backward(params)?))
}
