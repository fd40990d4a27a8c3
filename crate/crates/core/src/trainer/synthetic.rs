//! Planted-event embedding timelines.
//!
//! Every segment of the layout (events and the transitions between them) gets
//! its own cluster center. Centers are mutually orthogonal with norm
//! `margin / sqrt(2)`, so any two are exactly `margin` apart. Frames are their
//! segment's center plus i.i.d. Gaussian noise of standard deviation `noise`.

use ndarray::{Array1, Array2, Axis};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grounding::{spatial_pool, EmbeddingMatrix, FrameFeatureMap};
use crate::temporal::{augment_with_transitions, EventAnnotation, Segment};

/// Frame embeddings of one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoTimeline {
    pub fps: f64,
    frames: EmbeddingMatrix,
}

impl VideoTimeline {
    pub fn new(frames: EmbeddingMatrix, fps: f64) -> Result<Self> {
        if !(fps > 0.0) || !fps.is_finite() {
            return Err(Error::invalid(format!("fps must be positive, got {fps}")));
        }
        Ok(Self { fps, frames })
    }

    /// Pools each frame's `P x C` token grid down to one `C`-vector.
    pub fn from_feature_maps(maps: &[FrameFeatureMap], fps: f64) -> Result<Self> {
        let dim = maps
            .first()
            .ok_or_else(|| Error::invalid("timeline needs at least one frame"))?
            .dim();
        if let Some(m) = maps.iter().find(|m| m.dim() != dim) {
            return Err(Error::invalid(format!(
                "frame feature dims differ: {} vs {dim}",
                m.dim()
            )));
        }
        let mut frames = Array2::zeros((maps.len(), dim));
        for (mut row, map) in frames.axis_iter_mut(Axis(0)).zip(maps) {
            row.assign(&spatial_pool(map));
        }
        Self::new(EmbeddingMatrix::new(frames)?, fps)
    }

    pub fn num_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn dim(&self) -> usize {
        self.frames.dim()
    }

    pub fn frames(&self) -> &EmbeddingMatrix {
        &self.frames
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticScenario {
    pub num_frames: usize,
    pub dim: usize,
    /// One entry per planted event, in temporal order.
    pub event_lengths: Vec<usize>,
    pub margin: f64,
    pub noise: f64,
    pub seed: u64,
    #[serde(default = "default_fps")]
    pub fps: f64,
}

fn default_fps() -> f64 {
    1.0
}

impl Default for SyntheticScenario {
    fn default() -> Self {
        Self {
            num_frames: 64,
            dim: 16,
            event_lengths: vec![8, 8],
            margin: 2.0,
            noise: 0.0,
            seed: 7,
            fps: 1.0,
        }
    }
}

/// A generated video with its ground truth and per-event query vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticVideo {
    pub timeline: VideoTimeline,
    pub annotation: EventAnnotation,
    /// `M x C`: each event's center plus an independent noise draw.
    pub query_embeddings: Array2<f64>,
    /// `M' x C` cluster centers, one per layout segment.
    pub centers: Array2<f64>,
}

impl SyntheticVideo {
    /// 1.0 on planted event frames, 0.0 elsewhere.
    pub fn frame_saliency(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.timeline.num_frames()];
        for e in self.annotation.events() {
            for t in e.zero_based() {
                s[t] = 1.0;
            }
        }
        s
    }
}

impl SyntheticScenario {
    pub fn validate(&self) -> Result<()> {
        if self.num_frames == 0 || self.dim == 0 {
            return Err(Error::invalid(
                "scenario needs at least one frame and one dimension",
            ));
        }
        if self.event_lengths.contains(&0) {
            return Err(Error::invalid("event lengths must be positive"));
        }
        let n = self.event_lengths.len();
        let needed = self.event_lengths.iter().sum::<usize>() + n.saturating_sub(1);
        if needed > self.num_frames {
            return Err(Error::invalid(format!(
                "events need {needed} frames (including separating gaps) but T = {}",
                self.num_frames
            )));
        }
        if 2 * n + 1 > self.dim {
            return Err(Error::invalid(format!(
                "{} segments cannot have orthogonal centers in dimension {}",
                2 * n + 1,
                self.dim
            )));
        }
        if !(self.margin > 0.0) || !self.margin.is_finite() {
            return Err(Error::invalid(format!(
                "margin must be positive, got {}",
                self.margin
            )));
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return Err(Error::invalid(format!(
                "noise must be non-negative, got {}",
                self.noise
            )));
        }
        if !(self.fps > 0.0) {
            return Err(Error::invalid(format!(
                "fps must be positive, got {}",
                self.fps
            )));
        }
        Ok(())
    }

    /// Event placement drawn from the seed; interior gaps are at least one frame.
    pub fn planted_events(&self) -> Result<Vec<Segment>> {
        self.validate()?;
        let mut rng = self.layout_rng();
        self.place_events(&mut rng)
    }

    fn layout_rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    fn place_events(&self, rng: &mut ChaCha8Rng) -> Result<Vec<Segment>> {
        let n = self.event_lengths.len();
        if n == 0 {
            return Ok(Vec::new());
        }
        let slack = self.num_frames - self.event_lengths.iter().sum::<usize>() - (n - 1);
        // Stars and bars: n bars among slack + n slots split the slack into n + 1 gaps.
        let mut bars = index::sample(rng, slack + n, n).into_vec();
        bars.sort_unstable();
        let mut events = Vec::with_capacity(n);
        let mut cursor = 1;
        let mut prev_bar: Option<usize> = None;
        for (k, (&bar, &len)) in bars.iter().zip(&self.event_lengths).enumerate() {
            let gap = match prev_bar {
                None => bar,
                Some(p) => bar - p - 1,
            };
            cursor += gap + usize::from(k > 0);
            events.push(Segment::new(cursor, cursor + len - 1)?);
            cursor += len;
            prev_bar = Some(bar);
        }
        Ok(events)
    }

    /// Generates draw number `draw`. Layout and centers depend only on the
    /// seed; the noise (frames and queries) also depends on `draw`.
    pub fn generate(&self, draw: u64) -> Result<SyntheticVideo> {
        self.validate()?;
        let mut rng = self.layout_rng();
        let events = self.place_events(&mut rng)?;
        let (partition, _) = augment_with_transitions(&events, self.num_frames)?;
        let centers = orthogonal_centers(&mut rng, partition.len(), self.dim, self.margin);

        let mut noise_rng = self.layout_rng();
        noise_rng.set_stream(draw.wrapping_add(1));
        let mut frames = Array2::zeros((self.num_frames, self.dim));
        for (i, seg) in partition.segments().iter().enumerate() {
            for t in seg.zero_based() {
                let mut row = frames.row_mut(t);
                row.assign(&centers.row(i));
                if self.noise > 0.0 {
                    row += &gaussian(&mut noise_rng, self.dim, self.noise);
                }
            }
        }

        let event_rows: Vec<usize> = partition
            .segments()
            .iter()
            .enumerate()
            .filter(|(_, s)| events.contains(s))
            .map(|(i, _)| i)
            .collect();
        let mut queries = Array2::zeros((events.len(), self.dim));
        for (k, &i) in event_rows.iter().enumerate() {
            let mut row = queries.row_mut(k);
            row.assign(&centers.row(i));
            if self.noise > 0.0 {
                row += &gaussian(&mut noise_rng, self.dim, self.noise);
            }
        }

        let annotation =
            EventAnnotation::new(format!("planted events (seed {})", self.seed), events, None)?;
        Ok(SyntheticVideo {
            timeline: VideoTimeline::new(EmbeddingMatrix::new(frames)?, self.fps)?,
            annotation,
            query_embeddings: queries,
            centers,
        })
    }
}

/// Draw 0 of `scenario`.
pub fn generate_synthetic_timeline(
    scenario: &SyntheticScenario,
) -> Result<(VideoTimeline, EventAnnotation)> {
    let video = scenario.generate(0)?;
    Ok((video.timeline, video.annotation))
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Array1<f64> {
    Array1::from_shape_fn(dim, |_| scale * rng.sample::<f64, _>(StandardNormal))
}

/// `count` orthogonal vectors of norm `margin / sqrt(2)` via Gram-Schmidt.
fn orthogonal_centers(rng: &mut ChaCha8Rng, count: usize, dim: usize, margin: f64) -> Array2<f64> {
    let mut basis: Vec<Array1<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v = gaussian(rng, dim, 1.0);
        for b in &basis {
            let proj = v.dot(b);
            v.scaled_add(-proj, b);
        }
        let norm = v.dot(&v).sqrt();
        if norm > 1e-6 {
            basis.push(v / norm);
        }
    }
    let scale = margin / std::f64::consts::SQRT_2;
    let mut out = Array2::zeros((count, dim));
    for (mut row, b) in out.axis_iter_mut(Axis(0)).zip(&basis) {
        row.assign(&(b * scale));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_frames_sit_on_centers() {
        let scenario = SyntheticScenario {
            event_lengths: vec![5, 3],
            num_frames: 20,
            ..Default::default()
        };
        let video = scenario.generate(0).unwrap();
        let frames = video.timeline.frames().view();
        let events = video.annotation.events();
        for seg in events {
            let first = frames.row(seg.start() - 1);
            for t in seg.zero_based() {
                assert_eq!(frames.row(t), first);
            }
        }
        let a = frames.row(events[0].start() - 1).to_owned();
        let b = frames.row(events[1].start() - 1).to_owned();
        let d = (&a - &b).mapv(|x| x * x).sum().sqrt();
        assert!((d - 2.0).abs() < 1e-12);
        // all pairs of centers are `margin` apart
        let c = &video.centers;
        for i in 0..c.nrows() {
            for j in 0..i {
                let d = (&c.row(i) - &c.row(j)).mapv(|x| x * x).sum().sqrt();
                assert!((d - 2.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let scenario = SyntheticScenario {
            noise: 0.3,
            ..Default::default()
        };
        let a = scenario.generate(0).unwrap();
        let b = scenario.generate(0).unwrap();
        assert_eq!(a, b);
        let c = scenario.generate(1).unwrap();
        assert_eq!(a.annotation, c.annotation);
        assert_eq!(a.centers, c.centers);
        assert_ne!(a.timeline, c.timeline);
    }

    #[test]
    fn events_are_disjoint_and_in_range() {
        for seed in 0..200 {
            let scenario = SyntheticScenario {
                seed,
                num_frames: 30,
                event_lengths: vec![4, 9, 2],
                ..Default::default()
            };
            let events = scenario.planted_events().unwrap();
            assert_eq!(
                events.iter().map(Segment::len).collect::<Vec<_>>(),
                vec![4, 9, 2]
            );
            assert!(events.last().unwrap().end() <= 30);
            for w in events.windows(2) {
                assert!(w[0].end() + 1 < w[1].start());
            }
        }
    }

    #[test]
    fn tight_fit_is_feasible() {
        let scenario = SyntheticScenario {
            num_frames: 9,
            event_lengths: vec![4, 4],
            ..Default::default()
        };
        let events = scenario.planted_events().unwrap();
        assert_eq!(
            events,
            vec![Segment::new(1, 4).unwrap(), Segment::new(6, 9).unwrap()]
        );
    }

    #[test]
    fn rejects_infeasible_scenarios() {
        let too_long = SyntheticScenario {
            num_frames: 8,
            event_lengths: vec![4, 4],
            ..Default::default()
        };
        assert!(too_long.generate(0).is_err());
        let no_margin = SyntheticScenario {
            margin: 0.0,
            ..Default::default()
        };
        assert!(no_margin.validate().is_err());
        let narrow = SyntheticScenario {
            dim: 4,
            ..Default::default()
        };
        assert!(narrow.validate().is_err());
    }

    #[test]
    fn pooling_feature_maps() {
        let maps = vec![
            FrameFeatureMap::new(ndarray::array![[1.0, 2.0], [3.0, 4.0]]).unwrap(),
            FrameFeatureMap::new(ndarray::array![[0.0, 1.0], [0.0, 1.0]]).unwrap(),
        ];
        let tl = VideoTimeline::from_feature_maps(&maps, 2.0).unwrap();
        assert_eq!(tl.frames().view(), ndarray::array![[2.0, 3.0], [0.0, 1.0]]);
    }
}
