//! TOML experiment configuration.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::trainer::{ModelConfig, OptimizerConfig, SyntheticScenario};

/// Overrides `output_dir` when set.
pub const OUT_DIR_ENV: &str = "CHRONOSEG_OUT_DIR";

/// Scenario fields; the seed comes from the experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub num_frames: usize,
    pub dim: usize,
    pub event_lengths: Vec<usize>,
    pub margin: f64,
    pub noise: f64,
    pub fps: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let s = SyntheticScenario::default();
        Self {
            num_frames: s.num_frames,
            dim: s.dim,
            event_lengths: s.event_lengths,
            margin: s.margin,
            noise: s.noise,
            fps: s.fps,
        }
    }
}

impl ScenarioConfig {
    pub fn with_seed(&self, seed: u64) -> SyntheticScenario {
        SyntheticScenario {
            num_frames: self.num_frames,
            dim: self.dim,
            event_lengths: self.event_lengths.clone(),
            margin: self.margin,
            noise: self.noise,
            seed,
            fps: self.fps,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodingMode {
    /// Event and transition tokens; every frame goes to its best token.
    #[default]
    Holistic,
    /// Event tokens only, thresholded at `theta_fixed`.
    Threshold,
    /// Holistic decoding plus rows for the query/frame cosine baseline.
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodingConfig {
    pub mode: DecodingMode,
    /// Decode each event token against the transition tokens only.
    pub per_event: bool,
    /// Cosine threshold for the baseline localizer.
    pub theta: f64,
    /// Global threshold for event-only decoding.
    pub theta_fixed: f64,
    /// Mean clip saliency at which a clip counts as relevant.
    pub saliency_level: f64,
    pub clip_seconds: f64,
}

impl Default for DecodingConfig {
    fn default() -> Self {
        Self {
            mode: DecodingMode::Holistic,
            per_event: false,
            theta: 0.5,
            theta_fixed: 0.5,
            saliency_level: 0.5,
            clip_seconds: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    /// R@1 at tIoU 0.3, 0.5 and 0.7.
    R1,
    MapMr,
    /// Highlight mAP and HIT@0.1.
    MapHl,
    /// Segment F1 at tIoU 0.5.
    F1,
    /// Frame IoU of decoded vs annotated events.
    EventIou,
}

impl MetricKind {
    pub const ALL: [MetricKind; 5] = [
        MetricKind::R1,
        MetricKind::MapMr,
        MetricKind::MapHl,
        MetricKind::F1,
        MetricKind::EventIou,
    ];
}

fn all_metrics() -> Vec<MetricKind> {
    MetricKind::ALL.to_vec()
}

fn default_steps() -> usize {
    500
}

fn default_eval_videos() -> usize {
    1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

/// External inputs for `infer` and `eval`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub annotations: Option<PathBuf>,
    /// Directory of `<video_id>.csem` frame matrices.
    pub features_dir: Option<PathBuf>,
    pub params: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Held-out draws scored after training.
    #[serde(default = "default_eval_videos")]
    pub eval_videos: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub scenario: ScenarioConfig,
    #[serde(default = "ModelConfig::desk")]
    pub model: ModelConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub decoding: DecodingConfig,
    #[serde(default = "all_metrics")]
    pub metrics: Vec<MetricKind>,
    #[serde(default)]
    pub data: DataConfig,
}

impl ExperimentConfig {
    /// Config with every optional field at its default.
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            steps: default_steps(),
            eval_videos: default_eval_videos(),
            output_dir: default_output_dir(),
            scenario: ScenarioConfig::default(),
            model: ModelConfig::desk(),
            optimizer: OptimizerConfig::default(),
            decoding: DecodingConfig::default(),
            metrics: all_metrics(),
            data: DataConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads, validates, and applies the output-directory override.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml_str(&text)?;
        config.apply_env_override();
        Ok(config)
    }

    /// Replaces `output_dir` with the value of [`OUT_DIR_ENV`] when set.
    pub fn apply_env_override(&mut self) {
        if let Some(dir) = std::env::var_os(OUT_DIR_ENV) {
            self.output_dir = PathBuf::from(dir);
        }
    }

    pub fn scenario(&self) -> SyntheticScenario {
        self.scenario.with_seed(self.seed)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| Error::Config(e.to_string());
        self.scenario().validate().map_err(cfg)?;
        self.optimizer.validate().map_err(cfg)?;
        if self.steps == 0 {
            return Err(Error::Config("steps must be positive".into()));
        }
        if self.eval_videos == 0 {
            return Err(Error::Config("eval_videos must be positive".into()));
        }
        let d = &self.decoding;
        for (name, v) in [
            ("theta", d.theta),
            ("theta_fixed", d.theta_fixed),
            ("saliency_level", d.saliency_level),
        ] {
            if !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite")));
            }
        }
        if !(d.clip_seconds > 0.0) {
            return Err(Error::Config("clip_seconds must be positive".into()));
        }
        for path in [
            &self.data.annotations,
            &self.data.features_dir,
            &self.data.params,
        ]
        .into_iter()
        .flatten()
        {
            if !path.exists() {
                return Err(Error::Config(format!(
                    "path {} does not exist",
                    path.display()
                )));
            }
        }
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    /// The output directory does not contribute.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(&json))[..16].to_string()
    }
}
