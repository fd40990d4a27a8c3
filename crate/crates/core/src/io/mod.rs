//! Files, configuration, and the experiment runner.

mod annotations;
mod config;
mod dataset;
mod embeddings;
mod experiment;

pub use annotations::{
    annotation_line, load_annotations, parse_annotations, seconds_to_segment, AnnotationRecord,
};
pub use config::{
    DataConfig, DecodingConfig, DecodingMode, ExperimentConfig, MetricKind, ScenarioConfig,
    OUT_DIR_ENV,
};
pub use dataset::{
    baseline_dataset, frames_path, group_by_video, infer_dataset, queries_path,
    write_synthetic_dataset, VideoEvents, ANNOTATIONS_FILE,
};
pub use embeddings::{
    decode_embeddings, encode_embeddings, encode_embeddings_f32, load_embeddings, save_embeddings,
    save_embeddings_f32, EmbeddingHeader, HEADER_LEN, MAGIC, VERSION,
};
pub use experiment::{
    baseline_video, decode_video, emit_report, evaluate_predictions, load_params, load_predictions,
    render_report, run_experiment, save_params, save_predictions, score_queries, Artifacts,
    ExperimentOutput, Predictions, QueryResult, R1_THRESHOLDS,
};
