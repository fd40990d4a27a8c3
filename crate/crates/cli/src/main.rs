use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use chronoseg::error::RecordError;
use chronoseg::io::{
    baseline_dataset, emit_report, evaluate_predictions, infer_dataset, load_annotations,
    load_params, load_predictions, render_report, run_experiment, save_params, save_predictions,
    write_synthetic_dataset, DecodingMode, ExperimentConfig, Predictions, ANNOTATIONS_FILE,
};
use chronoseg::temporal::augment_with_transitions;
use chronoseg::trainer::{train, Vocabulary};

/// Temporal event grounding experiments on synthetic or stored frame features.
#[derive(Debug, Parser)]
#[command(name = "chronoseg", version)]
struct Cli {
    /// Experiment config (TOML). Without it, defaults are used.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write synthetic videos, query embeddings, and annotations.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Number of draws; defaults to the training batch plus evaluation videos.
        #[arg(long)]
        draws: Option<u64>,
    },
    /// Train on the configured scenario; writes params.json and loss_curve.csv.
    Train,
    /// Decode stored videos with trained parameters.
    Infer {
        #[arg(long)]
        params: Option<PathBuf>,
        /// Directory with feature files and, by default, annotations.jsonl.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a predictions file and write a metrics CSV.
    Eval {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Localize with query/frame cosine similarity from stored query embeddings.
    Baseline {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build interleaved caption and structural-token sequences.
    Assemble {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run generate, train, decode, and evaluate; print the metrics CSV.
    Report,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => {
            let mut c = ExperimentConfig::with_seed(cli.seed.unwrap_or(0));
            c.apply_env_override();
            c
        }
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn data_dir(flag: &Option<PathBuf>, config: &ExperimentConfig) -> Result<PathBuf> {
    match flag.as_ref().or(config.data.features_dir.as_ref()) {
        Some(p) => Ok(p.clone()),
        None => bail!(chronoseg::Error::Config(
            "no data directory: pass --data or set data.features_dir".into()
        )),
    }
}

fn annotations_path(flag: &Option<PathBuf>, config: &ExperimentConfig, data: &Path) -> PathBuf {
    flag.clone()
        .or_else(|| config.data.annotations.clone())
        .unwrap_or_else(|| data.join(ANNOTATIONS_FILE))
}

fn output_path(flag: &Option<PathBuf>, config: &ExperimentConfig, name: &str) -> Result<PathBuf> {
    if let Some(p) = flag {
        return Ok(p.clone());
    }
    fs::create_dir_all(&config.output_dir)
        .with_context(|| format!("creating {}", config.output_dir.display()))?;
    Ok(config.output_dir.join(name))
}

fn print(value: serde_json::Value) {
    println!("{value}");
}

fn run(cli: &Cli) -> Result<()> {
    let config = load_config(cli)?;
    let hash = config.hash();
    match &cli.command {
        Command::Synth { out, draws } => {
            let n = draws.unwrap_or(config.optimizer.batch_size as u64 + config.eval_videos as u64);
            let records = write_synthetic_dataset(&config.scenario(), 0..n, out)?;
            print(json!({
                "command": "synth",
                "config_hash": hash,
                "videos": n,
                "records": records.len(),
                "annotations": out.join(ANNOTATIONS_FILE),
            }));
        }
        Command::Train => {
            let outcome = train(
                &config.scenario(),
                &config.model,
                &config.optimizer,
                config.steps,
            )?;
            let params = output_path(&None, &config, "params.json")?;
            save_params(&outcome.params, &hash, &params)?;
            let curve = config.output_dir.join("loss_curve.csv");
            let mut text = String::from("step,loss,config_hash\n");
            for (step, loss) in outcome.losses.iter().enumerate() {
                text.push_str(&format!("{step},{loss:.12e},{hash}\n"));
            }
            fs::write(&curve, text).with_context(|| format!("writing {}", curve.display()))?;
            print(json!({
                "command": "train",
                "config_hash": hash,
                "steps": config.steps,
                "final_loss": outcome.final_loss,
                "params": params,
                "loss_curve": curve,
            }));
        }
        Command::Infer {
            params,
            data,
            annotations,
            out,
        } => {
            let params_path = match params.as_ref().or(config.data.params.as_ref()) {
                Some(p) => p.clone(),
                None => bail!(chronoseg::Error::Config(
                    "no parameters: pass --params or set data.params".into()
                )),
            };
            let (params, _) = load_params(&params_path)?;
            let dir = data_dir(data, &config)?;
            let records = load_annotations(annotations_path(annotations, &config, &dir))?;
            let event_only = config.decoding.mode == DecodingMode::Threshold;
            let queries = infer_dataset(&params, &records, &dir, &config.decoding, event_only)?;
            let baseline = if config.decoding.mode == DecodingMode::Baseline {
                baseline_dataset(&records, &dir, config.decoding.theta)?
            } else {
                Vec::new()
            };
            let predictions = Predictions { queries, baseline };
            let path = output_path(out, &config, "predictions.json")?;
            save_predictions(&predictions, &hash, &path)?;
            print(json!({
                "command": "infer",
                "config_hash": hash,
                "queries": predictions.queries.len(),
                "predictions": path,
            }));
        }
        Command::Eval { predictions, out } => {
            let (preds, pred_hash) = load_predictions(predictions)?;
            let report = evaluate_predictions(&preds, &config.metrics, &config.decoding)?;
            let path = output_path(out, &config, "metrics.csv")?;
            emit_report(&report, &pred_hash, &path)?;
            print!("{}", render_report(&report, &pred_hash));
        }
        Command::Baseline {
            data,
            annotations,
            out,
        } => {
            let dir = data_dir(data, &config)?;
            let records = load_annotations(annotations_path(annotations, &config, &dir))?;
            let queries = baseline_dataset(&records, &dir, config.decoding.theta)?;
            let predictions = Predictions {
                queries,
                baseline: Vec::new(),
            };
            let path = output_path(out, &config, "baseline_predictions.json")?;
            save_predictions(&predictions, &hash, &path)?;
            print(json!({
                "command": "baseline",
                "config_hash": hash,
                "queries": predictions.queries.len(),
                "predictions": path,
            }));
        }
        Command::Assemble { annotations, out } => {
            let records = load_annotations(annotations)?;
            let vocab = Vocabulary::from_corpus(
                records
                    .iter()
                    .flat_map(|r| r.annotation.captions().unwrap_or_default())
                    .map(String::as_str),
            );
            let mut text = String::new();
            for (i, r) in records.iter().enumerate() {
                let Some(captions) = r.annotation.captions() else {
                    bail!(chronoseg::Error::Records(vec![RecordError {
                        line: i + 1,
                        reason: "record has no captions".into(),
                    }]));
                };
                let (partition, tokens) =
                    augment_with_transitions(r.annotation.events(), r.num_frames)?;
                let ids = chronoseg::trainer::assemble_interleaved_sequence(
                    &partition, &tokens, captions, &vocab,
                )?;
                let line = json!({
                    "config_hash": hash,
                    "video_id": r.video_id,
                    "query": r.annotation.query,
                    "tokens": vocab.render(&ids),
                    "ids": ids,
                });
                text.push_str(&line.to_string());
                text.push('\n');
            }
            let path = output_path(out, &config, "sequences.jsonl")?;
            fs::write(&path, &text).with_context(|| format!("writing {}", path.display()))?;
            print(json!({
                "command": "assemble",
                "config_hash": hash,
                "sequences": records.len(),
                "vocabulary": vocab.len(),
                "output": path,
            }));
        }
        Command::Report => {
            let output = run_experiment(&config)?;
            print!("{}", render_report(&output.report, &output.config_hash));
        }
    }
    Ok(())
}

fn error_record(err: &anyhow::Error) -> serde_json::Value {
    let mut record = json!({ "kind": "error", "message": format!("{err:#}") });
    if let Some(e) = err.downcast_ref::<chronoseg::Error>() {
        record["kind"] = json!(e.kind());
        record["message"] = json!(e.to_string());
        match e {
            chronoseg::Error::Stage { stage, source } => {
                record["stage"] = json!(stage);
                record["cause"] = json!(source.kind());
            }
            chronoseg::Error::Records(errors) => {
                record["records"] = errors
                    .iter()
                    .map(|r| json!({ "line": r.line, "reason": r.reason }))
                    .collect();
            }
            chronoseg::Error::Training { step, .. } => record["step"] = json!(step),
            _ => {}
        }
    }
    json!({ "error": record })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let record = json!({ "error": { "kind": "usage", "message": e.kind().to_string(), "detail": e.to_string() } });
            eprintln!("{record}");
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_record(&e));
            ExitCode::FAILURE
        }
    }
}
