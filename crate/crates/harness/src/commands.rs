use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use synthphys_core::dataset::DatasetManifest;
use synthphys_core::nn::{load_checkpoint, save_checkpoint, train, windows_from_clip, AppearanceMode, TrainOutcome, TrainingWindow};
use synthphys_core::{ModelParams32, TrainConfig, VideoClip};

use crate::config::{ExperimentConfig, TOOLKIT_VERSION};
use crate::dataset::{generate, read_json, worker_pool, write_file, write_json, Dataset, DatasetProvenance};
use crate::error::{Context, HarnessError, Result};
use crate::evaluate::{evaluate, write_evaluation, Algorithm, EvalSummary, Method};

pub const DATASET_DIR: &str = "dataset";
pub const TRAIN_DIR: &str = "train";
pub const EVAL_DIR: &str = "eval";
pub const CHECKPOINT_FILE: &str = "model.phym";
pub const MODEL_META_FILE: &str = "model.json";
pub const LOSS_FILE: &str = "loss_history.csv";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.json";

/// Sidecar describing a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMeta {
    pub config_hash: String,
    pub dataset_hash: String,
    pub toolkit_version: String,
    pub height: usize,
    pub width: usize,
    pub window: usize,
    pub appearance: AppearanceMode,
    pub loss_history: Vec<f64>,
}

fn write_resolved(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    write_file(&dir.join(RESOLVED_CONFIG_FILE), format!("{}\n", cfg.to_pretty_json()).as_bytes())
}

pub fn cmd_gen(cfg: &ExperimentConfig, workers: usize) -> Result<DatasetManifest> {
    cfg.ensure_output_dir()?;
    let dir = cfg.output_dir.join(DATASET_DIR);
    let prov = DatasetProvenance::new(&cfg.hash(), &cfg.dataset);
    generate(&cfg.dataset, "avatar_", &dir, &prov, workers)
}

/// Training windows of every clip, in clip order.
pub fn training_windows(
    clips: &[VideoClip],
    cfg: &TrainConfig,
    workers: usize,
) -> Result<Vec<TrainingWindow<f32>>> {
    let per_clip: Vec<Vec<TrainingWindow<f32>>> = worker_pool(workers)?.install(|| {
        clips
            .par_iter()
            .map(|c| windows_from_clip(c, cfg.window, cfg.appearance).context(&c.spec.id))
            .collect::<Result<_>>()
    })?;
    Ok(per_clip.into_iter().flatten().collect())
}

pub fn loss_csv(history: &[f64]) -> String {
    let mut out = String::from("epoch,loss\n");
    for (i, l) in history.iter().enumerate() {
        out.push_str(&format!("{},{l}\n", i + 1));
    }
    out
}

pub fn save_model(
    dir: &Path,
    outcome: &TrainOutcome<f32>,
    cfg: &ExperimentConfig,
    dataset_hash: &str,
) -> Result<ModelMeta> {
    let meta = ModelMeta {
        config_hash: cfg.hash(),
        dataset_hash: dataset_hash.to_string(),
        toolkit_version: TOOLKIT_VERSION.to_string(),
        height: outcome.params.height,
        width: outcome.params.width,
        window: cfg.train.window,
        appearance: cfg.train.appearance,
        loss_history: outcome.loss_history.clone(),
    };
    save_checkpoint(&outcome.params, &dir.join(CHECKPOINT_FILE))?;
    write_json(&dir.join(MODEL_META_FILE), &meta)?;
    Ok(meta)
}

pub struct TrainArtifacts {
    pub dir: PathBuf,
    pub meta: ModelMeta,
}

pub fn cmd_train(cfg: &ExperimentConfig, workers: usize, dataset: Option<&Path>) -> Result<TrainArtifacts> {
    cfg.ensure_output_dir()?;
    let ddir = dataset.map(Path::to_path_buf).unwrap_or_else(|| cfg.output_dir.join(DATASET_DIR));
    let ds = Dataset::open(&ddir)?;
    ds.check_hash(&cfg.dataset_hash())?;
    let clips = ds.load_clips(workers)?;
    let windows = training_windows(&clips, &cfg.train, workers)?;
    let outcome = train(&windows, &cfg.train)?;
    let dir = cfg.output_dir.join(TRAIN_DIR);
    let meta = save_model(&dir, &outcome, cfg, &ds.provenance.dataset_hash)?;
    write_file(&dir.join(LOSS_FILE), loss_csv(&outcome.loss_history).as_bytes())?;
    write_resolved(cfg, &dir)?;
    Ok(TrainArtifacts { dir, meta })
}

/// Loads a checkpoint and its sidecar, checking that they agree.
pub fn load_model(path: &Path) -> Result<(ModelParams32, ModelMeta)> {
    let params: ModelParams32 = load_checkpoint(path).context(path.display())?;
    let meta_path = path.with_file_name(MODEL_META_FILE);
    let meta: ModelMeta = read_json(&meta_path)?;
    if (meta.height, meta.width) != (params.height, params.width) {
        return Err(HarnessError::Data(format!(
            "{} says {}x{} but the checkpoint is {}x{}",
            meta_path.display(),
            meta.height,
            meta.width,
            params.height,
            params.width
        )));
    }
    Ok((params, meta))
}

fn check_geometry(meta: &ModelMeta, clips: &[VideoClip]) -> Result<()> {
    for c in clips {
        if (c.height(), c.width()) != (meta.height, meta.width) {
            return Err(HarnessError::Data(format!(
                "clip {} is {}x{} but the checkpoint expects {}x{}",
                c.spec.id,
                c.height(),
                c.width(),
                meta.height,
                meta.width
            )));
        }
    }
    Ok(())
}

pub fn cmd_eval(
    cfg: &ExperimentConfig,
    workers: usize,
    checkpoint: Option<&Path>,
    dataset: Option<&Path>,
) -> Result<EvalSummary> {
    cfg.ensure_output_dir()?;
    let ckpt = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.output_dir.join(TRAIN_DIR).join(CHECKPOINT_FILE));
    if !ckpt.is_file() {
        return Err(HarnessError::Data(format!("no checkpoint at {} (run `train` first)", ckpt.display())));
    }
    let (params, meta) = load_model(&ckpt)?;
    let ddir = dataset.map(Path::to_path_buf).unwrap_or_else(|| cfg.output_dir.join(DATASET_DIR));
    let ds = Dataset::open(&ddir)?;
    let clips = ds.load_clips(workers)?;
    check_geometry(&meta, &clips)?;
    let method = Method::Neural {
        params: &params,
        window: meta.window,
        mode: meta.appearance,
    };
    let ev = evaluate(&method, &clips, &cfg.eval, workers)?;
    let dir = cfg.output_dir.join(EVAL_DIR);
    write_resolved(cfg, &dir)?;
    write_evaluation(&dir, &ev, clips.len(), &cfg.hash(), &ds.provenance.dataset_hash)
}

pub fn cmd_baseline(
    cfg: &ExperimentConfig,
    workers: usize,
    algorithm: Algorithm,
    dataset: Option<&Path>,
) -> Result<EvalSummary> {
    cfg.ensure_output_dir()?;
    let ddir = dataset.map(Path::to_path_buf).unwrap_or_else(|| cfg.output_dir.join(DATASET_DIR));
    let ds = Dataset::open(&ddir)?;
    let clips = ds.load_clips(workers)?;
    let ev = evaluate(&Method::Baseline(algorithm), &clips, &cfg.eval, workers)?;
    let dir = cfg.output_dir.join(format!("baseline-{algorithm}"));
    write_resolved(cfg, &dir)?;
    write_evaluation(&dir, &ev, clips.len(), &cfg.hash(), &ds.provenance.dataset_hash)
}
