use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use synthphys_core::avatar::{fitzpatrick_bin, SkinTypeBin};
use synthphys_core::classical::{
    bandpass, breathing_from_motion, chrom, green, pos, spatial_average, POS_WINDOW_S,
};
use synthphys_core::metrics::{aggregate_by_bin, estimate_rate, snr, window_split, Aggregates};
use synthphys_core::nn::{infer_contiguous, AppearanceMode};
use synthphys_core::physio::integrate_derivative;
use synthphys_core::{Band, EvalRecord, EvalReport, ModelParams32, VideoClip, Waveform};

use crate::config::{EvalConfig, TOOLKIT_VERSION};
use crate::dataset::{worker_pool, write_file, write_json};
use crate::error::{Context, Result};

/// Classical baselines selectable from the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Green,
    Chrom,
    Pos,
    Motion,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Green => "green",
            Algorithm::Chrom => "chrom",
            Algorithm::Pos => "pos",
            Algorithm::Motion => "motion",
        })
    }
}

pub enum Method<'a> {
    Neural {
        params: &'a ModelParams32,
        window: usize,
        mode: AppearanceMode,
    },
    Baseline(Algorithm),
}

impl Method<'_> {
    pub fn name(&self) -> String {
        match self {
            Method::Neural { .. } => "neural".into(),
            Method::Baseline(a) => a.to_string(),
        }
    }
}

/// Recovered waveforms for one clip; a method may produce only one signal.
struct Recovered {
    pulse: Option<Waveform>,
    breathing: Option<Waveform>,
}

/// The network predicts first derivatives; rates are read from their
/// integral, band-limited to the signal's band.
fn integrated(w: &Waveform<f32>, band: Band) -> Result<Waveform> {
    Ok(bandpass(&integrate_derivative(&w.cast::<f64>())?, band.lo_hz, band.hi_hz)?)
}

fn recover(method: &Method, clip: &VideoClip, cfg: &EvalConfig) -> Result<Recovered> {
    Ok(match method {
        Method::Neural { params, window, mode } => {
            let out = infer_contiguous(params, clip, *window, *mode)?;
            Recovered {
                pulse: Some(integrated(&out.pulse, cfg.pulse_band)?),
                breathing: Some(integrated(&out.resp, cfg.breathing_band)?),
            }
        }
        Method::Baseline(Algorithm::Motion) => Recovered {
            pulse: None,
            breathing: Some(breathing_from_motion(clip)?),
        },
        Method::Baseline(alg) => {
            let trace = spatial_average::<f64>(clip)?;
            let w = match alg {
                Algorithm::Green => green(&trace)?,
                Algorithm::Chrom => chrom(&trace)?,
                _ => pos(&trace, POS_WINDOW_S)?,
            };
            Recovered {
                pulse: Some(w),
                breathing: None,
            }
        }
    })
}

/// Evaluation windows of `w`: the whole signal when `full_clip` is set or
/// the signal is shorter than the window.
fn eval_windows(w: &Waveform, cfg: &EvalConfig) -> Result<Vec<Waveform>> {
    if cfg.full_clip || cfg.window_s > w.duration_s() {
        return Ok(vec![w.clone()]);
    }
    Ok(window_split(w, cfg.window_s)?)
}

fn score(
    clip_id: &str,
    bin: SkinTypeBin,
    pred: &Waveform,
    nominal_bpm: Option<f64>,
    truth: &Waveform,
    band: Band,
    cfg: &EvalConfig,
) -> Result<Vec<EvalRecord>> {
    let windows = eval_windows(pred, cfg)?;
    let mut offset = 0;
    let mut out = Vec::with_capacity(windows.len());
    for (k, w) in windows.iter().enumerate() {
        let true_bpm = match nominal_bpm {
            Some(b) => b,
            None => {
                let end = (offset + w.len()).min(truth.len());
                let seg = Waveform::new(truth.samples[offset..end].to_vec(), truth.fs, truth.kind)?;
                estimate_rate(&seg, band)?.bpm
            }
        };
        offset += w.len();
        let est = estimate_rate(w, band)?;
        out.push(EvalRecord {
            clip_id: clip_id.to_string(),
            window: k,
            bin: Some(bin),
            pred_bpm: est.bpm,
            true_bpm,
            snr_db: snr(w, true_bpm / 60.0, band)?,
            flagged: est.flagged,
        });
    }
    Ok(out)
}

/// Reports for whichever signals the method recovers.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub method: String,
    pub pulse: Option<EvalReport>,
    pub breathing: Option<EvalReport>,
}

type ClipRecords = (Option<Vec<EvalRecord>>, Option<Vec<EvalRecord>>);

fn evaluate_clip(method: &Method, clip: &VideoClip, cfg: &EvalConfig) -> Result<ClipRecords> {
    let rec = recover(method, clip, cfg)?;
    let bin = fitzpatrick_bin(clip.spec.melanin)?;
    let id = &clip.spec.id;
    let pulse = rec
        .pulse
        .map(|w| score(id, bin, &w, clip.spec.nominal_pulse_bpm(), &clip.ppg_gt, cfg.pulse_band, cfg))
        .transpose()?;
    let breathing = rec
        .breathing
        .map(|w| {
            score(id, bin, &w, clip.spec.nominal_breathing_bpm(), &clip.resp_gt, cfg.breathing_band, cfg)
        })
        .transpose()?;
    Ok((pulse, breathing))
}

/// Runs `method` on every clip (in parallel) and scores the windows.
pub fn evaluate(method: &Method, clips: &[VideoClip], cfg: &EvalConfig, workers: usize) -> Result<Evaluation> {
    let per_clip: Vec<ClipRecords> = worker_pool(workers)?.install(|| {
        clips
            .par_iter()
            .map(|c| evaluate_clip(method, c, cfg).context(&c.spec.id))
            .collect::<Result<_>>()
    })?;
    evaluation_from(method.name(), per_clip)
}

/// Sequential variant for callers already running inside a worker.
pub fn evaluate_serial(method: &Method, clips: &[VideoClip], cfg: &EvalConfig) -> Result<Evaluation> {
    let per_clip: Vec<ClipRecords> = clips
        .iter()
        .map(|c| evaluate_clip(method, c, cfg).context(&c.spec.id))
        .collect::<Result<_>>()?;
    evaluation_from(method.name(), per_clip)
}

fn evaluation_from(method: String, per_clip: Vec<ClipRecords>) -> Result<Evaluation> {
    let mut pulse: Option<Vec<EvalRecord>> = None;
    let mut breathing: Option<Vec<EvalRecord>> = None;
    for (p, b) in per_clip {
        if let Some(p) = p {
            pulse.get_or_insert_with(Vec::new).extend(p);
        }
        if let Some(b) = b {
            breathing.get_or_insert_with(Vec::new).extend(b);
        }
    }
    Ok(Evaluation {
        method,
        pulse: pulse.map(EvalReport::new),
        breathing: breathing.map(EvalReport::new),
    })
}

pub const BIN_TABLE_HEADER: &str = "bin,count,excluded,mae_bpm,mean_snr_db,pearson_r";

/// Per-Fitzpatrick-bin table as CSV.
pub fn bin_table_csv(records: &[EvalRecord]) -> String {
    let (rows, _) = aggregate_by_bin(records);
    let mut out = format!("{BIN_TABLE_HEADER}\n");
    for r in rows {
        out.push_str(&format!("{},{}\n", r.bin, aggregates_csv(&r.aggregates)));
    }
    out
}

fn aggregates_csv(a: &Aggregates) -> String {
    format!(
        "{},{},{},{},{}",
        a.count,
        a.excluded,
        a.mae_bpm,
        a.mean_snr_db,
        a.pearson_r.map(|r| r.to_string()).unwrap_or_default()
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSummary {
    pub config_hash: String,
    pub dataset_hash: String,
    pub toolkit_version: String,
    pub method: String,
    pub clips: usize,
    pub pulse: Option<Aggregates>,
    pub breathing: Option<Aggregates>,
    pub note: String,
}

pub const HELDOUT_NOTE: &str = "Evaluation clips are synthetic avatars rendered by this toolkit, \
not real video; rates are scored against the rendered ground truth.";

/// Writes records, per-bin tables and a summary under `dir`.
pub fn write_evaluation(
    dir: &Path,
    ev: &Evaluation,
    clips: usize,
    config_hash: &str,
    dataset_hash: &str,
) -> Result<EvalSummary> {
    for (name, rep) in [("pulse", &ev.pulse), ("breathing", &ev.breathing)] {
        if let Some(rep) = rep {
            write_file(&dir.join(format!("{name}_records.csv")), rep.to_csv().as_bytes())?;
            write_file(&dir.join(format!("{name}_by_bin.csv")), bin_table_csv(&rep.records).as_bytes())?;
        }
    }
    let summary = EvalSummary {
        config_hash: config_hash.to_string(),
        dataset_hash: dataset_hash.to_string(),
        toolkit_version: TOOLKIT_VERSION.to_string(),
        method: ev.method.clone(),
        clips,
        pulse: ev.pulse.as_ref().map(|r| r.aggregates.clone()),
        breathing: ev.breathing.as_ref().map(|r| r.aggregates.clone()),
        note: HELDOUT_NOTE.to_string(),
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}
