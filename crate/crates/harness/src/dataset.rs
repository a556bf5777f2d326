use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use synthphys_core::avatar::{fitzpatrick_bin, sample_avatar_with, AvatarSpec, WaveformSource};
use synthphys_core::dataset::{
    read_clip, read_manifest, write_clip, write_manifest, DatasetManifest, ManifestEntry,
    AVATARS_DIR, MANIFEST_FILE,
};
use synthphys_core::metrics::estimate_rate;
use synthphys_core::physio::{load_waveform_csv, WaveformKind};
use synthphys_core::render::render_avatar;
use synthphys_core::{Band, RenderConfig, VideoClip};

use crate::config::{hash_json, DatasetConfig, WaveformPool, TOOLKIT_VERSION};
use crate::error::{Context, HarnessError, Result};

pub const PROVENANCE_FILE: &str = "provenance.json";

/// Written next to every dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetProvenance {
    /// Hash of the full experiment config that emitted the dataset.
    pub config_hash: String,
    /// Hash of `dataset`; consumers match on this.
    pub dataset_hash: String,
    pub toolkit_version: String,
    pub dataset: DatasetConfig,
}

impl DatasetProvenance {
    pub fn new(config_hash: &str, dataset: &DatasetConfig) -> Self {
        Self {
            config_hash: config_hash.to_string(),
            dataset_hash: hash_json(dataset),
            toolkit_version: TOOLKIT_VERSION.to_string(),
            dataset: dataset.clone(),
        }
    }
}

/// Worker pool of the requested size.
pub fn worker_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| HarnessError::Invariant(format!("thread pool: {e}")))
}

/// Per-avatar generator: depends only on the dataset seed and the index.
fn avatar_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Render settings actually used for a dataset.
pub fn effective_render(cfg: &DatasetConfig) -> RenderConfig {
    let mut r = cfg.render.clone();
    if cfg.static_head {
        r.head_damping = 0.0;
    }
    r
}

struct PoolFile {
    path: PathBuf,
    duration_s: f64,
}

fn scan_pool(pool: &WaveformPool) -> Result<(Vec<PoolFile>, Vec<PoolFile>)> {
    let scan = |paths: &[PathBuf], kind| -> Result<Vec<PoolFile>> {
        paths
            .iter()
            .map(|p| {
                let w = load_waveform_csv::<f64>(p, kind).context(p.display())?;
                Ok(PoolFile {
                    path: p.clone(),
                    duration_s: w.duration_s(),
                })
            })
            .collect()
    };
    Ok((scan(&pool.ppg, WaveformKind::Ppg)?, scan(&pool.resp, WaveformKind::Respiration)?))
}

fn pick_recording(rng: &mut ChaCha8Rng, files: &[PoolFile], clip_s: f64) -> Result<WaveformSource> {
    let f = &files[rng.gen_range(0..files.len())];
    let slack = f.duration_s - clip_s;
    if slack < 0.0 {
        return Err(HarnessError::Data(format!(
            "{} lasts {:.2} s, shorter than a {clip_s:.2} s clip",
            f.path.display(),
            f.duration_s
        )));
    }
    let offset_s = if slack > 0.0 { rng.gen_range(0.0..slack) } else { 0.0 };
    Ok(WaveformSource::Csv {
        path: f.path.clone(),
        offset_s,
    })
}

/// Avatar specs of a dataset, ids `<prefix><index>`. Pure in the config.
pub fn sample_specs(cfg: &DatasetConfig, prefix: &str) -> Result<Vec<AvatarSpec>> {
    let pool = cfg.waveform_pool.as_ref().map(scan_pool).transpose()?;
    let clip_s = cfg.render.frames as f64 / cfg.render.fps;
    let [lo, hi] = cfg.tone_range;
    let n = cfg.count;
    (0..n)
        .map(|i| {
            let mut rng = avatar_rng(cfg.seed, i);
            let tone = if cfg.tone_stratified {
                let step = (hi - lo) / n as f64;
                [lo + step * i as f64, (lo + step * (i + 1) as f64).min(hi)]
            } else {
                [lo, hi]
            };
            let mut spec = sample_avatar_with(rng.next_u64(), tone, &cfg.sampler)?;
            spec.id = format!("{prefix}{i:05}");
            if cfg.static_head {
                spec.head_yaw_velocity_dps = 0.0;
            }
            if let Some((ppg, resp)) = &pool {
                spec.ppg_source = pick_recording(&mut rng, ppg, clip_s)?;
                spec.resp_source = pick_recording(&mut rng, resp, clip_s)?;
            }
            Ok(spec)
        })
        .collect()
}

fn render_seed(cfg: &DatasetConfig, index: usize) -> u64 {
    let mut rng = avatar_rng(cfg.seed, index);
    rng.next_u64();
    rng.next_u64() ^ 0x7265_6e64
}

fn manifest_entry(clip: &VideoClip) -> Result<ManifestEntry> {
    let mut e = ManifestEntry::for_clip(clip, fitzpatrick_bin(clip.spec.melanin)?);
    // recorded sources have no nominal rate; use the rate of the recording
    if e.gt_pulse_bpm.is_nan() {
        e.gt_pulse_bpm = estimate_rate(&clip.ppg_gt, Band::PULSE)?.bpm;
    }
    if e.gt_breathing_bpm.is_nan() {
        e.gt_breathing_bpm = estimate_rate(&clip.resp_gt, Band::BREATHING)?.bpm;
    }
    Ok(e)
}

fn clear_dataset_dir(dir: &Path) -> Result<()> {
    if !dir.exists() {
        return fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e));
    }
    let entries: Vec<_> = fs::read_dir(dir)
        .map_err(|e| HarnessError::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name())
        .collect();
    let ours = |n: &std::ffi::OsStr| n == AVATARS_DIR || n == MANIFEST_FILE || n == PROVENANCE_FILE;
    if let Some(other) = entries.iter().find(|n| !ours(n)) {
        return Err(HarnessError::Config(format!(
            "{} holds {other:?}, which is not part of a dataset; refusing to overwrite",
            dir.display()
        )));
    }
    let avatars = dir.join(AVATARS_DIR);
    if avatars.exists() {
        fs::remove_dir_all(&avatars).map_err(|e| HarnessError::io(&avatars, e))?;
    }
    Ok(())
}

/// Samples, renders and writes a dataset under `dir`. Output bytes depend
/// only on the config, not on `workers`.
pub fn generate(
    cfg: &DatasetConfig,
    prefix: &str,
    dir: &Path,
    prov: &DatasetProvenance,
    workers: usize,
) -> Result<DatasetManifest> {
    clear_dataset_dir(dir)?;
    let specs = sample_specs(cfg, prefix)?;
    let render = effective_render(cfg);
    let entries: Vec<ManifestEntry> = worker_pool(workers)?.install(|| {
        specs
            .par_iter()
            .enumerate()
            .map(|(i, spec)| {
                let clip = render_avatar(spec, &render, render_seed(cfg, i)).context(&spec.id)?;
                let entry = manifest_entry(&clip).context(&spec.id)?;
                write_clip(&entry.clip_dir(dir), &clip).context(&spec.id)?;
                Ok(entry)
            })
            .collect::<Result<_>>()
    })?;
    let mut manifest = DatasetManifest::new(format!("synthphys-{}", &prov.dataset_hash[..16]), cfg.seed);
    manifest.entries = entries;
    write_manifest(&dir.join(MANIFEST_FILE), &manifest)?;
    write_json(&dir.join(PROVENANCE_FILE), prov)?;
    Ok(manifest)
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| HarnessError::Invariant(format!("serialize {}: {e}", path.display())))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| HarnessError::io(path, e))
}

pub fn read_json<D: serde::de::DeserializeOwned>(path: &Path) -> Result<D> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))
}

/// A dataset found on disk.
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: DatasetManifest,
    pub provenance: DatasetProvenance,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let mpath = dir.join(MANIFEST_FILE);
        if !mpath.is_file() {
            return Err(HarnessError::Data(format!(
                "no dataset at {} (run `gen` first)",
                dir.display()
            )));
        }
        let manifest = read_manifest(&mpath)?;
        let provenance: DatasetProvenance = read_json(&dir.join(PROVENANCE_FILE))?;
        if hash_json(&provenance.dataset) != provenance.dataset_hash {
            return Err(HarnessError::Data(format!(
                "{}: provenance hash does not match its own config",
                dir.display()
            )));
        }
        if manifest.entries.is_empty() {
            return Err(HarnessError::Data(format!("dataset at {} is empty", dir.display())));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
            provenance,
        })
    }

    /// Fails unless the dataset was generated from `expected` settings.
    pub fn check_hash(&self, expected: &str) -> Result<()> {
        if self.provenance.dataset_hash != expected {
            return Err(HarnessError::Data(format!(
                "dataset at {} was generated from different settings (hash {} vs {})",
                self.dir.display(),
                &self.provenance.dataset_hash[..12],
                &expected[..12.min(expected.len())]
            )));
        }
        Ok(())
    }

    pub fn load_clips(&self, workers: usize) -> Result<Vec<VideoClip>> {
        worker_pool(workers)?.install(|| {
            self.manifest
                .entries
                .par_iter()
                .map(|e| read_clip(&e.clip_dir(&self.dir)).context(&e.avatar_id))
                .collect()
        })
    }
}

/// Opens the dataset at `dir` if it matches `prov`, otherwise generates it.
pub fn ensure_dataset(
    cfg: &DatasetConfig,
    prefix: &str,
    dir: &Path,
    prov: &DatasetProvenance,
    workers: usize,
) -> Result<Dataset> {
    if let Ok(ds) = Dataset::open(dir) {
        if ds.provenance.dataset_hash == prov.dataset_hash {
            return Ok(ds);
        }
    }
    generate(cfg, prefix, dir, prov, workers)?;
    Dataset::open(dir)
}
