use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use synthphys_core::avatar::SamplerRanges;
use synthphys_core::{Band, RenderConfig, TrainConfig};

use crate::error::{HarnessError, Result};

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Ingested recordings to draw driving waveforms from instead of the
/// synthesizers. Each avatar picks one file per signal and a random offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveformPool {
    pub ppg: Vec<PathBuf>,
    pub resp: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub count: usize,
    pub tone_range: [f64; 2],
    pub seed: u64,
    pub render: RenderConfig,
    pub sampler: SamplerRanges,
    /// Spread melanin evenly over `tone_range` (one stratum per avatar)
    /// instead of sampling it independently.
    pub tone_stratified: bool,
    /// Zero yaw and no breathing-driven head motion.
    pub static_head: bool,
    pub waveform_pool: Option<WaveformPool>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            count: 10,
            tone_range: [0.0, 1.0],
            seed: 7,
            render: RenderConfig::default(),
            sampler: SamplerRanges::default(),
            tone_stratified: false,
            static_head: false,
            waveform_pool: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Rate-estimation window; clips shorter than this are scored whole.
    pub window_s: f64,
    /// Score each clip as a single window regardless of `window_s`.
    pub full_clip: bool,
    pub pulse_band: Band,
    pub breathing_band: Band,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            window_s: 30.0,
            full_clip: false,
            pulse_band: Band::PULSE,
            breathing_band: Band::BREATHING,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub avatar_counts: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Split the skin-tone pool by melanin; off splits it at random.
    pub tone_split: bool,
    /// Training pool for the count sweep; defaults to the largest count.
    pub pool_size: Option<usize>,
    /// Training pool for the skin-tone experiment (halved per model).
    pub skintone_pool: usize,
    pub heldout_count: usize,
    pub heldout_frames: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            avatar_counts: vec![4, 8, 16, 32],
            seeds: vec![0, 1, 2],
            tone_split: true,
            pool_size: None,
            skintone_pool: 32,
            heldout_count: 16,
            heldout_frames: 900,
        }
    }
}

impl SweepConfig {
    pub fn pool_size(&self) -> usize {
        self.pool_size
            .unwrap_or_else(|| self.avatar_counts.iter().copied().max().unwrap_or(0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            sweep: SweepConfig::default(),
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

fn bad<T>(msg: impl Into<String>) -> Result<T> {
    Err(HarnessError::Config(msg.into()))
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| e.context(path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        if d.count < 1 {
            return bad("dataset.count must be at least 1");
        }
        let [lo, hi] = d.tone_range;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return bad(format!("dataset.tone_range [{lo}, {hi}] must lie within [0, 1]"));
        }
        d.render.validate().map_err(|e| HarnessError::Config(format!("dataset.render: {e}")))?;
        if d.render.height % 4 != 0 || d.render.width % 4 != 0 {
            return bad("dataset.render height and width must be multiples of 4");
        }
        if let Some(pool) = &d.waveform_pool {
            if pool.ppg.is_empty() || pool.resp.is_empty() {
                return bad("dataset.waveform_pool needs at least one ppg and one resp file");
            }
        }
        self.train
            .validate()
            .map_err(|e| HarnessError::Config(format!("train: {e}")))?;
        let e = &self.eval;
        if !(e.window_s > 0.0) {
            return bad("eval.window_s must be positive");
        }
        for (name, b) in [("pulse_band", e.pulse_band), ("breathing_band", e.breathing_band)] {
            if !(b.lo_hz > 0.0 && b.hi_hz > b.lo_hz) {
                return bad(format!("eval.{name} must satisfy 0 < lo_hz < hi_hz"));
            }
        }
        let s = &self.sweep;
        if s.avatar_counts.is_empty() || s.avatar_counts.contains(&0) {
            return bad("sweep.avatar_counts must be non-empty with counts >= 1");
        }
        if s.seeds.is_empty() {
            return bad("sweep.seeds must be non-empty");
        }
        if s.heldout_count < 1 || s.heldout_frames < self.train.window {
            return bad("sweep.heldout_count must be >= 1 and heldout_frames >= train.window");
        }
        if s.skintone_pool < 2 {
            return bad("sweep.skintone_pool must be at least 2");
        }
        Ok(())
    }

    /// Hash of the resolved config. The output directory is left out so
    /// that moving a run does not change what it claims to be.
    pub fn hash(&self) -> String {
        hash_json(&(&self.dataset, &self.train, &self.eval, &self.sweep))
    }

    /// Hash of the dataset section alone; datasets are matched on this.
    pub fn dataset_hash(&self) -> String {
        hash_json(&self.dataset)
    }

    pub fn to_pretty_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Creates the output directory and checks that it accepts files.
    pub fn ensure_output_dir(&self) -> Result<()> {
        let dir = &self.output_dir;
        fs::create_dir_all(dir)
            .map_err(|e| HarnessError::Config(format!("output dir {}: {e}", dir.display())))?;
        let probe = dir.join(".write-probe");
        fs::write(&probe, b"")
            .and_then(|_| fs::remove_file(&probe))
            .map_err(|e| HarnessError::Config(format!("output dir {} not writable: {e}", dir.display())))
    }
}

pub fn hash_json<S: Serialize>(value: &S) -> String {
    let text = serde_json::to_string(value).expect("value serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}
