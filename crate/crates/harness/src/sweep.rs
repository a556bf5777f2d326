use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use synthphys_core::avatar::partition_by_tone;
use synthphys_core::metrics::aggregate_by_bin;
use synthphys_core::nn::{train, TrainingWindow};
use synthphys_core::{EvalRecord, EvalReport, VideoClip};

use crate::commands::{save_model, training_windows, RESOLVED_CONFIG_FILE};
use crate::config::{DatasetConfig, ExperimentConfig, TOOLKIT_VERSION};
use crate::dataset::{ensure_dataset, worker_pool, write_file, write_json, Dataset, DatasetProvenance};
use crate::error::{Context, HarnessError, Result};
use crate::evaluate::{evaluate_serial, Evaluation, Method};
use crate::plot;

pub const SWEEP_COUNT_DIR: &str = "sweep-count";
pub const SWEEP_SKINTONE_DIR: &str = "sweep-skintone";
pub const HELDOUT_DIR: &str = "heldout";
pub const SWEEP_HEADER: &str = "value,seed,pulse_mae,pulse_snr,pulse_r,breath_mae,breath_snr,breath_r";
const CELLS_FILE: &str = "cells.csv";
const HELDOUT_SALT: u64 = 0x6865_6c64_6f75_7400;

/// JSON has no infinities or NaN; those travel as strings ("inf", "NaN").
mod float_text {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&v.to_string())
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// One trained-and-evaluated cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: String,
    pub seed: u64,
    #[serde(with = "float_text")]
    pub pulse_mae: f64,
    #[serde(with = "float_text")]
    pub pulse_snr: f64,
    #[serde(with = "float_text")]
    pub pulse_r: f64,
    #[serde(with = "float_text")]
    pub breath_mae: f64,
    #[serde(with = "float_text")]
    pub breath_snr: f64,
    #[serde(with = "float_text")]
    pub breath_r: f64,
}

impl SweepRow {
    fn from_evaluation(value: String, seed: u64, ev: &Evaluation) -> Self {
        let pick = |r: &Option<EvalReport>| {
            r.as_ref()
                .map(|r| {
                    let a = &r.aggregates;
                    (a.mae_bpm, a.mean_snr_db, a.pearson_r.unwrap_or(f64::NAN))
                })
                .unwrap_or((f64::NAN, f64::NAN, f64::NAN))
        };
        let (pulse_mae, pulse_snr, pulse_r) = pick(&ev.pulse);
        let (breath_mae, breath_snr, breath_r) = pick(&ev.breathing);
        Self {
            value,
            seed,
            pulse_mae,
            pulse_snr,
            pulse_r,
            breath_mae,
            breath_snr,
            breath_r,
        }
    }

    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.value,
            self.seed,
            self.pulse_mae,
            self.pulse_snr,
            self.pulse_r,
            self.breath_mae,
            self.breath_snr,
            self.breath_r
        )
    }

    pub fn parse(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(HarnessError::Data(format!("sweep row has {} fields: {line:?}", f.len())));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| HarnessError::Data(format!("bad number {s:?} in sweep row")))
        };
        Ok(Self {
            value: f[0].to_string(),
            seed: f[1]
                .parse()
                .map_err(|_| HarnessError::Data(format!("bad seed {:?} in sweep row", f[1])))?,
            pulse_mae: num(f[2])?,
            pulse_snr: num(f[3])?,
            pulse_r: num(f[4])?,
            breath_mae: num(f[5])?,
            breath_snr: num(f[6])?,
            breath_r: num(f[7])?,
        })
    }
}

pub fn rows_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_HEADER}\n");
    for r in rows {
        out.push_str(&r.to_csv_line());
        out.push('\n');
    }
    out
}

pub fn parse_rows_csv(text: &str) -> Result<Vec<SweepRow>> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.is_empty());
    match lines.next() {
        Some(h) if h == SWEEP_HEADER => {}
        other => {
            return Err(HarnessError::Data(format!("unexpected sweep header {other:?}")));
        }
    }
    lines.map(SweepRow::parse).collect()
}

/// Rows plus provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub config_hash: String,
    pub toolkit_version: String,
    pub rows: Vec<SweepRow>,
}

/// Completed cells on disk, appended as they finish.
struct CellLog {
    path: PathBuf,
    done: BTreeMap<(String, u64), SweepRow>,
    file: Mutex<fs::File>,
}

impl CellLog {
    fn open(dir: &Path, config_hash: &str) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        let path = dir.join(CELLS_FILE);
        let stamp = format!("# config_hash={config_hash}");
        let mut done = BTreeMap::new();
        if path.is_file() {
            let text = fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
            if text.lines().next() != Some(stamp.as_str()) {
                return Err(HarnessError::Config(format!(
                    "{} holds cells from a different config; use a fresh --out",
                    path.display()
                )));
            }
            // a partially written last line is dropped and recomputed
            let complete = &text[..text.rfind('\n').map_or(0, |i| i + 1)];
            for r in parse_rows_csv(complete).context(path.display())? {
                done.insert((r.value.clone(), r.seed), r);
            }
            fs::write(&path, complete).map_err(|e| HarnessError::io(&path, e))?;
        } else {
            fs::write(&path, format!("{stamp}\n{SWEEP_HEADER}\n")).map_err(|e| HarnessError::io(&path, e))?;
        }
        let file = OpenOptions::new()
            .append(true)
            .open(&path)
            .map_err(|e| HarnessError::io(&path, e))?;
        Ok(Self {
            path,
            done,
            file: Mutex::new(file),
        })
    }

    fn record(&self, row: &SweepRow) -> Result<()> {
        let mut f = self.file.lock().map_err(|_| HarnessError::Invariant("cell log poisoned".into()))?;
        writeln!(f, "{}", row.to_csv_line())
            .and_then(|_| f.flush())
            .map_err(|e| HarnessError::io(&self.path, e))
    }
}

fn heldout_config(cfg: &ExperimentConfig) -> DatasetConfig {
    let mut d = cfg.dataset.clone();
    d.count = cfg.sweep.heldout_count;
    d.seed = cfg.dataset.seed ^ HELDOUT_SALT;
    d.render.frames = cfg.sweep.heldout_frames;
    d.tone_stratified = true;
    d
}

fn pool_config(cfg: &ExperimentConfig, size: usize) -> DatasetConfig {
    DatasetConfig {
        count: size,
        ..cfg.dataset.clone()
    }
}

/// Training pool and held-out set, generated on first use.
struct Sets {
    pool: Dataset,
    pool_clips: Vec<VideoClip>,
    heldout: Vec<VideoClip>,
}

fn prepare_sets(cfg: &ExperimentConfig, pool_size: usize, workers: usize) -> Result<Sets> {
    let hash = cfg.hash();
    let pcfg = pool_config(cfg, pool_size);
    let hcfg = heldout_config(cfg);
    let pool = ensure_dataset(
        &pcfg,
        "pool_",
        &cfg.output_dir.join(format!("pool-{pool_size}")),
        &DatasetProvenance::new(&hash, &pcfg),
        workers,
    )?;
    let held = ensure_dataset(
        &hcfg,
        "heldout_",
        &cfg.output_dir.join(HELDOUT_DIR),
        &DatasetProvenance::new(&hash, &hcfg),
        workers,
    )?;
    let pool_clips = pool.load_clips(workers)?;
    let heldout = held.load_clips(workers)?;
    // held-out avatars must not appear in the training pool
    for h in &heldout {
        if pool_clips.iter().any(|p| p.spec.albedo_seed == h.spec.albedo_seed) {
            return Err(HarnessError::Invariant(format!(
                "held-out avatar {} duplicates a pool avatar",
                h.spec.id
            )));
        }
    }
    Ok(Sets {
        pool,
        pool_clips,
        heldout,
    })
}

fn cell_seed(base: u64, value: &str, seed: u64) -> u64 {
    let h = crate::config::hash_json(&(base, value, seed));
    u64::from_str_radix(&h[..16], 16).expect("hex digest")
}

struct Cell {
    value: String,
    seed: u64,
    /// Pool indices to train on.
    members: Vec<usize>,
}

/// Trains and evaluates every pending cell, in parallel across cells.
fn run_cells(
    cfg: &ExperimentConfig,
    dir: &Path,
    cells: Vec<Cell>,
    per_clip: &[Vec<TrainingWindow<f32>>],
    sets: &Sets,
    workers: usize,
) -> Result<Vec<SweepRow>> {
    let log = CellLog::open(dir, &cfg.hash())?;
    let pending: Vec<&Cell> = cells
        .iter()
        .filter(|c| !log.done.contains_key(&(c.value.clone(), c.seed)))
        .collect();
    worker_pool(workers)?.install(|| {
        pending
            .par_iter()
            .map(|c| {
                let windows: Vec<TrainingWindow<f32>> =
                    c.members.iter().flat_map(|&i| per_clip[i].iter().cloned()).collect();
                let mut tc = cfg.train.clone();
                tc.seed = cell_seed(cfg.train.seed, &c.value, c.seed);
                let outcome = train(&windows, &tc).context(format!("cell {}/{}", c.value, c.seed))?;
                let method = Method::Neural {
                    params: &outcome.params,
                    window: tc.window,
                    mode: tc.appearance,
                };
                let ev = evaluate_serial(&method, &sets.heldout, &cfg.eval)?;
                let cdir = dir.join("cells").join(format!("{}_{}", c.value, c.seed));
                save_model(&cdir, &outcome, cfg, &sets.pool.provenance.dataset_hash)?;
                for (name, rep) in [("pulse", &ev.pulse), ("breathing", &ev.breathing)] {
                    if let Some(rep) = rep {
                        write_file(&cdir.join(format!("{name}_records.csv")), rep.to_csv().as_bytes())?;
                    }
                }
                let row = SweepRow::from_evaluation(c.value.clone(), c.seed, &ev);
                log.record(&row)?;
                Ok(())
            })
            .collect::<Result<Vec<()>>>()
    })?;
    // completed rows in cell order, whether computed now or earlier
    let text = fs::read_to_string(&log.path).map_err(|e| HarnessError::io(&log.path, e))?;
    let mut all: BTreeMap<(String, u64), SweepRow> = BTreeMap::new();
    for r in parse_rows_csv(&text)? {
        all.insert((r.value.clone(), r.seed), r);
    }
    cells
        .iter()
        .map(|c| {
            all.remove(&(c.value.clone(), c.seed)).ok_or_else(|| {
                HarnessError::Invariant(format!("cell {}/{} missing after the sweep", c.value, c.seed))
            })
        })
        .collect()
}

fn write_result(dir: &Path, stem: &str, cfg: &ExperimentConfig, rows: &[SweepRow]) -> Result<SweepResult> {
    let result = SweepResult {
        config_hash: cfg.hash(),
        toolkit_version: TOOLKIT_VERSION.to_string(),
        rows: rows.to_vec(),
    };
    write_file(&dir.join(format!("{stem}.csv")), rows_csv(rows).as_bytes())?;
    write_json(&dir.join(format!("{stem}.json")), &result)?;
    write_file(&dir.join(RESOLVED_CONFIG_FILE), format!("{}\n", cfg.to_pretty_json()).as_bytes())?;
    Ok(result)
}

pub fn cmd_sweep_count(cfg: &ExperimentConfig, workers: usize) -> Result<SweepResult> {
    cfg.ensure_output_dir()?;
    let pool_size = cfg.sweep.pool_size();
    let biggest = cfg.sweep.avatar_counts.iter().copied().max().unwrap_or(0);
    if biggest > pool_size {
        return Err(HarnessError::Config(format!(
            "sweep asks for {biggest} avatars but the pool holds {pool_size}"
        )));
    }
    let sets = prepare_sets(cfg, pool_size, workers)?;
    let per_clip: Vec<Vec<TrainingWindow<f32>>> = sets
        .pool_clips
        .iter()
        .map(|c| training_windows(std::slice::from_ref(c), &cfg.train, 1))
        .collect::<Result<_>>()?;
    let mut cells = Vec::new();
    for &n in &cfg.sweep.avatar_counts {
        for &seed in &cfg.sweep.seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(cell_seed(cfg.dataset.seed, &n.to_string(), seed));
            let mut members = index::sample(&mut rng, pool_size, n).into_vec();
            members.sort_unstable();
            cells.push(Cell {
                value: n.to_string(),
                seed,
                members,
            });
        }
    }
    let dir = cfg.output_dir.join(SWEEP_COUNT_DIR);
    let rows = run_cells(cfg, &dir, cells, &per_clip, &sets, workers)?;
    let result = write_result(&dir, "sweep_count", cfg, &rows)?;
    for (metric, label) in [("pulse_mae", "Pulse MAE (bpm)"), ("breath_mae", "Breathing MAE (breaths/min)")] {
        let svg = plot::count_chart(&rows, metric, label)?;
        write_file(&dir.join(format!("{metric}_vs_count.svg")), svg.as_bytes())?;
    }
    Ok(result)
}

/// Names and pool indices of the two skin-tone training halves.
fn skintone_halves(cfg: &ExperimentConfig, clips: &[VideoClip]) -> Result<[(String, Vec<usize>); 2]> {
    let idx_of = |id: &str| clips.iter().position(|c| c.spec.id == id).expect("id from pool");
    let (a, b, names) = if cfg.sweep.tone_split {
        let specs: Vec<_> = clips.iter().map(|c| c.spec.clone()).collect();
        let (light, dark) = partition_by_tone(&specs)?;
        let light: Vec<usize> = light.iter().map(|s| idx_of(&s.id)).collect();
        let mut dark: Vec<usize> = dark.iter().map(|s| idx_of(&s.id)).collect();
        // an odd pool puts the median in the dark half; drop it for balance
        if dark.len() > light.len() {
            dark.remove(0);
        }
        (light, dark, ["light", "dark"])
    } else {
        let mut all: Vec<usize> = (0..clips.len()).collect();
        all.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.dataset.seed));
        let half = clips.len() / 2;
        let b = all[half..2 * half].to_vec();
        all.truncate(half);
        (all, b, ["half_a", "half_b"])
    };
    Ok([(names[0].to_string(), a), (names[1].to_string(), b)])
}

/// Skin-tone experiment outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkintoneResult {
    pub sweep: SweepResult,
    /// Training-pool size of each model.
    pub train_counts: BTreeMap<String, usize>,
    pub per_bin_csv: String,
}

pub const PER_BIN_HEADER: &str = "model,signal,bin,count,excluded,mae_bpm,mean_snr_db,pearson_r";

/// Per-(model, signal, bin) table from the records of every cell.
pub fn per_bin_table(records: &BTreeMap<(String, String), Vec<EvalRecord>>) -> String {
    let mut out = format!("{PER_BIN_HEADER}\n");
    for ((model, signal), recs) in records {
        let (rows, _) = aggregate_by_bin(recs);
        for r in rows {
            let a = &r.aggregates;
            out.push_str(&format!(
                "{model},{signal},{},{},{},{},{},{}\n",
                r.bin,
                a.count,
                a.excluded,
                a.mae_bpm,
                a.mean_snr_db,
                a.pearson_r.map(|v| v.to_string()).unwrap_or_default()
            ));
        }
    }
    out
}

pub fn cmd_sweep_skintone(cfg: &ExperimentConfig, workers: usize) -> Result<SkintoneResult> {
    cfg.ensure_output_dir()?;
    let pool_size = cfg.sweep.skintone_pool;
    let sets = prepare_sets(cfg, pool_size, workers)?;
    let halves = skintone_halves(cfg, &sets.pool_clips)?;
    if halves.iter().any(|(_, m)| m.is_empty()) {
        return Err(HarnessError::Config("skin-tone pool is too small to split".into()));
    }
    if halves[0].1.len() != halves[1].1.len() {
        return Err(HarnessError::Invariant("skin-tone halves differ in size".into()));
    }
    let per_clip: Vec<Vec<TrainingWindow<f32>>> = sets
        .pool_clips
        .iter()
        .map(|c| training_windows(std::slice::from_ref(c), &cfg.train, 1))
        .collect::<Result<_>>()?;
    let mut cells = Vec::new();
    for (name, members) in &halves {
        for &seed in &cfg.sweep.seeds {
            cells.push(Cell {
                value: name.clone(),
                seed,
                members: members.clone(),
            });
        }
    }
    let dir = cfg.output_dir.join(SWEEP_SKINTONE_DIR);
    let rows = run_cells(cfg, &dir, cells, &per_clip, &sets, workers)?;
    let sweep = write_result(&dir, "sweep_skintone", cfg, &rows)?;

    let mut records: BTreeMap<(String, String), Vec<EvalRecord>> = BTreeMap::new();
    for r in &rows {
        for signal in ["pulse", "breathing"] {
            let path = dir.join("cells").join(format!("{}_{}", r.value, r.seed)).join(format!("{signal}_records.csv"));
            let text = fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
            let recs = EvalReport::records_from_csv(&text).context(path.display())?;
            records.entry((r.value.clone(), signal.to_string())).or_default().extend(recs);
        }
    }
    let per_bin_csv = per_bin_table(&records);
    write_file(&dir.join("per_bin.csv"), per_bin_csv.as_bytes())?;
    for (signal, label) in [("pulse", "Pulse MAE (bpm)"), ("breathing", "Breathing MAE (breaths/min)")] {
        let svg = plot::bin_chart(&per_bin_csv, signal, label)?;
        write_file(&dir.join(format!("{signal}_mae_by_bin.svg")), svg.as_bytes())?;
    }
    let train_counts: BTreeMap<String, usize> =
        halves.iter().map(|(n, m)| (n.clone(), m.len())).collect();
    let result = SkintoneResult {
        sweep,
        train_counts,
        per_bin_csv,
    };
    write_json(&dir.join("skintone.json"), &result)?;
    Ok(result)
}
