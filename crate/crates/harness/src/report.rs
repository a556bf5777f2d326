use std::fmt::Write;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;
use synthphys_core::metrics::Aggregates;
use synthphys_core::EvalReport;

use crate::config::ExperimentConfig;
use crate::dataset::{read_json, write_file};
use crate::error::{Context, HarnessError, Result};
use crate::evaluate::HELDOUT_NOTE;
use crate::plot::{bin_chart, count_chart, parse_per_bin, point_stats};
use crate::sweep::{parse_rows_csv, SweepResult, SWEEP_COUNT_DIR, SWEEP_SKINTONE_DIR};

pub const REPORT_DIR: &str = "report";

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))
}

fn fmt(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.2}")
    } else {
        "n/a".into()
    }
}

fn short_hash(h: &str) -> &str {
    &h[..12.min(h.len())]
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_else(|| "n/a".into())
}

/// Loads a sweep CSV and checks it against its JSON twin.
fn load_sweep(dir: &Path, stem: &str) -> Result<Option<SweepResult>> {
    let csv = dir.join(format!("{stem}.csv"));
    if !csv.is_file() {
        return Ok(None);
    }
    let rows = parse_rows_csv(&read(&csv)?).context(csv.display())?;
    let json: SweepResult = read_json(&dir.join(format!("{stem}.json")))?;
    let same = rows.len() == json.rows.len()
        && rows.iter().zip(&json.rows).all(|(a, b)| a.to_csv_line() == b.to_csv_line());
    if !same {
        return Err(HarnessError::Data(format!("{} disagrees with {stem}.json", csv.display())));
    }
    Ok(Some(json))
}

/// Method summaries under `eval/` and `baseline-*/`, checked against their
/// record files.
fn load_evaluations(root: &Path) -> Result<Vec<(String, Value)>> {
    let mut dirs: Vec<PathBuf> = vec![root.join("eval")];
    if let Ok(rd) = fs::read_dir(root) {
        let mut b: Vec<PathBuf> = rd
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("baseline-")))
            .collect();
        b.sort();
        dirs.extend(b);
    }
    let mut out = Vec::new();
    for d in dirs {
        let path = d.join("summary.json");
        if !path.is_file() {
            continue;
        }
        let v: Value = read_json(&path)?;
        for signal in ["pulse", "breathing"] {
            let rec = d.join(format!("{signal}_records.csv"));
            if !rec.is_file() {
                continue;
            }
            let records = EvalReport::records_from_csv(&read(&rec)?).context(rec.display())?;
            let agg = Aggregates::from_records(&records);
            let stored = v[signal]["mae_bpm"].as_f64();
            let ok = match stored {
                Some(m) => (m - agg.mae_bpm).abs() <= 1e-9,
                None => agg.mae_bpm.is_nan(),
            };
            if !ok {
                return Err(HarnessError::Data(format!(
                    "{}: {signal} MAE {stored:?} does not match its records ({})",
                    path.display(),
                    agg.mae_bpm
                )));
            }
        }
        let name = v["method"].as_str().map(str::to_string).unwrap_or_else(|| d.display().to_string());
        out.push((name, v));
    }
    Ok(out)
}

/// Regenerates charts and writes `report/summary.md` from whatever results
/// exist under the output directory.
pub fn cmd_report(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let root = &cfg.output_dir;
    let out_dir = root.join(REPORT_DIR);
    let count = load_sweep(&root.join(SWEEP_COUNT_DIR), "sweep_count")?;
    let skin_dir = root.join(SWEEP_SKINTONE_DIR);
    let skin = load_sweep(&skin_dir, "sweep_skintone")?;
    let per_bin = skin_dir.join("per_bin.csv");
    let per_bin_csv = if per_bin.is_file() { Some(read(&per_bin)?) } else { None };
    let evals = load_evaluations(root)?;
    if count.is_none() && skin.is_none() && evals.is_empty() {
        return Err(HarnessError::Data(format!("no results found under {}", root.display())));
    }

    let mut md = String::from("# synthphys results\n\n");
    let _ = writeln!(md, "Report config hash: `{}`\n", cfg.hash());
    let _ = writeln!(md, "> {HELDOUT_NOTE}\n");

    if !evals.is_empty() {
        md.push_str("## Evaluations\n\n");
        md.push_str("| method | clips | pulse MAE | pulse SNR | pulse r | breathing MAE | breathing SNR | breathing r | config hash |\n");
        md.push_str("|---|---|---|---|---|---|---|---|---|\n");
        for (name, v) in &evals {
            let g = |s: &str, k: &str| v[s][k].as_f64();
            let _ = writeln!(
                md,
                "| {name} | {} | {} | {} | {} | {} | {} | {} | `{}` |",
                v["clips"].as_u64().unwrap_or(0),
                opt(g("pulse", "mae_bpm")),
                opt(g("pulse", "mean_snr_db")),
                opt(g("pulse", "pearson_r")),
                opt(g("breathing", "mae_bpm")),
                opt(g("breathing", "mean_snr_db")),
                opt(g("breathing", "pearson_r")),
                short_hash(v["config_hash"].as_str().unwrap_or("?"))
            );
        }
        md.push('\n');
    }

    if let Some(res) = &count {
        md.push_str("## Avatar-count sweep\n\n");
        let _ = writeln!(md, "Sweep config hash: `{}`\n", res.config_hash);
        md.push_str("| avatars | seeds | pulse MAE mean ± s.e. | pulse MAE median | breathing MAE mean ± s.e. | breathing MAE median |\n");
        md.push_str("|---|---|---|---|---|---|\n");
        let p = point_stats(&res.rows, "pulse_mae")?;
        let b = point_stats(&res.rows, "breath_mae")?;
        for (a, c) in p.iter().zip(&b) {
            let _ = writeln!(
                md,
                "| {} | {} | {} ± {} | {} | {} ± {} | {} |",
                a.value,
                a.n,
                fmt(a.mean),
                fmt(a.stderr),
                fmt(a.median),
                fmt(c.mean),
                fmt(c.stderr),
                fmt(c.median)
            );
        }
        md.push('\n');
        for (metric, label) in [("pulse_mae", "Pulse MAE (bpm)"), ("breath_mae", "Breathing MAE (breaths/min)")] {
            let file = format!("{metric}_vs_count.svg");
            write_file(&out_dir.join(&file), count_chart(&res.rows, metric, label)?.as_bytes())?;
            let _ = writeln!(md, "![{label}]({file})\n");
        }
    }

    if let Some(res) = &skin {
        md.push_str("## Skin-tone experiment\n\n");
        let _ = writeln!(md, "Sweep config hash: `{}`\n", res.config_hash);
        if let Some(csv) = &per_bin_csv {
            md.push_str("| model | signal | Fitzpatrick type | windows | MAE |\n|---|---|---|---|---|\n");
            for c in parse_per_bin(csv).context(per_bin.display())? {
                let _ = writeln!(md, "| {} | {} | {} | {} | {} |", c.model, c.signal, c.bin, c.count, fmt(c.mae_bpm));
            }
            md.push('\n');
            for (signal, label) in [("pulse", "Pulse MAE (bpm)"), ("breathing", "Breathing MAE (breaths/min)")] {
                let file = format!("{signal}_mae_by_bin.svg");
                write_file(&out_dir.join(&file), bin_chart(csv, signal, label)?.as_bytes())?;
                let _ = writeln!(md, "![{label}]({file})\n");
            }
        }
    }

    let path = out_dir.join("summary.md");
    write_file(&path, md.as_bytes())?;
    Ok(path)
}
