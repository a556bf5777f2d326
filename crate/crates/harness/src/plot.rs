//! Standalone SVG charts. Output is a pure function of the input, so
//! regenerating from the same results gives identical bytes.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::error::{HarnessError, Result};
use crate::sweep::{SweepRow, PER_BIN_HEADER};

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// Summary of one sweep point across seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct PointStats {
    pub value: String,
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    /// Sample standard deviation over √n; zero for a single seed.
    pub stderr: f64,
}

pub fn metric(row: &SweepRow, name: &str) -> Result<f64> {
    Ok(match name {
        "pulse_mae" => row.pulse_mae,
        "pulse_snr" => row.pulse_snr,
        "pulse_r" => row.pulse_r,
        "breath_mae" => row.breath_mae,
        "breath_snr" => row.breath_snr,
        "breath_r" => row.breath_r,
        _ => return Err(HarnessError::Invariant(format!("unknown metric {name}"))),
    })
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v: Vec<f64> = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Per-value statistics in first-appearance order of the values.
pub fn point_stats(rows: &[SweepRow], name: &str) -> Result<Vec<PointStats>> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in rows {
        if !groups.contains_key(&r.value) {
            order.push(r.value.clone());
        }
        let v = metric(r, name)?;
        let g = groups.entry(r.value.clone()).or_default();
        if v.is_finite() {
            g.push(v);
        }
    }
    Ok(order
        .into_iter()
        .map(|value| {
            let xs = &groups[&value];
            let n = xs.len();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let stderr = if n > 1 {
                let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
                (var / n as f64).sqrt()
            } else {
                0.0
            };
            PointStats {
                median: median(xs),
                value,
                n,
                mean,
                stderr,
            }
        })
        .collect())
}

/// Rounded axis range and tick step covering `[lo, hi]`.
pub fn nice_range(lo: f64, hi: f64) -> (f64, f64, f64) {
    let (lo, hi) = if hi - lo < 1e-9 { (lo - 1.0, hi + 1.0) } else { (lo, hi) };
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    ((lo / step).floor() * step, (hi / step).ceil() * step, step)
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Frame {
    y_lo: f64,
    y_hi: f64,
}

impl Frame {
    fn y(&self, v: f64) -> f64 {
        TOP + (H - TOP - BOTTOM) * (1.0 - (v - self.y_lo) / (self.y_hi - self.y_lo))
    }
}

fn header(out: &mut String, title: &str, x_label: &str, y_label: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, esc(title));
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        LEFT + (W - LEFT - RIGHT) / 2.0,
        H - 15.0,
        esc(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="18" y="{0:.1}" text-anchor="middle" transform="rotate(-90 18 {0:.1})">{1}</text>"#,
        TOP + (H - TOP - BOTTOM) / 2.0,
        esc(y_label)
    );
}

fn y_axis(out: &mut String, f: &Frame, step: f64) {
    let x1 = W - RIGHT;
    let mut v = f.y_lo;
    while v <= f.y_hi + step * 1e-6 {
        let y = f.y(v);
        let _ = writeln!(out, r##"<line x1="{LEFT}" y1="{y:.2}" x2="{x1}" y2="{y:.2}" stroke="#dddddd"/>"##);
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 6.0, y + 4.0, tick_label(v, step));
        v += step;
    }
    let _ = writeln!(
        out,
        r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{:.1}" stroke="black"/>"#,
        H - BOTTOM
    );
    let _ = writeln!(
        out,
        r#"<line x1="{LEFT}" y1="{0:.1}" x2="{1}" y2="{0:.1}" stroke="black"/>"#,
        H - BOTTOM,
        W - RIGHT
    );
}

fn tick_label(v: f64, step: f64) -> String {
    let decimals = if step >= 1.0 { 0 } else { (-step.log10().floor()) as usize };
    let s = format!("{v:.decimals$}");
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

/// Mean ± standard error versus avatar count, with medians as open
/// circles. The y axis covers every bar end and median.
pub fn count_chart(rows: &[SweepRow], name: &str, y_label: &str) -> Result<String> {
    let stats = point_stats(rows, name)?;
    let pts: Vec<(f64, &PointStats)> = stats
        .iter()
        .filter(|s| s.n > 0)
        .map(|s| {
            s.value
                .parse::<f64>()
                .map(|x| (x, s))
                .map_err(|_| HarnessError::Data(format!("sweep value {:?} is not a count", s.value)))
        })
        .collect::<Result<_>>()?;
    if pts.is_empty() {
        return Err(HarnessError::Data(format!("no finite {name} values to plot")));
    }
    let lo = pts.iter().map(|(_, s)| (s.mean - s.stderr).min(s.median)).fold(f64::INFINITY, f64::min);
    let hi = pts.iter().map(|(_, s)| (s.mean + s.stderr).max(s.median)).fold(f64::NEG_INFINITY, f64::max);
    let (y_lo, y_hi, step) = nice_range(lo, hi);
    let f = Frame { y_lo, y_hi };
    let x_min = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let x_max = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let span = if x_max > x_min { x_max - x_min } else { 1.0 };
    let pad = 30.0;
    let x = |v: f64| LEFT + pad + (W - LEFT - RIGHT - 2.0 * pad) * (v - x_min) / span;

    let mut out = String::new();
    header(&mut out, &format!("{y_label} vs. training avatars"), "Training avatars", y_label);
    y_axis(&mut out, &f, step);
    for (v, s) in &pts {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.1}" text-anchor="middle">{}</text>"#,
            x(*v),
            H - BOTTOM + 18.0,
            esc(&s.value)
        );
    }
    let path: Vec<String> = pts.iter().map(|(v, s)| format!("{:.2},{:.2}", x(*v), f.y(s.mean))).collect();
    let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"/>"#, path.join(" "), PALETTE[0]);
    for (v, s) in &pts {
        let (cx, top, bot) = (x(*v), f.y(s.mean + s.stderr), f.y(s.mean - s.stderr));
        let _ = writeln!(out, r#"<line x1="{cx:.2}" y1="{top:.2}" x2="{cx:.2}" y2="{bot:.2}" stroke="{}"/>"#, PALETTE[0]);
        for y in [top, bot] {
            let _ = writeln!(out, r#"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{}"/>"#, cx - 5.0, cx + 5.0, PALETTE[0]);
        }
        let _ = writeln!(out, r#"<circle cx="{cx:.2}" cy="{:.2}" r="3.5" fill="{}"/>"#, f.y(s.mean), PALETTE[0]);
        let _ = writeln!(out, r#"<circle cx="{cx:.2}" cy="{:.2}" r="5" fill="none" stroke="{}"/>"#, f.y(s.median), PALETTE[1]);
    }
    legend(&mut out, &[("mean ± s.e.", PALETTE[0]), ("median", PALETTE[1])]);
    out.push_str("</svg>\n");
    Ok(out)
}

fn legend(out: &mut String, items: &[(&str, &str)]) {
    for (i, (name, color)) in items.iter().enumerate() {
        let y = TOP + 8.0 + 16.0 * i as f64;
        let x = W - RIGHT - 120.0;
        let _ = writeln!(out, r#"<rect x="{x:.1}" y="{:.1}" width="10" height="10" fill="{color}"/>"#, y - 9.0);
        let _ = writeln!(out, r#"<text x="{:.1}" y="{y:.1}">{}</text>"#, x + 15.0, esc(name));
    }
}

/// One row of the per-bin table.
#[derive(Debug, Clone, PartialEq)]
pub struct BinCell {
    pub model: String,
    pub signal: String,
    pub bin: String,
    pub count: usize,
    pub mae_bpm: f64,
}

pub fn parse_per_bin(csv: &str) -> Result<Vec<BinCell>> {
    let mut lines = csv.lines();
    if lines.next() != Some(PER_BIN_HEADER) {
        return Err(HarnessError::Data("per-bin table has an unexpected header".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = || HarnessError::Data(format!("bad per-bin row {l:?}"));
            if f.len() != 8 {
                return Err(bad());
            }
            Ok(BinCell {
                model: f[0].into(),
                signal: f[1].into(),
                bin: f[2].into(),
                count: f[3].parse().map_err(|_| bad())?,
                mae_bpm: f[5].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

const BIN_ORDER: [&str; 6] = ["I", "II", "III", "IV", "V", "VI"];

/// Grouped bars: one group per Fitzpatrick bin, one bar per model.
pub fn bin_chart(per_bin_csv: &str, signal: &str, y_label: &str) -> Result<String> {
    let cells: Vec<BinCell> = parse_per_bin(per_bin_csv)?
        .into_iter()
        .filter(|c| c.signal == signal && c.mae_bpm.is_finite())
        .collect();
    if cells.is_empty() {
        return Err(HarnessError::Data(format!("no {signal} rows in the per-bin table")));
    }
    let mut models: Vec<&str> = Vec::new();
    for c in &cells {
        if !models.contains(&c.model.as_str()) {
            models.push(&c.model);
        }
    }
    let bins: Vec<&str> = BIN_ORDER.iter().copied().filter(|b| cells.iter().any(|c| c.bin == *b)).collect();
    let hi = cells.iter().map(|c| c.mae_bpm).fold(0.0, f64::max);
    let (_, y_hi, step) = nice_range(0.0, hi.max(1e-3));
    let f = Frame { y_lo: 0.0, y_hi };

    let mut out = String::new();
    header(&mut out, &format!("{y_label} by Fitzpatrick type"), "Fitzpatrick skin type", y_label);
    y_axis(&mut out, &f, step);
    let group_w = (W - LEFT - RIGHT) / bins.len() as f64;
    let bar_w = 0.7 * group_w / models.len() as f64;
    for (gi, b) in bins.iter().enumerate() {
        let gx = LEFT + group_w * gi as f64;
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.1}" text-anchor="middle">{b}</text>"#,
            gx + group_w / 2.0,
            H - BOTTOM + 18.0
        );
        for (mi, m) in models.iter().enumerate() {
            if let Some(c) = cells.iter().find(|c| c.bin == *b && c.model == *m) {
                let x0 = gx + 0.15 * group_w + bar_w * mi as f64;
                let y0 = f.y(c.mae_bpm);
                let _ = writeln!(
                    out,
                    r#"<rect x="{x0:.2}" y="{y0:.2}" width="{bar_w:.2}" height="{:.2}" fill="{}"/>"#,
                    f.y(0.0) - y0,
                    PALETTE[mi % PALETTE.len()]
                );
            }
        }
    }
    let items: Vec<(&str, &str)> = models.iter().enumerate().map(|(i, m)| (*m, PALETTE[i % PALETTE.len()])).collect();
    legend(&mut out, &items);
    out.push_str("</svg>\n");
    Ok(out)
}
