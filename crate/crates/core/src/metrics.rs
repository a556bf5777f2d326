//! Spectral rate estimation, SNR, MAE/Pearson, windowing and per-skin-type
//! aggregation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::avatar::SkinTypeBin;
use crate::error::{Error, Result};
use crate::physio::Waveform;
use crate::scalar::{count, lit, to_f64, Scalar};
use crate::spectral::periodogram;

/// Frequency band in Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub lo_hz: f64,
    pub hi_hz: f64,
}

impl Band {
    /// 45–240 beats per minute.
    pub const PULSE: Band = Band {
        lo_hz: 0.75,
        hi_hz: 4.0,
    };
    /// 6–36 breaths per minute.
    pub const BREATHING: Band = Band {
        lo_hz: 0.10,
        hi_hz: 0.60,
    };

    pub fn new(lo_hz: f64, hi_hz: f64) -> Result<Self> {
        if !(lo_hz > 0.0 && hi_hz > lo_hz) {
            return Err(Error::InvalidRange {
                lo: lo_hz,
                hi: hi_hz,
            });
        }
        Ok(Self { lo_hz, hi_hz })
    }

    pub fn midpoint_hz(&self) -> f64 {
        0.5 * (self.lo_hz + self.hi_hz)
    }

    pub fn contains(&self, f: f64) -> bool {
        f >= self.lo_hz && f <= self.hi_hz
    }
}

/// Rate in beats (or breaths) per minute. `flagged` marks a degenerate
/// spectrum (no in-band power); the rate is then the band midpoint and the
/// window is excluded from MAE.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateEstimate<T> {
    pub bpm: T,
    pub flagged: bool,
}

/// In-band peak power at or below this fraction of the raw signal energy
/// counts as "no in-band power".
const DEGENERATE_POWER_RATIO: f64 = 1e-20;

/// Dominant in-band frequency of the Hann-windowed, zero-padded periodogram.
pub fn estimate_rate<T: Scalar>(w: &Waveform<T>, band: Band) -> Result<RateEstimate<T>> {
    if w.len() < 2 {
        return Err(Error::TooFew {
            needed: 2,
            got: w.len(),
        });
    }
    let pg = periodogram(&w.samples, w.fs);
    let bins = pg.bins_in(lit(band.lo_hz), lit(band.hi_hz));
    if bins.is_empty() {
        return Err(Error::EmptyBand {
            lo: band.lo_hz,
            hi: band.hi_hz,
        });
    }
    let (k_best, p_best) = bins
        .clone()
        .map(|k| (k, pg.power[k]))
        .fold((bins.start, T::neg_infinity()), |best, cur| {
            if cur.1 > best.1 {
                cur
            } else {
                best
            }
        });
    let energy: T = w.samples.iter().map(|&x| x * x).sum();
    let floor = lit::<T>(DEGENERATE_POWER_RATIO) * energy;
    if !(p_best > floor) || p_best <= T::zero() {
        return Ok(RateEstimate {
            bpm: lit(60.0 * band.midpoint_hz()),
            flagged: true,
        });
    }
    Ok(RateEstimate {
        bpm: lit::<T>(60.0) * pg.freq(k_best),
        flagged: false,
    })
}

/// Fundamental half-width of the SNR signal window, Hz.
pub const SNR_FUNDAMENTAL_HALF_WIDTH: f64 = 0.1;
/// Second-harmonic half-width of the SNR signal window, Hz.
pub const SNR_HARMONIC_HALF_WIDTH: f64 = 0.2;

/// Ratio, in dB, of periodogram power near `f_true` and `2·f_true` to the
/// remaining in-band power. `+inf` when the signal windows cover the whole
/// band, which a narrow band such as breathing allows.
pub fn snr<T: Scalar>(w: &Waveform<T>, f_true_hz: T, band: Band) -> Result<T> {
    let f0 = to_f64(f_true_hz);
    if !band.contains(f0) {
        return Err(Error::InvalidFrequency {
            f: f0,
            lo: band.lo_hz,
            hi: band.hi_hz,
        });
    }
    if w.len() < 2 {
        return Err(Error::TooFew {
            needed: 2,
            got: w.len(),
        });
    }
    let pg = periodogram(&w.samples, w.fs);
    let bins = pg.bins_in(lit(band.lo_hz), lit(band.hi_hz));
    if bins.is_empty() {
        return Err(Error::EmptyBand {
            lo: band.lo_hz,
            hi: band.hi_hz,
        });
    }
    let f0: T = f_true_hz;
    let two = lit::<T>(2.0);
    let (mut sig, mut noise) = (T::zero(), T::zero());
    for k in bins {
        let f = pg.freq(k);
        if (f - f0).abs() <= lit(SNR_FUNDAMENTAL_HALF_WIDTH)
            || (f - two * f0).abs() <= lit(SNR_HARMONIC_HALF_WIDTH)
        {
            sig += pg.power[k];
        } else {
            noise += pg.power[k];
        }
    }
    Ok(lit::<T>(10.0) * (sig / noise).log10())
}

fn check_lengths(a: usize, b: usize, min: usize) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch {
            expected: a,
            got: b,
        });
    }
    if a < min {
        return Err(Error::TooFew { needed: min, got: a });
    }
    Ok(())
}

pub fn mae<T: Scalar>(pred: &[T], truth: &[T]) -> Result<T> {
    check_lengths(pred.len(), truth.len(), 1)?;
    let s: T = pred.iter().zip(truth).map(|(&p, &t)| (p - t).abs()).sum();
    Ok(s / count(pred.len()))
}

/// Pearson product-moment correlation.
pub fn pearson<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    check_lengths(a.len(), b.len(), 2)?;
    let n = count::<T>(a.len());
    let ma = a.iter().copied().sum::<T>() / n;
    let mb = b.iter().copied().sum::<T>() / n;
    let (mut sab, mut saa, mut sbb) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= T::zero() || sbb <= T::zero() {
        return Err(Error::ConstantSeries);
    }
    Ok(sab / (saa.sqrt() * sbb.sqrt()))
}

/// Non-overlapping windows of `window_s` seconds; the tail is dropped.
pub fn window_split<T: Scalar>(w: &Waveform<T>, window_s: f64) -> Result<Vec<Waveform<T>>> {
    let fs = to_f64(w.fs);
    let per = (window_s * fs).round() as usize;
    let duration_s = w.len() as f64 / fs;
    if per == 0 || per > w.len() {
        return Err(Error::WindowTooLong {
            window_s,
            duration_s,
        });
    }
    Ok(w
        .samples
        .chunks_exact(per)
        .map(|c| Waveform {
            samples: c.to_vec(),
            fs: w.fs,
            kind: w.kind,
        })
        .collect())
}

/// One evaluated window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub clip_id: String,
    pub window: usize,
    pub bin: Option<SkinTypeBin>,
    pub pred_bpm: f64,
    pub true_bpm: f64,
    pub snr_db: f64,
    pub flagged: bool,
}

/// Aggregates over the unflagged records of a group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub mae_bpm: f64,
    pub mean_snr_db: f64,
    /// `None` with fewer than two records or constant rates.
    pub pearson_r: Option<f64>,
    pub count: usize,
    pub excluded: usize,
}

impl Aggregates {
    pub fn from_records(records: &[EvalRecord]) -> Self {
        let used: Vec<&EvalRecord> = records.iter().filter(|r| !r.flagged).collect();
        let pred: Vec<f64> = used.iter().map(|r| r.pred_bpm).collect();
        let truth: Vec<f64> = used.iter().map(|r| r.true_bpm).collect();
        let snrs: Vec<f64> = used.iter().map(|r| r.snr_db).collect();
        Self {
            mae_bpm: mae(&pred, &truth).unwrap_or(f64::NAN),
            mean_snr_db: if snrs.is_empty() {
                f64::NAN
            } else {
                snrs.iter().sum::<f64>() / snrs.len() as f64
            },
            pearson_r: pearson(&pred, &truth).ok(),
            count: used.len(),
            excluded: records.len() - used.len(),
        }
    }

    /// Equal within `tol` (NaN matches NaN, infinities match themselves).
    pub fn approx_eq(&self, other: &Aggregates, tol: f64) -> bool {
        let close = |a: f64, b: f64| a == b || (a.is_nan() && b.is_nan()) || (a - b).abs() <= tol;
        close(self.mae_bpm, other.mae_bpm)
            && close(self.mean_snr_db, other.mean_snr_db)
            && match (self.pearson_r, other.pearson_r) {
                (Some(a), Some(b)) => close(a, b),
                (None, None) => true,
                _ => false,
            }
            && self.count == other.count
            && self.excluded == other.excluded
    }
}

/// Per-window records plus their aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: Vec<EvalRecord>,
    pub aggregates: Aggregates,
}

/// Header of the records CSV.
pub const REPORT_CSV_HEADER: &str = "clip_id,window,bin,pred_bpm,true_bpm,snr_db,flagged";

impl EvalReport {
    pub fn new(records: Vec<EvalRecord>) -> Self {
        let aggregates = Aggregates::from_records(&records);
        Self {
            records,
            aggregates,
        }
    }

    /// Stored aggregates match a recomputation from the stored records.
    pub fn is_consistent(&self, tol: f64) -> bool {
        Aggregates::from_records(&self.records).approx_eq(&self.aggregates, tol)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.clip_id,
                r.window,
                r.bin.map_or("", |b| b.as_str()),
                r.pred_bpm,
                r.true_bpm,
                r.snr_db,
                r.flagged
            );
        }
        out
    }

    pub fn records_from_csv(text: &str) -> Result<Vec<EvalRecord>> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == REPORT_CSV_HEADER => {}
            _ => return Err(Error::Schema("missing report CSV header".into())),
        }
        let bad = |line: usize, msg: &str| Error::Parse {
            line: line + 1,
            msg: msg.to_string(),
        };
        let mut out = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 7 {
                return Err(bad(i, "expected 7 columns"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(i, "bad number"));
            out.push(EvalRecord {
                clip_id: cols[0].to_string(),
                window: cols[1].parse().map_err(|_| bad(i, "bad window index"))?,
                bin: if cols[2].is_empty() {
                    None
                } else {
                    Some(SkinTypeBin::parse(cols[2]).ok_or_else(|| bad(i, "bad bin"))?)
                },
                pred_bpm: num(cols[3])?,
                true_bpm: num(cols[4])?,
                snr_db: num(cols[5])?,
                flagged: cols[6].parse().map_err(|_| bad(i, "bad flag"))?,
            });
        }
        Ok(out)
    }
}

/// One row of a per-skin-type table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinRow {
    pub bin: SkinTypeBin,
    pub aggregates: Aggregates,
}

/// Groups records by skin type. Bins without records are omitted and
/// listed in the returned notices; records without a bin are ignored.
pub fn aggregate_by_bin(records: &[EvalRecord]) -> (Vec<BinRow>, Vec<String>) {
    let mut groups: BTreeMap<SkinTypeBin, Vec<EvalRecord>> = BTreeMap::new();
    for r in records {
        if let Some(b) = r.bin {
            groups.entry(b).or_default().push(r.clone());
        }
    }
    let notices = SkinTypeBin::ALL
        .iter()
        .filter(|b| !groups.contains_key(b))
        .map(|b| format!("skin type {b}: no records"))
        .collect();
    let rows = groups
        .into_iter()
        .map(|(bin, rs)| BinRow {
            bin,
            aggregates: Aggregates::from_records(&rs),
        })
        .collect();
    (rows, notices)
}
