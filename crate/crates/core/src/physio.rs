//! Pulse (PPG) and respiration waveforms: synthesis, CSV ingestion,
//! resampling and the derivative labels the network is trained on.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{count, lit, mean, std_about, to_f64, Scalar};

/// Below this population standard deviation a signal counts as constant.
pub const CONSTANT_STD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaveformKind {
    Ppg,
    Respiration,
    Predicted,
}

/// Uniformly sampled 1-D physiological signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform<T = f64> {
    pub samples: Vec<T>,
    pub fs: T,
    pub kind: WaveformKind,
}

impl<T: Scalar> Waveform<T> {
    /// Checks the invariants: positive rate, non-empty, all finite.
    pub fn new(samples: Vec<T>, fs: T, kind: WaveformKind) -> Result<Self> {
        if !(fs > T::zero()) || !fs.is_finite() {
            return Err(Error::InvalidRate(to_f64(fs)));
        }
        if samples.is_empty() {
            return Err(Error::InvalidSpec("waveform has no samples".into()));
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidSpec(format!("sample {i} is not finite")));
        }
        Ok(Self { samples, fs, kind })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> T {
        count::<T>(self.samples.len()) / self.fs
    }

    /// Same waveform with a different scalar type.
    pub fn cast<U: Scalar>(&self) -> Waveform<U> {
        Waveform {
            samples: self.samples.iter().map(|&x| lit(to_f64(x))).collect(),
            fs: lit(to_f64(self.fs)),
            kind: self.kind,
        }
    }

    /// Keeps the first `n` samples.
    pub fn truncated(&self, n: usize) -> Self {
        Self {
            samples: self.samples[..n.min(self.samples.len())].to_vec(),
            fs: self.fs,
            kind: self.kind,
        }
    }
}

/// Parameters of the synthetic pulse train.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PpgSpec {
    pub heart_rate_bpm: f64,
    /// Per-beat period jitter as a fraction of the beat period.
    pub hrv_jitter_frac: f64,
    pub dicrotic_amplitude: f64,
}

impl PpgSpec {
    pub fn validate(&self) -> Result<()> {
        check_range("heart_rate_bpm", self.heart_rate_bpm, 40.0, 180.0)?;
        check_range("hrv_jitter_frac", self.hrv_jitter_frac, 0.0, 0.1)?;
        check_range("dicrotic_amplitude", self.dicrotic_amplitude, 0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RespSpec {
    pub breathing_rate_bpm: f64,
    pub amplitude_jitter_frac: f64,
}

impl RespSpec {
    pub fn validate(&self) -> Result<()> {
        check_range("breathing_rate_bpm", self.breathing_rate_bpm, 6.0, 30.0)?;
        check_range("amplitude_jitter_frac", self.amplitude_jitter_frac, 0.0, 0.2)
    }
}

fn check_range(name: &str, v: f64, lo: f64, hi: f64) -> Result<()> {
    if v.is_finite() && (lo..=hi).contains(&v) {
        Ok(())
    } else {
        Err(Error::InvalidSpec(format!("{name}={v} outside [{lo}, {hi}]")))
    }
}

const SYSTOLIC_CENTER: f64 = 0.25;
const SYSTOLIC_WIDTH: f64 = 0.10;
const DICROTIC_CENTER: f64 = 0.55;
const DICROTIC_WIDTH: f64 = 0.18;

fn gaussian(x: f64, center: f64, width: f64) -> f64 {
    let z = (x - center) / width;
    (-0.5 * z * z).exp()
}

/// Synthesizes a pulse train of two-Gaussian beat templates.
///
/// Each beat of period `T` carries a systolic bump at `0.25·T` (width
/// `0.10·T`, amplitude 1) and a dicrotic bump at `0.55·T` (width `0.18·T`).
/// Neighbouring beats overlap smoothly; the result is min-max scaled to
/// `[0, 1]`. The first beat starts at a seeded random phase.
pub fn synthesize_ppg<T: Scalar>(
    spec: &PpgSpec,
    duration_s: f64,
    fs: f64,
    seed: u64,
) -> Result<Waveform<T>> {
    spec.validate()?;
    let f_hr = spec.heart_rate_bpm / 60.0;
    if !(fs >= 2.0 * f_hr * 4.0) {
        return Err(Error::InvalidRate(fs));
    }
    let period = 1.0 / f_hr;
    if !(duration_s >= 2.0 * period) {
        return Err(Error::InsufficientDuration {
            duration_s,
            needed: 2,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (duration_s * fs).round() as usize;

    // Beat onsets covering [-period, duration + period] so every sample sees
    // its neighbours on both sides.
    let mut onsets = Vec::new();
    let mut periods = Vec::new();
    let mut t = -rng.gen::<f64>() * period - period;
    while t < duration_s + 2.0 * period {
        let jitter = if spec.hrv_jitter_frac > 0.0 {
            spec.hrv_jitter_frac * rng.gen_range(-1.0..=1.0)
        } else {
            0.0
        };
        let p = period * (1.0 + jitter);
        onsets.push(t);
        periods.push(p);
        t += p;
    }

    let mut raw = Vec::with_capacity(n);
    let mut beat = 0usize;
    for i in 0..n {
        let ti = i as f64 / fs;
        while beat + 1 < onsets.len() && onsets[beat + 1] <= ti {
            beat += 1;
        }
        let mut v = 0.0;
        for k in beat.saturating_sub(1)..(beat + 2).min(onsets.len()) {
            let phase = (ti - onsets[k]) / periods[k];
            v += gaussian(phase, SYSTOLIC_CENTER, SYSTOLIC_WIDTH)
                + spec.dicrotic_amplitude * gaussian(phase, DICROTIC_CENTER, DICROTIC_WIDTH);
        }
        raw.push(v);
    }
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let samples = raw.iter().map(|&v| lit((v - lo) / (hi - lo))).collect();
    Waveform::new(samples, lit(fs), WaveformKind::Ppg)
}

/// Synthesizes a breathing sinusoid with per-cycle amplitude jitter.
///
/// The phase is seeded; the output is scaled so its largest absolute
/// sample is exactly 1.
pub fn synthesize_respiration<T: Scalar>(
    spec: &RespSpec,
    duration_s: f64,
    fs: f64,
    seed: u64,
) -> Result<Waveform<T>> {
    spec.validate()?;
    if !(fs >= 2.0) {
        return Err(Error::InvalidRate(fs));
    }
    let f = spec.breathing_rate_bpm / 60.0;
    if !(duration_s >= 1.0 / f) {
        return Err(Error::InsufficientDuration {
            duration_s,
            needed: 1,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase0: f64 = rng.gen();
    let n = (duration_s * fs).round() as usize;
    let cycles = (duration_s * f + phase0).ceil() as usize + 1;
    let amps: Vec<f64> = (0..cycles)
        .map(|_| 1.0 - spec.amplitude_jitter_frac * rng.gen::<f64>())
        .collect();
    let raw: Vec<f64> = (0..n)
        .map(|i| {
            let cyc = i as f64 / fs * f + phase0;
            let k = (cyc.floor() as usize).min(cycles - 1);
            amps[k] * (2.0 * std::f64::consts::PI * cyc).sin()
        })
        .collect();
    let peak = raw.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let samples = raw.iter().map(|&v| lit(v / peak)).collect();
    Waveform::new(samples, lit(fs), WaveformKind::Respiration)
}

/// Reads a two-column `time_s,value` CSV. A non-numeric first line is
/// treated as a header.
pub fn load_waveform_csv<T: Scalar>(path: &Path, kind: WaveformKind) -> Result<Waveform<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_waveform_csv(&text, kind)
}

pub fn parse_waveform_csv<T: Scalar>(text: &str, kind: WaveformKind) -> Result<Waveform<T>> {
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut lines = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let mut cols = line.split(',');
        let (a, b) = match (cols.next(), cols.next(), cols.next()) {
            (Some(a), Some(b), None) => (a.trim(), b.trim()),
            _ => {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "expected two comma-separated columns".into(),
                })
            }
        };
        match (a.parse::<f64>(), b.parse::<f64>()) {
            (Ok(t), Ok(v)) if t.is_finite() && v.is_finite() => {
                times.push(t);
                values.push(v);
                lines.push(lineno);
            }
            _ if times.is_empty() && lines.is_empty() && idx == 0 => {} // header
            _ => {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("not a numeric row: {line:?}"),
                })
            }
        }
    }
    if times.len() < 2 {
        return Err(Error::Parse {
            line: lines.last().copied().unwrap_or(1),
            msg: "need at least two rows to infer the sampling rate".into(),
        });
    }
    let dts: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    if let Some(i) = dts.iter().position(|&dt| dt <= 0.0) {
        return Err(Error::Parse {
            line: lines[i + 1],
            msg: "time column is not strictly increasing".into(),
        });
    }
    let mut sorted = dts.clone();
    sorted.sort_by(f64::total_cmp);
    let median = if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2]
    } else {
        0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
    };
    for (i, &dt) in dts.iter().enumerate() {
        if (dt - median).abs() > 0.01 * median {
            return Err(Error::NonUniformSampling {
                line: lines[i + 1],
                dt,
                median,
            });
        }
    }
    Waveform::new(
        values.into_iter().map(lit).collect(),
        lit(1.0 / median),
        kind,
    )
}

/// Writes `time_s,value` rows with a header. Values use the shortest
/// representation that round-trips exactly.
pub fn write_waveform_csv<T: Scalar>(path: &Path, w: &Waveform<T>) -> Result<()> {
    let mut out = String::with_capacity(w.len() * 24 + 16);
    out.push_str("time_s,value\n");
    let fs = to_f64(w.fs);
    for (i, &v) in w.samples.iter().enumerate() {
        out.push_str(&format!("{},{}\n", i as f64 / fs, v));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Linear-interpolation resampling. Identity (exact copy) when the rates match.
pub fn resample<T: Scalar>(w: &Waveform<T>, fs_new: T) -> Result<Waveform<T>> {
    if !(fs_new > T::zero()) || !fs_new.is_finite() {
        return Err(Error::InvalidRate(to_f64(fs_new)));
    }
    if w.len() < 2 {
        return Err(Error::TooFew {
            needed: 2,
            got: w.len(),
        });
    }
    if fs_new == w.fs {
        return Ok(w.clone());
    }
    let last = w.len() - 1;
    let span = count::<T>(last) / w.fs;
    // Tolerate rounding so an exact multiple of the new period is kept.
    let n_out = (span * fs_new + lit(1e-9)).floor().to_usize().unwrap_or(0) + 1;
    let ratio = w.fs / fs_new;
    let samples = (0..n_out)
        .map(|i| {
            let pos = count::<T>(i) * ratio;
            let i0 = pos.floor().to_usize().unwrap_or(0).min(last);
            if i0 == last {
                return w.samples[last];
            }
            let frac = pos - count(i0);
            w.samples[i0] + frac * (w.samples[i0 + 1] - w.samples[i0])
        })
        .collect();
    Ok(Waveform {
        samples,
        fs: fs_new,
        kind: w.kind,
    })
}

/// `(w − mean) / std` with population standard deviation.
pub fn standardize<T: Scalar>(w: &Waveform<T>) -> Result<Waveform<T>> {
    Ok(Waveform {
        samples: standardize_slice(&w.samples)?,
        fs: w.fs,
        kind: w.kind,
    })
}

pub fn standardize_slice<T: Scalar>(xs: &[T]) -> Result<Vec<T>> {
    let mu = mean(xs);
    let sd = std_about(xs, mu);
    if xs.is_empty() || to_f64(sd) < CONSTANT_STD {
        return Err(Error::ConstantSignal);
    }
    Ok(xs.iter().map(|&x| (x - mu) / sd).collect())
}

/// Standardized forward difference `d[t] = w[t+1] − w[t]`.
///
/// `d[t]` pairs with the motion input built from frames `t` and `t+1`.
pub fn first_derivative_labels<T: Scalar>(w: &Waveform<T>) -> Result<Waveform<T>> {
    if w.len() < 2 {
        return Err(Error::TooFew {
            needed: 2,
            got: w.len(),
        });
    }
    let diffs: Vec<T> = w.samples.windows(2).map(|p| p[1] - p[0]).collect();
    Ok(Waveform {
        samples: standardize_slice(&diffs)?,
        fs: w.fs,
        kind: w.kind,
    })
}

/// Inverse of [`first_derivative_labels`] up to an affine map: the running
/// sum with its least-squares line removed, standardized. Rates must be read
/// from this rather than from the derivative, whose second harmonic often
/// outweighs the fundamental for sharp pulse shapes.
pub fn integrate_derivative<T: Scalar>(w: &Waveform<T>) -> Result<Waveform<T>> {
    if w.len() < 3 {
        return Err(Error::TooFew {
            needed: 3,
            got: w.len(),
        });
    }
    let mut acc = T::zero();
    let sums: Vec<T> = w
        .samples
        .iter()
        .map(|&v| {
            acc += v;
            acc
        })
        .collect();
    let n = lit::<T>(sums.len() as f64);
    let t_mean = (n - T::one()) / lit(2.0);
    let y_mean = mean(&sums);
    let (mut sxy, mut sxx) = (T::zero(), T::zero());
    for (i, &y) in sums.iter().enumerate() {
        let dt = lit::<T>(i as f64) - t_mean;
        sxy += dt * (y - y_mean);
        sxx += dt * dt;
    }
    let slope = sxy / sxx;
    let detrended: Vec<T> = sums
        .iter()
        .enumerate()
        .map(|(i, &y)| y - y_mean - slope * (lit::<T>(i as f64) - t_mean))
        .collect();
    Ok(Waveform {
        samples: standardize_slice(&detrended)?,
        fs: w.fs,
        kind: w.kind,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wf(xs: &[f64], fs: f64) -> Waveform<f64> {
        Waveform::new(xs.to_vec(), fs, WaveformKind::Ppg).unwrap()
    }

    #[test]
    fn ppg_peak_spacing_is_one_period() {
        for dicrotic in [0.0, 0.45, 1.0] {
            let spec = PpgSpec {
                heart_rate_bpm: 60.0,
                hrv_jitter_frac: 0.0,
                dicrotic_amplitude: dicrotic,
            };
            let w = synthesize_ppg::<f64>(&spec, 10.0, 30.0, 3).unwrap();
            // systolic peaks: samples that dominate a +/-12 sample neighbourhood
            let s = &w.samples;
            let peaks: Vec<usize> = (12..s.len() - 12)
                .filter(|&i| s[i - 12..=i + 12].iter().all(|&v| v <= s[i]))
                .collect();
            assert!(peaks.len() >= 8, "{peaks:?}");
            assert!(peaks.windows(2).all(|p| p[1] - p[0] == 30), "{peaks:?}");
            assert!(w.samples.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn ppg_same_seed_is_bit_identical() {
        let spec = PpgSpec {
            heart_rate_bpm: 77.0,
            hrv_jitter_frac: 0.05,
            dicrotic_amplitude: 0.3,
        };
        let a = synthesize_ppg::<f64>(&spec, 8.0, 30.0, 11).unwrap();
        let b = synthesize_ppg::<f64>(&spec, 8.0, 30.0, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ppg_rejects_bad_specs() {
        let bad = PpgSpec {
            heart_rate_bpm: 200.0,
            hrv_jitter_frac: 0.0,
            dicrotic_amplitude: 0.5,
        };
        assert!(matches!(
            synthesize_ppg::<f64>(&bad, 10.0, 30.0, 0),
            Err(Error::InvalidSpec(_))
        ));
        let ok = PpgSpec {
            heart_rate_bpm: 60.0,
            ..bad
        };
        assert!(matches!(
            synthesize_ppg::<f64>(&ok, 1.5, 30.0, 0),
            Err(Error::InsufficientDuration { .. })
        ));
    }

    #[test]
    fn respiration_unit_peak_and_upcrossings() {
        let spec = RespSpec {
            breathing_rate_bpm: 12.0,
            amplitude_jitter_frac: 0.0,
        };
        let w = synthesize_respiration::<f64>(&spec, 30.0, 30.0, 1).unwrap();
        let peak = w.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((peak - 1.0).abs() < 1e-6);

        let spec6 = RespSpec {
            breathing_rate_bpm: 6.0,
            amplitude_jitter_frac: 0.0,
        };
        let w = synthesize_respiration::<f64>(&spec6, 60.0, 30.0, 5).unwrap();
        let ups = w
            .samples
            .windows(2)
            .filter(|p| p[0] < 0.0 && p[1] >= 0.0)
            .count();
        assert_eq!(ups, 6);
    }

    #[test]
    fn csv_direct_read() {
        let w: Waveform = parse_waveform_csv("0.0,0.1\n0.5,0.3\n1.0,0.2\n", WaveformKind::Ppg).unwrap();
        assert_eq!(w.fs, 2.0);
        assert_eq!(w.samples, vec![0.1, 0.3, 0.2]);
        let h: Waveform = parse_waveform_csv("time_s,value\n0,1\n1,2\n", WaveformKind::Ppg).unwrap();
        assert_eq!(h.samples, vec![1.0, 2.0]);
    }

    #[test]
    fn csv_errors() {
        assert!(matches!(
            parse_waveform_csv::<f64>("0.0,0.1\n", WaveformKind::Ppg),
            Err(Error::Parse { .. })
        ));
        let alt = "0,0\n0.4,1\n1.0,2\n1.4,3\n2.0,4\n2.4,5\n";
        assert!(matches!(
            parse_waveform_csv::<f64>(alt, WaveformKind::Ppg),
            Err(Error::NonUniformSampling { .. })
        ));
        match parse_waveform_csv::<f64>("0,1\n1,x\n", WaveformKind::Ppg) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn resample_identity_and_midpoint() {
        let w = wf(&[0.3, 0.1, 0.7, 0.2], 30.0);
        assert_eq!(resample(&w, 30.0).unwrap(), w);
        let r = resample(&wf(&[0.0, 1.0], 1.0), 2.0).unwrap();
        assert_eq!(r.samples, vec![0.0, 0.5, 1.0]);
        assert!(matches!(resample(&w, 0.0), Err(Error::InvalidRate(_))));
    }

    #[test]
    fn standardize_examples() {
        assert_eq!(standardize(&wf(&[1.0, 3.0], 1.0)).unwrap().samples, vec![-1.0, 1.0]);
        let s = standardize(&wf(&[2.0, 4.0, 6.0], 1.0)).unwrap();
        let e = (8.0f64 / 3.0).sqrt();
        for (a, b) in s.samples.iter().zip([-2.0 / e, 0.0, 2.0 / e]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((s.samples[2] - 1.2247).abs() < 1e-4);
        let again = standardize(&s).unwrap();
        for (a, b) in again.samples.iter().zip(&s.samples) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(matches!(
            standardize(&wf(&[2.0, 2.0], 1.0)),
            Err(Error::ConstantSignal)
        ));
    }

    #[test]
    fn derivative_labels_degenerate_inputs() {
        assert!(matches!(
            first_derivative_labels(&wf(&[5.0; 4], 1.0)),
            Err(Error::ConstantSignal)
        ));
        assert!(matches!(
            first_derivative_labels(&wf(&[0.0, 1.0, 2.0, 3.0], 1.0)),
            Err(Error::ConstantSignal)
        ));
    }
}
