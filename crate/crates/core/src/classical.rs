//! Non-learned pulse and breathing extraction: green channel, CHROM, POS and
//! a shoulder-motion breathing tracker.

use crate::error::{Error, Result};
use crate::metrics::Band;
use crate::physio::{standardize_slice, Waveform, WaveformKind};
use crate::render::{VideoClip, SHOULDER_BAND_FRAC};
use crate::scalar::{lit, mean, std_about, to_f64, Scalar};
use crate::spectral::fft_mask;

/// Per-frame mean RGB over skin pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbTrace<T = f64> {
    pub r: Vec<T>,
    pub g: Vec<T>,
    pub b: Vec<T>,
    pub fs: T,
}

impl<T: Scalar> RgbTrace<T> {
    pub fn new(r: Vec<T>, g: Vec<T>, b: Vec<T>, fs: T) -> Result<Self> {
        if g.len() != r.len() || b.len() != r.len() {
            return Err(Error::LengthMismatch {
                expected: r.len(),
                got: if g.len() != r.len() { g.len() } else { b.len() },
            });
        }
        if r.len() < 2 {
            return Err(Error::TooFew {
                needed: 2,
                got: r.len(),
            });
        }
        if r.iter().chain(&g).chain(&b).any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec("non-finite trace value".into()));
        }
        Ok(Self { r, g, b, fs })
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    /// Multiplies every channel by `a`.
    pub fn scaled(&self, a: T) -> Self {
        let s = |v: &[T]| v.iter().map(|&x| x * a).collect();
        Self {
            r: s(&self.r),
            g: s(&self.g),
            b: s(&self.b),
            fs: self.fs,
        }
    }
}

/// Mean skin-pixel colour of every frame.
pub fn spatial_average<T: Scalar>(clip: &VideoClip) -> Result<RgbTrace<T>> {
    let n = clip.len();
    let (mut r, mut g, mut b) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for (t, f) in clip.frames.iter().enumerate() {
        let mut acc = [0.0f64; 3];
        let mut k = 0usize;
        for (i, &skin) in f.skin_mask.iter().enumerate() {
            if skin {
                for c in 0..3 {
                    acc[c] += f.pixels[i * 3 + c] as f64;
                }
                k += 1;
            }
        }
        if k == 0 {
            return Err(Error::EmptyMask(t));
        }
        r.push(lit(acc[0] / k as f64));
        g.push(lit(acc[1] / k as f64));
        b.push(lit(acc[2] / k as f64));
    }
    RgbTrace::new(r, g, b, lit(clip.fs))
}

/// Zero-phase FFT mask filter keeping `[lo_hz, hi_hz]`.
pub fn bandpass<T: Scalar>(w: &Waveform<T>, lo_hz: f64, hi_hz: f64) -> Result<Waveform<T>> {
    let fs = to_f64(w.fs);
    if !(lo_hz > 0.0 && lo_hz < hi_hz && hi_hz < fs / 2.0) {
        return Err(Error::InvalidBand {
            lo: lo_hz,
            hi: hi_hz,
            fs,
        });
    }
    Ok(Waveform {
        samples: fft_mask(&w.samples, w.fs, lit(lo_hz), lit(hi_hz)),
        fs: w.fs,
        kind: w.kind,
    })
}

/// Largest band within `band` that the sampling rate supports.
fn clip_band(band: Band, fs: f64) -> (f64, f64) {
    (band.lo_hz, band.hi_hz.min(0.49 * fs))
}

/// Rounding-level variation is treated as constant.
fn nearly_constant<T: Scalar>(xs: &[T], scale: T) -> bool {
    let mu = mean(xs);
    let tol = lit::<T>(1e3) * T::epsilon() * scale.max(T::min_positive_value());
    std_about(xs, mu) <= tol
}

fn max_abs<T: Scalar>(xs: &[T]) -> T {
    xs.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
}

fn band_limited<T: Scalar>(xs: Vec<T>, fs: T, band: Band) -> Result<Waveform<T>> {
    let (lo, hi) = clip_band(band, to_f64(fs));
    bandpass(
        &Waveform {
            samples: xs,
            fs,
            kind: WaveformKind::Predicted,
        },
        lo,
        hi,
    )
}

fn finish<T: Scalar>(w: Waveform<T>, scale: T, negate: bool) -> Result<Waveform<T>> {
    if nearly_constant(&w.samples, scale) {
        return Err(Error::ConstantSignal);
    }
    let mut s = standardize_slice(&w.samples)?;
    if negate {
        s.iter_mut().for_each(|x| *x = -*x);
    }
    Ok(Waveform {
        samples: s,
        fs: w.fs,
        kind: WaveformKind::Predicted,
    })
}

/// Band-passed, standardized, negated green channel.
pub fn green<T: Scalar>(trace: &RgbTrace<T>) -> Result<Waveform<T>> {
    let scale = max_abs(&trace.g);
    if nearly_constant(&trace.g, scale) {
        return Err(Error::ConstantSignal);
    }
    let w = band_limited(trace.g.clone(), trace.fs, Band::PULSE)?;
    finish(w, scale, true)
}

fn normalized<T: Scalar>(xs: &[T]) -> Result<Vec<T>> {
    let mu = mean(xs);
    if mu == T::zero() {
        return Err(Error::ConstantSignal);
    }
    Ok(xs.iter().map(|&x| x / mu).collect())
}

/// CHROM signal after band-pass, before standardization.
pub fn chrom_raw<T: Scalar>(trace: &RgbTrace<T>) -> Result<Waveform<T>> {
    let rn = normalized(&trace.r)?;
    let gn = normalized(&trace.g)?;
    let bn = normalized(&trace.b)?;
    let (c3, c2, c15) = (lit::<T>(3.0), lit::<T>(2.0), lit::<T>(1.5));
    let x: Vec<T> = rn.iter().zip(&gn).map(|(&r, &g)| c3 * r - c2 * g).collect();
    let y: Vec<T> = rn
        .iter()
        .zip(&gn)
        .zip(&bn)
        .map(|((&r, &g), &b)| c15 * r + g - c15 * b)
        .collect();
    let sx = std_about(&x, mean(&x));
    let sy = std_about(&y, mean(&y));
    let alpha = if sy > T::zero() { sx / sy } else { T::zero() };
    let s = x.iter().zip(&y).map(|(&a, &b)| a - alpha * b).collect();
    band_limited(s, trace.fs, Band::PULSE)
}

fn ensure_varying<T: Scalar>(trace: &RgbTrace<T>) -> Result<()> {
    let varying = [&trace.r, &trace.g, &trace.b]
        .iter()
        .any(|c| !nearly_constant(c, max_abs(c)));
    if varying {
        Ok(())
    } else {
        Err(Error::ConstantSignal)
    }
}

/// Chrominance-based pulse signal, standardized.
pub fn chrom<T: Scalar>(trace: &RgbTrace<T>) -> Result<Waveform<T>> {
    ensure_varying(trace)?;
    let w = chrom_raw(trace)?;
    // normalized channels are O(1)
    finish(w, T::one(), false)
}

/// Default POS window, seconds.
pub const POS_WINDOW_S: f64 = 1.6;

/// POS signal after band-pass, before standardization.
pub fn pos_raw<T: Scalar>(trace: &RgbTrace<T>, window_s: f64) -> Result<Waveform<T>> {
    let n = trace.len();
    let l = (window_s * to_f64(trace.fs)).round().max(2.0) as usize;
    if l > n {
        return Err(Error::TooShort { len: n, window: l });
    }
    let two = lit::<T>(2.0);
    let mut h = vec![T::zero(); n];
    let mut s1 = vec![T::zero(); l];
    let mut s2 = vec![T::zero(); l];
    for start in 0..=n - l {
        let end = start + l;
        let rn = normalized(&trace.r[start..end])?;
        let gn = normalized(&trace.g[start..end])?;
        let bn = normalized(&trace.b[start..end])?;
        for i in 0..l {
            s1[i] = gn[i] - bn[i];
            s2[i] = gn[i] + bn[i] - two * rn[i];
        }
        let sd1 = std_about(&s1, mean(&s1));
        let sd2 = std_about(&s2, mean(&s2));
        let alpha = if sd2 > T::zero() { sd1 / sd2 } else { T::zero() };
        let hw: Vec<T> = (0..l).map(|i| s1[i] + alpha * s2[i]).collect();
        let mu = mean(&hw);
        for i in 0..l {
            h[start + i] += hw[i] - mu;
        }
    }
    band_limited(h, trace.fs, Band::PULSE)
}

/// Plane-orthogonal-to-skin pulse signal, standardized.
pub fn pos<T: Scalar>(trace: &RgbTrace<T>, window_s: f64) -> Result<Waveform<T>> {
    let l = (window_s * to_f64(trace.fs)).round().max(2.0) as usize;
    if l > trace.len() {
        return Err(Error::TooShort {
            len: trace.len(),
            window: l,
        });
    }
    ensure_varying(trace)?;
    let w = pos_raw(trace, window_s)?;
    finish(w, T::one(), false)
}

/// Intensity-weighted vertical centroid of the bottom rows of each frame.
pub fn shoulder_centroid<T: Scalar>(clip: &VideoClip) -> Result<Vec<T>> {
    let h = clip.height();
    let w = clip.width();
    let rows = ((h as f64) * SHOULDER_BAND_FRAC).round().max(1.0) as usize;
    let y0 = h - rows.min(h);
    clip.frames
        .iter()
        .map(|f| {
            let (mut num, mut den) = (0.0f64, 0.0f64);
            for y in y0..h {
                for x in 0..w {
                    let i = (y * w + x) * 3;
                    let v = (f.pixels[i] + f.pixels[i + 1] + f.pixels[i + 2]) as f64 / 3.0;
                    num += v * y as f64;
                    den += v;
                }
            }
            if den <= 0.0 {
                return Err(Error::ConstantSignal);
            }
            Ok(lit(num / den))
        })
        .collect()
}

/// Breathing signal from shoulder motion, band-passed and standardized.
pub fn breathing_from_motion<T: Scalar>(clip: &VideoClip) -> Result<Waveform<T>> {
    let c: Vec<T> = shoulder_centroid(clip)?;
    let scale = max_abs(&c);
    if nearly_constant(&c, scale) {
        return Err(Error::ConstantSignal);
    }
    let w = band_limited(c, lit(clip.fs), Band::BREATHING)?;
    finish(w, scale, false)
}
