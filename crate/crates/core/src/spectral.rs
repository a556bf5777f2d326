//! FFT plumbing shared by the band-pass filter and the rate/SNR estimators.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::scalar::{count, lit, mean, Scalar};

/// One-sided power spectrum on a uniform frequency grid.
#[derive(Debug, Clone)]
pub struct Periodogram<T> {
    /// Bin spacing in Hz, `fs / nfft`.
    pub df: T,
    /// Power at `k·df` for `k = 0..=nfft/2`.
    pub power: Vec<T>,
}

impl<T: Scalar> Periodogram<T> {
    pub fn freq(&self, k: usize) -> T {
        count::<T>(k) * self.df
    }

    /// Indices of bins with `lo ≤ f ≤ hi`.
    pub fn bins_in(&self, lo: T, hi: T) -> std::ops::Range<usize> {
        let first = (lo / self.df).ceil().to_usize().unwrap_or(0);
        let last = (hi / self.df).floor().to_usize().unwrap_or(0);
        let end = (last + 1).min(self.power.len());
        first.min(end)..end
    }
}

/// FFT length used by the estimators: 8× the next power of two.
pub fn padded_len(n: usize) -> usize {
    8 * n.max(1).next_power_of_two()
}

/// Periodogram of the mean-removed, Hann-windowed signal, zero-padded to
/// [`padded_len`].
pub fn periodogram<T: Scalar>(samples: &[T], fs: T) -> Periodogram<T> {
    let n = samples.len();
    let nfft = padded_len(n);
    let mu = mean(samples);
    let two_pi = T::PI() + T::PI();
    let mut buf: Vec<Complex<T>> = vec![Complex::new(T::zero(), T::zero()); nfft];
    for (i, &x) in samples.iter().enumerate() {
        let w = if n > 1 {
            lit::<T>(0.5) - lit::<T>(0.5) * (two_pi * count::<T>(i) / count::<T>(n - 1)).cos()
        } else {
            T::one()
        };
        buf[i] = Complex::new((x - mu) * w, T::zero());
    }
    FftPlanner::new().plan_fft_forward(nfft).process(&mut buf);
    let power = buf[..=nfft / 2].iter().map(|c| c.norm_sqr()).collect();
    Periodogram {
        df: fs / count(nfft),
        power,
    }
}

/// Zeroes every FFT bin whose absolute frequency lies outside `[lo, hi]`.
pub fn fft_mask<T: Scalar>(samples: &[T], fs: T, lo: T, hi: T) -> Vec<T> {
    let n = samples.len();
    let mut buf: Vec<Complex<T>> = samples
        .iter()
        .map(|&x| Complex::new(x, T::zero()))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    let df = fs / count(n);
    for (k, c) in buf.iter_mut().enumerate() {
        let kk = if k <= n / 2 { k } else { n - k };
        let f = count::<T>(kk) * df;
        if f < lo || f > hi {
            *c = Complex::new(T::zero(), T::zero());
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let scale = T::one() / count(n);
    buf.iter().map(|c| c.re * scale).collect()
}
