use crate::error::{Error, Result};
use crate::physio::CONSTANT_STD;
use crate::render::Frame;
use crate::scalar::{count, lit, to_f64, Scalar};

use super::tensor::Tensor;

/// Stabilizer in the normalized frame difference denominator.
pub const DIFF_EPS: f64 = 1e-4;

fn check_frames(frames: &[Frame], min: usize) -> Result<(usize, usize)> {
    if frames.len() < min {
        return Err(Error::TooFew {
            needed: min,
            got: frames.len(),
        });
    }
    let (h, w) = (frames[0].height, frames[0].width);
    if frames.iter().any(|f| f.height != h || f.width != w) {
        return Err(Error::ShapeMismatch("frames differ in size".into()));
    }
    Ok((h, w))
}

/// `(c[t+1] − c[t]) / (c[t+1] + c[t] + ε)` per pixel and channel, laid out
/// `[T−1, 3, H, W]`, before standardization.
pub fn normalized_difference_raw<T: Scalar>(frames: &[Frame]) -> Result<Tensor<T>> {
    let (h, w) = check_frames(frames, 2)?;
    let mut out = Tensor::zeros([frames.len() - 1, 3, h, w]);
    for t in 0..frames.len() - 1 {
        let (a, b) = (&frames[t].pixels, &frames[t + 1].pixels);
        let step = out.step_mut(t);
        for c in 0..3 {
            for p in 0..h * w {
                let x0 = a[p * 3 + c] as f64;
                let x1 = b[p * 3 + c] as f64;
                step[c * h * w + p] = lit((x1 - x0) / (x1 + x0 + DIFF_EPS));
            }
        }
    }
    Ok(out)
}

/// Standardizes all elements together; a constant tensor maps to zeros.
fn standardize_all<T: Scalar>(xs: &mut [T]) {
    let n = xs.len() as f64;
    let mu = xs.iter().map(|&x| to_f64(x)).sum::<f64>() / n;
    let var = xs.iter().map(|&x| (to_f64(x) - mu).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd < CONSTANT_STD {
        xs.iter_mut().for_each(|x| *x = T::zero());
    } else {
        xs.iter_mut()
            .for_each(|x| *x = lit((to_f64(*x) - mu) / sd));
    }
}

/// Motion-branch input: normalized frame differences standardized over the
/// whole window. A static window gives all zeros.
pub fn normalized_difference_frames<T: Scalar>(frames: &[Frame]) -> Result<Tensor<T>> {
    let mut out = normalized_difference_raw(frames)?;
    standardize_all(out.data_mut());
    Ok(out)
}

fn frame_chw<T: Scalar>(frames: &[Frame], h: usize, w: usize) -> Vec<T> {
    let mut acc = vec![0.0f64; 3 * h * w];
    for f in frames {
        for p in 0..h * w {
            for c in 0..3 {
                acc[c * h * w + p] += f.pixels[p * 3 + c] as f64;
            }
        }
    }
    let n = frames.len() as f64;
    acc.into_iter().map(|v| lit(v / n)).collect()
}

/// Appearance-branch input: per-pixel temporal mean, each channel
/// standardized over the image. Output `[1, 3, H, W]`.
pub fn mean_appearance<T: Scalar>(frames: &[Frame]) -> Result<Tensor<T>> {
    let (h, w) = check_frames(frames, 1)?;
    let mut data = frame_chw::<T>(frames, h, w);
    for c in data.chunks_mut(h * w) {
        standardize_all(c);
    }
    Tensor::from_vec([1, 3, h, w], data)
}

/// Per-frame appearance input: each frame standardized per channel,
/// `[len, 3, H, W]`.
pub fn per_frame_appearance<T: Scalar>(frames: &[Frame]) -> Result<Tensor<T>> {
    let (h, w) = check_frames(frames, 1)?;
    let mut data = Vec::with_capacity(frames.len() * 3 * h * w);
    for f in frames {
        let mut d = frame_chw::<T>(std::slice::from_ref(f), h, w);
        for c in d.chunks_mut(h * w) {
            standardize_all(c);
        }
        data.extend(d);
    }
    Tensor::from_vec([frames.len(), 3, h, w], data)
}

/// Moves the first `⌊C/3⌋` channels one step forward in time (`out[t] =
/// in[t−1]`) and the next `⌊C/3⌋` one step back; vacated slots are zero.
/// `reverse` swaps the two directions, which is the adjoint.
fn shift<T: Scalar>(x: &Tensor<T>, reverse: bool) -> Tensor<T> {
    let [steps, c, h, w] = x.dims();
    let fold = c / 3;
    let hw = h * w;
    let mut out = x.clone();
    for t in 0..steps {
        for ch in 0..2 * fold {
            let forward = (ch < fold) != reverse;
            let src = if forward {
                t.checked_sub(1)
            } else {
                Some(t + 1).filter(|&s| s < steps)
            };
            let dst = x.index(t, ch, 0, 0);
            match src {
                Some(s) => {
                    let from = x.index(s, ch, 0, 0);
                    out.data_mut()[dst..dst + hw].copy_from_slice(&x.data()[from..from + hw]);
                }
                None => out.data_mut()[dst..dst + hw]
                    .iter_mut()
                    .for_each(|v| *v = T::zero()),
            }
        }
    }
    out
}

/// Temporal shift with a one-third fraction each way.
pub fn temporal_shift<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    shift(x, false)
}

/// Gradient of [`temporal_shift`]: shifts in the opposite directions.
pub fn temporal_shift_backward<T: Scalar>(g: &Tensor<T>) -> Tensor<T> {
    shift(g, true)
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `H·W·σ(raw) / (2·‖σ(raw)‖₁)` per time step and channel.
pub fn attention_normalize<T: Scalar>(raw: &Tensor<T>) -> Tensor<T> {
    attention_forward(raw).0
}

/// Mask and the sigmoid it was built from.
pub(crate) fn attention_forward<T: Scalar>(raw: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    let hw = raw.height() * raw.width();
    let k = count::<T>(hw) / lit(2.0);
    let sig = raw.map(sigmoid);
    let mut mask = sig.clone();
    for slice in mask.data_mut().chunks_mut(hw) {
        let s: T = slice.iter().copied().sum();
        slice.iter_mut().for_each(|v| *v = k * *v / s);
    }
    (mask, sig)
}

/// Gradient with respect to the raw logits given the mask gradient.
pub(crate) fn attention_backward<T: Scalar>(dmask: &Tensor<T>, sig: &Tensor<T>) -> Tensor<T> {
    let hw = sig.height() * sig.width();
    let k = count::<T>(hw) / lit(2.0);
    let mut out = Tensor::zeros(sig.dims());
    for ((o, g), s) in out
        .data_mut()
        .chunks_mut(hw)
        .zip(dmask.data().chunks(hw))
        .zip(sig.data().chunks(hw))
    {
        let total: T = s.iter().copied().sum();
        let gs: T = g.iter().zip(s).map(|(&a, &b)| a * b).sum::<T>() / total;
        for i in 0..hw {
            let ds = k / total * (g[i] - gs);
            o[i] = ds * s[i] * (T::one() - s[i]);
        }
    }
    out
}

/// 2×2 average pooling with stride 2.
pub(crate) fn avg_pool2<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let [s, c, h, w] = x.dims();
    let (ho, wo) = (h / 2, w / 2);
    let q = lit::<T>(0.25);
    let mut out = Tensor::zeros([s, c, ho, wo]);
    for t in 0..s {
        for ch in 0..c {
            for y in 0..ho {
                for xx in 0..wo {
                    let v = x.at(t, ch, 2 * y, 2 * xx)
                        + x.at(t, ch, 2 * y, 2 * xx + 1)
                        + x.at(t, ch, 2 * y + 1, 2 * xx)
                        + x.at(t, ch, 2 * y + 1, 2 * xx + 1);
                    let i = out.index(t, ch, y, xx);
                    out.data_mut()[i] = v * q;
                }
            }
        }
    }
    out
}

pub(crate) fn avg_pool2_backward<T: Scalar>(g: &Tensor<T>) -> Tensor<T> {
    let [s, c, ho, wo] = g.dims();
    let q = lit::<T>(0.25);
    let mut out = Tensor::zeros([s, c, ho * 2, wo * 2]);
    for t in 0..s {
        for ch in 0..c {
            for y in 0..ho * 2 {
                for x in 0..wo * 2 {
                    let i = out.index(t, ch, y, x);
                    out.data_mut()[i] = g.at(t, ch, y / 2, x / 2) * q;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shift_example() {
        // C=3, T=2: channel a shifted forward, b backward, c kept
        let x = Tensor::from_vec([2, 3, 1, 1], vec![1.0, 10.0, 100.0, 2.0, 20.0, 200.0]).unwrap();
        let y = temporal_shift(&x);
        assert_eq!(y.data(), &[0.0, 20.0, 100.0, 1.0, 0.0, 200.0]);
    }

    #[test]
    fn attention_uniform() {
        let raw = Tensor::<f64>::zeros([1, 1, 4, 6]);
        let m = attention_normalize(&raw);
        assert!(m.data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn pool_and_adjoint() {
        let x = Tensor::from_vec([1, 1, 2, 4], (0..8).map(|v| v as f64).collect()).unwrap();
        let p = avg_pool2(&x);
        assert_eq!(p.data(), &[2.5, 4.5]);
        let g = Tensor::from_vec([1, 1, 1, 2], vec![1.0, -2.0]).unwrap();
        let gb = avg_pool2_backward(&g);
        let lhs: f64 = p.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(gb.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
