use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::{count, lit, Scalar};

use super::linalg::{matmul, Layout};
use super::ops::{
    attention_backward, attention_forward, avg_pool2, avg_pool2_backward, temporal_shift,
    temporal_shift_backward,
};
use super::tensor::Tensor;

/// Channel widths of the two convolutional blocks.
pub const BLOCK_WIDTHS: [usize; 2] = [8, 16];
/// Width of the shared dense layer.
pub const DENSE_WIDTH: usize = 32;
/// Input channels (RGB).
pub const INPUT_CHANNELS: usize = 3;

/// Same-padded, stride-1 square convolution. Weights `[c_out, c_in, k, k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv<T> {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Fully connected layer. Weights `[n_out, n_in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub n_in: usize,
    pub n_out: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

fn glorot<T: Scalar>(rng: &mut ChaCha8Rng, n: usize, fan_in: usize, fan_out: usize) -> Vec<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| lit(rng.gen_range(-limit..limit))).collect()
}

impl<T: Scalar> Conv<T> {
    fn init(rng: &mut ChaCha8Rng, c_in: usize, c_out: usize, k: usize) -> Self {
        Self {
            c_in,
            c_out,
            k,
            weight: glorot(rng, c_out * c_in * k * k, c_in * k * k, c_out * k * k),
            bias: vec![T::zero(); c_out],
        }
    }

    fn patch(&self) -> usize {
        self.c_in * self.k * self.k
    }
}

impl<T: Scalar> Dense<T> {
    fn init(rng: &mut ChaCha8Rng, n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            weight: glorot(rng, n_out * n_in, n_in, n_out),
            bias: vec![T::zero(); n_out],
        }
    }
}

/// Every trainable tensor of the two-branch network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub height: usize,
    pub width: usize,
    /// Motion branch: block 1 (two convs), block 2 (two convs).
    pub motion: [Conv<T>; 4],
    /// Appearance branch, same shapes as the motion branch.
    pub appearance: [Conv<T>; 4],
    /// 1×1 convs producing the attention logits for each block.
    pub attention: [Conv<T>; 2],
    pub dense: Dense<T>,
    pub pulse_head: Dense<T>,
    pub resp_head: Dense<T>,
}

/// Flattened size entering the dense layer.
pub fn flat_len(height: usize, width: usize) -> usize {
    BLOCK_WIDTHS[1] * (height / 4) * (width / 4)
}

fn check_geometry(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 || height % 4 != 0 || width % 4 != 0 {
        return Err(Error::ShapeMismatch(format!(
            "spatial size {height}x{width} must be a positive multiple of 4"
        )));
    }
    Ok(())
}

impl<T: Scalar> ModelParams<T> {
    /// Glorot-uniform weights, zero biases.
    pub fn init(height: usize, width: usize, seed: u64) -> Result<Self> {
        check_geometry(height, width)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [w1, w2] = BLOCK_WIDTHS;
        let stack = |rng: &mut ChaCha8Rng| {
            [
                Conv::init(rng, INPUT_CHANNELS, w1, 3),
                Conv::init(rng, w1, w1, 3),
                Conv::init(rng, w1, w2, 3),
                Conv::init(rng, w2, w2, 3),
            ]
        };
        let motion = stack(&mut rng);
        let appearance = stack(&mut rng);
        let attention = [Conv::init(&mut rng, w1, 1, 1), Conv::init(&mut rng, w2, 1, 1)];
        let dense = Dense::init(&mut rng, flat_len(height, width), DENSE_WIDTH);
        let pulse_head = Dense::init(&mut rng, DENSE_WIDTH, 1);
        let resp_head = Dense::init(&mut rng, DENSE_WIDTH, 1);
        Ok(Self {
            height,
            width,
            motion,
            appearance,
            attention,
            dense,
            pulse_head,
            resp_head,
        })
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.iter_mut().for_each(|v| *v = T::zero());
        }
        z
    }

    /// Parameter tensors in checkpoint order (weight then bias per layer).
    pub fn tensors(&self) -> Vec<&Vec<T>> {
        let mut v = Vec::with_capacity(26);
        for c in self.motion.iter().chain(&self.appearance).chain(&self.attention) {
            v.push(&c.weight);
            v.push(&c.bias);
        }
        for d in [&self.dense, &self.pulse_head, &self.resp_head] {
            v.push(&d.weight);
            v.push(&d.bias);
        }
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<T>> {
        let Self {
            motion,
            appearance,
            attention,
            dense,
            pulse_head,
            resp_head,
            ..
        } = self;
        let mut v = Vec::with_capacity(26);
        for c in motion.iter_mut().chain(appearance.iter_mut()).chain(attention.iter_mut()) {
            v.push(&mut c.weight);
            v.push(&mut c.bias);
        }
        for d in [dense, pulse_head, resp_head] {
            v.push(&mut d.weight);
            v.push(&mut d.bias);
        }
        v
    }

    /// Human-readable names matching [`ModelParams::tensors`].
    pub fn tensor_names() -> Vec<String> {
        let mut names = Vec::new();
        let layers = (0..4)
            .map(|i| format!("motion{i}"))
            .chain((0..4).map(|i| format!("appearance{i}")))
            .chain((0..2).map(|i| format!("attention{i}")))
            .chain(["dense", "pulse_head", "resp_head"].map(String::from));
        for l in layers {
            names.push(format!("{l}.weight"));
            names.push(format!("{l}.bias"));
        }
        names
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Converts every value to another scalar type.
    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let conv = |c: &Conv<T>| Conv {
            c_in: c.c_in,
            c_out: c.c_out,
            k: c.k,
            weight: c.weight.iter().map(|&v| lit(crate::scalar::to_f64(v))).collect(),
            bias: c.bias.iter().map(|&v| lit(crate::scalar::to_f64(v))).collect(),
        };
        let dense = |d: &Dense<T>| Dense {
            n_in: d.n_in,
            n_out: d.n_out,
            weight: d.weight.iter().map(|&v| lit(crate::scalar::to_f64(v))).collect(),
            bias: d.bias.iter().map(|&v| lit(crate::scalar::to_f64(v))).collect(),
        };
        ModelParams {
            height: self.height,
            width: self.width,
            motion: [0, 1, 2, 3].map(|i| conv(&self.motion[i])),
            appearance: [0, 1, 2, 3].map(|i| conv(&self.appearance[i])),
            attention: [0, 1].map(|i| conv(&self.attention[i])),
            dense: dense(&self.dense),
            pulse_head: dense(&self.pulse_head),
            resp_head: dense(&self.resp_head),
        }
    }

    /// `self += a·other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Self, a: T) {
        for (x, y) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (p, &q) in x.iter_mut().zip(y.iter()) {
                *p += a * q;
            }
        }
    }
}

fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, k: usize, cols: &mut [T]) {
    let pad = k / 2;
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * hw..][..hw];
                let x_lo = pad.saturating_sub(kx);
                let x_hi = (w + pad).saturating_sub(kx).min(w);
                for y in 0..h {
                    let dst = &mut row[y * w..(y + 1) * w];
                    let sy = y + ky;
                    if sy < pad || sy - pad >= h {
                        dst.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[(sy - pad) * w..(sy - pad + 1) * w];
                    dst[..x_lo].iter_mut().for_each(|v| *v = T::zero());
                    dst[x_hi..].iter_mut().for_each(|v| *v = T::zero());
                    for xx in x_lo..x_hi {
                        dst[xx] = src[xx + kx - pad];
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, k: usize, dx: &mut [T]) {
    let pad = k / 2;
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ci * k + ky) * k + kx) * hw..][..hw];
                let x_lo = pad.saturating_sub(kx);
                let x_hi = (w + pad).saturating_sub(kx).min(w);
                for y in 0..h {
                    let sy = y + ky;
                    if sy < pad || sy - pad >= h {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let dst = &mut plane[(sy - pad) * w..(sy - pad + 1) * w];
                    for xx in x_lo..x_hi {
                        dst[xx + kx - pad] += src[xx];
                    }
                }
            }
        }
    }
}

/// Pre-activation output of `conv` on every time step of `x`.
fn conv_forward<T: Scalar>(conv: &Conv<T>, x: &Tensor<T>) -> Tensor<T> {
    let [s, _, h, w] = x.dims();
    let hw = h * w;
    let kk = conv.patch();
    let mut out = Tensor::zeros([s, conv.c_out, h, w]);
    let mut cols = vec![T::zero(); if conv.k == 1 { 0 } else { kk * hw }];
    for t in 0..s {
        let src: &[T] = if conv.k == 1 {
            x.step(t)
        } else {
            im2col(x.step(t), conv.c_in, h, w, conv.k, &mut cols);
            &cols
        };
        let dst = out.step_mut(t);
        for (co, row) in dst.chunks_mut(hw).enumerate() {
            row.iter_mut().for_each(|v| *v = conv.bias[co]);
        }
        matmul(
            conv.c_out,
            kk,
            hw,
            &conv.weight,
            Layout::rows(kk),
            src,
            Layout::rows(hw),
            dst,
            T::one(),
        );
    }
    out
}

/// Accumulates weight/bias gradients into `g`; returns the input gradient
/// when requested.
fn conv_backward<T: Scalar>(
    conv: &Conv<T>,
    x: &Tensor<T>,
    dz: &Tensor<T>,
    g: &mut Conv<T>,
    need_dx: bool,
) -> Option<Tensor<T>> {
    let [s, _, h, w] = x.dims();
    let hw = h * w;
    let kk = conv.patch();
    let mut cols = vec![T::zero(); if conv.k == 1 { 0 } else { kk * hw }];
    let mut dcols = vec![T::zero(); kk * hw];
    let mut dx = need_dx.then(|| Tensor::zeros(x.dims()));
    for t in 0..s {
        let src: &[T] = if conv.k == 1 {
            x.step(t)
        } else {
            im2col(x.step(t), conv.c_in, h, w, conv.k, &mut cols);
            &cols
        };
        let d = dz.step(t);
        for (co, row) in d.chunks(hw).enumerate() {
            g.bias[co] += row.iter().copied().sum::<T>();
        }
        // dW[c_out, kk] += dZ[c_out, hw] · colsᵀ
        matmul(
            conv.c_out,
            hw,
            kk,
            d,
            Layout::rows(hw),
            src,
            Layout::transposed(hw),
            &mut g.weight,
            T::one(),
        );
        if let Some(dx) = dx.as_mut() {
            // dcols[kk, hw] = Wᵀ · dZ
            matmul(
                kk,
                conv.c_out,
                hw,
                &conv.weight,
                Layout::transposed(kk),
                d,
                Layout::rows(hw),
                &mut dcols,
                T::zero(),
            );
            if conv.k == 1 {
                for (a, &b) in dx.step_mut(t).iter_mut().zip(&dcols) {
                    *a += b;
                }
            } else {
                col2im_add(&dcols, conv.c_in, h, w, conv.k, dx.step_mut(t));
            }
        }
    }
    dx
}

fn tanh_in_place<T: Scalar>(x: &mut Tensor<T>) {
    x.data_mut().iter_mut().for_each(|v| *v = v.tanh());
}

/// `dh ⊙ (1 − h²)`.
fn tanh_backward<T: Scalar>(dh: &Tensor<T>, h: &Tensor<T>) -> Tensor<T> {
    let mut out = dh.clone();
    for (o, &y) in out.data_mut().iter_mut().zip(h.data()) {
        *o *= T::one() - y * y;
    }
    out
}

fn conv_tanh<T: Scalar>(conv: &Conv<T>, x: &Tensor<T>) -> Tensor<T> {
    let mut z = conv_forward(conv, x);
    tanh_in_place(&mut z);
    z.debug_check("conv");
    z
}

/// Multiplies every channel of `x` by the single-channel `mask`; a
/// one-step mask is broadcast over time.
fn apply_mask<T: Scalar>(x: &Tensor<T>, mask: &Tensor<T>) -> Tensor<T> {
    let [s, c, h, w] = x.dims();
    let hw = h * w;
    let mut out = x.clone();
    for t in 0..s {
        let m = mask.step(if mask.steps() == 1 { 0 } else { t });
        for ch in 0..c {
            let base = x.index(t, ch, 0, 0);
            for (o, &mv) in out.data_mut()[base..base + hw].iter_mut().zip(m) {
                *o *= mv;
            }
        }
    }
    out
}

/// Returns `(dx, dmask)` for `y = x ⊙ mask`.
fn apply_mask_backward<T: Scalar>(
    dy: &Tensor<T>,
    x: &Tensor<T>,
    mask: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let [s, c, h, w] = x.dims();
    let hw = h * w;
    let dx = apply_mask(dy, mask);
    let mut dm = Tensor::zeros(mask.dims());
    for t in 0..s {
        let mt = if mask.steps() == 1 { 0 } else { t };
        for ch in 0..c {
            let base = x.index(t, ch, 0, 0);
            let g = &dy.data()[base..base + hw];
            let xv = &x.data()[base..base + hw];
            let dst = dm.step_mut(mt);
            for i in 0..hw {
                dst[i] += g[i] * xv[i];
            }
        }
    }
    (dx, dm)
}

/// Intermediates kept by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    pub a_in: Tensor<T>,
    pub a1: Tensor<T>,
    pub a2: Tensor<T>,
    pub a2p: Tensor<T>,
    pub a3: Tensor<T>,
    pub a4: Tensor<T>,
    pub sig1: Tensor<T>,
    pub mask1: Tensor<T>,
    pub sig2: Tensor<T>,
    pub mask2: Tensor<T>,
    pub s1: Tensor<T>,
    pub h1: Tensor<T>,
    pub s2: Tensor<T>,
    pub h2: Tensor<T>,
    pub p1: Tensor<T>,
    pub s3: Tensor<T>,
    pub h3: Tensor<T>,
    pub s4: Tensor<T>,
    pub h4: Tensor<T>,
    /// Flattened block output `[S, flat]`.
    pub flat: Vec<T>,
    /// Dense activations `[S, DENSE_WIDTH]`.
    pub dense: Vec<T>,
}

/// Per-step head outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<T> {
    pub pulse: Vec<T>,
    pub resp: Vec<T>,
}

fn check_inputs<T: Scalar>(p: &ModelParams<T>, motion: &Tensor<T>, app: &Tensor<T>) -> Result<()> {
    let [s, c, h, w] = motion.dims();
    let [sa, ca, ha, wa] = app.dims();
    if c != INPUT_CHANNELS || ca != INPUT_CHANNELS {
        return Err(Error::ShapeMismatch(format!(
            "expected {INPUT_CHANNELS} input channels, got {c} and {ca}"
        )));
    }
    if (h, w) != (p.height, p.width) || (ha, wa) != (p.height, p.width) {
        return Err(Error::ShapeMismatch(format!(
            "model expects {}x{}, got motion {h}x{w} and appearance {ha}x{wa}",
            p.height, p.width
        )));
    }
    if s == 0 || (sa != 1 && sa != s) {
        return Err(Error::ShapeMismatch(format!(
            "{s} motion steps with {sa} appearance steps"
        )));
    }
    Ok(())
}

fn heads<T: Scalar>(p: &ModelParams<T>, dense: &[T], steps: usize) -> Prediction<T> {
    let head = |d: &Dense<T>| {
        (0..steps)
            .map(|t| {
                let row = &dense[t * DENSE_WIDTH..(t + 1) * DENSE_WIDTH];
                d.bias[0] + row.iter().zip(&d.weight).map(|(&a, &b)| a * b).sum::<T>()
            })
            .collect()
    };
    Prediction {
        pulse: head(&p.pulse_head),
        resp: head(&p.resp_head),
    }
}

/// Runs both branches and both heads on one window.
pub fn forward<T: Scalar>(
    p: &ModelParams<T>,
    motion: &Tensor<T>,
    appearance: &Tensor<T>,
) -> Result<(Prediction<T>, ForwardCache<T>)> {
    check_inputs(p, motion, appearance)?;
    let steps = motion.steps();

    let a1 = conv_tanh(&p.appearance[0], appearance);
    let a2 = conv_tanh(&p.appearance[1], &a1);
    let (mask1, sig1) = attention_forward(&conv_forward(&p.attention[0], &a2));
    let a2p = avg_pool2(&a2);
    let a3 = conv_tanh(&p.appearance[2], &a2p);
    let a4 = conv_tanh(&p.appearance[3], &a3);
    let (mask2, sig2) = attention_forward(&conv_forward(&p.attention[1], &a4));

    let s1 = temporal_shift(motion);
    let h1 = conv_tanh(&p.motion[0], &s1);
    let s2 = temporal_shift(&h1);
    let h2 = conv_tanh(&p.motion[1], &s2);
    let p1 = avg_pool2(&apply_mask(&h2, &mask1));
    let s3 = temporal_shift(&p1);
    let h3 = conv_tanh(&p.motion[2], &s3);
    let s4 = temporal_shift(&h3);
    let h4 = conv_tanh(&p.motion[3], &s4);
    let flat = avg_pool2(&apply_mask(&h4, &mask2)).into_vec();
    flat_checked(&flat);

    let n_in = p.dense.n_in;
    let mut dense = vec![T::zero(); steps * DENSE_WIDTH];
    for row in dense.chunks_mut(DENSE_WIDTH) {
        row.copy_from_slice(&p.dense.bias);
    }
    matmul(
        steps,
        n_in,
        DENSE_WIDTH,
        &flat,
        Layout::rows(n_in),
        &p.dense.weight,
        Layout::transposed(n_in),
        &mut dense,
        T::one(),
    );
    dense.iter_mut().for_each(|v| *v = v.tanh());
    let pred = heads(p, &dense, steps);
    debug_assert!(pred.pulse.iter().chain(&pred.resp).all(|v| v.is_finite()));

    Ok((
        pred,
        ForwardCache {
            a_in: appearance.clone(),
            a1,
            a2,
            a2p,
            a3,
            a4,
            sig1,
            mask1,
            sig2,
            mask2,
            s1,
            h1,
            s2,
            h2,
            p1,
            s3,
            h3,
            s4,
            h4,
            flat,
            dense,
        },
    ))
}

#[inline]
fn flat_checked<T: Scalar>(flat: &[T]) {
    debug_assert!(flat.iter().all(|v| v.is_finite()), "non-finite block output");
}

/// Forward pass without building a cache.
pub fn predict<T: Scalar>(
    p: &ModelParams<T>,
    motion: &Tensor<T>,
    appearance: &Tensor<T>,
) -> Result<Prediction<T>> {
    forward(p, motion, appearance).map(|(pred, _)| pred)
}

fn check_pair<T>(a: &[T], b: &[T]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::TooFew { needed: 1, got: 0 });
    }
    Ok(())
}

/// Mean of the pulse and breathing mean squared errors.
pub fn loss<T: Scalar>(pulse_pred: &[T], resp_pred: &[T], pulse: &[T], resp: &[T]) -> Result<T> {
    loss_and_grad(pulse_pred, resp_pred, pulse, resp).map(|(l, _, _)| l)
}

/// Loss plus its gradients with respect to both predictions.
pub fn loss_and_grad<T: Scalar>(
    pulse_pred: &[T],
    resp_pred: &[T],
    pulse: &[T],
    resp: &[T],
) -> Result<(T, Vec<T>, Vec<T>)> {
    check_pair(pulse_pred, pulse)?;
    check_pair(resp_pred, resp)?;
    let half = lit::<T>(0.5);
    let term = |pred: &[T], lab: &[T]| {
        let n = count::<T>(pred.len());
        let mse = pred
            .iter()
            .zip(lab)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<T>()
            / n;
        let g: Vec<T> = pred.iter().zip(lab).map(|(&a, &b)| (a - b) / n).collect();
        (mse, g)
    };
    let (mp, gp) = term(pulse_pred, pulse);
    let (mr, gr) = term(resp_pred, resp);
    Ok(((mp + mr) * half, gp, gr))
}

fn dense_head_backward<T: Scalar>(
    head: &Dense<T>,
    g: &mut Dense<T>,
    dy: &[T],
    dense: &[T],
    dd: &mut [T],
) {
    for (t, &d) in dy.iter().enumerate() {
        if d == T::zero() {
            continue;
        }
        g.bias[0] += d;
        let row = &dense[t * DENSE_WIDTH..(t + 1) * DENSE_WIDTH];
        let drow = &mut dd[t * DENSE_WIDTH..(t + 1) * DENSE_WIDTH];
        for j in 0..DENSE_WIDTH {
            g.weight[j] += d * row[j];
            drow[j] += d * head.weight[j];
        }
    }
}

/// Accumulates into `g` the gradients of a scalar objective whose
/// derivatives with respect to the head outputs are `d_pulse`, `d_resp`.
pub fn backward_into<T: Scalar>(
    p: &ModelParams<T>,
    cache: &ForwardCache<T>,
    d_pulse: &[T],
    d_resp: &[T],
    g: &mut ModelParams<T>,
) -> Result<()> {
    let steps = cache.s1.steps();
    if d_pulse.len() != steps || d_resp.len() != steps {
        return Err(Error::LengthMismatch {
            expected: steps,
            got: if d_pulse.len() != steps { d_pulse.len() } else { d_resp.len() },
        });
    }

    // heads
    let mut dd = vec![T::zero(); steps * DENSE_WIDTH];
    dense_head_backward(&p.pulse_head, &mut g.pulse_head, d_pulse, &cache.dense, &mut dd);
    dense_head_backward(&p.resp_head, &mut g.resp_head, d_resp, &cache.dense, &mut dd);

    // dense + tanh
    for (z, &a) in dd.iter_mut().zip(&cache.dense) {
        *z *= T::one() - a * a;
    }
    let n_in = p.dense.n_in;
    for row in dd.chunks(DENSE_WIDTH) {
        for (b, &v) in g.dense.bias.iter_mut().zip(row) {
            *b += v;
        }
    }
    // dW[32, n_in] += dZᵀ[32, S] · flat[S, n_in]
    matmul(
        DENSE_WIDTH,
        steps,
        n_in,
        &dd,
        Layout::transposed(DENSE_WIDTH),
        &cache.flat,
        Layout::rows(n_in),
        &mut g.dense.weight,
        T::one(),
    );
    let mut dflat = vec![T::zero(); steps * n_in];
    matmul(
        steps,
        DENSE_WIDTH,
        n_in,
        &dd,
        Layout::rows(DENSE_WIDTH),
        &p.dense.weight,
        Layout::rows(n_in),
        &mut dflat,
        T::zero(),
    );
    let [_, c2, hq, wq] = cache.h4.dims();
    let dp2 = Tensor::from_vec([steps, c2, hq / 2, wq / 2], dflat)?;

    // block 2
    let dg2 = avg_pool2_backward(&dp2);
    let (dh4, dmask2) = apply_mask_backward(&dg2, &cache.h4, &cache.mask2);
    let dz4 = tanh_backward(&dh4, &cache.h4);
    let ds4 = conv_backward(&p.motion[3], &cache.s4, &dz4, &mut g.motion[3], true).unwrap();
    let dh3 = temporal_shift_backward(&ds4);
    let dz3 = tanh_backward(&dh3, &cache.h3);
    let ds3 = conv_backward(&p.motion[2], &cache.s3, &dz3, &mut g.motion[2], true).unwrap();
    let dp1 = temporal_shift_backward(&ds3);

    // block 1
    let dg1 = avg_pool2_backward(&dp1);
    let (dh2, dmask1) = apply_mask_backward(&dg1, &cache.h2, &cache.mask1);
    let dz2 = tanh_backward(&dh2, &cache.h2);
    let ds2 = conv_backward(&p.motion[1], &cache.s2, &dz2, &mut g.motion[1], true).unwrap();
    let dh1 = temporal_shift_backward(&ds2);
    let dz1 = tanh_backward(&dh1, &cache.h1);
    conv_backward(&p.motion[0], &cache.s1, &dz1, &mut g.motion[0], false);

    // appearance branch through the attention masks
    let draw2 = attention_backward(&dmask2, &cache.sig2);
    let da4 = conv_backward(&p.attention[1], &cache.a4, &draw2, &mut g.attention[1], true).unwrap();
    let dza4 = tanh_backward(&da4, &cache.a4);
    let da3 = conv_backward(&p.appearance[3], &cache.a3, &dza4, &mut g.appearance[3], true).unwrap();
    let dza3 = tanh_backward(&da3, &cache.a3);
    let da2p =
        conv_backward(&p.appearance[2], &cache.a2p, &dza3, &mut g.appearance[2], true).unwrap();
    let mut da2 = avg_pool2_backward(&da2p);
    let draw1 = attention_backward(&dmask1, &cache.sig1);
    let da2_att =
        conv_backward(&p.attention[0], &cache.a2, &draw1, &mut g.attention[0], true).unwrap();
    for (a, &b) in da2.data_mut().iter_mut().zip(da2_att.data()) {
        *a += b;
    }
    let dza2 = tanh_backward(&da2, &cache.a2);
    let da1 = conv_backward(&p.appearance[1], &cache.a1, &dza2, &mut g.appearance[1], true).unwrap();
    let dza1 = tanh_backward(&da1, &cache.a1);
    conv_backward(&p.appearance[0], &cache.a_in, &dza1, &mut g.appearance[0], false);
    Ok(())
}

/// Parameter gradients for one window.
pub fn backward<T: Scalar>(
    p: &ModelParams<T>,
    cache: &ForwardCache<T>,
    d_pulse: &[T],
    d_resp: &[T],
) -> Result<ModelParams<T>> {
    let mut g = p.zeros_like();
    backward_into(p, cache, d_pulse, d_resp, &mut g)?;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn im2col_col2im_are_adjoint() {
        let (c, h, w, k) = (2, 5, 4, 3);
        let x: Vec<f64> = (0..c * h * w).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = (0..c * k * k * h * w).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut cols = vec![0.0; y.len()];
        im2col(&x, c, h, w, k, &mut cols);
        let mut back = vec![0.0; x.len()];
        col2im_add(&y, c, h, w, k, &mut back);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn init_shapes() {
        let p = ModelParams::<f32>::init(36, 36, 0).unwrap();
        assert_eq!(p.dense.n_in, 1296);
        assert_eq!(p.tensors().len(), ModelParams::<f32>::tensor_names().len());
        assert!(p.is_finite());
        assert!(ModelParams::<f32>::init(35, 36, 0).is_err());
    }

    #[test]
    fn loss_examples() {
        let l = loss(&[1.0, 2.0], &[0.5, 0.5], &[1.0, 2.0], &[0.5, 0.5]).unwrap();
        assert_eq!(l, 0.0);
        let l: f64 = loss(&[2.0, 3.0], &[0.5, 0.5], &[1.0, 2.0], &[0.5, 0.5]).unwrap();
        assert!((l - 0.5).abs() < 1e-15);
        assert!(matches!(
            loss(&[1.0], &[1.0], &[1.0, 2.0], &[1.0]),
            Err(Error::LengthMismatch { .. })
        ));
    }
}
