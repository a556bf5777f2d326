use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physio::{first_derivative_labels, standardize_slice, Waveform, WaveformKind};
use crate::render::VideoClip;
use crate::scalar::{count, lit, to_f64, Scalar};

use super::model::{backward_into, forward, loss_and_grad, predict, ModelParams};
use super::ops::{mean_appearance, normalized_difference_frames, per_frame_appearance};
use super::tensor::Tensor;

/// What the appearance branch sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AppearanceMode {
    /// One mean frame per window.
    #[default]
    WindowMean,
    /// The earlier frame of each difference pair.
    PerFrame,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Frames per window.
    pub window: usize,
    /// Windows per optimizer step.
    pub batch_size: usize,
    pub seed: u64,
    pub appearance: AppearanceMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 12,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            window: 60,
            batch_size: 4,
            seed: 0,
            appearance: AppearanceMode::WindowMean,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.to_string()));
        if self.epochs < 1 {
            return bad("epochs must be at least 1");
        }
        if self.window < 2 {
            return bad("window must be at least 2 frames");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive");
        }
        Ok(())
    }
}

/// Network inputs and derivative labels for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingWindow<T> {
    pub motion: Tensor<T>,
    pub appearance: Tensor<T>,
    pub pulse: Vec<T>,
    pub resp: Vec<T>,
}

fn appearance_input<T: Scalar>(
    frames: &[crate::render::Frame],
    mode: AppearanceMode,
) -> Result<Tensor<T>> {
    match mode {
        AppearanceMode::WindowMean => mean_appearance(frames),
        AppearanceMode::PerFrame => per_frame_appearance(&frames[..frames.len() - 1]),
    }
}

fn window_count(clip: &VideoClip, window: usize) -> Result<usize> {
    let n = clip.len() / window.max(1);
    if window < 2 || n == 0 {
        return Err(Error::ClipTooShort {
            frames: clip.len(),
            window,
        });
    }
    Ok(n)
}

/// Non-overlapping windows of `window` frames. Labels are the standardized
/// first differences of the clip's ground truth.
pub fn windows_from_clip<T: Scalar>(
    clip: &VideoClip,
    window: usize,
    mode: AppearanceMode,
) -> Result<Vec<TrainingWindow<T>>> {
    let n = window_count(clip, window)?;
    let pulse = first_derivative_labels(&clip.ppg_gt.cast::<T>())?;
    let resp = first_derivative_labels(&clip.resp_gt.cast::<T>())?;
    (0..n)
        .map(|k| {
            let frames = &clip.frames[k * window..(k + 1) * window];
            let lab = k * window..(k + 1) * window - 1;
            Ok(TrainingWindow {
                motion: normalized_difference_frames(frames)?,
                appearance: appearance_input(frames, mode)?,
                pulse: pulse.samples[lab.clone()].to_vec(),
                resp: resp.samples[lab].to_vec(),
            })
        })
        .collect()
}

/// Trained parameters plus the mean training loss of each epoch.
#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub params: ModelParams<T>,
    pub loss_history: Vec<f64>,
}

struct Adam<T> {
    m: ModelParams<T>,
    v: ModelParams<T>,
    step: i32,
}

impl<T: Scalar> Adam<T> {
    fn new(p: &ModelParams<T>) -> Self {
        Self {
            m: p.zeros_like(),
            v: p.zeros_like(),
            step: 0,
        }
    }

    fn update(&mut self, p: &mut ModelParams<T>, g: &ModelParams<T>, cfg: &TrainConfig) {
        self.step += 1;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let c1 = lit::<T>(1.0 - b1.powi(self.step));
        let c2 = lit::<T>(1.0 - b2.powi(self.step));
        let (b1, b2) = (lit::<T>(b1), lit::<T>(b2));
        let lr = lit::<T>(cfg.learning_rate);
        let eps = lit::<T>(cfg.adam_eps);
        let one = T::one();
        for (((pt, gt), mt), vt) in p
            .tensors_mut()
            .into_iter()
            .zip(g.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
        {
            for i in 0..pt.len() {
                let gi = gt[i];
                mt[i] = b1 * mt[i] + (one - b1) * gi;
                vt[i] = b2 * vt[i] + (one - b2) * gi * gi;
                let mh = mt[i] / c1;
                let vh = vt[i] / c2;
                pt[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

/// Trains freshly initialized parameters.
pub fn train<T: Scalar>(windows: &[TrainingWindow<T>], cfg: &TrainConfig) -> Result<TrainOutcome<T>> {
    let first = windows.first().ok_or(Error::EmptyDataset)?;
    let init = ModelParams::init(first.motion.height(), first.motion.width(), cfg.seed)?;
    train_from(init, windows, cfg)
}

/// Trains starting from `params`. Single-threaded; the shuffle order and
/// the accumulation order are fixed by `cfg.seed`, so results are
/// bit-reproducible.
pub fn train_from<T: Scalar>(
    mut params: ModelParams<T>,
    windows: &[TrainingWindow<T>],
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if windows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed_5eed_5eed);
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut adam = Adam::new(&params);
    let mut grads = params.zeros_like();
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        for batch in order.chunks(cfg.batch_size) {
            for t in grads.tensors_mut() {
                t.iter_mut().for_each(|v| *v = T::zero());
            }
            let scale = T::one() / count::<T>(batch.len());
            for &i in batch {
                let w = &windows[i];
                let (pred, cache) = forward(&params, &w.motion, &w.appearance)?;
                let (l, mut gp, mut gr) = loss_and_grad(&pred.pulse, &pred.resp, &w.pulse, &w.resp)?;
                epoch_loss += to_f64(l);
                gp.iter_mut().chain(gr.iter_mut()).for_each(|v| *v *= scale);
                backward_into(&params, &cache, &gp, &gr, &mut grads)?;
            }
            adam.update(&mut params, &grads, cfg);
        }
        let mean = epoch_loss / windows.len() as f64;
        if !mean.is_finite() || !params.is_finite() {
            return Err(Error::InvalidSpec("training diverged to non-finite values".into()));
        }
        history.push(mean);
    }
    Ok(TrainOutcome {
        params,
        loss_history: history,
    })
}

/// Mean loss of `params` over `windows` without updating anything.
pub fn evaluate_loss<T: Scalar>(params: &ModelParams<T>, windows: &[TrainingWindow<T>]) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for w in windows {
        let p = predict(params, &w.motion, &w.appearance)?;
        total += to_f64(super::model::loss(&p.pulse, &p.resp, &w.pulse, &w.resp)?);
    }
    Ok(total / windows.len() as f64)
}

/// Predicted pulse and breathing waveforms at the clip's frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference<T> {
    pub pulse: Waveform<T>,
    pub resp: Waveform<T>,
}

fn standardize_or_keep<T: Scalar>(xs: Vec<T>) -> Vec<T> {
    standardize_slice(&xs).unwrap_or(xs)
}

/// Runs the model over consecutive non-overlapping windows and
/// concatenates the outputs (`window − 1` samples per window). Outputs are
/// standardized unless constant, in which case they are returned as is.
///
/// The frame difference across each window boundary is never seen, so the
/// concatenated series runs `window / (window − 1)` fast; see
/// [`infer_contiguous`].
pub fn infer<T: Scalar>(
    params: &ModelParams<T>,
    clip: &VideoClip,
    window: usize,
    mode: AppearanceMode,
) -> Result<Inference<T>> {
    let n = window_count(clip, window)?;
    infer_strided(params, clip, window, window, n, mode)
}

/// Like [`infer`], but consecutive windows share their boundary frame, so
/// every frame difference of the covered span is predicted exactly once and
/// the output keeps the clip's time base.
pub fn infer_contiguous<T: Scalar>(
    params: &ModelParams<T>,
    clip: &VideoClip,
    window: usize,
    mode: AppearanceMode,
) -> Result<Inference<T>> {
    window_count(clip, window)?;
    let n = (clip.len() - 1) / (window - 1);
    infer_strided(params, clip, window, window - 1, n, mode)
}

fn infer_strided<T: Scalar>(
    params: &ModelParams<T>,
    clip: &VideoClip,
    window: usize,
    stride: usize,
    n: usize,
    mode: AppearanceMode,
) -> Result<Inference<T>> {
    let mut pulse = Vec::with_capacity(n * (window - 1));
    let mut resp = Vec::with_capacity(n * (window - 1));
    for k in 0..n {
        let frames = &clip.frames[k * stride..k * stride + window];
        let motion = normalized_difference_frames(frames)?;
        let app = appearance_input(frames, mode)?;
        let p = predict(params, &motion, &app)?;
        pulse.extend(p.pulse);
        resp.extend(p.resp);
    }
    let fs = lit::<T>(clip.fs);
    Ok(Inference {
        pulse: Waveform {
            samples: standardize_or_keep(pulse),
            fs,
            kind: WaveformKind::Predicted,
        },
        resp: Waveform {
            samples: standardize_or_keep(resp),
            fs,
            kind: WaveformKind::Predicted,
        },
    })
}
