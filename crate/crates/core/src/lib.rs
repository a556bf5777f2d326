//! Synthetic avatar videos for camera-based physiological sensing: signal
//! synthesis, rendering, storage, classical and neural recovery, metrics.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the `*32` and
//! `*64` aliases below pick one.

pub mod avatar;
pub mod classical;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod physio;
pub mod render;
pub mod scalar;
pub mod spectral;

pub use avatar::{AvatarSpec, SkinTypeBin};
pub use classical::RgbTrace;
pub use error::{Error, Result};
pub use metrics::{Band, EvalRecord, EvalReport};
pub use nn::{ModelParams, Tensor, TrainConfig};
pub use physio::{Waveform, WaveformKind};
pub use render::{Frame, RenderConfig, VideoClip};
pub use scalar::Scalar;

pub type Waveform32 = Waveform<f32>;
pub type Waveform64 = Waveform<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type ModelParams32 = ModelParams<f32>;
pub type ModelParams64 = ModelParams<f64>;
pub type RgbTrace32 = RgbTrace<f32>;
pub type RgbTrace64 = RgbTrace<f64>;
