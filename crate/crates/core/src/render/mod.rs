//! Head-and-shoulders rasterizer.
//!
//! The head is an orthographically projected ellipsoid with Lambertian
//! shading. Skin pixels are attenuated per channel by the blood-volume
//! signal, `(1 − α_c · p · weight(u, v))`, where `weight` is a smooth
//! texture standing in for skin thickness. Breathing translates the
//! shoulders vertically and the head by a damped fraction of that.

mod noise;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::avatar::{source_waveforms, AvatarSpec};
use crate::error::{Error, Result};
use crate::physio::Waveform;

pub use noise::{FractalNoise, ValueNoise};

/// Skin albedo at melanin 0.
pub const LIGHT_POLE: [f64; 3] = [0.95, 0.78, 0.68];
/// Skin albedo at melanin 1.
pub const DARK_POLE: [f64; 3] = [0.35, 0.22, 0.18];
/// Multiplier applied to the lower-face patch when the avatar has facial hair.
pub const FACIAL_HAIR_DARKENING: f64 = 0.45;
/// Head ellipsoid semi-axes as fractions of (W, H, W).
pub const HEAD_SEMI_AXES: [f64; 3] = [0.32, 0.42, 0.32];
/// Resting head centre as fractions of (W, H).
pub const HEAD_CENTER: [f64; 2] = [0.5, 0.45];
/// The shoulders occupy this bottom fraction of the frame at rest.
pub const SHOULDER_BAND_FRAC: f64 = 0.25;

const WEIGHT_SALT: u64 = 0x5eed_0f_5c47_7e12;
const CLOTH_SALT: u64 = 0xc1_07_4e5;
/// Lattice cells (around, down) of the weight-map noise.
const WEIGHT_NOISE_CELLS: (usize, usize) = (24, 16);
const WEIGHT_REGION_BOOST: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub height: usize,
    pub width: usize,
    pub fps: f64,
    /// Frames per clip.
    pub frames: usize,
    /// Fractional blood-volume modulation per channel (R, G, B).
    pub pulse_gain: [f64; 3],
    pub sensor_noise_sigma: f64,
    pub quantize_8bit: bool,
    pub head_damping: f64,
    /// Global exposure applied to shaded skin so lit highlights stay below 1.
    pub exposure: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            height: 36,
            width: 36,
            fps: 30.0,
            frames: 180,
            pulse_gain: [0.004, 0.008, 0.005],
            sensor_noise_sigma: 1.0 / 255.0,
            quantize_8bit: true,
            head_damping: 0.3,
            exposure: 0.6,
        }
    }
}

impl RenderConfig {
    /// Noise-free, unquantized variant of `self`.
    pub fn noiseless(mut self) -> Self {
        self.sensor_noise_sigma = 0.0;
        self.quantize_8bit = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let [r, g, b] = self.pulse_gain;
        if self.height < 8 || self.width < 8 {
            return Err(Error::InvalidSpec("frames must be at least 8x8".into()));
        }
        if !(g > r && g > b) {
            return Err(Error::InvalidSpec(
                "green pulse gain must exceed red and blue".into(),
            ));
        }
        if self.pulse_gain.iter().any(|&a| !(a > 0.0 && a <= 0.05)) {
            return Err(Error::InvalidSpec("pulse gains must lie in (0, 0.05]".into()));
        }
        if !(self.fps > 0.0) || self.frames == 0 {
            return Err(Error::InvalidSpec("fps and frame count must be positive".into()));
        }
        if !(self.sensor_noise_sigma >= 0.0) || !(self.exposure > 0.0) {
            return Err(Error::InvalidSpec("noise sigma and exposure must be non-negative".into()));
        }
        Ok(())
    }
}

/// One rendered image, `H×W×3` row-major interleaved RGB in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
    pub skin_mask: Vec<bool>,
}

impl Frame {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            pixels: vec![0.0; height * width * 3],
            skin_mask: vec![false; height * width],
        }
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    #[inline]
    pub fn is_skin(&self, y: usize, x: usize) -> bool {
        self.skin_mask[y * self.width + x]
    }
}

/// Rendered frames plus the ground truth that drove them.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    pub frames: Vec<Frame>,
    pub fs: f64,
    pub ppg_gt: Waveform,
    pub resp_gt: Waveform,
    pub spec: AvatarSpec,
}

impl VideoClip {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn height(&self) -> usize {
        self.frames.first().map_or(0, |f| f.height)
    }

    pub fn width(&self) -> usize {
        self.frames.first().map_or(0, |f| f.width)
    }
}

/// Named regions of the head's UV square. `u = 0.5` is the front of the
/// face, `v = 0` the crown and `v = 1` the chin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaceRegion {
    Forehead,
    Cheeks,
    Jaw,
    /// Where facial hair darkens the albedo.
    LowerFace,
}

impl FaceRegion {
    pub fn contains(self, u: f64, v: f64) -> bool {
        let du = (u - 0.5).abs();
        match self {
            FaceRegion::Forehead => (0.12..=0.32).contains(&v) && du <= 0.10,
            FaceRegion::Cheeks => (0.45..=0.62).contains(&v) && (0.06..=0.16).contains(&du),
            FaceRegion::Jaw => (0.70..=0.85).contains(&v) && du <= 0.12,
            FaceRegion::LowerFace => v >= 0.62 && du <= 0.14,
        }
    }
}

/// A `rows×cols` texture over the UV square; texel `(i, j)` sits at
/// `u = (j + ½)/cols`, `v = (i + ½)/rows`.
#[derive(Debug, Clone, PartialEq)]
pub struct UvTexture {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl UvTexture {
    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn texel_uv(&self, i: usize, j: usize) -> (f64, f64) {
        (
            (j as f64 + 0.5) / self.cols as f64,
            (i as f64 + 0.5) / self.rows as f64,
        )
    }

    /// Bilinear lookup, wrapping in `u` and clamping in `v`.
    pub fn sample(&self, u: f64, v: f64) -> f64 {
        let x = u.rem_euclid(1.0) * self.cols as f64 - 0.5;
        let y = (v * self.rows as f64 - 0.5).clamp(0.0, (self.rows - 1) as f64);
        let xf = x.floor();
        let j0 = (xf as isize).rem_euclid(self.cols as isize) as usize;
        let j1 = (j0 + 1) % self.cols;
        let i0 = (y.floor() as usize).min(self.rows - 1);
        let i1 = (i0 + 1).min(self.rows - 1);
        let fx = x - xf;
        let fy = y - i0 as f64;
        let top = self.at(i0, j0) + fx * (self.at(i0, j1) - self.at(i0, j0));
        let bot = self.at(i1, j0) + fx * (self.at(i1, j1) - self.at(i1, j0));
        top + fy * (bot - top)
    }

    /// Mean over texels whose centres fall in `region`.
    pub fn region_mean(&self, region: FaceRegion) -> Option<f64> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for i in 0..self.rows {
            for j in 0..self.cols {
                let (u, v) = self.texel_uv(i, j);
                if region.contains(u, v) {
                    sum += self.at(i, j);
                    n += 1;
                }
            }
        }
        (n > 0).then(|| sum / n as f64)
    }
}

/// Spatial blood-volume weight texture in `[0.3, 1.0]`: smooth noise
/// rescaled to that range, boosted on the forehead and cheeks.
pub fn skin_weight_map(spec: &AvatarSpec, rows: usize, cols: usize) -> UvTexture {
    let (cu, cv) = WEIGHT_NOISE_CELLS;
    let field = FractalNoise::new(spec.albedo_seed ^ WEIGHT_SALT, cu, cv);
    let mut tex = UvTexture {
        rows,
        cols,
        data: vec![0.0; rows * cols],
    };
    for i in 0..rows {
        for j in 0..cols {
            let (u, v) = tex.texel_uv(i, j);
            tex.data[i * cols + j] = field.eval(u, v);
        }
    }
    let lo = tex.data.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = tex.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    for i in 0..rows {
        for j in 0..cols {
            let (u, v) = tex.texel_uv(i, j);
            let k = i * cols + j;
            let mut w = 0.3 + 0.7 * (tex.data[k] - lo) / span;
            if FaceRegion::Forehead.contains(u, v) || FaceRegion::Cheeks.contains(u, v) {
                w += WEIGHT_REGION_BOOST;
            }
            tex.data[k] = w.clamp(0.3, 1.0);
        }
    }
    tex
}

/// Clothing colour, contrasted against the background so the shoulder
/// edge is visible.
pub fn clothing_color(spec: &AvatarSpec) -> [f64; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.albedo_seed ^ CLOTH_SALT);
    let base: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
    let bg = spec.background_color;
    let bg_lum = (bg[0] + bg[1] + bg[2]) / 3.0;
    if bg_lum > 0.5 {
        base.map(|c| 0.05 + 0.25 * c)
    } else {
        base.map(|c| 0.6 + 0.35 * c)
    }
}

/// Per-avatar textures, computed once per clip.
#[derive(Debug, Clone)]
pub struct Scene {
    spec: AvatarSpec,
    cfg: RenderConfig,
    albedo_noise: ValueNoise,
    weights: UvTexture,
    cloth: [f64; 3],
    base_albedo: [f64; 3],
}

/// Surface quantities at one head pixel, before pulse modulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceSample {
    pub u: f64,
    pub v: f64,
    pub shading: f64,
    pub albedo: [f64; 3],
    pub weight: f64,
}

impl Scene {
    pub fn new(spec: &AvatarSpec, cfg: &RenderConfig) -> Self {
        let m = spec.melanin;
        let base_albedo = [0, 1, 2].map(|c| LIGHT_POLE[c] + m * (DARK_POLE[c] - LIGHT_POLE[c]));
        Self {
            spec: spec.clone(),
            cfg: cfg.clone(),
            albedo_noise: ValueNoise::new(spec.albedo_seed, 12, 8),
            weights: skin_weight_map(spec, cfg.height, cfg.width),
            cloth: clothing_color(spec),
            base_albedo,
        }
    }

    /// Vertical shoulder displacement in pixels; positive is upward.
    pub fn breath_displacement(&self, r: f64) -> f64 {
        self.spec.breath_amp_px_frac * self.cfg.height as f64 * r
    }

    /// Head centre in pixel coordinates (y down).
    pub fn head_center(&self, r: f64) -> (f64, f64) {
        let w = self.cfg.width as f64;
        let h = self.cfg.height as f64;
        (
            HEAD_CENTER[0] * w,
            HEAD_CENTER[1] * h - self.cfg.head_damping * self.breath_displacement(r),
        )
    }

    /// Head yaw in radians at time `t`.
    pub fn yaw(&self, t: f64) -> f64 {
        (self.spec.head_yaw_velocity_dps * t).to_radians()
    }

    /// Surface sample for the head pixel `(y, x)`, or `None` off the head.
    pub fn surface(&self, y: usize, x: usize, t: f64, r: f64) -> Option<SurfaceSample> {
        let w = self.cfg.width as f64;
        let h = self.cfg.height as f64;
        let a = HEAD_SEMI_AXES[0] * w;
        let b = HEAD_SEMI_AXES[1] * h;
        let c = HEAD_SEMI_AXES[2] * w;
        let (cx, cy) = self.head_center(r);
        let sx = (x as f64 + 0.5 - cx) / a;
        let sy = -(y as f64 + 0.5 - cy) / b;
        let rho2 = sx * sx + sy * sy;
        if rho2 >= 1.0 {
            return None;
        }
        let sz = (1.0 - rho2).sqrt();

        let n = [sx / a, sy / b, sz / c];
        let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
        let l = self.spec.light_direction;
        let ndotl = (n[0] * l[0] + n[1] * l[1] + n[2] * l[2]) / norm;
        let shading = self.spec.ambient + self.spec.light_intensity * ndotl.max(0.0);

        let theta = self.yaw(t);
        let (s, co) = theta.sin_cos();
        let lx = co * sx - s * sz;
        let lz = s * sx + co * sz;
        let u = 0.5 + lx.atan2(lz) / (2.0 * std::f64::consts::PI);
        let v = 0.5 - sy.clamp(-1.0, 1.0).asin() / std::f64::consts::PI;

        let tex = 1.0 + 0.1 * self.albedo_noise.eval(u, v);
        let hair = if self.spec.facial_hair && FaceRegion::LowerFace.contains(u, v) {
            FACIAL_HAIR_DARKENING
        } else {
            1.0
        };
        let albedo = self.base_albedo.map(|c| c * tex * hair);
        Some(SurfaceSample {
            u,
            v,
            shading,
            albedo,
            weight: self.weights.sample(u, v),
        })
    }

    /// Shoulder-row colour with exact area coverage of the moving edge.
    fn shoulder_value(&self, y: usize, r: f64) -> Option<[f64; 3]> {
        let h = self.cfg.height as f64;
        // at full inhale (r = 1) the band is exactly the bottom fraction
        let top = (1.0 - SHOULDER_BAND_FRAC) * h + self.breath_displacement(1.0)
            - self.breath_displacement(r);
        let depth = SHOULDER_BAND_FRAC * h;
        let (y0, y1) = (y as f64, y as f64 + 1.0);
        if y1 <= top {
            return None;
        }
        let a = y0.max(top);
        let cover = y1 - a;
        // mean of clamp(z, 0, 1) for z from z0 to z1, z0 >= 0
        let (z0, z1) = ((a - top) / depth, (y1 - top) / depth);
        let ramp = if z1 <= 1.0 {
            0.5 * (z0 + z1)
        } else if z0 >= 1.0 {
            1.0
        } else {
            (0.5 * (1.0 - z0) * (1.0 + z0) + (z1 - 1.0)) / (z1 - z0)
        };
        let shade = 0.95 - 0.45 * ramp;
        let bg = self.spec.background_color;
        let acc = [0, 1, 2].map(|k| cover * self.cloth[k] * shade + (1.0 - cover) * bg[k]);
        Some(acc)
    }

    /// Renders the frame at time `t` with normalized pulse `p ∈ [0, 1]` and
    /// respiration `r ∈ [-1, 1]`.
    pub fn render<R: Rng + ?Sized>(&self, t: f64, p: f64, r: f64, rng: &mut R) -> Frame {
        let (hgt, wid) = (self.cfg.height, self.cfg.width);
        let mut frame = Frame::new(hgt, wid);
        let alpha = self.cfg.pulse_gain;
        let noise = (self.cfg.sensor_noise_sigma > 0.0)
            .then(|| Normal::new(0.0, self.cfg.sensor_noise_sigma).expect("finite sigma"));
        for y in 0..hgt {
            let shoulder = self.shoulder_value(y, r);
            for x in 0..wid {
                let idx = y * wid + x;
                let mut val = match self.surface(y, x, t, r) {
                    Some(s) => {
                        frame.skin_mask[idx] = true;
                        let e = self.cfg.exposure * s.shading;
                        [0, 1, 2].map(|c| e * s.albedo[c] * (1.0 - alpha[c] * p * s.weight))
                    }
                    None => shoulder.unwrap_or(self.spec.background_color),
                };
                for v in val.iter_mut() {
                    if let Some(n) = &noise {
                        *v += n.sample(rng);
                    }
                    if self.cfg.quantize_8bit {
                        *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
                    }
                    *v = v.clamp(0.0, 1.0);
                }
                for c in 0..3 {
                    frame.pixels[idx * 3 + c] = val[c] as f32;
                }
            }
        }
        frame
    }
}

/// Renders one frame; see [`Scene::render`].
pub fn render_frame<R: Rng + ?Sized>(
    spec: &AvatarSpec,
    cfg: &RenderConfig,
    t: f64,
    p: f64,
    r: f64,
    rng: &mut R,
) -> Frame {
    Scene::new(spec, cfg).render(t, p, r, rng)
}

fn min_max(xs: &[f64]) -> (f64, f64) {
    xs.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        })
}

/// Renders `cfg.frames` frames driven by `ppg` and `resp` (both at
/// `cfg.fps`). The pulse is min-max scaled to `[0, 1]` and respiration to
/// `[-1, 1]` over the clip; the stored ground truth is the unscaled input
/// truncated to the clip length.
pub fn render_clip(
    spec: &AvatarSpec,
    ppg: &Waveform,
    resp: &Waveform,
    cfg: &RenderConfig,
    seed: u64,
) -> Result<VideoClip> {
    cfg.validate()?;
    let n = cfg.frames;
    for w in [ppg, resp] {
        if w.len() < n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: w.len(),
            });
        }
        if (w.fs - cfg.fps).abs() > 1e-9 * cfg.fps {
            return Err(Error::InvalidRate(w.fs));
        }
    }
    let (plo, phi) = min_max(&ppg.samples[..n]);
    let (rlo, rhi) = min_max(&resp.samples[..n]);
    let scene = Scene::new(spec, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = (0..n)
        .map(|i| {
            let p = if phi > plo {
                (ppg.samples[i] - plo) / (phi - plo)
            } else {
                0.0
            };
            let r = if rhi > rlo {
                2.0 * (resp.samples[i] - rlo) / (rhi - rlo) - 1.0
            } else {
                0.0
            };
            scene.render(i as f64 / cfg.fps, p, r, &mut rng)
        })
        .collect();
    Ok(VideoClip {
        frames,
        fs: cfg.fps,
        ppg_gt: ppg.truncated(n),
        resp_gt: resp.truncated(n),
        spec: spec.clone(),
    })
}

/// Synthesizes or loads the avatar's waveforms and renders `cfg.frames`
/// frames from them.
pub fn render_avatar(spec: &AvatarSpec, cfg: &RenderConfig, seed: u64) -> Result<VideoClip> {
    cfg.validate()?;
    let (ppg, resp) = source_waveforms(spec, cfg.frames as f64 / cfg.fps, cfg.fps)?;
    render_clip(spec, &ppg, &resp, cfg, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::avatar::sample_avatar;

    #[test]
    fn weight_map_range_and_determinism() {
        for seed in 0..20 {
            let spec = sample_avatar(seed, [0.0, 1.0]).unwrap();
            let a = skin_weight_map(&spec, 36, 36);
            assert!(a.data.iter().all(|&w| (0.3..=1.0).contains(&w)));
            assert_eq!(a, skin_weight_map(&spec, 36, 36));
        }
    }

    #[test]
    fn forehead_outweighs_jaw() {
        for seed in 0..100 {
            let spec = sample_avatar(seed, [0.0, 1.0]).unwrap();
            let m = skin_weight_map(&spec, 36, 36);
            let fh = m.region_mean(FaceRegion::Forehead).unwrap();
            let jaw = m.region_mean(FaceRegion::Jaw).unwrap();
            assert!(fh > jaw, "seed {seed}: forehead {fh} jaw {jaw}");
        }
    }

    #[test]
    fn static_scene_is_time_invariant() {
        let mut spec = sample_avatar(4, [0.0, 1.0]).unwrap();
        spec.head_yaw_velocity_dps = 0.0;
        let cfg = RenderConfig::default().noiseless();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = render_frame(&spec, &cfg, 0.0, 0.4, 0.0, &mut rng);
        let b = render_frame(&spec, &cfg, 1.0, 0.4, 0.0, &mut rng);
        assert_eq!(a, b);
    }

    #[test]
    fn render_clip_rejects_short_waveforms() {
        let spec = sample_avatar(1, [0.0, 1.0]).unwrap();
        let w = Waveform::new(vec![0.0; 100], 30.0, crate::physio::WaveformKind::Ppg).unwrap();
        let err = render_clip(&spec, &w, &w, &RenderConfig::default(), 0).unwrap_err();
        assert!(matches!(err, Error::LengthMismatch { expected: 180, got: 100 }));
    }

    #[test]
    fn config_rejects_non_green_dominant_gain() {
        let cfg = RenderConfig {
            pulse_gain: [0.01, 0.008, 0.005],
            ..RenderConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
