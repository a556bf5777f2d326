//! Avatar appearance, motion and environment parameters.

use std::cmp::Ordering;
use std::fmt;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physio::{
    load_waveform_csv, resample, synthesize_ppg, synthesize_respiration, PpgSpec, RespSpec,
    Waveform, WaveformKind,
};

/// Head yaw angular velocities, degrees per second.
pub const YAW_VELOCITIES_DPS: [f64; 4] = [0.0, 10.0, 20.0, 30.0];

/// Where an avatar's driving waveform comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum WaveformSource {
    SyntheticPpg { spec: PpgSpec, seed: u64 },
    SyntheticResp { spec: RespSpec, seed: u64 },
    /// A recording ingested from a `time_s,value` CSV, read from `offset_s`.
    Csv { path: PathBuf, offset_s: f64 },
}

/// Full parametric description of one avatar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AvatarSpec {
    pub id: String,
    /// 0 is the lightest skin tone, 1 the darkest.
    pub melanin: f64,
    pub albedo_seed: u64,
    pub facial_hair: bool,
    pub head_yaw_velocity_dps: f64,
    /// Unit vector toward the light; +y up, +z toward the camera.
    pub light_direction: [f64; 3],
    pub light_intensity: f64,
    pub ambient: f64,
    pub background_color: [f64; 3],
    pub ppg_source: WaveformSource,
    pub resp_source: WaveformSource,
    /// Shoulder displacement amplitude as a fraction of frame height.
    pub breath_amp_px_frac: f64,
}

impl AvatarSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.melanin) {
            return Err(Error::OutOfRange(self.melanin));
        }
        if !YAW_VELOCITIES_DPS.contains(&self.head_yaw_velocity_dps) {
            return Err(Error::InvalidSpec(format!(
                "head_yaw_velocity_dps={} not one of {YAW_VELOCITIES_DPS:?}",
                self.head_yaw_velocity_dps
            )));
        }
        let [x, y, z] = self.light_direction;
        if ((x * x + y * y + z * z).sqrt() - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidSpec("light_direction is not unit length".into()));
        }
        Ok(())
    }

    /// Nominal pulse rate when the source is synthetic.
    pub fn nominal_pulse_bpm(&self) -> Option<f64> {
        match &self.ppg_source {
            WaveformSource::SyntheticPpg { spec, .. } => Some(spec.heart_rate_bpm),
            _ => None,
        }
    }

    pub fn nominal_breathing_bpm(&self) -> Option<f64> {
        match &self.resp_source {
            WaveformSource::SyntheticResp { spec, .. } => Some(spec.breathing_rate_bpm),
            _ => None,
        }
    }
}

fn resolve_source(
    src: &WaveformSource,
    kind: WaveformKind,
    duration_s: f64,
    fs: f64,
) -> Result<Waveform> {
    match (src, kind) {
        // clips shorter than the synthesizers' minimum length are cut
        // from a longer synthesis
        (WaveformSource::SyntheticPpg { spec, seed }, WaveformKind::Ppg) => {
            let min_s = 2.0 * (1.0 / (spec.heart_rate_bpm / 60.0));
            let w: Waveform = synthesize_ppg(spec, duration_s.max(min_s), fs, *seed)?;
            Ok(w.truncated((duration_s * fs).round() as usize))
        }
        (WaveformSource::SyntheticResp { spec, seed }, WaveformKind::Respiration) => {
            let min_s = 1.0 / (spec.breathing_rate_bpm / 60.0);
            let w: Waveform = synthesize_respiration(spec, duration_s.max(min_s), fs, *seed)?;
            Ok(w.truncated((duration_s * fs).round() as usize))
        }
        (WaveformSource::Csv { path, offset_s }, kind) => {
            let full = resample(&load_waveform_csv::<f64>(path, kind)?, fs)?;
            let start = (offset_s * fs).round().max(0.0) as usize;
            let n = (duration_s * fs).round() as usize;
            if start + n > full.len() {
                return Err(Error::InsufficientDuration {
                    duration_s: full.duration_s() - offset_s,
                    needed: 1,
                });
            }
            Waveform::new(full.samples[start..start + n].to_vec(), fs, kind)
        }
        _ => Err(Error::InvalidSpec(format!("waveform source does not produce {kind:?}"))),
    }
}

/// Materializes the avatar's pulse and breathing waveforms at `fs`.
pub fn source_waveforms(spec: &AvatarSpec, duration_s: f64, fs: f64) -> Result<(Waveform, Waveform)> {
    Ok((
        resolve_source(&spec.ppg_source, WaveformKind::Ppg, duration_s, fs)?,
        resolve_source(&spec.resp_source, WaveformKind::Respiration, duration_s, fs)?,
    ))
}

/// Ranges the sampler draws from. `Default` gives the toolkit defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerRanges {
    pub heart_rate_bpm: [f64; 2],
    pub hrv_jitter_frac: [f64; 2],
    pub dicrotic_amplitude: [f64; 2],
    pub breathing_rate_bpm: [f64; 2],
    pub resp_amplitude_jitter_frac: [f64; 2],
    pub breath_amp_px_frac: [f64; 2],
    pub light_intensity: [f64; 2],
    pub ambient: [f64; 2],
}

impl Default for SamplerRanges {
    fn default() -> Self {
        Self {
            heart_rate_bpm: [48.0, 180.0],
            hrv_jitter_frac: [0.0, 0.03],
            dicrotic_amplitude: [0.2, 0.6],
            breathing_rate_bpm: [6.0, 24.0],
            resp_amplitude_jitter_frac: [0.0, 0.1],
            breath_amp_px_frac: [0.0075, 0.02],
            light_intensity: [0.6, 1.2],
            ambient: [0.05, 0.3],
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Samples an avatar with the default ranges.
pub fn sample_avatar(seed: u64, tone_range: [f64; 2]) -> Result<AvatarSpec> {
    sample_avatar_with(seed, tone_range, &SamplerRanges::default())
}

/// Deterministic in `seed`. Melanin is uniform over `tone_range`.
pub fn sample_avatar_with(
    seed: u64,
    tone_range: [f64; 2],
    ranges: &SamplerRanges,
) -> Result<AvatarSpec> {
    let [lo, hi] = tone_range;
    if !(lo <= hi) || lo < 0.0 || hi > 1.0 {
        return Err(Error::InvalidRange { lo, hi });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let melanin = uniform(&mut rng, tone_range);
    let albedo_seed = rng.gen::<u64>();
    let facial_hair = rng.gen_bool(0.5);
    let head_yaw_velocity_dps = YAW_VELOCITIES_DPS[rng.gen_range(0..4)];

    // Light from the camera-facing hemisphere, biased above the horizon.
    let azimuth = rng.gen_range(-60f64..60.0).to_radians();
    let elevation = rng.gen_range(-20f64..60.0).to_radians();
    let light_direction = [
        elevation.cos() * azimuth.sin(),
        elevation.sin(),
        elevation.cos() * azimuth.cos(),
    ];
    let light_intensity = uniform(&mut rng, ranges.light_intensity);
    let ambient = uniform(&mut rng, ranges.ambient);
    let background_color = [rng.gen(), rng.gen(), rng.gen()];

    let ppg = PpgSpec {
        heart_rate_bpm: uniform(&mut rng, ranges.heart_rate_bpm),
        hrv_jitter_frac: uniform(&mut rng, ranges.hrv_jitter_frac),
        dicrotic_amplitude: uniform(&mut rng, ranges.dicrotic_amplitude),
    };
    let resp = RespSpec {
        breathing_rate_bpm: uniform(&mut rng, ranges.breathing_rate_bpm),
        amplitude_jitter_frac: uniform(&mut rng, ranges.resp_amplitude_jitter_frac),
    };
    let ppg_source = WaveformSource::SyntheticPpg {
        spec: ppg,
        seed: rng.gen(),
    };
    let resp_source = WaveformSource::SyntheticResp {
        spec: resp,
        seed: rng.gen(),
    };
    let breath_amp_px_frac = uniform(&mut rng, ranges.breath_amp_px_frac);

    let spec = AvatarSpec {
        id: format!("avatar-{seed:016x}"),
        melanin,
        albedo_seed,
        facial_hair,
        head_yaw_velocity_dps,
        light_direction,
        light_intensity,
        ambient,
        background_color,
        ppg_source,
        resp_source,
        breath_amp_px_frac,
    };
    spec.validate()?;
    Ok(spec)
}

/// Fitzpatrick skin type, I (lightest) to VI (darkest).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SkinTypeBin {
    I,
    II,
    III,
    IV,
    V,
    VI,
}

impl SkinTypeBin {
    pub const ALL: [SkinTypeBin; 6] = [
        SkinTypeBin::I,
        SkinTypeBin::II,
        SkinTypeBin::III,
        SkinTypeBin::IV,
        SkinTypeBin::V,
        SkinTypeBin::VI,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SkinTypeBin::I => "I",
            SkinTypeBin::II => "II",
            SkinTypeBin::III => "III",
            SkinTypeBin::IV => "IV",
            SkinTypeBin::V => "V",
            SkinTypeBin::VI => "VI",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.as_str() == s)
    }
}

impl fmt::Display for SkinTypeBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Lower melanin edges of bins II..VI.
pub const FITZPATRICK_THRESHOLDS: [f64; 5] = [0.10, 0.25, 0.45, 0.65, 0.85];

pub fn fitzpatrick_bin(melanin: f64) -> Result<SkinTypeBin> {
    if !(0.0..=1.0).contains(&melanin) {
        return Err(Error::OutOfRange(melanin));
    }
    let idx = FITZPATRICK_THRESHOLDS
        .iter()
        .filter(|&&t| melanin >= t)
        .count();
    Ok(SkinTypeBin::ALL[idx])
}

/// Splits avatars into a lighter and a darker half by melanin (ties by id).
/// With an odd count the median avatar goes to the dark half.
pub fn partition_by_tone(specs: &[AvatarSpec]) -> Result<(Vec<AvatarSpec>, Vec<AvatarSpec>)> {
    if specs.len() < 2 {
        return Err(Error::TooFew {
            needed: 2,
            got: specs.len(),
        });
    }
    let mut sorted = specs.to_vec();
    sorted.sort_by(|a, b| {
        a.melanin
            .partial_cmp(&b.melanin)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.id.cmp(&b.id))
    });
    let dark = sorted.split_off(sorted.len() / 2);
    Ok((sorted, dark))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sampler_is_deterministic() {
        let a = sample_avatar(42, [0.0, 1.0]).unwrap();
        let b = sample_avatar(42, [0.0, 1.0]).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample_avatar(43, [0.0, 1.0]).unwrap());
    }

    #[test]
    fn degenerate_tone_range() {
        assert_eq!(sample_avatar(9, [0.3, 0.3]).unwrap().melanin, 0.3);
        assert!(matches!(
            sample_avatar(9, [0.6, 0.3]),
            Err(Error::InvalidRange { .. })
        ));
    }

    #[test]
    fn sampler_frequencies() {
        let n = 10_000;
        let mut hair = 0;
        let mut yaw = [0usize; 4];
        for seed in 0..n {
            let s = sample_avatar(seed as u64, [0.0, 1.0]).unwrap();
            hair += s.facial_hair as usize;
            let k = YAW_VELOCITIES_DPS
                .iter()
                .position(|&v| v == s.head_yaw_velocity_dps)
                .unwrap();
            yaw[k] += 1;
        }
        let frac = hair as f64 / n as f64;
        assert!((0.47..=0.53).contains(&frac), "{frac}");
        for c in yaw {
            let f = c as f64 / n as f64;
            assert!((0.23..=0.27).contains(&f), "{yaw:?}");
        }
    }

    #[test]
    fn fitzpatrick_examples() {
        assert_eq!(fitzpatrick_bin(0.0).unwrap(), SkinTypeBin::I);
        assert_eq!(fitzpatrick_bin(1.0).unwrap(), SkinTypeBin::VI);
        assert_eq!(fitzpatrick_bin(0.5).unwrap(), SkinTypeBin::IV);
        assert_eq!(fitzpatrick_bin(0.45).unwrap(), SkinTypeBin::IV);
        assert!(matches!(fitzpatrick_bin(1.01), Err(Error::OutOfRange(_))));
    }

    fn with_melanin(ms: &[f64]) -> Vec<AvatarSpec> {
        ms.iter()
            .enumerate()
            .map(|(i, &m)| {
                let mut s = sample_avatar(i as u64, [0.0, 1.0]).unwrap();
                s.melanin = m;
                s.id = format!("a{i:03}");
                s
            })
            .collect()
    }

    #[test]
    fn partition_examples() {
        let (l, d) = partition_by_tone(&with_melanin(&[0.9, 0.1])).unwrap();
        assert_eq!(l.iter().map(|s| s.melanin).collect::<Vec<_>>(), [0.1]);
        assert_eq!(d.iter().map(|s| s.melanin).collect::<Vec<_>>(), [0.9]);
        let (l, d) = partition_by_tone(&with_melanin(&[0.5, 0.8, 0.2])).unwrap();
        assert_eq!(l.iter().map(|s| s.melanin).collect::<Vec<_>>(), [0.2]);
        assert_eq!(d.iter().map(|s| s.melanin).collect::<Vec<_>>(), [0.5, 0.8]);
        assert!(matches!(
            partition_by_tone(&with_melanin(&[0.5])),
            Err(Error::TooFew { .. })
        ));
    }

    #[test]
    fn partition_of_random_specs_is_ordered() {
        let specs: Vec<_> = (0..100)
            .map(|i| {
                let mut s = sample_avatar(1000 + i, [0.0, 1.0]).unwrap();
                s.id = format!("a{i:03}");
                s
            })
            .collect();
        let (l, d) = partition_by_tone(&specs).unwrap();
        let max_l = l.iter().map(|s| s.melanin).fold(f64::MIN, f64::max);
        let min_d = d.iter().map(|s| s.melanin).fold(f64::MAX, f64::min);
        assert!(max_l <= min_d);
    }

    #[test]
    fn json_rejects_unknown_fields() {
        let s = sample_avatar(5, [0.0, 1.0]).unwrap();
        let mut v = serde_json::to_value(&s).unwrap();
        let back: AvatarSpec = serde_json::from_value(v.clone()).unwrap();
        assert_eq!(back, s);
        v.as_object_mut()
            .unwrap()
            .insert("extra".into(), serde_json::json!(1));
        assert!(serde_json::from_value::<AvatarSpec>(v).is_err());
    }

    proptest! {
        #[test]
        fn fitzpatrick_is_monotone(mut ms in proptest::collection::vec(0.0f64..=1.0, 2..50)) {
            ms.sort_by(f64::total_cmp);
            let bins: Vec<_> = ms.iter().map(|&m| fitzpatrick_bin(m).unwrap()).collect();
            prop_assert!(bins.windows(2).all(|w| w[0] <= w[1]));
        }

        #[test]
        fn partition_is_a_partition(ms in proptest::collection::vec(0.0f64..=1.0, 2..40)) {
            let specs = with_melanin(&ms);
            let (l, d) = partition_by_tone(&specs).unwrap();
            prop_assert_eq!(l.len() + d.len(), specs.len());
            prop_assert!(d.len() - l.len() <= 1);
            let mut ids: Vec<_> = l.iter().chain(&d).map(|s| s.id.clone()).collect();
            ids.sort();
            let mut want: Vec<_> = specs.iter().map(|s| s.id.clone()).collect();
            want.sort();
            prop_assert_eq!(ids, want);
        }
    }
}
