#![allow(dead_code)]

use synthphys_core::avatar::{sample_avatar, AvatarSpec, WaveformSource};
use synthphys_core::physio::{PpgSpec, RespSpec};
use synthphys_core::render::RenderConfig;

pub fn quiet(mut spec: AvatarSpec) -> AvatarSpec {
    spec.head_yaw_velocity_dps = 0.0;
    spec
}

pub fn with_rates(mut spec: AvatarSpec, hr: f64, br: f64) -> AvatarSpec {
    spec.ppg_source = WaveformSource::SyntheticPpg {
        spec: PpgSpec {
            heart_rate_bpm: hr,
            hrv_jitter_frac: 0.0,
            dicrotic_amplitude: 0.4,
        },
        seed: 11,
    };
    spec.resp_source = WaveformSource::SyntheticResp {
        spec: RespSpec {
            breathing_rate_bpm: br,
            amplitude_jitter_frac: 0.0,
        },
        seed: 12,
    };
    spec
}

/// A still-headed avatar with jitter-free waveforms at the given rates.
pub fn still_avatar(seed: u64, hr: f64, br: f64) -> AvatarSpec {
    quiet(with_rates(sample_avatar(seed, [0.0, 1.0]).unwrap(), hr, br))
}

pub fn noiseless(frames: usize) -> RenderConfig {
    RenderConfig {
        frames,
        ..RenderConfig::default().noiseless()
    }
}

/// Noiseless, with the head held still while the shoulders breathe.
pub fn static_head(frames: usize) -> RenderConfig {
    RenderConfig {
        head_damping: 0.0,
        ..noiseless(frames)
    }
}

/// Fixed-seed proptest settings so every run checks the same cases.
pub fn cases(n: u32) -> proptest::test_runner::Config {
    proptest::test_runner::Config {
        cases: n,
        rng_seed: proptest::test_runner::RngSeed::Fixed(0x5157_0001),
        failure_persistence: None,
        ..Default::default()
    }
}
