mod common;

use std::f64::consts::PI;

use proptest::prelude::*;
use synthphys_core::metrics::{estimate_rate, pearson, Band};
use synthphys_core::physio::{
    first_derivative_labels, integrate_derivative, parse_waveform_csv, resample, standardize, synthesize_ppg,
    synthesize_respiration, write_waveform_csv, PpgSpec, RespSpec, Waveform, WaveformKind,
};
use synthphys_core::Error;

/// Frequency of the largest naive-DFT magnitude of the mean-removed signal
/// on a grid of `grid` Hz, searched over `[lo, hi]`.
fn dft_peak(x: &[f64], fs: f64, lo: f64, hi: f64, grid: f64) -> f64 {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    let mut best = (lo, -1.0);
    let mut f = lo;
    while f <= hi {
        let (mut re, mut im) = (0.0, 0.0);
        for (i, v) in x.iter().enumerate() {
            let ph = 2.0 * PI * f * i as f64 / fs;
            re += (v - m) * ph.cos();
            im -= (v - m) * ph.sin();
        }
        let p = re * re + im * im;
        if p > best.1 {
            best = (f, p);
        }
        f += grid;
    }
    best.0
}

fn ppg(hr: f64, dicrotic: f64, secs: f64, seed: u64) -> Waveform {
    let spec = PpgSpec {
        heart_rate_bpm: hr,
        hrv_jitter_frac: 0.0,
        dicrotic_amplitude: dicrotic,
    };
    synthesize_ppg(&spec, secs, 30.0, seed).unwrap()
}

fn resp(rate: f64, secs: f64, seed: u64) -> Waveform {
    let spec = RespSpec {
        breathing_rate_bpm: rate,
        amplitude_jitter_frac: 0.0,
    };
    synthesize_respiration(&spec, secs, 30.0, seed).unwrap()
}

#[test]
fn ppg_peaks_at_heart_rate() {
    // one bin of a 10 s record at fs = 30
    let bin = 30.0 / 300.0;
    let w = ppg(60.0, 0.45, 10.0, 1);
    assert!((dft_peak(&w.samples, 30.0, 0.5, 4.0, 0.005) - 1.0).abs() <= bin);
    let w = ppg(120.0, 0.0, 10.0, 2);
    assert!((dft_peak(&w.samples, 30.0, 0.5, 4.0, 0.005) - 2.0).abs() <= bin);
    assert!(w.samples.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn ppg_systolic_peaks_are_thirty_samples_apart() {
    for d in [0.0, 0.45, 1.0] {
        let w = ppg(60.0, d, 10.0, 9);
        let x = &w.samples;
        let peaks: Vec<usize> = (1..x.len() - 1)
            .filter(|&i| x[i] > x[i - 1] && x[i] >= x[i + 1] && x[i] > 0.9)
            .collect();
        assert!(peaks.len() >= 8);
        assert!(peaks.windows(2).all(|p| p[1] - p[0] == 30), "{peaks:?}");
    }
}

#[test]
fn respiration_peaks_and_crossings() {
    let w = resp(12.0, 30.0, 4);
    assert!((dft_peak(&w.samples, 30.0, 0.05, 1.0, 0.002) - 0.2).abs() <= 30.0 / 900.0);
    let peak = w.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!((peak - 1.0).abs() < 1e-6);

    let w = resp(6.0, 60.0, 5);
    let up = w.samples.windows(2).filter(|p| p[0] < 0.0 && p[1] >= 0.0).count();
    assert_eq!(up, 6);
}

#[test]
fn synthesis_is_reproducible() {
    let spec = PpgSpec {
        heart_rate_bpm: 77.0,
        hrv_jitter_frac: 0.05,
        dicrotic_amplitude: 0.3,
    };
    let a: Waveform = synthesize_ppg(&spec, 8.0, 30.0, 42).unwrap();
    let b: Waveform = synthesize_ppg(&spec, 8.0, 30.0, 42).unwrap();
    assert_eq!(a, b);
}

#[test]
fn synthesis_rejects_bad_specs() {
    let spec = PpgSpec {
        heart_rate_bpm: 200.0,
        hrv_jitter_frac: 0.0,
        dicrotic_amplitude: 0.3,
    };
    assert!(matches!(
        synthesize_ppg::<f64>(&spec, 10.0, 30.0, 0),
        Err(Error::InvalidSpec(_))
    ));
    let spec = RespSpec {
        breathing_rate_bpm: 6.0,
        amplitude_jitter_frac: 0.0,
    };
    assert!(matches!(
        synthesize_respiration::<f64>(&spec, 5.0, 30.0, 0),
        Err(Error::InsufficientDuration { .. })
    ));
}

#[test]
fn csv_examples() {
    let w: Waveform = parse_waveform_csv("0.0,0.1\n0.5,0.3\n1.0,0.2\n", WaveformKind::Ppg).unwrap();
    assert_eq!(w.fs, 2.0);
    assert_eq!(w.samples, vec![0.1, 0.3, 0.2]);
    let with_header: Waveform =
        parse_waveform_csv("time_s,value\n0.0,0.1\n0.5,0.3\n", WaveformKind::Ppg).unwrap();
    assert_eq!(with_header.samples, vec![0.1, 0.3]);
    assert!(matches!(
        parse_waveform_csv::<f64>("0.0,1.0\n", WaveformKind::Ppg),
        Err(Error::Parse { .. })
    ));
    assert!(matches!(
        parse_waveform_csv::<f64>("0.0,1\n0.4,1\n1.0,1\n1.4,1\n2.0,1\n", WaveformKind::Ppg),
        Err(Error::NonUniformSampling { .. })
    ));
    assert!(matches!(
        parse_waveform_csv::<f64>("0.0,1\n0.5,x\n", WaveformKind::Ppg),
        Err(Error::Parse { line: 2, .. })
    ));
}

#[test]
fn csv_file_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ppg.csv");
    let w = ppg(83.0, 0.4, 6.0, 3);
    write_waveform_csv(&path, &w).unwrap();
    let back: Waveform = synthphys_core::physio::load_waveform_csv(&path, WaveformKind::Ppg).unwrap();
    assert_eq!(back.samples, w.samples);
    assert!((back.fs - w.fs).abs() < 1e-9);
}

#[test]
fn resample_examples() {
    let w = ppg(70.0, 0.4, 6.0, 0);
    assert_eq!(resample(&w, 30.0).unwrap(), w);

    let ramp = Waveform::new(vec![0.0, 1.0], 1.0, WaveformKind::Ppg).unwrap();
    assert_eq!(resample(&ramp, 2.0).unwrap().samples, vec![0.0, 0.5, 1.0]);
    assert!(matches!(resample(&ramp, 0.0), Err(Error::InvalidRate(_))));

    let n = 125 * 10;
    let src: Vec<f64> = (0..n).map(|i| (2.0 * PI * i as f64 / 125.0).sin()).collect();
    let w = Waveform::new(src, 125.0, WaveformKind::Ppg).unwrap();
    let out = resample(&w, 30.0).unwrap();
    let ideal: Vec<f64> = (0..out.len())
        .map(|i| (2.0 * PI * i as f64 / 30.0).sin())
        .collect();
    assert!(pearson(&out.samples, &ideal).unwrap() > 0.9999);
    assert!((out.duration_s() - w.duration_s()).abs() <= 1.0 / 30.0);
    assert_eq!(out.samples[0], w.samples[0]);
}

#[test]
fn derivative_label_examples() {
    let c = Waveform::new(vec![5.0; 4], 30.0, WaveformKind::Ppg).unwrap();
    assert!(matches!(first_derivative_labels(&c), Err(Error::ConstantSignal)));
    let ramp = Waveform::new(vec![0.0, 1.0, 2.0, 3.0], 30.0, WaveformKind::Ppg).unwrap();
    assert!(matches!(first_derivative_labels(&ramp), Err(Error::ConstantSignal)));

    let dt = 1.0 / 30.0;
    let s: Vec<f64> = (0..300).map(|i| (2.0 * PI * i as f64 * dt).sin()).collect();
    let d = first_derivative_labels(&Waveform::new(s, 30.0, WaveformKind::Ppg).unwrap()).unwrap();
    assert_eq!(d.len(), 299);
    let cosine: Vec<f64> = (0..299)
        .map(|i| (2.0 * PI * (i as f64 + 0.5) * dt).cos())
        .collect();
    assert!(pearson(&d.samples, &cosine).unwrap() > 0.999);
}

#[test]
fn integration_undoes_the_derivative() {
    let w = ppg(66.0, 0.8, 20.0, 4);
    let back = integrate_derivative(&first_derivative_labels(&w).unwrap()).unwrap();
    // the running sum of w[t+1] - w[t] is w[t+1] - w[0]; compare on that grid
    let target: Vec<f64> = w.samples[1..].to_vec();
    assert!(pearson(&back.samples, &target).unwrap() > 0.999);
    let m = back.samples.iter().sum::<f64>() / back.len() as f64;
    assert!(m.abs() < 1e-9);

    // a constant derivative integrates to a pure line, which detrends to nothing
    let c = Waveform::new(vec![0.3; 50], 30.0, WaveformKind::Ppg).unwrap();
    assert!(matches!(integrate_derivative(&c), Err(Error::ConstantSignal)));
    let short = Waveform::new(vec![1.0, 2.0], 30.0, WaveformKind::Ppg).unwrap();
    assert!(matches!(integrate_derivative(&short), Err(Error::TooFew { .. })));
}

#[test]
fn integrated_labels_keep_the_fundamental() {
    // strong dicrotic notches put the derivative's peak on the harmonic for
    // some rates; the integral never does
    let bin = 60.0 * 30.0 / (8.0 * 1024.0);
    for (i, hr) in [52.0, 61.0, 74.0, 88.0, 97.0, 110.0].into_iter().enumerate() {
        let w = ppg(hr, 1.0, 30.0, 50 + i as u64);
        let back = integrate_derivative(&first_derivative_labels(&w).unwrap()).unwrap();
        let est = estimate_rate(&back, Band::PULSE).unwrap().bpm;
        assert!((est - hr).abs() <= bin, "{hr}: {est}");
    }
}

#[test]
fn standardize_examples() {
    let w = |v: Vec<f64>| Waveform::new(v, 1.0, WaveformKind::Ppg).unwrap();
    assert_eq!(standardize(&w(vec![1.0, 3.0])).unwrap().samples, vec![-1.0, 1.0]);
    let s = standardize(&w(vec![2.0, 4.0, 6.0])).unwrap().samples;
    let e = 2.0 / (8.0f64 / 3.0).sqrt();
    for (a, b) in s.iter().zip([-e, 0.0, e]) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!((s[0] + 1.2247).abs() < 1e-4);
    let again = standardize(&w(s.clone())).unwrap().samples;
    for (a, b) in s.iter().zip(&again) {
        assert!((a - b).abs() < 1e-9);
    }
    assert!(matches!(standardize(&w(vec![2.0; 5])), Err(Error::ConstantSignal)));
}

proptest! {
    #![proptest_config(common::cases(48))]

    #[test]
    fn jitter_free_rate_is_recovered(hr in 45.5f64..180.0, d in 0.0f64..1.0, seed in any::<u64>()) {
        let w = ppg(hr, d, 20.0, seed);
        let est = estimate_rate(&w, Band::PULSE).unwrap();
        let bin = 60.0 * 30.0 / (8.0 * 1024.0);
        prop_assert!((est.bpm - hr).abs() <= bin, "{} vs {}", est.bpm, hr);
    }

    #[test]
    fn labels_ignore_affine_changes(seed in any::<u64>(), a in 0.01f64..100.0, b in -50.0f64..50.0) {
        let w = ppg(72.0, 0.4, 6.0, seed);
        let base = first_derivative_labels(&w).unwrap();
        let moved = Waveform::new(w.samples.iter().map(|v| a * v + b).collect(), 30.0, WaveformKind::Ppg).unwrap();
        let std = standardize(&w).unwrap();
        for other in [first_derivative_labels(&moved).unwrap(), first_derivative_labels(&std).unwrap()] {
            for (x, y) in base.samples.iter().zip(&other.samples) {
                prop_assert!((x - y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn standardized_moments(v in prop::collection::vec(-1e3f64..1e3, 2..200)) {
        let w = Waveform::new(v, 30.0, WaveformKind::Ppg).unwrap();
        if let Ok(s) = standardize(&w) {
            let n = s.len() as f64;
            let m = s.samples.iter().sum::<f64>() / n;
            let sd = (s.samples.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt();
            prop_assert!(m.abs() < 1e-9);
            prop_assert!((sd - 1.0).abs() < 1e-6);
        }
    }
}
