use super::*;
use crate::waveform::{BasebandFrame, Protocol};

fn tone_frame(i_rail: bool, n: usize, w: f64, fs: f64) -> BasebandFrame {
    let samples = (0..n)
        .map(|k| {
            let v = (w * k as f64).sin() as f32;
            if i_rail {
                Complex32::new(v, 0.0)
            } else {
                Complex32::new(0.0, v)
            }
        })
        .collect();
    BasebandFrame {
        samples,
        sample_rate_hz: fs,
        reference_symbols: vec![],
        protocol: Protocol::DsssB,
    }
}

fn rms(it: impl Iterator<Item = f64>) -> f64 {
    let (mut acc, mut n) = (0.0, 0usize);
    for v in it {
        acc += v * v;
        n += 1;
    }
    (acc / n as f64).sqrt()
}

fn test_profile() -> DeviceProfile {
    sample_profiles(3, &PopulationConfig::default(), 7)
        .unwrap()
        .remove(1)
}

#[test]
fn warmup_limit_is_stable_value() {
    let profile = test_profile();
    // The settling component decays to the stable value exactly; the
    // frequency references keep their bounded residual wander on top.
    assert!((profile.warmup.cfo_hz.value(1e6) - profile.warmup.cfo_hz.stable).abs() < 1e-6);
    assert!((profile.warmup.sce_ppm.value(1e6) - profile.warmup.sce_ppm.stable).abs() < 1e-9);
    let far = impairment_at(&profile, 1e6).unwrap();
    let wander_bound: f64 = profile
        .cfo_wander
        .components
        .iter()
        .map(|&(a, _, _)| a.abs())
        .sum();
    assert!((far.cfo_hz - profile.warmup.cfo_hz.stable).abs() <= wander_bound + 1e-6);
    assert!((far.gain_i - profile.warmup.gain_i.stable).abs() < 1e-12);
}

#[test]
fn wander_is_day_invariant_and_zero_mean() {
    let profile = test_profile();
    // Same operating time, any day: identical state by construction.
    let a = impairment_at(&profile, 17.25).unwrap();
    let b = impairment_at(&profile, 17.25).unwrap();
    assert_eq!(a, b);
    // The wander averages out over a long horizon.
    let mean: f64 = (0..10_000)
        .map(|i| profile.cfo_wander.value(i as f64 * 0.173))
        .sum::<f64>()
        / 10_000.0;
    let rms: f64 = ((0..10_000)
        .map(|i| profile.cfo_wander.value(i as f64 * 0.173).powi(2))
        .sum::<f64>()
        / 10_000.0)
        .sqrt();
    assert!(mean.abs() < 0.2 * rms, "mean {mean}, rms {rms}");
    assert!(rms > 100.0, "cfo wander rms unexpectedly small: {rms}");
}

#[test]
fn warmup_zero_delta_is_constant() {
    let p = WarmupParam::constant(-3.25);
    for t in [0.0, 0.5, 5.0, 30.0] {
        assert_eq!(p.value(t), -3.25);
    }
}

#[test]
fn negative_time_is_rejected() {
    let profile = test_profile();
    assert!(matches!(
        impairment_at(&profile, -0.1),
        Err(ImpairError::NegativeTime(_))
    ));
}

#[test]
fn cfo_trajectory_calibrated_at_minute_one() {
    // Stable -12000 Hz; delta chosen so value(1 min) = 2300 Hz with a fitted
    // tau of 3 minutes. By minute 12 the device must sit within 800 Hz of
    // stable.
    let tau = 3.0f64;
    let delta = (2300.0 - (-12000.0)) * (1.0 / tau).exp();
    let p = WarmupParam {
        stable: -12000.0,
        delta,
        tau_minutes: tau,
    };
    assert!((p.value(1.0) - 2300.0).abs() < 1e-6);
    let v12 = p.value(12.0);
    assert!(
        (-12000.0..=-11200.0).contains(&v12),
        "value at 12 min: {v12}"
    );
}

#[test]
fn warmup_excursion_strictly_shrinks() {
    let profile = test_profile();
    let params = [
        profile.warmup.cfo_hz,
        profile.warmup.sce_ppm,
        profile.warmup.dc_i,
        profile.warmup.quad_skew_deg,
    ];
    for p in params {
        if p.delta == 0.0 {
            continue;
        }
        let mut prev = f64::INFINITY;
        for step in 0..60 {
            let t = step as f64 * 0.5;
            let gap = (p.value(t) - p.stable).abs();
            assert!(gap < prev, "excursion not shrinking at t={t}");
            prev = gap;
        }
    }
}

#[test]
fn stable_by_twelve_minutes_for_default_tau_bounds() {
    // tau <= 4 min implies value(12) within 5% of the full excursion.
    let cfg = PopulationConfig::default();
    assert!(cfg.tau_minutes.hi <= 4.0 + 1e-12);
    for profile in sample_profiles(6, &cfg, 3).unwrap() {
        let p = profile.warmup.cfo_hz;
        let gap = (p.value(12.0) - p.stable).abs();
        assert!(gap <= 0.05 * p.delta.abs() + 1e-12);
    }
}

#[test]
fn identity_state_is_bitwise_noop() {
    let frame = tone_frame(true, 129, 0.31, 11e6);
    let out = apply_impairments(&frame, &ImpairmentState::identity()).unwrap();
    assert_eq!(out.samples, frame.samples);
}

#[test]
fn cfo_only_rotates_ninety_degrees_at_quarter_period() {
    let fs = 11e6;
    let f = 27_500.0; // fs / (4 f) = 100 samples
    let mut frame = tone_frame(true, 256, 0.17, fs);
    frame.samples[100] = Complex32::new(0.8, -0.3);
    let mut state = ImpairmentState::identity();
    state.cfo_hz = f;
    let out = apply_impairments(&frame, &state).unwrap();
    let rotated = out.samples[100];
    let want = Complex32::new(0.3, 0.8); // input * e^{j pi/2}
    assert!((rotated - want).norm() < 1e-4, "{rotated} vs {want}");
}

#[test]
fn cfo_only_preserves_magnitude_pointwise() {
    let frame = tone_frame(false, 512, 0.21, 11e6);
    let mut state = ImpairmentState::identity();
    state.cfo_hz = -9_000.0;
    let out = apply_impairments(&frame, &state).unwrap();
    for (a, b) in frame.samples.iter().zip(&out.samples) {
        assert!((a.norm() - b.norm()).abs() < 1e-5);
    }
}

#[test]
fn rail_gains_scale_the_right_rail() {
    // Brute-force oracle on 64-sample tones: RMS amplitude ratio per rail.
    let mut state = ImpairmentState::identity();
    state.gain_i = 1.122; // 1 dB imbalance
    let i_tone = tone_frame(true, 64, 0.29, 11e6);
    let out = apply_impairments(&i_tone, &state).unwrap();
    let in_rms = rms(i_tone.samples.iter().map(|s| f64::from(s.re)));
    let out_rms = rms(out.samples.iter().map(|s| f64::from(s.re)));
    assert!((out_rms / in_rms - 1.122).abs() < 1e-6);

    let q_tone = tone_frame(false, 64, 0.29, 11e6);
    let out = apply_impairments(&q_tone, &state).unwrap();
    let in_rms = rms(q_tone.samples.iter().map(|s| f64::from(s.im)));
    let out_rms = rms(out.samples.iter().map(|s| f64::from(s.im)));
    assert!((out_rms / in_rms - 1.0).abs() < 1e-6);
}

#[test]
fn non_finite_parameters_are_rejected() {
    let frame = tone_frame(true, 16, 0.2, 11e6);
    let mut state = ImpairmentState::identity();
    state.cfo_hz = f64::NAN;
    assert!(apply_impairments(&frame, &state).is_err());
}

#[test]
fn sce_changes_length_by_at_most_one_sample() {
    let frame = tone_frame(true, 2048, 0.13, 11e6);
    let mut state = ImpairmentState::identity();
    state.sce_ppm = 25.0;
    let out = apply_impairments(&frame, &state).unwrap();
    assert!(frame.samples.len() - out.samples.len() <= 1);
}

#[test]
fn wired_infinite_snr_channel_is_identity() {
    let frame = tone_frame(true, 64, 0.4, 11e6);
    let ch = ChannelState::wired(f64::INFINITY, 0.0, 0, 1);
    let out = apply_channel(&frame, &ch, 99).unwrap();
    assert_eq!(out.samples, frame.samples);
}

#[test]
fn awgn_hits_requested_snr() {
    // Empirical SNR oracle: noise = output - input, SNR = P_sig / P_noise.
    let n = 20_000;
    let frame = tone_frame(true, n, 0.37, 11e6);
    let ch = ChannelState::wired(10.0, 0.0, 0, 5);
    let out = apply_channel(&frame, &ch, 1234).unwrap();
    let p_sig: f64 = frame.samples.iter().map(|s| f64::from(s.norm_sqr())).sum::<f64>() / n as f64;
    let p_noise: f64 = frame
        .samples
        .iter()
        .zip(&out.samples)
        .map(|(a, b)| f64::from((b - a).norm_sqr()))
        .sum::<f64>()
        / n as f64;
    let snr_db = 10.0 * (p_sig / p_noise).log10();
    assert!((snr_db - 10.0).abs() < 0.5, "measured {snr_db} dB");
}

#[test]
fn unit_energy_taps_preserve_mean_power() {
    // Power preservation under unit-energy taps holds for spectrally flat
    // inputs, so drive the channel with white samples.
    let mut rng = ChaCha12Rng::seed_from_u64(8);
    let samples: Vec<Complex32> = (0..16384)
        .map(|_| Complex32::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    let frame = BasebandFrame {
        samples,
        sample_rate_hz: 20e6,
        reference_symbols: vec![],
        protocol: Protocol::OfdmN,
    };
    let ch = ChannelState::wireless(f64::INFINITY, 0.0, 1, 42);
    ch.validate().unwrap();
    let out = apply_channel(&frame, &ch, 0).unwrap();
    let p_in: f64 =
        frame.samples.iter().map(|s| f64::from(s.norm_sqr())).sum::<f64>() / frame.samples.len() as f64;
    let p_out: f64 =
        out.samples.iter().map(|s| f64::from(s.norm_sqr())).sum::<f64>() / out.samples.len() as f64;
    assert!((p_out / p_in - 1.0).abs() < 0.05, "power ratio {}", p_out / p_in);
}

#[test]
fn wired_finite_snr_preserves_signal_power_within_one_percent() {
    let n = 50_000;
    let frame = tone_frame(true, n, 0.19, 11e6);
    let ch = ChannelState::wired(40.0, 0.0, 0, 3);
    let out = apply_channel(&frame, &ch, 77).unwrap();
    let p_in: f64 = frame.samples.iter().map(|s| f64::from(s.norm_sqr())).sum::<f64>() / n as f64;
    let p_out: f64 = out.samples.iter().map(|s| f64::from(s.norm_sqr())).sum::<f64>() / n as f64;
    // Expected excess is exactly the injected noise power (1e-4 of signal).
    assert!((p_out - p_in).abs() / p_in < 0.01);
}

#[test]
fn profiles_are_deterministic_and_separated() {
    let cfg = PopulationConfig::default();
    let a = sample_profiles(15, &cfg, 11).unwrap();
    let b = sample_profiles(15, &cfg, 11).unwrap();
    assert_eq!(a, b);
    // Enumerate all pairs: stable CFO gaps at least the configured minimum.
    for i in 0..a.len() {
        for j in 0..i {
            let gap = (a[i].warmup.cfo_hz.stable - a[j].warmup.cfo_hz.stable).abs();
            assert!(gap >= cfg.min_cfo_separation_hz, "pair ({i},{j}): {gap}");
        }
    }
    // Day independence: the profile carries no day state, so two evaluations
    // at the same t agree regardless of when they happen.
    let s1 = impairment_at(&a[0], 20.0).unwrap();
    let s2 = impairment_at(&a[0], 20.0).unwrap();
    assert_eq!(s1, s2);
}

#[test]
fn infeasible_separation_errors_out() {
    let mut cfg = PopulationConfig::default();
    cfg.min_cfo_separation_hz = 2.0 * cfg.cfo_hz.width();
    match sample_profiles(2, &cfg, 1) {
        Err(ImpairError::SeparationInfeasible { .. }) => {}
        other => panic!("expected separation error, got {other:?}"),
    }
}

#[test]
fn gain_imbalance_split_keeps_product_near_unity() {
    for profile in sample_profiles(8, &PopulationConfig::default(), 21).unwrap() {
        let prod = profile.warmup.gain_i.stable * profile.warmup.gain_q.stable;
        assert!((prod - 1.0).abs() < 1e-9);
    }
}
