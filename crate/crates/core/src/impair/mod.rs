//! Causal hardware impairments, their warm-up evolution, and the channel.
//!
//! Each device owns a set of stable impairment values plus a warm-up model:
//! every parameter settles exponentially from `stable + delta` at power-on
//! toward `stable` with its own time constant. Impairments are applied to
//! ideal frames in a fixed transmit-chain order; the channel adds FIR
//! multipath (wireless only), a receiver gain offset and AWGN.

mod dsp;

pub use dsp::{frac_delay, interp_sample, resample_rate};

use crate::derive_seed;
use num_complex::Complex32;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImpairError {
    #[error("time since power-on must be >= 0, got {0}")]
    NegativeTime(f64),
    #[error("non-finite impairment parameter: {0}")]
    NonFiniteParameter(&'static str),
    #[error("invalid impairment state: {0}")]
    InvalidState(String),
    #[error(
        "cannot satisfy CFO separation of {separation_hz} Hz for device {device}: \
         {reason}"
    )]
    SeparationInfeasible {
        device: usize,
        separation_hz: f64,
        reason: String,
    },
    #[error("population needs at least 2 devices, got {0}")]
    TooFewDevices(usize),
    #[error("invalid channel: {0}")]
    InvalidChannel(String),
}

pub type Result<T> = std::result::Result<T, ImpairError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    Wired,
    Wireless,
}

impl Scenario {
    pub fn short_name(&self) -> &'static str {
        match self {
            Scenario::Wired => "wired",
            Scenario::Wireless => "wireless",
        }
    }
}

/// Instantaneous causal impairment values for one device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpairmentState {
    pub cfo_hz: f64,
    pub sce_ppm: f64,
    /// Per-rail linear gains (> 0).
    pub gain_i: f64,
    pub gain_q: f64,
    /// Quadrature error theta - 90 in degrees, |value| < 45.
    pub quad_skew_deg: f64,
    /// Additive DC per rail, linear, relative to unit signal power.
    pub dc_i: f64,
    pub dc_q: f64,
    /// I-vs-Q fractional-sample delay (t_I - t_Q), |value| < 2 samples.
    pub timing_skew_samples: f64,
    pub pa_gain_db: f64,
    /// Third-order compression coefficient: y ~ x * (1 - a |x|^2).
    pub pa_am_am: f64,
    /// Phase rotation in degrees per unit input power (AM-PM).
    pub pa_am_pm_deg: f64,
    /// Per-sample phase random-walk step, degrees.
    pub phase_noise_std_deg: f64,
    /// Seed for the phase random walk (derived from profile seed and time).
    pub phase_noise_seed: u64,
}

impl ImpairmentState {
    pub fn identity() -> Self {
        ImpairmentState {
            cfo_hz: 0.0,
            sce_ppm: 0.0,
            gain_i: 1.0,
            gain_q: 1.0,
            quad_skew_deg: 0.0,
            dc_i: 0.0,
            dc_q: 0.0,
            timing_skew_samples: 0.0,
            pa_gain_db: 0.0,
            pa_am_am: 0.0,
            pa_am_pm_deg: 0.0,
            phase_noise_std_deg: 0.0,
            phase_noise_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields: [(&'static str, f64); 12] = [
            ("cfo_hz", self.cfo_hz),
            ("sce_ppm", self.sce_ppm),
            ("gain_i", self.gain_i),
            ("gain_q", self.gain_q),
            ("quad_skew_deg", self.quad_skew_deg),
            ("dc_i", self.dc_i),
            ("dc_q", self.dc_q),
            ("timing_skew_samples", self.timing_skew_samples),
            ("pa_gain_db", self.pa_gain_db),
            ("pa_am_am", self.pa_am_am),
            ("pa_am_pm_deg", self.pa_am_pm_deg),
            ("phase_noise_std_deg", self.phase_noise_std_deg),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(ImpairError::NonFiniteParameter(name));
            }
        }
        if self.gain_i <= 0.0 || self.gain_q <= 0.0 {
            return Err(ImpairError::InvalidState("rail gains must be > 0".into()));
        }
        if self.quad_skew_deg.abs() >= 45.0 {
            return Err(ImpairError::InvalidState(format!(
                "quadrature skew {} out of range",
                self.quad_skew_deg
            )));
        }
        if self.timing_skew_samples.abs() >= 2.0 {
            return Err(ImpairError::InvalidState(format!(
                "timing skew {} out of range",
                self.timing_skew_samples
            )));
        }
        Ok(())
    }
}

/// One exponentially settling parameter: value(t) = stable + delta*exp(-t/tau).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WarmupParam {
    pub stable: f64,
    pub delta: f64,
    pub tau_minutes: f64,
}

impl WarmupParam {
    pub fn constant(stable: f64) -> Self {
        WarmupParam {
            stable,
            delta: 0.0,
            tau_minutes: 1.0,
        }
    }

    pub fn value(&self, t_minutes: f64) -> f64 {
        self.stable + self.delta * (-t_minutes / self.tau_minutes).exp()
    }
}

/// Slow oscillator wander around the settled value: a fixed sum of a few
/// sinusoids in operating time. Deterministic per device and independent of
/// the day, so a device looks the same at minute t of every session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WanderModel {
    /// (amplitude, period_minutes, phase_radians) triples.
    pub components: Vec<(f64, f64, f64)>,
}

impl WanderModel {
    pub fn none() -> Self {
        WanderModel { components: vec![] }
    }

    /// Draw components so the wander has roughly the requested RMS.
    pub fn draw<R: Rng>(rng: &mut R, rms: f64) -> Self {
        if rms <= 0.0 {
            return Self::none();
        }
        let n = 4;
        // Per-sinusoid RMS is a/sqrt(2); n equal components sum to rms.
        let a = rms * (2.0 / n as f64).sqrt();
        let components = (0..n)
            .map(|k| {
                let period = [3.1, 5.7, 9.3, 16.9][k] * rng.gen_range(0.8..1.25);
                let amp = a * rng.gen_range(0.7..1.3);
                let phase = rng.gen_range(0.0..std::f64::consts::TAU);
                (amp, period, phase)
            })
            .collect();
        WanderModel { components }
    }

    pub fn value(&self, t_minutes: f64) -> f64 {
        self.components
            .iter()
            .map(|&(a, period, phase)| a * (std::f64::consts::TAU * t_minutes / period + phase).sin())
            .sum()
    }
}

/// Warm-up model over every impairment parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmupModel {
    pub cfo_hz: WarmupParam,
    pub sce_ppm: WarmupParam,
    pub gain_i: WarmupParam,
    pub gain_q: WarmupParam,
    pub quad_skew_deg: WarmupParam,
    pub dc_i: WarmupParam,
    pub dc_q: WarmupParam,
    pub timing_skew_samples: WarmupParam,
    pub pa_gain_db: WarmupParam,
    pub pa_am_am: WarmupParam,
    pub pa_am_pm_deg: WarmupParam,
    pub phase_noise_std_deg: WarmupParam,
}

/// A device's fingerprint ground truth: stable impairments plus warm-up
/// dynamics and residual oscillator wander. Day-independent by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub device_id: u32,
    pub warmup: WarmupModel,
    /// Residual thermal wander of the frequency/clock references on top of
    /// the exponential settling.
    pub cfo_wander: WanderModel,
    pub sce_wander: WanderModel,
    pub seed: u64,
}

/// Evaluate the device's impairment state at `t_minutes` after power-on.
pub fn impairment_at(profile: &DeviceProfile, t_minutes: f64) -> Result<ImpairmentState> {
    if !(t_minutes >= 0.0) {
        return Err(ImpairError::NegativeTime(t_minutes));
    }
    let w = &profile.warmup;
    let state = ImpairmentState {
        cfo_hz: w.cfo_hz.value(t_minutes) + profile.cfo_wander.value(t_minutes),
        sce_ppm: w.sce_ppm.value(t_minutes) + profile.sce_wander.value(t_minutes),
        gain_i: w.gain_i.value(t_minutes),
        gain_q: w.gain_q.value(t_minutes),
        quad_skew_deg: w.quad_skew_deg.value(t_minutes),
        dc_i: w.dc_i.value(t_minutes),
        dc_q: w.dc_q.value(t_minutes),
        timing_skew_samples: w.timing_skew_samples.value(t_minutes),
        pa_gain_db: w.pa_gain_db.value(t_minutes),
        pa_am_am: w.pa_am_am.value(t_minutes),
        pa_am_pm_deg: w.pa_am_pm_deg.value(t_minutes),
        phase_noise_std_deg: w.phase_noise_std_deg.value(t_minutes).max(0.0),
        phase_noise_seed: derive_seed(profile.seed, "phase-walk", &[t_minutes.to_bits()]),
    };
    state.validate()?;
    Ok(state)
}

use crate::waveform::BasebandFrame;

/// Apply the device impairments to a frame, in transmit-chain order:
/// PA nonlinearity, IQ rail distortions (gains, quadrature skew, I-rail
/// timing skew, DC offsets), CFO rotation, sample-clock resampling, then the
/// per-sample phase random walk.
///
/// The sample count may change by up to one sample when `sce_ppm != 0`.
/// An identity state returns the input bit-for-bit.
pub fn apply_impairments(frame: &BasebandFrame, state: &ImpairmentState) -> Result<BasebandFrame> {
    state.validate()?;
    let fs = frame.sample_rate_hz;
    let mut i_rail: Vec<f64> = frame.samples.iter().map(|s| f64::from(s.re)).collect();
    let mut q_rail: Vec<f64> = frame.samples.iter().map(|s| f64::from(s.im)).collect();

    // PA: y = g * x * (1 - a |x|^2) * exp(j phi |x|^2)
    let g = 10f64.powf(state.pa_gain_db / 20.0);
    let phi_pm = state.pa_am_pm_deg.to_radians();
    if g != 1.0 || state.pa_am_am != 0.0 || phi_pm != 0.0 {
        for (iv, qv) in i_rail.iter_mut().zip(q_rail.iter_mut()) {
            let p = *iv * *iv + *qv * *qv;
            let amp = g * (1.0 - state.pa_am_am * p);
            let rot = phi_pm * p;
            let (s, c) = rot.sin_cos();
            let re = amp * (*iv * c - *qv * s);
            let im = amp * (*iv * s + *qv * c);
            *iv = re;
            *qv = im;
        }
    }

    // IQ rail distortions. Timing skew delays the I rail by t_I - t_Q.
    if state.timing_skew_samples != 0.0 {
        i_rail = frac_delay(&i_rail, state.timing_skew_samples, 16);
    }
    let apply_rails = state.gain_i != 1.0
        || state.gain_q != 1.0
        || state.quad_skew_deg != 0.0
        || state.dc_i != 0.0
        || state.dc_q != 0.0;
    if apply_rails {
        let (sin_skew, cos_skew) = state.quad_skew_deg.to_radians().sin_cos();
        for (iv, qv) in i_rail.iter_mut().zip(q_rail.iter_mut()) {
            let gi = state.gain_i * *iv;
            let gq = state.gain_q * *qv;
            // Q basis rotated by the skew: y = I + j Q e^{j skew}.
            *iv = gi - gq * sin_skew + state.dc_i;
            *qv = gq * cos_skew + state.dc_q;
        }
    }

    // CFO rotation at the frame's sample rate.
    if state.cfo_hz != 0.0 {
        let w = 2.0 * std::f64::consts::PI * state.cfo_hz / fs;
        for (n, (iv, qv)) in i_rail.iter_mut().zip(q_rail.iter_mut()).enumerate() {
            let (s, c) = (w * n as f64).sin_cos();
            let re = *iv * c - *qv * s;
            let im = *iv * s + *qv * c;
            *iv = re;
            *qv = im;
        }
    }

    // Sample clock error: the device clock runs fast by +eps, so the
    // received waveform is the ideal one evaluated at n*(1+eps).
    if state.sce_ppm != 0.0 {
        let rate = 1.0 + state.sce_ppm * 1e-6;
        i_rail = resample_rate(&i_rail, rate, 16);
        q_rail = resample_rate(&q_rail, rate, 16);
    }

    // Per-sample phase random walk.
    if state.phase_noise_std_deg > 0.0 {
        let mut rng = ChaCha12Rng::seed_from_u64(state.phase_noise_seed);
        let sigma = state.phase_noise_std_deg.to_radians();
        let mut phase = 0.0f64;
        for (iv, qv) in i_rail.iter_mut().zip(q_rail.iter_mut()) {
            phase += sigma * gaussian(&mut rng);
            let (s, c) = phase.sin_cos();
            let re = *iv * c - *qv * s;
            let im = *iv * s + *qv * c;
            *iv = re;
            *qv = im;
        }
    }

    let samples: Vec<Complex32> = i_rail
        .iter()
        .zip(&q_rail)
        .map(|(&i, &q)| Complex32::new(i as f32, q as f32))
        .collect();
    Ok(BasebandFrame {
        samples,
        sample_rate_hz: fs,
        reference_symbols: frame.reference_symbols.clone(),
        protocol: frame.protocol,
    })
}

/// Wired or wireless channel state for one (device, day) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelState {
    pub scenario: Scenario,
    pub taps: Vec<(f32, f32)>,
    /// Signal-to-noise ratio in dB; `f64::INFINITY` disables noise.
    pub snr_db: f64,
    /// Receiver gain offset for the day, dB.
    pub rx_gain_db: f64,
    pub day_id: u32,
    pub seed: u64,
}

impl ChannelState {
    pub fn wired(snr_db: f64, rx_gain_db: f64, day_id: u32, seed: u64) -> Self {
        ChannelState {
            scenario: Scenario::Wired,
            taps: vec![(1.0, 0.0)],
            snr_db,
            rx_gain_db,
            day_id,
            seed,
        }
    }

    /// Draw a 2-5 tap unit-energy multipath response, first tap dominant.
    pub fn wireless(snr_db: f64, rx_gain_db: f64, day_id: u32, seed: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let n_taps = rng.gen_range(2..=5usize);
        let mut taps = vec![(1.0f32, 0.0f32)];
        for k in 1..n_taps {
            let mag = 0.45f64.powi(k as i32) * rng.gen_range(0.3..1.0);
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            taps.push(((mag * phase.cos()) as f32, (mag * phase.sin()) as f32));
        }
        let energy: f64 = taps
            .iter()
            .map(|&(re, im)| f64::from(re) * f64::from(re) + f64::from(im) * f64::from(im))
            .sum();
        let scale = (1.0 / energy).sqrt() as f32;
        for t in &mut taps {
            t.0 *= scale;
            t.1 *= scale;
        }
        ChannelState {
            scenario: Scenario::Wireless,
            taps,
            snr_db,
            rx_gain_db,
            day_id,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.scenario {
            Scenario::Wired => {
                if self.taps != vec![(1.0, 0.0)] {
                    return Err(ImpairError::InvalidChannel(
                        "wired channel must have the single tap 1+0j".into(),
                    ));
                }
            }
            Scenario::Wireless => {
                if !(2..=5).contains(&self.taps.len()) {
                    return Err(ImpairError::InvalidChannel(format!(
                        "wireless channel needs 2-5 taps, got {}",
                        self.taps.len()
                    )));
                }
                let energy: f64 = self
                    .taps
                    .iter()
                    .map(|&(re, im)| f64::from(re) * f64::from(re) + f64::from(im) * f64::from(im))
                    .sum();
                if (energy - 1.0).abs() > 1e-3 {
                    return Err(ImpairError::InvalidChannel(format!(
                        "wireless taps must have unit energy, got {energy}"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller; the log argument is kept away from zero.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Convolve with the channel taps, apply the receiver gain and add complex
/// AWGN at `snr_db` relative to the post-tap signal power. Deterministic
/// given `noise_seed`.
pub fn apply_channel(
    frame: &BasebandFrame,
    ch: &ChannelState,
    noise_seed: u64,
) -> Result<BasebandFrame> {
    ch.validate()?;
    let identity_taps = ch.taps == vec![(1.0, 0.0)];
    if identity_taps && ch.snr_db.is_infinite() && ch.rx_gain_db == 0.0 {
        return Ok(frame.clone());
    }
    let mut out: Vec<(f64, f64)> = if identity_taps {
        frame
            .samples
            .iter()
            .map(|s| (f64::from(s.re), f64::from(s.im)))
            .collect()
    } else {
        let x: Vec<(f64, f64)> = frame
            .samples
            .iter()
            .map(|s| (f64::from(s.re), f64::from(s.im)))
            .collect();
        let taps: Vec<(f64, f64)> = ch
            .taps
            .iter()
            .map(|&(re, im)| (f64::from(re), f64::from(im)))
            .collect();
        let mut y = vec![(0.0, 0.0); x.len()];
        for (n, yv) in y.iter_mut().enumerate() {
            let mut acc = (0.0, 0.0);
            for (k, &(tr, ti)) in taps.iter().enumerate() {
                if n >= k {
                    let (xr, xi) = x[n - k];
                    acc.0 += tr * xr - ti * xi;
                    acc.1 += tr * xi + ti * xr;
                }
            }
            *yv = acc;
        }
        y
    };

    if ch.rx_gain_db != 0.0 {
        let g = 10f64.powf(ch.rx_gain_db / 20.0);
        for v in &mut out {
            v.0 *= g;
            v.1 *= g;
        }
    }

    if ch.snr_db.is_finite() {
        let p_sig: f64 =
            out.iter().map(|&(re, im)| re * re + im * im).sum::<f64>() / out.len() as f64;
        let p_noise = p_sig / 10f64.powf(ch.snr_db / 10.0);
        let sigma_rail = (p_noise / 2.0).sqrt();
        let mut rng = ChaCha12Rng::seed_from_u64(noise_seed);
        for v in &mut out {
            v.0 += sigma_rail * gaussian(&mut rng);
            v.1 += sigma_rail * gaussian(&mut rng);
        }
    }

    Ok(BasebandFrame {
        samples: out
            .into_iter()
            .map(|(re, im)| Complex32::new(re as f32, im as f32))
            .collect(),
        sample_rate_hz: frame.sample_rate_hz,
        reference_symbols: frame.reference_symbols.clone(),
        protocol: frame.protocol,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamRange {
    pub lo: f64,
    pub hi: f64,
}

impl ParamRange {
    pub fn new(lo: f64, hi: f64) -> Self {
        ParamRange { lo, hi }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.width() == 0.0 {
            self.lo
        } else {
            rng.gen_range(self.lo..self.hi)
        }
    }
}

/// Population draw law for device profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationConfig {
    pub cfo_hz: ParamRange,
    pub sce_ppm: ParamRange,
    pub gain_imbalance_db: ParamRange,
    pub quad_skew_deg: ParamRange,
    pub dc_per_rail: ParamRange,
    pub timing_skew_samples: ParamRange,
    pub pa_gain_db: ParamRange,
    pub pa_am_am: ParamRange,
    pub pa_am_pm_deg: ParamRange,
    pub phase_noise_std_deg: ParamRange,
    /// Settling time constants, minutes.
    pub tau_minutes: ParamRange,
    /// Warm-up excursion as a fraction of the parameter range width, for the
    /// fast movers (CFO, SCE).
    pub warmup_frac_fast: ParamRange,
    /// Same for everything else.
    pub warmup_frac_slow: ParamRange,
    /// RMS of the residual frequency/clock wander after settling.
    pub cfo_wander_hz: ParamRange,
    pub sce_wander_ppm: ParamRange,
    pub min_cfo_separation_hz: f64,
    pub max_retries: usize,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        PopulationConfig {
            cfo_hz: ParamRange::new(-15e3, 15e3),
            sce_ppm: ParamRange::new(-25.0, 25.0),
            gain_imbalance_db: ParamRange::new(-1.0, 1.0),
            quad_skew_deg: ParamRange::new(-3.0, 3.0),
            dc_per_rail: ParamRange::new(-0.03, 0.03),
            timing_skew_samples: ParamRange::new(-0.3, 0.3),
            pa_gain_db: ParamRange::new(-0.15, 0.15),
            pa_am_am: ParamRange::new(0.0, 0.05),
            pa_am_pm_deg: ParamRange::new(0.0, 5.0),
            phase_noise_std_deg: ParamRange::new(0.0, 0.01),
            tau_minutes: ParamRange::new(1.0, 4.0),
            warmup_frac_fast: ParamRange::new(0.5, 1.0),
            warmup_frac_slow: ParamRange::new(0.0, 0.08),
            cfo_wander_hz: ParamRange::new(2000.0, 3500.0),
            sce_wander_ppm: ParamRange::new(2.0, 3.5),
            min_cfo_separation_hz: 500.0,
            max_retries: 1000,
        }
    }
}

/// Draw a device population. Stable CFOs are re-drawn per device until every
/// pairwise gap is at least the configured separation.
pub fn sample_profiles(
    n_devices: usize,
    config: &PopulationConfig,
    seed: u64,
) -> Result<Vec<DeviceProfile>> {
    if n_devices < 2 {
        return Err(ImpairError::TooFewDevices(n_devices));
    }
    let sep = config.min_cfo_separation_hz;
    if (n_devices as f64 - 1.0) * sep > config.cfo_hz.width() {
        return Err(ImpairError::SeparationInfeasible {
            device: 0,
            separation_hz: sep,
            reason: format!(
                "{n_devices} devices cannot fit in a {} Hz range",
                config.cfo_hz.width()
            ),
        });
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut cfos: Vec<f64> = Vec::with_capacity(n_devices);
    for d in 0..n_devices {
        let mut attempts = 0;
        let cfo = loop {
            let candidate = config.cfo_hz.draw(&mut rng);
            if cfos.iter().all(|&c| (c - candidate).abs() >= sep) {
                break candidate;
            }
            attempts += 1;
            if attempts > config.max_retries {
                return Err(ImpairError::SeparationInfeasible {
                    device: d,
                    separation_hz: sep,
                    reason: format!("gave up after {} retries", config.max_retries),
                });
            }
        };
        cfos.push(cfo);
    }

    fn warmup_param<R: Rng>(
        rng: &mut R,
        config: &PopulationConfig,
        stable: f64,
        width: f64,
        fast: bool,
    ) -> WarmupParam {
        // Fast movers (CFO, SCE) drift in a common direction across the
        // population: thermal settling pushes every oscillator the same
        // way, so cold values sit above stable and decay down. Slow
        // parameters wander with random sign.
        let (frac, sign) = if fast {
            (config.warmup_frac_fast.draw(rng), 1.0)
        } else {
            (
                config.warmup_frac_slow.draw(rng),
                if rng.gen_bool(0.5) { 1.0 } else { -1.0 },
            )
        };
        WarmupParam {
            stable,
            delta: sign * frac * width,
            tau_minutes: config.tau_minutes.draw(rng),
        }
    }

    let mut profiles = Vec::with_capacity(n_devices);
    for (d, &cfo) in cfos.iter().enumerate() {
        let rng = &mut rng;
        let cfo_p = warmup_param(rng, config, cfo, config.cfo_hz.width(), true);
        let sce_stable = config.sce_ppm.draw(rng);
        let sce_p = warmup_param(rng, config, sce_stable, config.sce_ppm.width(), true);
        let imb_db = config.gain_imbalance_db.draw(rng);
        // Split the imbalance across both rails so total power stays put.
        let gain_i_stable = 10f64.powf(imb_db / 40.0);
        let gain_q_stable = 10f64.powf(-imb_db / 40.0);
        let gain_width = 10f64.powf(config.gain_imbalance_db.hi / 40.0)
            - 10f64.powf(config.gain_imbalance_db.lo / 40.0);
        let gain_i_p = warmup_param(rng, config, gain_i_stable, gain_width, false);
        let gain_q_p = warmup_param(rng, config, gain_q_stable, gain_width, false);
        let quad_stable = config.quad_skew_deg.draw(rng);
        let quad_p = warmup_param(rng, config, quad_stable, config.quad_skew_deg.width(), false);
        let dc_i_stable = config.dc_per_rail.draw(rng);
        let dc_i_p = warmup_param(rng, config, dc_i_stable, config.dc_per_rail.width(), false);
        let dc_q_stable = config.dc_per_rail.draw(rng);
        let dc_q_p = warmup_param(rng, config, dc_q_stable, config.dc_per_rail.width(), false);
        let skew_stable = config.timing_skew_samples.draw(rng);
        let skew_p = warmup_param(
            rng,
            config,
            skew_stable,
            config.timing_skew_samples.width(),
            false,
        );
        let pa_gain_stable = config.pa_gain_db.draw(rng);
        let pa_gain_p = warmup_param(rng, config, pa_gain_stable, config.pa_gain_db.width(), false);
        let pa_am_am_stable = config.pa_am_am.draw(rng);
        let pa_am_am_p = warmup_param(rng, config, pa_am_am_stable, config.pa_am_am.width(), false);
        let pa_am_pm_stable = config.pa_am_pm_deg.draw(rng);
        let pa_am_pm_p =
            warmup_param(rng, config, pa_am_pm_stable, config.pa_am_pm_deg.width(), false);
        // Noise level held constant through warm-up.
        let phase_noise_p = WarmupParam::constant(config.phase_noise_std_deg.draw(rng));
        let cfo_wander_rms = config.cfo_wander_hz.draw(rng);
        let cfo_wander = WanderModel::draw(rng, cfo_wander_rms);
        let sce_wander_rms = config.sce_wander_ppm.draw(rng);
        let sce_wander = WanderModel::draw(rng, sce_wander_rms);

        profiles.push(DeviceProfile {
            device_id: d as u32,
            warmup: WarmupModel {
                cfo_hz: cfo_p,
                sce_ppm: sce_p,
                gain_i: gain_i_p,
                gain_q: gain_q_p,
                quad_skew_deg: quad_p,
                dc_i: dc_i_p,
                dc_q: dc_q_p,
                timing_skew_samples: skew_p,
                pa_gain_db: pa_gain_p,
                pa_am_am: pa_am_am_p,
                pa_am_pm_deg: pa_am_pm_p,
                phase_noise_std_deg: phase_noise_p,
            },
            cfo_wander,
            sce_wander,
            seed: derive_seed(seed, "device", &[d as u64]),
        })
    }
    Ok(profiles)
}

#[cfg(test)]
mod tests;
