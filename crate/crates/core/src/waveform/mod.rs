//! Ideal (impairment-free) baseband frame synthesis.
//!
//! Two physical layers are supported:
//! - a DSSS-like mode: DBPSK at 1 Msym/s spread by the 11-chip Barker code
//!   (11 Mchip/s), with a fixed 64-symbol known preamble. Chips are
//!   rectangular by default; an optional root-raised-cosine shaper makes the
//!   envelope non-constant.
//! - a minimal 20 MHz OFDM mode: 64-point symbols, 48 QAM-16 data carriers,
//!   4 fixed-polarity pilots, 16-sample cyclic prefix, and 4 identical known
//!   training symbols as the preamble.
//!
//! Frames carry the constellation points they encode so that measurement is
//! fully data-aided.

mod dsss;
mod ofdm;

pub use dsss::{
    barker_spread, dsss_baseband, dsss_preamble_symbols, dsss_shaped, dsss_symbol_template,
    rrc_taps, BARKER_11,
};
pub use ofdm::{
    ofdm_baseband, ofdm_data_carriers, ofdm_training_symbol, ofdm_used_carriers, qam16_map,
    OFDM_CP_LEN, OFDM_DATA_CARRIERS, OFDM_FFT_LEN, OFDM_PILOT_CARRIERS, OFDM_PILOT_POLARITY,
    OFDM_USED_CARRIERS,
};

use num_complex::Complex32;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DSSS_CHIP_RATE_HZ: f64 = 11e6;
pub const DSSS_SYMBOL_RATE_HZ: f64 = 1e6;
pub const DSSS_CHIPS_PER_SYMBOL: usize = 11;
pub const DSSS_PREAMBLE_SYMBOLS: usize = 64;
pub const OFDM_BASE_RATE_HZ: f64 = 20e6;
pub const OFDM_TRAINING_SYMBOLS: usize = 4;
/// Bits per OFDM data symbol: 48 carriers x 4 bits (QAM-16).
pub const OFDM_BITS_PER_SYMBOL: usize = 192;

#[derive(Debug, Error)]
pub enum WaveformError {
    #[error("payload must be non-empty")]
    EmptyPayload,
    #[error("oversample must be >= 1")]
    BadOversample,
    #[error("RRC shaping needs oversample >= 2 (excess bandwidth)")]
    RrcNeedsOversampling,
    #[error("data rate {rate:?} is not valid for {protocol:?}")]
    RateMismatch { protocol: Protocol, rate: DataRate },
    #[error(
        "payload length {got} is not a multiple of {per_symbol} bits per symbol; \
         frames are not padded silently"
    )]
    PayloadNotSymbolAligned { got: usize, per_symbol: usize },
    #[error("payload bits must be 0 or 1, found {0}")]
    NotABit(u8),
}

pub type Result<T> = std::result::Result<T, WaveformError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Protocol {
    DsssB,
    OfdmN,
}

impl Protocol {
    pub fn short_name(&self) -> &'static str {
        match self {
            Protocol::DsssB => "b",
            Protocol::OfdmN => "n",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DataRate {
    /// DBPSK at 1 Mbps (DSSS mode).
    Mbps1,
    /// QAM-16 subcarrier modulation (OFDM mode).
    Qam16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSpec {
    pub protocol: Protocol,
    pub payload_bits: Vec<u8>,
    /// Output samples per chip (DSSS) or per base sample (OFDM).
    pub oversample: usize,
    pub data_rate: DataRate,
    pub include_preamble: bool,
    /// Root-raised-cosine chip shaping (roll-off 0.35, 8-chip span) instead
    /// of rectangular sample-and-hold. DSSS only.
    pub rrc_shaping: bool,
}

impl FrameSpec {
    pub fn dsss(payload_bits: Vec<u8>, oversample: usize) -> Self {
        FrameSpec {
            protocol: Protocol::DsssB,
            payload_bits,
            oversample,
            data_rate: DataRate::Mbps1,
            include_preamble: true,
            rrc_shaping: false,
        }
    }

    pub fn ofdm(payload_bits: Vec<u8>, oversample: usize) -> Self {
        FrameSpec {
            protocol: Protocol::OfdmN,
            payload_bits,
            oversample,
            data_rate: DataRate::Qam16,
            include_preamble: true,
            rrc_shaping: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.payload_bits.is_empty() {
            return Err(WaveformError::EmptyPayload);
        }
        if self.oversample < 1 {
            return Err(WaveformError::BadOversample);
        }
        if let Some(&b) = self.payload_bits.iter().find(|&&b| b > 1) {
            return Err(WaveformError::NotABit(b));
        }
        match (self.protocol, self.data_rate) {
            (Protocol::DsssB, DataRate::Mbps1) => {}
            (Protocol::OfdmN, DataRate::Qam16) => {}
            (protocol, rate) => return Err(WaveformError::RateMismatch { protocol, rate }),
        }
        if self.rrc_shaping {
            if self.protocol != Protocol::DsssB {
                return Err(WaveformError::RateMismatch {
                    protocol: self.protocol,
                    rate: self.data_rate,
                });
            }
            if self.oversample < 2 {
                return Err(WaveformError::RrcNeedsOversampling);
            }
        }
        if self.protocol == Protocol::OfdmN && self.payload_bits.len() % OFDM_BITS_PER_SYMBOL != 0 {
            return Err(WaveformError::PayloadNotSymbolAligned {
                got: self.payload_bits.len(),
                per_symbol: OFDM_BITS_PER_SYMBOL,
            });
        }
        Ok(())
    }

    pub fn sample_rate_hz(&self) -> f64 {
        match self.protocol {
            Protocol::DsssB => DSSS_CHIP_RATE_HZ * self.oversample as f64,
            Protocol::OfdmN => OFDM_BASE_RATE_HZ * self.oversample as f64,
        }
    }

    /// Total symbol count including the preamble/training when enabled.
    pub fn n_symbols(&self) -> usize {
        match self.protocol {
            Protocol::DsssB => {
                let pre = if self.include_preamble { DSSS_PREAMBLE_SYMBOLS } else { 0 };
                pre + self.payload_bits.len()
            }
            Protocol::OfdmN => {
                let pre = if self.include_preamble { OFDM_TRAINING_SYMBOLS } else { 0 };
                pre + self.payload_bits.len() / OFDM_BITS_PER_SYMBOL
            }
        }
    }

    /// Expected sample count of the synthesized frame.
    pub fn n_samples(&self) -> usize {
        match self.protocol {
            Protocol::DsssB => self.n_symbols() * DSSS_CHIPS_PER_SYMBOL * self.oversample,
            Protocol::OfdmN => self.n_symbols() * (OFDM_FFT_LEN + OFDM_CP_LEN) * self.oversample,
        }
    }

    /// First sample index of the payload (data) portion.
    pub fn payload_start(&self) -> usize {
        if !self.include_preamble {
            return 0;
        }
        match self.protocol {
            Protocol::DsssB => DSSS_PREAMBLE_SYMBOLS * DSSS_CHIPS_PER_SYMBOL * self.oversample,
            Protocol::OfdmN => OFDM_TRAINING_SYMBOLS * (OFDM_FFT_LEN + OFDM_CP_LEN) * self.oversample,
        }
    }
}

/// A synthesized complex baseband burst plus the constellation points it
/// encodes (preamble symbols included for DSSS; data-carrier points only for
/// OFDM, since training and pilots are fixed protocol constants).
#[derive(Debug, Clone, PartialEq)]
pub struct BasebandFrame {
    pub samples: Vec<Complex32>,
    pub sample_rate_hz: f64,
    pub reference_symbols: Vec<Complex32>,
    pub protocol: Protocol,
}

/// Synthesize the ideal frame for `spec`.
///
/// The data portion is normalized to unit mean power. Synthesis is a pure
/// function of the spec; payload content is supplied via `payload_bits`
/// (see [`prbs_bits`] for seeded pseudo-random payloads).
pub fn synth_frame(spec: &FrameSpec) -> Result<BasebandFrame> {
    spec.validate()?;
    match spec.protocol {
        Protocol::DsssB => {
            let symbols = dsss::encode_symbols(spec);
            let samples = dsss_baseband(spec, &symbols);
            Ok(BasebandFrame {
                samples,
                sample_rate_hz: spec.sample_rate_hz(),
                reference_symbols: symbols,
                protocol: Protocol::DsssB,
            })
        }
        Protocol::OfdmN => {
            let symbols = ofdm::encode_symbols(spec)?;
            let samples = ofdm_baseband(spec, &symbols);
            Ok(BasebandFrame {
                samples,
                sample_rate_hz: spec.sample_rate_hz(),
                reference_symbols: symbols,
                protocol: Protocol::OfdmN,
            })
        }
    }
}

/// Burst duration in seconds: symbol count over symbol rate for DSSS, 4 us
/// per OFDM symbol.
pub fn frame_duration_s(spec: &FrameSpec) -> f64 {
    match spec.protocol {
        Protocol::DsssB => spec.n_symbols() as f64 / DSSS_SYMBOL_RATE_HZ,
        Protocol::OfdmN => spec.n_symbols() as f64 * 4e-6,
    }
}

/// Seeded pseudo-random payload bits. Generation derives one content seed
/// per frame slot so every device transmits identical payloads.
pub fn prbs_bits(n: usize, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(0..=1u8)).collect()
}

/// Normalize so the payload portion has unit mean power. Returns the scale
/// actually applied. A frame already at unit power is left bit-identical.
pub(crate) fn normalize_payload_power(samples: &mut [Complex32], payload_start: usize) {
    let data = &samples[payload_start..];
    let p: f64 = data.iter().map(|s| f64::from(s.norm_sqr())).sum::<f64>() / data.len() as f64;
    if p == 0.0 {
        return;
    }
    let scale = (1.0 / p).sqrt() as f32;
    if scale != 1.0 {
        for s in samples.iter_mut() {
            *s *= scale;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dsss_frame_length_matches_arithmetic() {
        // 100 payload bits, oversample 4, preamble on: (64+100)*11*4 = 7216.
        let spec = FrameSpec::dsss(vec![1; 100], 4);
        let frame = synth_frame(&spec).unwrap();
        assert_eq!(frame.samples.len(), 7216);
        assert_eq!(frame.reference_symbols.len(), 164);
    }

    #[test]
    fn ofdm_frame_length_matches_arithmetic() {
        // 192 payload bits = 1 data symbol; 4 training + 1 data = 400 samples.
        let spec = FrameSpec::ofdm(prbs_bits(192, 7), 1);
        let frame = synth_frame(&spec).unwrap();
        assert_eq!(frame.samples.len(), 400);
        assert_eq!(frame.reference_symbols.len(), 48);
    }

    #[test]
    fn synthesis_is_deterministic() {
        let spec = FrameSpec::dsss(prbs_bits(40, 123), 2);
        let a = synth_frame(&spec).unwrap();
        let b = synth_frame(&spec).unwrap();
        assert_eq!(a.samples, b.samples);
        let mut rrc = spec;
        rrc.rrc_shaping = true;
        let c = synth_frame(&rrc).unwrap();
        let d = synth_frame(&rrc).unwrap();
        assert_eq!(c.samples, d.samples);
    }

    #[test]
    fn ofdm_payload_must_align_to_symbols() {
        let spec = FrameSpec::ofdm(vec![1; 100], 1);
        match synth_frame(&spec) {
            Err(WaveformError::PayloadNotSymbolAligned { got: 100, per_symbol: 192 }) => {}
            other => panic!("expected alignment error, got {other:?}"),
        }
    }

    #[test]
    fn payload_power_is_normalized() {
        for spec in [
            FrameSpec::dsss(prbs_bits(60, 5), 2),
            {
                let mut s = FrameSpec::dsss(prbs_bits(60, 5), 4);
                s.rrc_shaping = true;
                s
            },
            FrameSpec::ofdm(prbs_bits(192 * 3, 5), 1),
            FrameSpec::ofdm(prbs_bits(192 * 2, 9), 2),
        ] {
            let frame = synth_frame(&spec).unwrap();
            let data = &frame.samples[spec.payload_start()..];
            let p: f64 =
                data.iter().map(|s| f64::from(s.norm_sqr())).sum::<f64>() / data.len() as f64;
            assert!((p - 1.0).abs() < 1e-6, "{:?}: payload power {p}", spec.protocol);
        }
    }

    #[test]
    fn durations_follow_symbol_counts() {
        // 495 total symbols at 1 Msym/s -> 495 us.
        let spec = FrameSpec::dsss(vec![0; 495 - 64], 1);
        assert!((frame_duration_s(&spec) - 495e-6).abs() < 1e-12);
        // 5 OFDM symbols -> 20 us.
        let ofdm = FrameSpec::ofdm(prbs_bits(192, 1), 1);
        assert!((frame_duration_s(&ofdm) - 20e-6).abs() < 1e-12);
        // Doubling payload bits doubles the DSSS data-portion duration.
        let short = FrameSpec::dsss(vec![0; 50], 1);
        let long = FrameSpec::dsss(vec![0; 100], 1);
        let data_short = frame_duration_s(&short) - 64e-6;
        let data_long = frame_duration_s(&long) - 64e-6;
        assert!((data_long - 2.0 * data_short).abs() < 1e-12);
    }

    #[test]
    fn reference_symbols_sit_on_the_constellation() {
        let frame = synth_frame(&FrameSpec::dsss(prbs_bits(30, 3), 1)).unwrap();
        for s in &frame.reference_symbols {
            assert!((s.norm() - 1.0).abs() < 1e-6);
            assert_eq!(s.im, 0.0);
        }
        let frame = synth_frame(&FrameSpec::ofdm(prbs_bits(192, 3), 1)).unwrap();
        let grid_mag: f64 = frame
            .reference_symbols
            .iter()
            .map(|s| f64::from(s.norm_sqr()))
            .sum::<f64>()
            / frame.reference_symbols.len() as f64;
        // QAM-16 grid scaled to unit average power.
        assert!((grid_mag - 1.0).abs() < 0.25, "mean power {grid_mag}");
        for s in &frame.reference_symbols {
            let i = (s.re * (10.0f32).sqrt()).round();
            let q = (s.im * (10.0f32).sqrt()).round();
            assert!([-3.0, -1.0, 1.0, 3.0].contains(&i), "{s}");
            assert!([-3.0, -1.0, 1.0, 3.0].contains(&q), "{s}");
        }
    }
}
