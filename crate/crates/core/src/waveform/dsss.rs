//! DSSS-like synthesis: DBPSK symbols spread by the Barker-11 code.

use super::{
    normalize_payload_power, FrameSpec, DSSS_CHIPS_PER_SYMBOL, DSSS_PREAMBLE_SYMBOLS,
};
use num_complex::Complex32;
use std::f64::consts::PI;

/// The 11-chip Barker sequence (IEEE 802.11 clause 15 ordering).
pub const BARKER_11: [i8; 11] = [1, -1, 1, 1, -1, 1, 1, 1, -1, -1, -1];

/// Fixed known preamble: 64 DBPSK symbol values, drawn once and frozen.
/// Balanced (sum -2) with bounded autocorrelation sidelobes.
const PREAMBLE: [i8; DSSS_PREAMBLE_SYMBOLS] = [
    -1, 1, -1, 1, -1, -1, -1, -1, 1, 1, 1, -1, 1, 1, 1, -1, -1, 1, -1, -1, 1, -1, -1, -1, 1, 1, 1,
    -1, -1, -1, -1, 1, 1, -1, 1, -1, -1, 1, 1, 1, 1, 1, -1, 1, 1, -1, 1, -1, -1, -1, 1, 1, -1, 1,
    -1, -1, 1, 1, -1, -1, -1, -1, 1, 1,
];

pub fn dsss_preamble_symbols() -> Vec<Complex32> {
    PREAMBLE
        .iter()
        .map(|&s| Complex32::new(f32::from(s), 0.0))
        .collect()
}

/// Spread differentially-encoded symbol values (+-1) with Barker-11: each
/// symbol emits 11 chips.
pub fn barker_spread(symbols: &[i8]) -> Vec<i8> {
    let mut chips = Vec::with_capacity(symbols.len() * DSSS_CHIPS_PER_SYMBOL);
    for &s in symbols {
        for &c in &BARKER_11 {
            chips.push(s * c);
        }
    }
    chips
}

/// DBPSK encode: bit 0 keeps the phase, bit 1 flips it. The preamble (when
/// enabled) is the fixed known pattern; payload encoding continues from the
/// last preamble symbol.
pub(super) fn encode_symbols(spec: &FrameSpec) -> Vec<Complex32> {
    let mut symbols: Vec<i8> = Vec::with_capacity(spec.n_symbols());
    if spec.include_preamble {
        symbols.extend_from_slice(&PREAMBLE);
    }
    let mut cur = *symbols.last().unwrap_or(&1);
    for &bit in &spec.payload_bits {
        if bit == 1 {
            cur = -cur;
        }
        symbols.push(cur);
    }
    symbols
        .into_iter()
        .map(|s| Complex32::new(f32::from(s), 0.0))
        .collect()
}

/// Root-raised-cosine taps: `span` chip periods total, `sps` samples per
/// chip, unit peak at the center.
pub fn rrc_taps(roll_off: f64, span_chips: usize, sps: usize) -> Vec<f64> {
    let half = (span_chips * sps) / 2;
    let n = 2 * half + 1;
    let mut taps = Vec::with_capacity(n);
    for i in 0..n {
        let t = (i as f64 - half as f64) / sps as f64; // in chip periods
        taps.push(rrc_impulse(t, roll_off));
    }
    let peak = taps[half];
    for v in &mut taps {
        *v /= peak;
    }
    taps
}

fn rrc_impulse(t: f64, b: f64) -> f64 {
    let eps = 1e-9;
    if t.abs() < eps {
        return 1.0 + b * (4.0 / PI - 1.0);
    }
    let quarter = 1.0 / (4.0 * b);
    if (t.abs() - quarter).abs() < eps {
        let a = (PI / (4.0 * b)).sin() * (1.0 + 2.0 / PI);
        let c = (PI / (4.0 * b)).cos() * (1.0 - 2.0 / PI);
        return b / std::f64::consts::SQRT_2 * (a + c);
    }
    let num = (PI * t * (1.0 - b)).sin() + 4.0 * b * t * (PI * t * (1.0 + b)).cos();
    let den = PI * t * (1.0 - (4.0 * b * t).powi(2));
    num / den
}

/// Shaped but unnormalized baseband for a symbol sequence.
pub fn dsss_shaped(spec: &FrameSpec, symbols: &[Complex32]) -> Vec<f64> {
    let os = spec.oversample;
    let symbol_vals: Vec<i8> = symbols.iter().map(|s| if s.re >= 0.0 { 1 } else { -1 }).collect();
    let chips = barker_spread(&symbol_vals);
    let n = chips.len() * os;
    if spec.rrc_shaping {
        // Impulse train at chip instants convolved with the RRC taps,
        // trimmed to the frame span (group delay compensated).
        let taps = rrc_taps(0.35, 8, os);
        let half = taps.len() / 2;
        let mut out = vec![0.0f64; n];
        for (ci, &chip) in chips.iter().enumerate() {
            let center = ci * os;
            let c = f64::from(chip);
            for (ti, &tap) in taps.iter().enumerate() {
                let idx = center as isize + ti as isize - half as isize;
                if idx >= 0 && (idx as usize) < n {
                    out[idx as usize] += c * tap;
                }
            }
        }
        out
    } else {
        let mut out = Vec::with_capacity(n);
        for &chip in &chips {
            out.extend(std::iter::repeat(f64::from(chip)).take(os));
        }
        out
    }
}

/// One symbol's pulse contribution (value +1), unnormalized, plus its start
/// offset relative to the symbol's nominal first sample. RRC tails extend
/// into neighboring symbols.
pub fn dsss_symbol_template(spec: &FrameSpec) -> (Vec<f64>, isize) {
    let os = spec.oversample;
    if spec.rrc_shaping {
        let taps = rrc_taps(0.35, 8, os);
        let half = (taps.len() / 2) as isize;
        let len = (DSSS_CHIPS_PER_SYMBOL - 1) * os + taps.len();
        let mut out = vec![0.0f64; len];
        for (ci, &chip) in BARKER_11.iter().enumerate() {
            let base = ci * os;
            for (ti, &tap) in taps.iter().enumerate() {
                out[base + ti] += f64::from(chip) * tap;
            }
        }
        (out, -half)
    } else {
        let mut out = Vec::with_capacity(DSSS_CHIPS_PER_SYMBOL * os);
        for &chip in &BARKER_11 {
            out.extend(std::iter::repeat(f64::from(chip)).take(os));
        }
        (out, 0)
    }
}

/// Rebuild the shaped, power-normalized baseband for a given symbol
/// sequence. Shared between synthesis and the measurement reference.
pub fn dsss_baseband(spec: &FrameSpec, symbols: &[Complex32]) -> Vec<Complex32> {
    let shaped = dsss_shaped(spec, symbols);
    let mut samples: Vec<Complex32> = shaped
        .into_iter()
        .map(|v| Complex32::new(v as f32, 0.0))
        .collect();
    normalize_payload_power(&mut samples, spec.payload_start());
    samples
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn barker_spread_of_plus_one() {
        // IEEE 802.11-1999 clause 15 Barker sequence.
        assert_eq!(
            barker_spread(&[1]),
            vec![1, -1, 1, 1, -1, 1, 1, 1, -1, -1, -1]
        );
    }

    #[test]
    fn barker_spread_sign_symmetry_and_length() {
        let plus = barker_spread(&[1]);
        let minus = barker_spread(&[-1]);
        assert!(plus.iter().zip(&minus).all(|(a, b)| *a == -b));
        assert_eq!(barker_spread(&[1, -1]).len(), 22);
    }

    #[test]
    fn barker_autocorrelation_peak_and_sidelobes() {
        let b: Vec<i32> = BARKER_11.iter().map(|&v| i32::from(v)).collect();
        for lag in 0..11usize {
            let acc: i32 = (0..11 - lag).map(|i| b[i] * b[i + lag]).sum();
            if lag == 0 {
                assert_eq!(acc, 11);
            } else {
                assert!(acc.abs() <= 1, "lag {lag}: {acc}");
            }
        }
    }

    #[test]
    fn dbpsk_bit_zero_keeps_phase_bit_one_flips() {
        let spec = FrameSpec::dsss(vec![0, 1, 1, 0], 1);
        let symbols = encode_symbols(&spec);
        let last_pre = symbols[63].re;
        assert_eq!(symbols[64].re, last_pre);
        assert_eq!(symbols[65].re, -last_pre);
        assert_eq!(symbols[66].re, last_pre);
        assert_eq!(symbols[67].re, last_pre);
    }

    #[test]
    fn rrc_taps_are_symmetric_with_unit_peak() {
        let taps = rrc_taps(0.35, 8, 4);
        assert_eq!(taps.len(), 33);
        assert!((taps[16] - 1.0).abs() < 1e-12);
        for i in 0..16 {
            assert!((taps[i] - taps[32 - i]).abs() < 1e-12);
        }
    }
}
