//! Minimal OFDM synthesis: 64-point symbols, 48 QAM-16 data carriers, 4
//! fixed pilots, cyclic prefix, and 4 identical known training symbols.

use super::{normalize_payload_power, FrameSpec, Result, WaveformError, OFDM_TRAINING_SYMBOLS};
use num_complex::{Complex32, Complex64};
use rustfft::FftPlanner;

pub const OFDM_FFT_LEN: usize = 64;
pub const OFDM_CP_LEN: usize = 16;
/// Pilot subcarriers and their fixed polarity.
pub const OFDM_PILOT_CARRIERS: [i32; 4] = [-21, -7, 7, 21];
pub const OFDM_PILOT_POLARITY: [f32; 4] = [1.0, 1.0, 1.0, -1.0];

/// Known +-1 loading of the 52 used carriers for the training symbols,
/// drawn once and frozen (ascending carrier order -26..-1, 1..26).
const TRAINING: [i8; 52] = [
    1, 1, -1, -1, -1, 1, 1, 1, 1, -1, 1, 1, -1, -1, 1, -1, 1, -1, -1, 1, -1, -1, 1, 1, 1, -1, -1,
    1, -1, 1, -1, -1, 1, -1, 1, 1, 1, 1, 1, -1, -1, -1, -1, -1, -1, -1, -1, 1, 1, 1, 1, -1,
];

/// All used carriers in ascending order: -26..-1 then 1..26 (DC unused).
pub fn ofdm_used_carriers() -> Vec<i32> {
    let mut v: Vec<i32> = (-26..=-1).collect();
    v.extend(1..=26);
    v
}

/// The 48 data carriers (used carriers minus pilots), ascending.
pub fn ofdm_data_carriers() -> Vec<i32> {
    ofdm_used_carriers()
        .into_iter()
        .filter(|k| !OFDM_PILOT_CARRIERS.contains(k))
        .collect()
}

pub const OFDM_USED_CARRIERS: usize = 52;
pub const OFDM_DATA_CARRIERS: usize = 48;

/// Gray-coded QAM-16: bits (b0,b1) select I from {-3,-1,+1,+3}, (b2,b3)
/// select Q, scaled to unit average power.
pub fn qam16_map(bits: &[u8]) -> Complex32 {
    debug_assert_eq!(bits.len(), 4);
    let level = |b0: u8, b1: u8| -> f32 {
        match (b0, b1) {
            (0, 0) => -3.0,
            (0, 1) => -1.0,
            (1, 1) => 1.0,
            _ => 3.0,
        }
    };
    let scale = 1.0 / (10.0f32).sqrt();
    Complex32::new(level(bits[0], bits[1]) * scale, level(bits[2], bits[3]) * scale)
}

/// Frequency loading of one training symbol (carrier -> value), ascending
/// used-carrier order.
pub fn ofdm_training_symbol() -> Vec<Complex32> {
    TRAINING
        .iter()
        .map(|&v| Complex32::new(f32::from(v), 0.0))
        .collect()
}

pub(super) fn encode_symbols(spec: &FrameSpec) -> Result<Vec<Complex32>> {
    if spec.payload_bits.len() % super::OFDM_BITS_PER_SYMBOL != 0 {
        return Err(WaveformError::PayloadNotSymbolAligned {
            got: spec.payload_bits.len(),
            per_symbol: super::OFDM_BITS_PER_SYMBOL,
        });
    }
    Ok(spec
        .payload_bits
        .chunks(4)
        .map(qam16_map)
        .collect())
}

/// Rebuild the power-normalized OFDM baseband for data-carrier points
/// (48 per symbol, symbol-major). Shared between synthesis and measurement.
pub fn ofdm_baseband(spec: &FrameSpec, data_symbols: &[Complex32]) -> Vec<Complex32> {
    let os = spec.oversample;
    let nfft = OFDM_FFT_LEN * os;
    let cp = OFDM_CP_LEN * os;
    let mut planner = FftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(nfft);

    let used = ofdm_used_carriers();
    let data_carriers = ofdm_data_carriers();
    let bin = |k: i32| -> usize {
        if k >= 0 {
            k as usize
        } else {
            (nfft as i32 + k) as usize
        }
    };

    let mut out: Vec<Complex32> = Vec::with_capacity(spec.n_samples());
    let mut emit = |loading: &mut [Complex64]| {
        ifft.process(loading);
        let scale = 1.0 / nfft as f64;
        let sym: Vec<Complex64> = loading.iter().map(|v| v * scale).collect();
        for i in nfft - cp..nfft {
            out.push(Complex32::new(sym[i].re as f32, sym[i].im as f32));
        }
        for v in &sym {
            out.push(Complex32::new(v.re as f32, v.im as f32));
        }
    };

    if spec.include_preamble {
        for _ in 0..OFDM_TRAINING_SYMBOLS {
            let mut loading = vec![Complex64::new(0.0, 0.0); nfft];
            for (&k, &t) in used.iter().zip(&TRAINING) {
                loading[bin(k)] = Complex64::new(f64::from(t), 0.0);
            }
            emit(&mut loading);
        }
    }
    for chunk in data_symbols.chunks(OFDM_DATA_CARRIERS) {
        let mut loading = vec![Complex64::new(0.0, 0.0); nfft];
        for (&k, s) in data_carriers.iter().zip(chunk) {
            loading[bin(k)] = Complex64::new(f64::from(s.re), f64::from(s.im));
        }
        for (&k, &p) in OFDM_PILOT_CARRIERS.iter().zip(&OFDM_PILOT_POLARITY) {
            loading[bin(k)] = Complex64::new(f64::from(p), 0.0);
        }
        emit(&mut loading);
    }

    normalize_payload_power(&mut out, spec.payload_start());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn carrier_sets_are_consistent() {
        let used = ofdm_used_carriers();
        assert_eq!(used.len(), OFDM_USED_CARRIERS);
        assert!(!used.contains(&0));
        let data = ofdm_data_carriers();
        assert_eq!(data.len(), OFDM_DATA_CARRIERS);
        for p in OFDM_PILOT_CARRIERS {
            assert!(!data.contains(&p));
            assert!(used.contains(&p));
        }
    }

    #[test]
    fn qam16_grid_has_unit_average_power() {
        let mut total = 0.0f64;
        for b in 0..16u8 {
            let bits = [(b >> 3) & 1, (b >> 2) & 1, (b >> 1) & 1, b & 1];
            total += f64::from(qam16_map(&bits).norm_sqr());
        }
        assert!((total / 16.0 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn gray_mapping_neighbors_differ_in_one_bit() {
        // Adjacent I levels come from bit pairs that differ in exactly one bit.
        let pairs = [(0u8, 0u8), (0, 1), (1, 1), (1, 0)];
        for w in pairs.windows(2) {
            let diff = (w[0].0 ^ w[1].0) + (w[0].1 ^ w[1].1);
            assert_eq!(diff, 1);
        }
    }

    #[test]
    fn cyclic_prefix_repeats_symbol_tail() {
        let spec = FrameSpec::ofdm(super::super::prbs_bits(192, 2), 1);
        let frame = super::super::synth_frame(&spec).unwrap();
        let sym_len = OFDM_FFT_LEN + OFDM_CP_LEN;
        for s in 0..spec.n_symbols() {
            let start = s * sym_len;
            for i in 0..OFDM_CP_LEN {
                let cp = frame.samples[start + i];
                let tail = frame.samples[start + OFDM_CP_LEN + OFDM_FFT_LEN - OFDM_CP_LEN + i];
                assert!((cp - tail).norm() < 1e-6);
            }
        }
    }

    #[test]
    fn training_symbols_are_identical_repeats() {
        let spec = FrameSpec::ofdm(super::super::prbs_bits(192, 2), 1);
        let frame = super::super::synth_frame(&spec).unwrap();
        let sym_len = OFDM_FFT_LEN + OFDM_CP_LEN;
        for s in 1..OFDM_TRAINING_SYMBOLS {
            for i in 0..sym_len {
                let a = frame.samples[i];
                let b = frame.samples[s * sym_len + i];
                assert!((a - b).norm() < 1e-6);
            }
        }
    }
}
