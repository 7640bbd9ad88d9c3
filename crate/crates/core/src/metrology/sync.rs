//! Shared synchronization and estimation primitives for both demod chains.

use super::{MetrologyError, Result};
use num_complex::Complex64;
use rustfft::FftPlanner;

/// Everything the measurement formulas need from one demodulated frame.
#[derive(Debug, Clone)]
pub struct Demod {
    /// Equalized payload symbol estimates, aligned with the references.
    pub measured_symbols: Vec<Complex64>,
    pub reference_symbols: Vec<Complex64>,
    /// measured - reference, per payload symbol.
    pub residuals: Vec<Complex64>,
    pub cfo_hz: f64,
    pub sce_ppm: f64,
    /// Coarse timing offset of the burst within the capture, samples.
    pub timing_offset: usize,
    /// Per-symbol RMS-averaged residual DC relative to signal power, dB.
    pub iq_offset_db: f64,
    /// Whole-burst carrier leakage relative to modulated power, dB
    /// (DSSS only; NaN-free but unused for OFDM).
    pub cse_db: f64,
    /// Raw mean payload power, dB relative to digital full scale.
    pub avg_burst_power_dbfs: f64,
    /// RMS error vector magnitude, percent. Chip-rate samples for DSSS
    /// (the chip is the basic signaling unit), data-carrier constellation
    /// points for OFDM.
    pub evm_rms_pct: f64,
    /// Mean absolute magnitude error, percent of the reference RMS.
    pub mag_err_pct: f64,
    /// Mean absolute phase error over well-modulated samples, degrees.
    pub phase_err_deg: f64,
    /// OFDM-only rail estimates.
    pub rails: Option<RailEstimates>,
    /// OFDM-only EVM over pilot subcarriers.
    pub pilot_evm_pct: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct RailEstimates {
    pub gain_imb_db: f64,
    pub quad_err_deg: f64,
    pub timing_skew_s: f64,
}

/// Sync threshold on the normalized segmented correlation.
pub(super) const SYNC_THRESHOLD: f64 = 0.5;

/// CFO-tolerant timing search: the known reference is split into segments,
/// each correlated separately, and magnitudes are summed so carrier rotation
/// across the burst cannot cancel the peak.
///
/// Returns (offset, per-segment correlations at the peak).
pub(super) fn segmented_timing_search(
    y: &[Complex64],
    reference: &[Complex64],
    seg_len: usize,
    max_offset: usize,
) -> Result<(usize, Vec<Complex64>)> {
    let ref_len = reference.len();
    if y.len() < ref_len {
        return Err(MetrologyError::FrameTooShort {
            got: y.len(),
            need: ref_len,
        });
    }
    let n_seg = ref_len / seg_len;
    let max_k = max_offset.min(y.len() - ref_len);
    let ref_energy: f64 = reference.iter().map(|s| s.norm_sqr()).sum();

    let mut best_k = 0usize;
    let mut best_metric = f64::NEG_INFINITY;
    for k in 0..=max_k {
        let mut metric = 0.0;
        for s in 0..n_seg {
            let base = s * seg_len;
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..seg_len {
                acc += y[k + base + i] * reference[base + i].conj();
            }
            metric += acc.norm();
        }
        if metric > best_metric {
            best_metric = metric;
            best_k = k;
        }
    }

    let window_energy: f64 = y[best_k..best_k + ref_len].iter().map(|s| s.norm_sqr()).sum();
    let norm = best_metric / (ref_energy.sqrt() * window_energy.sqrt()).max(1e-30);
    if norm < SYNC_THRESHOLD {
        return Err(MetrologyError::SyncFailed {
            peak: norm,
            threshold: SYNC_THRESHOLD,
        });
    }

    let mut segs = Vec::with_capacity(n_seg);
    for s in 0..n_seg {
        let base = s * seg_len;
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..seg_len {
            acc += y[best_k + base + i] * reference[base + i].conj();
        }
        segs.push(acc);
    }
    Ok((best_k, segs))
}

/// Coarse frequency from the phase advance between successive segment
/// correlations (magnitude-weighted mean).
pub(super) fn coarse_cfo(segs: &[Complex64], seg_len: usize, fs: f64) -> f64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for pair in segs.windows(2) {
        acc += pair[1] * pair[0].conj();
    }
    acc.arg() * fs / (2.0 * std::f64::consts::PI * seg_len as f64)
}

/// Rotate by -2*pi*f*n/fs, n measured from the start of the capture.
pub(super) fn derotate(y: &mut [Complex64], f_hz: f64, fs: f64) {
    if f_hz == 0.0 {
        return;
    }
    let w = -2.0 * std::f64::consts::PI * f_hz / fs;
    for (n, v) in y.iter_mut().enumerate() {
        let (s, c) = (w * n as f64).sin_cos();
        *v *= Complex64::new(c, s);
    }
}

/// Weighted least-squares line fit y ~ a + b x. Returns (a, b).
pub(super) fn weighted_line_fit(x: &[f64], y: &[f64], w: &[f64]) -> (f64, f64) {
    let sw: f64 = w.iter().sum();
    let sx: f64 = x.iter().zip(w).map(|(x, w)| x * w).sum();
    let sy: f64 = y.iter().zip(w).map(|(y, w)| y * w).sum();
    let xm = sx / sw;
    let ym = sy / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for ((&xi, &yi), &wi) in x.iter().zip(y).zip(w) {
        sxx += wi * (xi - xm) * (xi - xm);
        sxy += wi * (xi - xm) * (yi - ym);
    }
    if sxx <= 0.0 {
        return (ym, 0.0);
    }
    let b = sxy / sxx;
    (ym - b * xm, b)
}

/// Unwrap a phase sequence in place (consecutive jumps folded into +-pi).
pub(super) fn unwrap_phases(phases: &mut [f64]) {
    for i in 1..phases.len() {
        let mut d = phases[i] - phases[i - 1];
        while d > std::f64::consts::PI {
            phases[i] -= 2.0 * std::f64::consts::PI;
            d = phases[i] - phases[i - 1];
        }
        while d < -std::f64::consts::PI {
            phases[i] += 2.0 * std::f64::consts::PI;
            d = phases[i] - phases[i - 1];
        }
    }
}

/// Sub-sample delay of `y` relative to `reference` via the cross-spectrum
/// phase slope. Returns (delay_samples, fisher_weight). Two-stage: inner
/// bins fix the coarse slope, all in-band bins refine it.
pub(super) fn segment_delay(y: &[Complex64], reference: &[Complex64]) -> (f64, f64) {
    let n = y.len().min(reference.len());
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n);
    let mut yb: Vec<Complex64> = y[..n].to_vec();
    let mut rb: Vec<Complex64> = reference[..n].to_vec();
    fft.process(&mut yb);
    fft.process(&mut rb);

    let max_w = rb.iter().map(|v| v.norm_sqr()).fold(0.0f64, f64::max);
    let floor = 0.01 * max_w;
    let nu = |b: usize| -> f64 {
        let signed = if b <= n / 2 { b as f64 } else { b as f64 - n as f64 };
        signed / n as f64
    };

    // Stage 1: low-frequency bins, immune to phase wrapping for |tau| < 2.
    let mut tau = 0.0;
    for stage in 0..2 {
        let nu_cap = if stage == 0 { 0.12 } else { 0.5 };
        let mut num = 0.0;
        let mut den = 0.0;
        for b in 0..n {
            let w = rb[b].norm_sqr();
            let v = nu(b);
            if w < floor || v.abs() > nu_cap || b == 0 {
                continue;
            }
            // Remove the current delay estimate, fit the residual slope.
            let rot = Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * v * tau);
            let cross = yb[b] * rb[b].conj() * rot;
            let phase = cross.arg();
            let x = -2.0 * std::f64::consts::PI * v;
            num += w * x * phase;
            den += w * x * x;
        }
        if den > 0.0 {
            tau += num / den;
        }
    }

    let mut fisher = 0.0;
    for b in 1..n {
        let w = rb[b].norm_sqr();
        let v = nu(b);
        if w >= floor {
            fisher += w * (2.0 * std::f64::consts::PI * v).powi(2);
        }
    }
    (tau, fisher)
}

/// Interpolate a complex sequence at fractional positions `pos[m]` with a
/// 16-point windowed-sinc kernel.
pub(super) fn interp_complex(y: &[Complex64], positions: impl Iterator<Item = f64>) -> Vec<Complex64> {
    let re: Vec<f64> = y.iter().map(|v| v.re).collect();
    let im: Vec<f64> = y.iter().map(|v| v.im).collect();
    positions
        .map(|p| {
            Complex64::new(
                crate::impair::interp_sample(&re, p, 16),
                crate::impair::interp_sample(&im, p, 16),
            )
        })
        .collect()
}

/// Hermitian positive-definite banded solve (Cholesky), bandwidth `p`.
/// `bands[b][i]` holds G[i+b, i] (sub-diagonal convention). Solves
/// G x = rhs.
pub(super) fn solve_banded_spd(
    bands: &[Vec<Complex64>],
    rhs: &[Complex64],
) -> Result<Vec<Complex64>> {
    let n = rhs.len();
    let p = bands.len() - 1;
    // Cholesky factor L in the same banded layout: l[b][i] = L[i+b, i].
    let mut l: Vec<Vec<Complex64>> = (0..=p).map(|_| vec![Complex64::new(0.0, 0.0); n]).collect();
    for i in 0..n {
        // Diagonal (real for a Hermitian matrix).
        let mut acc = bands[0][i].re;
        for b in 1..=p.min(i) {
            acc -= l[b][i - b].norm_sqr();
        }
        if acc <= 0.0 {
            return Err(MetrologyError::LengthMismatch(
                "banded Gram matrix is not positive definite".into(),
            ));
        }
        let d = acc.sqrt();
        l[0][i] = Complex64::new(d, 0.0);
        // Sub-diagonal rows i+b: L[i+b, i].
        for b in 1..=p {
            if i + b >= n {
                break;
            }
            let mut acc = bands[b][i];
            for c in 1..=p {
                if b + c <= p && i >= c {
                    // L[i+b, i-c] * conj(L[i, i-c])
                    acc -= l[b + c][i - c] * l[c][i - c].conj();
                }
            }
            l[b][i] = acc / d;
        }
    }
    // Forward solve L z = rhs.
    let mut z = rhs.to_vec();
    for i in 0..n {
        let mut acc = z[i];
        for b in 1..=p.min(i) {
            acc -= z[i - b] * l[b][i - b];
        }
        z[i] = acc / l[0][i].re;
    }
    // Back solve L^H x = z.
    let mut x = z;
    for i in (0..n).rev() {
        let mut acc = x[i];
        for b in 1..=p {
            if i + b < n {
                acc -= x[i + b] * l[b][i].conj();
            }
        }
        x[i] = acc / l[0][i].re;
    }
    Ok(x)
}

/// Dense Hermitian-positive-definite solve for small systems (Gaussian
/// elimination with partial pivoting).
pub(super) fn solve_dense(a: &mut [Vec<Complex64>], b: &mut [Complex64]) -> Result<()> {
    let n = b.len();
    for col in 0..n {
        let mut pivot = col;
        for r in col + 1..n {
            if a[r][col].norm_sqr() > a[pivot][col].norm_sqr() {
                pivot = r;
            }
        }
        if a[pivot][col].norm_sqr() < 1e-24 {
            return Err(MetrologyError::LengthMismatch(
                "singular equalizer system".into(),
            ));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        let inv = Complex64::new(1.0, 0.0) / a[col][col];
        for r in col + 1..n {
            let f = a[r][col] * inv;
            if f.norm_sqr() == 0.0 {
                continue;
            }
            for c in col..n {
                let v = a[col][c];
                a[r][c] -= f * v;
            }
            let bv = b[col];
            b[r] -= f * bv;
        }
    }
    for col in (0..n).rev() {
        let mut acc = b[col];
        for c in col + 1..n {
            acc -= a[col][c] * b[c];
        }
        b[col] = acc / a[col][col];
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_fit_recovers_slope_and_intercept() {
        let x: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|&x| 3.0 - 0.25 * x).collect();
        let w = vec![1.0; 50];
        let (a, b) = weighted_line_fit(&x, &y, &w);
        assert!((a - 3.0).abs() < 1e-9);
        assert!((b + 0.25).abs() < 1e-12);
    }

    #[test]
    fn segment_delay_sees_injected_fractional_delay() {
        // Wideband reference; y = reference delayed by 0.3 samples.
        let n = 512;
        let reference: Vec<Complex64> = (0..n)
            .map(|i| {
                let t = i as f64;
                Complex64::new((0.9 * t).sin() + (0.37 * t).cos(), (1.3 * t).sin())
            })
            .collect();
        let re: Vec<f64> = reference.iter().map(|v| v.re).collect();
        let im: Vec<f64> = reference.iter().map(|v| v.im).collect();
        let d = 0.3;
        let y: Vec<Complex64> = (0..n)
            .map(|i| {
                Complex64::new(
                    crate::impair::interp_sample(&re, i as f64 - d, 16),
                    crate::impair::interp_sample(&im, i as f64 - d, 16),
                )
            })
            .collect();
        let (tau, weight) = segment_delay(&y, &reference);
        assert!(weight > 0.0);
        assert!((tau - d).abs() < 0.01, "tau {tau}");
    }

    #[test]
    fn banded_solver_matches_dense_solution() {
        // Hermitian tridiagonal system with a known solution: diagonal 4,
        // sub-diagonal 1+0.3j (so the super-diagonal is its conjugate).
        let n = 6;
        let off = Complex64::new(1.0, 0.3);
        let bands = vec![
            vec![Complex64::new(4.0, 0.0); n],
            vec![off; n],
        ];
        let x_true: Vec<Complex64> = (0..n)
            .map(|i| Complex64::new(i as f64 - 2.0, 0.5 * i as f64))
            .collect();
        // rhs = G * x_true with G[i+1,i] = off, G[i,i+1] = conj(off).
        let mut rhs = vec![Complex64::new(0.0, 0.0); n];
        for i in 0..n {
            rhs[i] += x_true[i] * 4.0;
            if i > 0 {
                rhs[i] += x_true[i - 1] * off;
            }
            if i + 1 < n {
                rhs[i] += x_true[i + 1] * off.conj();
            }
        }
        let x = solve_banded_spd(&bands, &rhs).unwrap();
        for (a, b) in x.iter().zip(&x_true) {
            assert!((a - b).norm() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn dense_solver_handles_small_complex_systems() {
        let mut a = vec![
            vec![Complex64::new(3.0, 0.0), Complex64::new(1.0, 1.0)],
            vec![Complex64::new(1.0, -1.0), Complex64::new(2.0, 0.0)],
        ];
        let x_true = [Complex64::new(0.5, -1.0), Complex64::new(2.0, 0.25)];
        let mut b = vec![
            a[0][0] * x_true[0] + a[0][1] * x_true[1],
            a[1][0] * x_true[0] + a[1][1] * x_true[1],
        ];
        solve_dense(&mut a, &mut b).unwrap();
        assert!((b[0] - x_true[0]).norm() < 1e-12);
        assert!((b[1] - x_true[1]).norm() < 1e-12);
    }

    #[test]
    fn unwrap_removes_two_pi_jumps() {
        let mut phases = vec![3.0, -3.1, 3.05, -3.0];
        unwrap_phases(&mut phases);
        for pair in phases.windows(2) {
            assert!((pair[1] - pair[0]).abs() < std::f64::consts::PI);
        }
    }
}
