//! OFDM demodulation and measurement.
//!
//! Chain: segmented training correlation for timing, repeat-symbol coarse
//! CFO, per-symbol correlation fine CFO, per-subcarrier equalization from
//! the training average, per-symbol common-phase/group-delay tracking over
//! all known carriers (CFO residual and sample-clock error fall out of the
//! two tracking slopes), and a per-carrier two-coefficient regression
//! against the mirror carrier that separates the I/Q rail gains, quadrature
//! error and rail timing skew from the channel. Tracking and rail
//! regression run twice: the second pass tracks against the rail-aware
//! model, which removes the image-leakage bias at large imbalances.

use super::sync::{
    coarse_cfo, derotate, segmented_timing_search, unwrap_phases, weighted_line_fit, Demod,
    RailEstimates,
};
use super::{MetrologyError, Result};
use crate::waveform::{
    ofdm_baseband, ofdm_data_carriers, ofdm_training_symbol, ofdm_used_carriers, BasebandFrame,
    FrameSpec, OFDM_CP_LEN, OFDM_DATA_CARRIERS, OFDM_FFT_LEN, OFDM_PILOT_CARRIERS,
    OFDM_PILOT_POLARITY, OFDM_TRAINING_SYMBOLS,
};
use num_complex::Complex64;
use rustfft::FftPlanner;

struct Tracking {
    theta: Vec<f64>,
    gdelay: Vec<f64>,
}

/// Per-carrier two-coefficient estimates: Y'_{m,k} ~ p X_{m,k} + q
/// conj(X_{m,-k}), channel included in both.
struct RailCoeffs {
    carriers: Vec<i32>,
    p: Vec<Complex64>,
    q: Vec<Complex64>,
}

pub(super) fn demod(frame: &BasebandFrame, spec: &FrameSpec) -> Result<Demod> {
    let os = spec.oversample;
    let nfft = OFDM_FFT_LEN * os;
    let cp = OFDM_CP_LEN * os;
    let sym_len = nfft + cp;
    let fs = frame.sample_rate_hz;
    let n_data_sym = frame.reference_symbols.len() / OFDM_DATA_CARRIERS;
    if frame.reference_symbols.len() != n_data_sym * OFDM_DATA_CARRIERS || n_data_sym == 0 {
        return Err(MetrologyError::LengthMismatch(format!(
            "OFDM frame carries {} reference points (not a multiple of {})",
            frame.reference_symbols.len(),
            OFDM_DATA_CARRIERS
        )));
    }

    let ideal32 = ofdm_baseband(spec, &frame.reference_symbols);
    let ideal: Vec<Complex64> = ideal32
        .iter()
        .map(|s| Complex64::new(f64::from(s.re), f64::from(s.im)))
        .collect();
    let y: Vec<Complex64> = frame
        .samples
        .iter()
        .map(|s| Complex64::new(f64::from(s.re), f64::from(s.im)))
        .collect();
    let train_len = OFDM_TRAINING_SYMBOLS * sym_len;
    if y.len() < train_len + sym_len {
        return Err(MetrologyError::FrameTooShort {
            got: y.len(),
            need: train_len + sym_len,
        });
    }

    // Timing + coarse CFO from training repeats.
    let (k0, segs) = segmented_timing_search(&y, &ideal[..train_len], sym_len, 2 * sym_len)?;
    let mut f_est = coarse_cfo(&segs, sym_len, fs);

    // Fine CFO from per-training-symbol correlation phases.
    for _ in 0..2 {
        let mut y1 = y.clone();
        derotate(&mut y1, f_est, fs);
        let mut phases = Vec::with_capacity(OFDM_TRAINING_SYMBOLS);
        let mut weights = Vec::with_capacity(OFDM_TRAINING_SYMBOLS);
        let mut times = Vec::with_capacity(OFDM_TRAINING_SYMBOLS);
        for s in 0..OFDM_TRAINING_SYMBOLS {
            let base = k0 + s * sym_len;
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..sym_len {
                acc += y1[base + i] * ideal[s * sym_len + i].conj();
            }
            phases.push(acc.arg());
            weights.push(acc.norm());
            times.push((base + sym_len / 2) as f64 / fs);
        }
        unwrap_phases(&mut phases);
        let (_, slope) = weighted_line_fit(&times, &phases, &weights);
        f_est += slope / (2.0 * std::f64::consts::PI);
    }

    let mut y2 = y;
    derotate(&mut y2, f_est, fs);
    let window = &y2[k0..];

    // Per-symbol FFTs (training + usable data symbols).
    let n_total_sym = OFDM_TRAINING_SYMBOLS + n_data_sym;
    let usable_sym = (window.len() / sym_len).min(n_total_sym);
    if usable_sym <= OFDM_TRAINING_SYMBOLS {
        return Err(MetrologyError::FrameTooShort {
            got: window.len(),
            need: train_len + sym_len,
        });
    }
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(nfft);
    let mut spectra: Vec<Vec<Complex64>> = Vec::with_capacity(usable_sym);
    for m in 0..usable_sym {
        let base = m * sym_len + cp;
        let mut buf = window[base..base + nfft].to_vec();
        fft.process(&mut buf);
        spectra.push(buf);
    }

    let used = ofdm_used_carriers();
    let data_carriers = ofdm_data_carriers();
    let training = ofdm_training_symbol();
    let bin = |k: i32| -> usize {
        if k >= 0 {
            k as usize
        } else {
            (nfft as i32 + k) as usize
        }
    };
    let carrier_pos = |k: i32| -> usize { used.iter().position(|&u| u == k).unwrap() };

    // Reference loading per symbol and carrier (training first).
    let reference_at = |m: usize, k: i32| -> Complex64 {
        if m < OFDM_TRAINING_SYMBOLS {
            let idx = carrier_pos(k);
            Complex64::new(f64::from(training[idx].re), f64::from(training[idx].im))
        } else if let Some(p) = OFDM_PILOT_CARRIERS.iter().position(|&u| u == k) {
            Complex64::new(f64::from(OFDM_PILOT_POLARITY[p]), 0.0)
        } else {
            let d = data_carriers.iter().position(|&u| u == k).unwrap();
            let s = frame.reference_symbols[(m - OFDM_TRAINING_SYMBOLS) * OFDM_DATA_CARRIERS + d];
            Complex64::new(f64::from(s.re), f64::from(s.im))
        }
    };

    // Per-subcarrier channel from the training average.
    let mut chan = vec![Complex64::new(0.0, 0.0); used.len()];
    for (ui, &k) in used.iter().enumerate() {
        let mut acc = Complex64::new(0.0, 0.0);
        for spectrum in spectra.iter().take(OFDM_TRAINING_SYMBOLS) {
            acc += spectrum[bin(k)] / reference_at(0, k);
        }
        chan[ui] = acc / OFDM_TRAINING_SYMBOLS as f64;
    }

    // Common phase + group delay per symbol, measured against a model of
    // the expected spectrum. Returns per-symbol fits.
    let fit_tracking = |model: &dyn Fn(usize, i32) -> Complex64| -> Tracking {
        let mut theta = Vec::with_capacity(usable_sym);
        let mut gdelay = Vec::with_capacity(usable_sym);
        for (m, spectrum) in spectra.iter().enumerate() {
            let mut xs = Vec::with_capacity(used.len());
            let mut ph = Vec::with_capacity(used.len());
            let mut ws = Vec::with_capacity(used.len());
            for &k in &used {
                let mk = model(m, k);
                if mk.norm_sqr() < 1e-18 {
                    continue;
                }
                let e = spectrum[bin(k)] * mk.conj();
                xs.push(2.0 * std::f64::consts::PI * f64::from(k) / nfft as f64);
                ph.push(e.arg());
                ws.push(mk.norm_sqr());
            }
            let mut order: Vec<usize> = (0..xs.len()).collect();
            order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
            let xs_s: Vec<f64> = order.iter().map(|&i| xs[i]).collect();
            let mut ph_s: Vec<f64> = order.iter().map(|&i| ph[i]).collect();
            let ws_s: Vec<f64> = order.iter().map(|&i| ws[i]).collect();
            unwrap_phases(&mut ph_s);
            let (a, b) = weighted_line_fit(&xs_s, &ph_s, &ws_s);
            theta.push(a);
            gdelay.push(b);
        }
        Tracking { theta, gdelay }
    };

    // Per-carrier rail regression under given per-symbol phase corrections.
    let fit_rails = |trk: &Tracking| -> RailCoeffs {
        let mut carriers = Vec::with_capacity(used.len());
        let mut ps = Vec::with_capacity(used.len());
        let mut qs = Vec::with_capacity(used.len());
        for &k in &used {
            let u_k = 2.0 * std::f64::consts::PI * f64::from(k) / nfft as f64;
            let mut s_xx = 0.0f64;
            let mut s_mm = 0.0f64;
            let mut s_xm = Complex64::new(0.0, 0.0);
            let mut s_xy = Complex64::new(0.0, 0.0);
            let mut s_my = Complex64::new(0.0, 0.0);
            for m in 0..usable_sym {
                let corr = Complex64::from_polar(1.0, -(trk.theta[m] + u_k * trk.gdelay[m]));
                let yk = spectra[m][bin(k)] * corr;
                let xk = reference_at(m, k);
                let xm = reference_at(m, -k).conj();
                s_xx += xk.norm_sqr();
                s_mm += xm.norm_sqr();
                s_xm += xk.conj() * xm;
                s_xy += xk.conj() * yk;
                s_my += xm.conj() * yk;
            }
            let det = s_xx * s_mm - s_xm.norm_sqr();
            if det.abs() < 1e-9 {
                continue;
            }
            let p = (s_xy * s_mm - s_xm * s_my) / det;
            let q = (s_my * s_xx - s_xm.conj() * s_xy) / det;
            carriers.push(k);
            ps.push(p);
            qs.push(q);
        }
        RailCoeffs {
            carriers,
            p: ps,
            q: qs,
        }
    };

    // Pass 1: track against the equalizer model, fit rails. Pass 2: track
    // against the rail-aware model (kills image-leakage bias), refit.
    let chan_model = |m: usize, k: i32| chan[carrier_pos(k)] * reference_at(m, k);
    let trk1 = fit_tracking(&chan_model);
    let rails1 = fit_rails(&trk1);
    let rail_model = |m: usize, k: i32| -> Complex64 {
        match rails1.carriers.iter().position(|&c| c == k) {
            Some(i) => {
                rails1.p[i] * reference_at(m, k) + rails1.q[i] * reference_at(m, -k).conj()
            }
            None => chan_model(m, k),
        }
    };
    let trk = fit_tracking(&rail_model);
    let rails = fit_rails(&trk);

    // CFO residual and sample-clock error from the tracking slopes.
    let sym_centers: Vec<f64> = (0..usable_sym)
        .map(|m| (m * sym_len + cp + nfft / 2) as f64)
        .collect();
    let w1 = vec![1.0; usable_sym];
    let mut theta_unwrapped = trk.theta.clone();
    unwrap_phases(&mut theta_unwrapped);
    let (_, theta_slope) = weighted_line_fit(&sym_centers, &theta_unwrapped, &w1);
    let f_track = theta_slope * fs / (2.0 * std::f64::consts::PI);
    let cfo_hz = f_est + f_track;
    let (_, delay_slope) = weighted_line_fit(&sym_centers, &trk.gdelay, &w1);
    let sce_ppm = delay_slope * 1e6;

    // Phase-corrected, equalized symbols; EVM splits by carrier type.
    let mut measured =
        Vec::with_capacity((usable_sym - OFDM_TRAINING_SYMBOLS) * OFDM_DATA_CARRIERS);
    let mut references = Vec::with_capacity(measured.capacity());
    let mut pilot_sq = 0.0f64;
    let mut pilot_n = 0usize;
    for m in OFDM_TRAINING_SYMBOLS..usable_sym {
        for &k in &used {
            let ui = carrier_pos(k);
            let u_k = 2.0 * std::f64::consts::PI * f64::from(k) / nfft as f64;
            let corr = Complex64::from_polar(1.0, -(trk.theta[m] + u_k * trk.gdelay[m]));
            let z = spectra[m][bin(k)] / chan[ui] * corr;
            let x = reference_at(m, k);
            if OFDM_PILOT_CARRIERS.contains(&k) {
                pilot_sq += (z - x).norm_sqr() / x.norm_sqr();
                pilot_n += 1;
            } else {
                measured.push(z);
                references.push(x);
            }
        }
    }
    let pilot_evm_pct = 100.0 * (pilot_sq / pilot_n as f64).sqrt();
    let residuals: Vec<Complex64> = measured
        .iter()
        .zip(&references)
        .map(|(m, r)| m - r)
        .collect();

    // Constellation-level error metrics over the data carriers.
    let n_pts = measured.len() as f64;
    let ref_rms = (references.iter().map(|r| r.norm_sqr()).sum::<f64>() / n_pts).sqrt();
    let evm_rms_pct =
        100.0 * (residuals.iter().map(|e| e.norm_sqr()).sum::<f64>() / n_pts).sqrt() / ref_rms;
    let mag_err_pct = 100.0
        * measured
            .iter()
            .zip(&references)
            .map(|(m, r)| (r.norm() - m.norm()).abs())
            .sum::<f64>()
        / n_pts
        / ref_rms;
    let phase_err_deg = (measured
        .iter()
        .zip(&references)
        .map(|(m, r)| super::wrap_angle(r.arg() - m.arg()).abs())
        .sum::<f64>()
        / n_pts)
        .to_degrees();

    // DC per symbol from bin 0 (the carrier at DC is never loaded).
    let frame_len = ideal.len().min(window.len());
    let pay_start = spec.payload_start();
    let p_data: f64 = window[pay_start.min(frame_len)..frame_len]
        .iter()
        .map(|v| v.norm_sqr())
        .sum::<f64>()
        / (frame_len - pay_start.min(frame_len)) as f64;
    let mut dc_sq = 0.0f64;
    for spectrum in &spectra {
        dc_sq += (spectrum[0] / nfft as f64).norm_sqr();
    }
    dc_sq /= spectra.len() as f64;
    let iq_offset_db = 10.0 * (dc_sq / p_data).max(1e-30).log10();

    // Rail aggregates: the channel cancels in the per-carrier ratio and
    // phase difference of U = P+Q and V = P-Q.
    let mut ratio_db_acc = 0.0f64;
    let mut ratio_n = 0usize;
    let mut psi_f = Vec::with_capacity(rails.carriers.len());
    let mut psi = Vec::with_capacity(rails.carriers.len());
    let mut psi_w = Vec::with_capacity(rails.carriers.len());
    for (i, &k) in rails.carriers.iter().enumerate() {
        let u = rails.p[i] + rails.q[i];
        let v = rails.p[i] - rails.q[i];
        if u.norm() < 1e-12 || v.norm() < 1e-12 {
            continue;
        }
        ratio_db_acc += 20.0 * (u.norm() / v.norm()).log10();
        ratio_n += 1;
        psi_f.push(f64::from(k) * fs / nfft as f64);
        psi.push((u * v.conj()).arg());
        psi_w.push(u.norm() * v.norm());
    }
    let gain_imb_db = ratio_db_acc / ratio_n.max(1) as f64;
    let mut order: Vec<usize> = (0..psi_f.len()).collect();
    order.sort_by(|&a, &b| psi_f[a].partial_cmp(&psi_f[b]).unwrap());
    let psi_f_s: Vec<f64> = order.iter().map(|&i| psi_f[i]).collect();
    let mut psi_s: Vec<f64> = order.iter().map(|&i| psi[i]).collect();
    let psi_w_s: Vec<f64> = order.iter().map(|&i| psi_w[i]).collect();
    unwrap_phases(&mut psi_s);
    let (psi0, psi_slope) = weighted_line_fit(&psi_f_s, &psi_s, &psi_w_s);
    let quad_err_deg = (-psi0).to_degrees();
    let timing_skew_s = -psi_slope / (2.0 * std::f64::consts::PI);

    // Raw payload power over the data region.
    let pay_lo = (k0 + pay_start).min(frame.samples.len());
    let pay_hi = (k0 + ideal.len()).min(frame.samples.len());
    let p_raw: f64 = frame.samples[pay_lo..pay_hi]
        .iter()
        .map(|s| f64::from(s.norm_sqr()))
        .sum::<f64>()
        / (pay_hi - pay_lo) as f64;
    let avg_burst_power_dbfs = 10.0 * p_raw.max(1e-30).log10();

    Ok(Demod {
        measured_symbols: measured,
        reference_symbols: references,
        residuals,
        cfo_hz,
        sce_ppm,
        timing_offset: k0,
        iq_offset_db,
        cse_db: iq_offset_db,
        avg_burst_power_dbfs,
        evm_rms_pct,
        mag_err_pct,
        phase_err_deg,
        rails: Some(RailEstimates {
            gain_imb_db,
            quad_err_deg,
            timing_skew_s,
        }),
        pilot_evm_pct: Some(pilot_evm_pct),
    })
}
