//! Windowed-sinc fractional delay and ppm-scale resampling.

use std::f64::consts::PI;

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Zeroth-order modified Bessel function, power series.
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half_x2 = (x / 2.0) * (x / 2.0);
    for k in 1..=30 {
        term *= half_x2 / (k as f64 * k as f64);
        sum += term;
        if term < 1e-16 * sum {
            break;
        }
    }
    sum
}

fn kaiser(t: f64, half_span: f64, beta: f64) -> f64 {
    let r = t / half_span;
    if r.abs() > 1.0 {
        return 0.0;
    }
    bessel_i0(beta * (1.0 - r * r).sqrt()) / bessel_i0(beta)
}

/// Interpolate `x` at fractional position `pos` using a `taps`-point
/// Kaiser-windowed sinc kernel. Samples outside the signal read as zero.
pub fn interp_sample(x: &[f64], pos: f64, taps: usize) -> f64 {
    let beta = 8.0;
    let half = (taps / 2) as isize;
    let base = pos.floor() as isize;
    let frac = pos - base as f64;
    let mut acc = 0.0;
    for j in (1 - half)..=half {
        let idx = base + j;
        if idx < 0 || idx as usize >= x.len() {
            continue;
        }
        let t = j as f64 - frac;
        acc += x[idx as usize] * sinc(t) * kaiser(t, half as f64, beta);
    }
    acc
}

/// Delay a real rail by `delay` (possibly fractional) samples:
/// `y[n] = x(n - delay)`.
pub fn frac_delay(x: &[f64], delay: f64, taps: usize) -> Vec<f64> {
    (0..x.len())
        .map(|n| interp_sample(x, n as f64 - delay, taps))
        .collect()
}

/// Evaluate `x` on the time grid `n * rate` (device clock fast for
/// rate > 1). Output length shrinks or grows by at most a sample for
/// ppm-scale rates.
pub fn resample_rate(x: &[f64], rate: f64, taps: usize) -> Vec<f64> {
    let max_pos = (x.len() - 1) as f64;
    let n_out = (max_pos / rate).floor() as usize + 1;
    (0..n_out)
        .map(|n| interp_sample(x, n as f64 * rate, taps))
        .collect()
}
