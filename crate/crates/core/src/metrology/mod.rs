//! Data-aided impairment measurement from received I/Q.
//!
//! This stands in for a signal analyzer's modulation-analysis mode: frames
//! carry their reference symbols, so every estimator here is data-aided.
//! Measurements run over the payload portion (after the known preamble);
//! the dataset manifest records that convention.

mod dsss;
mod norm;
mod ofdm;
mod sync;

pub use norm::NormStats;
pub use sync::Demod;

use crate::waveform::{BasebandFrame, FrameSpec, Protocol};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetrologyError {
    #[error(
        "sync failed: normalized correlation {peak:.3} below threshold {threshold:.3}"
    )]
    SyncFailed { peak: f64, threshold: f64 },
    #[error("frame has no preamble; data-aided sync needs one")]
    NoPreamble,
    #[error("frame too short: {got} samples, need at least {need}")]
    FrameTooShort { got: usize, need: usize },
    #[error("empty input to {0}")]
    EmptyInput(&'static str),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error(transparent)]
    Waveform(#[from] crate::waveform::WaveformError),
}

pub type Result<T> = std::result::Result<T, MetrologyError>;

/// Measured labels for a DSSS-mode frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpairmentVectorB {
    pub evm_rms_pct: f64,
    pub cfo_hz: f64,
    pub sce_ppm: f64,
    pub iq_offset_db: f64,
    pub mag_err_pct: f64,
    pub phase_err_deg: f64,
    pub cse_db: f64,
    pub avg_burst_power_dbfs: f64,
}

/// Measured labels for an OFDM-mode frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpairmentVectorN {
    pub evm_rms_pct: f64,
    pub cfo_hz: f64,
    pub sce_ppm: f64,
    pub iq_offset_db: f64,
    pub gain_imb_db: f64,
    pub quad_err_deg: f64,
    pub timing_skew_s: f64,
    pub pilot_evm_pct: f64,
}

pub const LABELS_B: [&str; 8] = [
    "evm_rms_pct",
    "cfo_hz",
    "sce_ppm",
    "iq_offset_db",
    "mag_err_pct",
    "phase_err_deg",
    "cse_db",
    "avg_burst_power_dbfs",
];

pub const LABELS_N: [&str; 8] = [
    "evm_rms_pct",
    "cfo_hz",
    "sce_ppm",
    "iq_offset_db",
    "gain_imb_db",
    "quad_err_deg",
    "timing_skew_s",
    "pilot_evm_pct",
];

pub fn label_schema(protocol: Protocol) -> &'static [&'static str; 8] {
    match protocol {
        Protocol::DsssB => &LABELS_B,
        Protocol::OfdmN => &LABELS_N,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ImpairmentVector {
    B(ImpairmentVectorB),
    N(ImpairmentVectorN),
}

impl ImpairmentVector {
    pub fn values(&self) -> [f64; 8] {
        match *self {
            ImpairmentVector::B(v) => [
                v.evm_rms_pct,
                v.cfo_hz,
                v.sce_ppm,
                v.iq_offset_db,
                v.mag_err_pct,
                v.phase_err_deg,
                v.cse_db,
                v.avg_burst_power_dbfs,
            ],
            ImpairmentVector::N(v) => [
                v.evm_rms_pct,
                v.cfo_hz,
                v.sce_ppm,
                v.iq_offset_db,
                v.gain_imb_db,
                v.quad_err_deg,
                v.timing_skew_s,
                v.pilot_evm_pct,
            ],
        }
    }

    pub fn fields(&self) -> &'static [&'static str; 8] {
        match self {
            ImpairmentVector::B(_) => &LABELS_B,
            ImpairmentVector::N(_) => &LABELS_N,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }
}

/// Synchronize, demodulate and align measured vs reference symbols.
pub fn sync_and_demod(frame: &BasebandFrame, spec: &FrameSpec) -> Result<Demod> {
    spec.validate()?;
    if !spec.include_preamble {
        return Err(MetrologyError::NoPreamble);
    }
    match spec.protocol {
        Protocol::DsssB => dsss::demod(frame, spec),
        Protocol::OfdmN => ofdm::demod(frame, spec),
    }
}

/// Measure the per-protocol impairment vector of a received frame.
pub fn measure(frame: &BasebandFrame, spec: &FrameSpec) -> Result<ImpairmentVector> {
    let d = sync_and_demod(frame, spec)?;
    Ok(match spec.protocol {
        Protocol::DsssB => ImpairmentVector::B(ImpairmentVectorB {
            evm_rms_pct: d.evm_rms_pct,
            cfo_hz: d.cfo_hz,
            sce_ppm: d.sce_ppm,
            iq_offset_db: d.iq_offset_db,
            mag_err_pct: d.mag_err_pct,
            phase_err_deg: d.phase_err_deg,
            cse_db: d.cse_db,
            avg_burst_power_dbfs: d.avg_burst_power_dbfs,
        }),
        Protocol::OfdmN => {
            let rails = d.rails.expect("OFDM demod provides rail estimates");
            ImpairmentVector::N(ImpairmentVectorN {
                evm_rms_pct: d.evm_rms_pct,
                cfo_hz: d.cfo_hz,
                sce_ppm: d.sce_ppm,
                iq_offset_db: d.iq_offset_db,
                gain_imb_db: rails.gain_imb_db,
                quad_err_deg: rails.quad_err_deg,
                timing_skew_s: rails.timing_skew_s,
                pilot_evm_pct: d.pilot_evm_pct.expect("OFDM demod provides pilot EVM"),
            })
        }
    })
}

pub(crate) fn wrap_angle(a: f64) -> f64 {
    let mut x = a;
    while x > std::f64::consts::PI {
        x -= 2.0 * std::f64::consts::PI;
    }
    while x < -std::f64::consts::PI {
        x += 2.0 * std::f64::consts::PI;
    }
    x
}

/// Mean absolute error over equal-length vector sequences, averaged over
/// all elements.
pub fn mae(y: &[Vec<f64>], yhat: &[Vec<f64>]) -> Result<f64> {
    if y.is_empty() || yhat.is_empty() {
        return Err(MetrologyError::EmptyInput("mae"));
    }
    if y.len() != yhat.len() {
        return Err(MetrologyError::LengthMismatch(format!(
            "mae: {} vs {} rows",
            y.len(),
            yhat.len()
        )));
    }
    let mut acc = 0.0;
    let mut count = 0usize;
    for (a, b) in y.iter().zip(yhat) {
        if a.len() != b.len() {
            return Err(MetrologyError::LengthMismatch(format!(
                "mae: row dims {} vs {}",
                a.len(),
                b.len()
            )));
        }
        for (x, z) in a.iter().zip(b) {
            acc += (x - z).abs();
            count += 1;
        }
    }
    Ok(acc / count as f64)
}
