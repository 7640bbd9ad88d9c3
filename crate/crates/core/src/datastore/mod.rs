//! Labeled frame persistence (the RFF1 container), split construction and
//! input windowing.

mod container;
mod split;

pub use container::{read_dataset, write_dataset, RFF1_MAGIC, RFF1_VERSION};
pub use split::{extract_window, split, SplitMode, SplitSpec, Splits, WindowPolicy};

use crate::impair::Scenario;
use crate::waveform::Protocol;
use num_complex::Complex32;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatastoreError {
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { found: [u8; 4], expected: [u8; 4] },
    #[error("unsupported container version {found}, expected {expected}")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("file truncated inside record {record_index}")]
    TruncatedFile { record_index: usize },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("non-finite value in record {record_index}")]
    NonFinite { record_index: usize },
    #[error("record {record_index} does not conform to the manifest: {detail}")]
    BadRecord {
        record_index: usize,
        detail: String,
    },
    #[error("device {device_id} has {available} records, {needed} needed")]
    InsufficientRecords {
        device_id: u32,
        available: usize,
        needed: usize,
    },
    #[error("window of {window} samples exceeds record length {record}")]
    WindowTooLong { window: usize, record: usize },
    #[error("invalid split spec: {0}")]
    InvalidSplit(String),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DatastoreError>;

/// One persisted frame: raw samples plus measured labels and capture
/// metadata. Labels are present exactly when sync succeeded.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub device_id: u32,
    pub day_id: u32,
    pub scenario: Scenario,
    pub protocol: Protocol,
    pub t_minutes: f32,
    pub samples: Vec<Complex32>,
    pub labels: Option<Vec<f32>>,
    pub sync_ok: bool,
}

/// JSON sidecar describing an RFF1 file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub magic: String,
    pub version: u16,
    pub record_count: u64,
    pub samples_per_record: u32,
    pub label_schema: Vec<String>,
    pub sample_rate_hz: f64,
    pub protocol: Protocol,
    pub scenario: Scenario,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub norm_stats_ref: Option<String>,
    /// Measurement conventions worth recording (e.g. labels measured over
    /// the payload region only).
    pub notes: String,
}

impl DatasetManifest {
    pub fn new(
        protocol: Protocol,
        scenario: Scenario,
        samples_per_record: u32,
        label_schema: &[&str],
        sample_rate_hz: f64,
        config_hash: String,
    ) -> Self {
        DatasetManifest {
            magic: "RFF1".to_string(),
            version: RFF1_VERSION,
            record_count: 0,
            samples_per_record,
            label_schema: label_schema.iter().map(|s| s.to_string()).collect(),
            sample_rate_hz,
            protocol,
            scenario,
            config_hash,
            seeds: BTreeMap::new(),
            norm_stats_ref: None,
            notes: "labels measured over the payload portion (after the preamble)".to_string(),
        }
    }

    pub fn validate_record(&self, idx: usize, rec: &FrameRecord) -> Result<()> {
        if rec.samples.len() != self.samples_per_record as usize {
            return Err(DatastoreError::BadRecord {
                record_index: idx,
                detail: format!(
                    "{} samples, manifest says {}",
                    rec.samples.len(),
                    self.samples_per_record
                ),
            });
        }
        if rec.sync_ok != rec.labels.is_some() {
            return Err(DatastoreError::BadRecord {
                record_index: idx,
                detail: "labels must be present exactly when sync_ok".into(),
            });
        }
        if let Some(labels) = &rec.labels {
            if labels.len() != self.label_schema.len() {
                return Err(DatastoreError::BadRecord {
                    record_index: idx,
                    detail: format!(
                        "{} labels, schema has {}",
                        labels.len(),
                        self.label_schema.len()
                    ),
                });
            }
            if !labels.iter().all(|v| v.is_finite()) {
                return Err(DatastoreError::NonFinite { record_index: idx });
            }
        }
        if !rec.samples.iter().all(|s| s.re.is_finite() && s.im.is_finite()) {
            return Err(DatastoreError::NonFinite { record_index: idx });
        }
        if rec.protocol != self.protocol || rec.scenario != self.scenario {
            return Err(DatastoreError::BadRecord {
                record_index: idx,
                detail: "record protocol/scenario does not match manifest".into(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) fn toy_record(device_id: u32, t_minutes: f32, n_samples: usize) -> FrameRecord {
    let samples = (0..n_samples)
        .map(|i| Complex32::new(i as f32 * 0.01, device_id as f32 - i as f32 * 0.02))
        .collect();
    FrameRecord {
        device_id,
        day_id: 0,
        scenario: Scenario::Wired,
        protocol: Protocol::DsssB,
        t_minutes,
        samples,
        labels: Some(vec![0.0; 8]),
        sync_ok: true,
    }
}
