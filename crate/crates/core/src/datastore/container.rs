//! The RFF1 binary container.
//!
//! Little-endian layout:
//!   fixed header: magic "RFF1" | version u16 | record_count u64 |
//!                 samples_per_record u32 | label_dims u32 |
//!                 sample_rate_hz f64
//!   record index table: per record
//!                 device_id u32 | day_id u32 | scenario u8 | protocol u8 |
//!                 sync_ok u8 | pad u8 | t_minutes f32
//!   data region: per record, interleaved I/Q f32 pairs, then the f32
//!                 label block (zeros when sync failed)
//!
//! A JSON manifest is written alongside as `<file>.manifest.json`.

use super::{DatasetManifest, DatastoreError, FrameRecord, Result};
use crate::impair::Scenario;
use crate::waveform::Protocol;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use num_complex::Complex32;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

pub const RFF1_MAGIC: [u8; 4] = *b"RFF1";
pub const RFF1_VERSION: u16 = 1;

const HEADER_LEN: u64 = 4 + 2 + 8 + 4 + 4 + 8;
const INDEX_ENTRY_LEN: u64 = 4 + 4 + 1 + 1 + 1 + 1 + 4;

fn manifest_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".manifest.json");
    PathBuf::from(p)
}

fn scenario_code(s: Scenario) -> u8 {
    match s {
        Scenario::Wired => 0,
        Scenario::Wireless => 1,
    }
}

fn scenario_from(code: u8, idx: usize) -> Result<Scenario> {
    match code {
        0 => Ok(Scenario::Wired),
        1 => Ok(Scenario::Wireless),
        _ => Err(DatastoreError::BadRecord {
            record_index: idx,
            detail: format!("unknown scenario code {code}"),
        }),
    }
}

fn protocol_code(p: Protocol) -> u8 {
    match p {
        Protocol::DsssB => 0,
        Protocol::OfdmN => 1,
    }
}

fn protocol_from(code: u8, idx: usize) -> Result<Protocol> {
    match code {
        0 => Ok(Protocol::DsssB),
        1 => Ok(Protocol::OfdmN),
        _ => Err(DatastoreError::BadRecord {
            record_index: idx,
            detail: format!("unknown protocol code {code}"),
        }),
    }
}

/// Write records and the manifest sidecar. Records are validated against
/// the manifest (lengths, NaN-freedom, label presence) before any bytes go
/// out.
pub fn write_dataset(
    path: &Path,
    records: &[FrameRecord],
    manifest: &DatasetManifest,
) -> Result<()> {
    let mut manifest = manifest.clone();
    manifest.record_count = records.len() as u64;
    for (i, rec) in records.iter().enumerate() {
        manifest.validate_record(i, rec)?;
    }

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&RFF1_MAGIC)?;
    w.write_u16::<LittleEndian>(RFF1_VERSION)?;
    w.write_u64::<LittleEndian>(records.len() as u64)?;
    w.write_u32::<LittleEndian>(manifest.samples_per_record)?;
    w.write_u32::<LittleEndian>(manifest.label_schema.len() as u32)?;
    w.write_f64::<LittleEndian>(manifest.sample_rate_hz)?;
    for rec in records {
        w.write_u32::<LittleEndian>(rec.device_id)?;
        w.write_u32::<LittleEndian>(rec.day_id)?;
        w.write_u8(scenario_code(rec.scenario))?;
        w.write_u8(protocol_code(rec.protocol))?;
        w.write_u8(u8::from(rec.sync_ok))?;
        w.write_u8(0)?;
        w.write_f32::<LittleEndian>(rec.t_minutes)?;
    }
    let label_dims = manifest.label_schema.len();
    for rec in records {
        for s in &rec.samples {
            w.write_f32::<LittleEndian>(s.re)?;
            w.write_f32::<LittleEndian>(s.im)?;
        }
        match &rec.labels {
            Some(labels) => {
                for &v in labels {
                    w.write_f32::<LittleEndian>(v)?;
                }
            }
            None => {
                for _ in 0..label_dims {
                    w.write_f32::<LittleEndian>(0.0)?;
                }
            }
        }
    }
    w.flush()?;

    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| DatastoreError::Manifest(e.to_string()))?;
    std::fs::write(manifest_path(path), json)?;
    Ok(())
}

/// Read records and the manifest sidecar, verifying the binary header
/// against the manifest. Truncation errors name the record being read.
pub fn read_dataset(path: &Path) -> Result<(Vec<FrameRecord>, DatasetManifest)> {
    let text = std::fs::read_to_string(manifest_path(path))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| DatastoreError::Manifest(e.to_string()))?;

    let file_len = std::fs::metadata(path)?.len();
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| DatastoreError::TruncatedFile { record_index: 0 })?;
    if magic != RFF1_MAGIC {
        return Err(DatastoreError::BadMagic {
            found: magic,
            expected: RFF1_MAGIC,
        });
    }
    let version = r.read_u16::<LittleEndian>()?;
    if version != RFF1_VERSION {
        return Err(DatastoreError::VersionMismatch {
            found: version,
            expected: RFF1_VERSION,
        });
    }
    let record_count = r.read_u64::<LittleEndian>()? as usize;
    let samples_per_record = r.read_u32::<LittleEndian>()?;
    let label_dims = r.read_u32::<LittleEndian>()? as usize;
    let sample_rate_hz = r.read_f64::<LittleEndian>()?;

    if record_count as u64 != manifest.record_count
        || samples_per_record != manifest.samples_per_record
        || label_dims != manifest.label_schema.len()
        || sample_rate_hz != manifest.sample_rate_hz
    {
        return Err(DatastoreError::SchemaMismatch(format!(
            "binary header ({record_count} records, {samples_per_record} samples, \
             {label_dims} labels, {sample_rate_hz} Hz) disagrees with manifest \
             ({} records, {} samples, {} labels, {} Hz)",
            manifest.record_count,
            manifest.samples_per_record,
            manifest.label_schema.len(),
            manifest.sample_rate_hz
        )));
    }

    // Pre-compute the record that any truncation lands in.
    let record_bytes = u64::from(samples_per_record) * 8 + label_dims as u64 * 4;
    let data_start = HEADER_LEN + record_count as u64 * INDEX_ENTRY_LEN;
    let expected = data_start + record_count as u64 * record_bytes;
    if file_len < expected {
        let record_index = if file_len <= data_start {
            ((file_len.saturating_sub(HEADER_LEN)) / INDEX_ENTRY_LEN) as usize
        } else {
            ((file_len - data_start) / record_bytes) as usize
        };
        return Err(DatastoreError::TruncatedFile {
            record_index: record_index.min(record_count.saturating_sub(1)),
        });
    }

    struct IndexEntry {
        device_id: u32,
        day_id: u32,
        scenario: Scenario,
        protocol: Protocol,
        sync_ok: bool,
        t_minutes: f32,
    }
    let mut index = Vec::with_capacity(record_count);
    for i in 0..record_count {
        let device_id = r.read_u32::<LittleEndian>()?;
        let day_id = r.read_u32::<LittleEndian>()?;
        let scenario = scenario_from(r.read_u8()?, i)?;
        let protocol = protocol_from(r.read_u8()?, i)?;
        let sync_ok = r.read_u8()? != 0;
        let _pad = r.read_u8()?;
        let t_minutes = r.read_f32::<LittleEndian>()?;
        index.push(IndexEntry {
            device_id,
            day_id,
            scenario,
            protocol,
            sync_ok,
            t_minutes,
        });
    }

    let mut records = Vec::with_capacity(record_count);
    let mut iq = vec![0.0f32; samples_per_record as usize * 2];
    let mut labels = vec![0.0f32; label_dims];
    for (i, e) in index.into_iter().enumerate() {
        r.read_f32_into::<LittleEndian>(&mut iq)
            .map_err(|_| DatastoreError::TruncatedFile { record_index: i })?;
        r.read_f32_into::<LittleEndian>(&mut labels)
            .map_err(|_| DatastoreError::TruncatedFile { record_index: i })?;
        let samples: Vec<Complex32> = iq
            .chunks_exact(2)
            .map(|p| Complex32::new(p[0], p[1]))
            .collect();
        records.push(FrameRecord {
            device_id: e.device_id,
            day_id: e.day_id,
            scenario: e.scenario,
            protocol: e.protocol,
            t_minutes: e.t_minutes,
            samples,
            labels: e.sync_ok.then(|| labels.clone()),
            sync_ok: e.sync_ok,
        });
    }
    Ok((records, manifest))
}
