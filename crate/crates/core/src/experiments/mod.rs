//! Batch experiment runners behind the `rff` CLI: dataset generation,
//! exposure experiments, the transfer pipeline, impairment-subset sweeps,
//! cross-protocol runs and report emission.

mod exposure;
mod gen;
mod heedful_run;
mod report;
mod subsets;
mod xproto;

pub use exposure::cmd_exposure;
pub use gen::{cmd_gen, GenSummary};
pub use heedful_run::cmd_heedful;
pub use report::cmd_report;
pub use subsets::cmd_subsets;
pub use xproto::cmd_xproto;

use crate::config::{config_hash, RunConfig};
use crate::datastore::{read_dataset, DatasetManifest, FrameRecord};
use crate::derive_seed;
use crate::impair::Scenario;
use crate::waveform::Protocol;
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("another experiment holds the lock {0:?}; remove it if stale")]
    LockHeld(PathBuf),
    #[error("missing dataset {0:?}; run `rff gen` first")]
    MissingDataset(PathBuf),
    #[error("dataset has no records for {0}")]
    EmptyGroup(String),
    #[error(
        "sync failures exceed 1%: {failed} of {total} frames failed \
         (per device: {per_device:?})"
    )]
    TooManySyncFailures {
        failed: usize,
        total: usize,
        per_device: Vec<(u32, usize)>,
    },
    #[error("interval coverage missing: {0}")]
    MissingInterval(String),
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Datastore(#[from] crate::datastore::DatastoreError),
    #[error(transparent)]
    Heedful(#[from] crate::heedful::HeedfulError),
    #[error(transparent)]
    Impair(#[from] crate::impair::ImpairError),
    #[error(transparent)]
    Waveform(#[from] crate::waveform::WaveformError),
    #[error(transparent)]
    Nn(#[from] crate::tensornn::NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

/// One experiment command runs at a time per output directory.
pub struct LockGuard {
    path: PathBuf,
}

impl LockGuard {
    pub fn acquire(out_dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(out_dir)?;
        let path = out_dir.join(".rff.lock");
        match std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(mut f) => {
                let _ = writeln!(f, "pid {}", std::process::id());
                Ok(LockGuard { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(ExperimentError::LockHeld(path))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// Identity of one generated dataset file.
pub fn dataset_id(protocol: Protocol, scenario: Scenario, day: u32) -> String {
    format!(
        "{}_{}_day{}",
        protocol.short_name(),
        scenario.short_name(),
        day
    )
}

pub fn dataset_path(out_dir: &Path, protocol: Protocol, scenario: Scenario, day: u32) -> PathBuf {
    out_dir
        .join("data")
        .join(format!("{}.rff1", dataset_id(protocol, scenario, day)))
}

pub fn load_days(
    out_dir: &Path,
    protocol: Protocol,
    scenario: Scenario,
    n_days: usize,
) -> Result<Vec<(Vec<FrameRecord>, DatasetManifest)>> {
    let mut out = Vec::with_capacity(n_days);
    for day in 0..n_days {
        let path = dataset_path(out_dir, protocol, scenario, day as u32);
        if !path.exists() {
            return Err(ExperimentError::MissingDataset(path));
        }
        out.push(read_dataset(&path)?);
    }
    Ok(out)
}

/// Deterministically split an index set by fractions (trailing set takes
/// the remainder).
pub fn fraction_split(indices: &[usize], fractions: &[f64], seed: u64) -> Vec<Vec<usize>> {
    let mut idx = indices.to_vec();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let n = idx.len();
    let mut out = Vec::with_capacity(fractions.len());
    let mut taken = 0usize;
    for (i, &f) in fractions.iter().enumerate() {
        let count = if i + 1 == fractions.len() {
            n - taken
        } else {
            ((n as f64) * f).round() as usize
        };
        let count = count.min(n - taken);
        out.push(idx[taken..taken + count].to_vec());
        taken += count;
    }
    out
}

/// Round timeline fractions to per-segment frame counts summing to n.
pub fn timeline_counts(cfg: &RunConfig, n: usize) -> Vec<usize> {
    let segs = &cfg.dataset.timeline;
    let mut counts: Vec<usize> = segs
        .iter()
        .map(|s| (s.fraction * n as f64).floor() as usize)
        .collect();
    let mut total: usize = counts.iter().sum();
    let n_segs = counts.len();
    let mut i = 0;
    while total < n {
        counts[i % n_segs] += 1;
        total += 1;
        i += 1;
    }
    counts
}

/// The 0-30 minute timestamps of one device's session.
pub fn timeline_times(cfg: &RunConfig, n: usize) -> Vec<f64> {
    let counts = timeline_counts(cfg, n);
    let mut times = Vec::with_capacity(n);
    for (seg, &count) in cfg.dataset.timeline.iter().zip(&counts) {
        for i in 0..count {
            let frac = (i as f64 + 0.5) / count as f64;
            times.push(seg.t_lo_min + frac * (seg.t_hi_min - seg.t_lo_min));
        }
    }
    times
}

/// Simple CSV emitter; the first row written fixes the header.
pub struct CsvFile {
    file: std::fs::File,
}

impl CsvFile {
    pub fn create(path: &Path, header: &str) -> Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut file = std::fs::File::create(path)?;
        writeln!(file, "{header}")?;
        Ok(CsvFile { file })
    }

    pub fn row(&mut self, fields: &[String]) -> Result<()> {
        writeln!(self.file, "{}", fields.join(","))?;
        Ok(())
    }
}

/// Run metadata dropped next to every experiment's CSVs for exact replay.
pub fn write_run_manifest(out_dir: &Path, cfg: &RunConfig, command: &str) -> Result<()> {
    let manifest = serde_json::json!({
        "command": command,
        "config_hash": config_hash(cfg),
        "master_seed": cfg.master_seed,
        "config": cfg,
    });
    std::fs::write(
        out_dir.join(format!("{command}_run.json")),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    Ok(())
}

/// Format an accuracy as a CSV-stable string.
pub fn fmt_acc(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v:.4}")
    }
}

/// Cumulative warm-up windows ([0,w) minutes) plus the stable group, the
/// grouping used in the reports.
pub fn report_groups(cfg: &RunConfig) -> Vec<(String, f64, f64)> {
    let mut groups: Vec<(String, f64, f64)> = cfg
        .experiment
        .report_windows
        .iter()
        .map(|&w| (format!("[0,{w})"), 0.0, w))
        .collect();
    groups.push((
        "stable".to_string(),
        cfg.training.stabilization_min,
        f64::INFINITY,
    ));
    groups
}

pub(crate) fn seeds_for(cfg: &RunConfig, tag: &str, ids: &[u64]) -> u64 {
    derive_seed(cfg.master_seed, tag, ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let a = LockGuard::acquire(dir.path()).unwrap();
        assert!(matches!(
            LockGuard::acquire(dir.path()),
            Err(ExperimentError::LockHeld(_))
        ));
        drop(a);
        let _b = LockGuard::acquire(dir.path()).unwrap();
    }

    #[test]
    fn fraction_split_is_exact_and_disjoint() {
        let idx: Vec<usize> = (0..100).collect();
        let parts = fraction_split(&idx, &[0.6, 0.2, 0.2], 7);
        assert_eq!(parts[0].len(), 60);
        assert_eq!(parts[1].len(), 20);
        assert_eq!(parts[2].len(), 20);
        let mut all: Vec<usize> = parts.concat();
        all.sort_unstable();
        assert_eq!(all, idx);
    }

    #[test]
    fn timeline_counts_sum_to_n() {
        let cfg = crate::config::RunConfig::desk();
        for n in [1usize, 7, 400, 401] {
            let counts = timeline_counts(&cfg, n);
            assert_eq!(counts.iter().sum::<usize>(), n);
        }
        let times = timeline_times(&cfg, 400);
        assert_eq!(times.len(), 400);
        assert!(times.iter().all(|&t| (0.0..30.0).contains(&t)));
    }
}
