//! Split construction and input windowing.

use super::{DatastoreError, FrameRecord, Result};
use crate::tensornn::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SplitMode {
    /// Shuffled 60/20/20 train/val/test split.
    Random602020,
    /// Exact per-device train/test counts, disjoint.
    PerDeviceCounts { train_n: usize, test_n: usize },
    /// K disjoint folds of near-equal size per device.
    KFold(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub mode: SplitMode,
    /// Keep records whose t_minutes falls in any [lo, hi) window. Empty
    /// means no time filtering.
    pub interval_filters: Vec<(f64, f64)>,
    pub day_filter: Option<Vec<u32>>,
    pub seed: u64,
}

impl SplitSpec {
    pub fn random_60_20_20(seed: u64) -> Self {
        SplitSpec {
            mode: SplitMode::Random602020,
            interval_filters: vec![],
            day_filter: None,
            seed,
        }
    }
}

/// Named, disjoint record-index sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub sets: Vec<(String, Vec<usize>)>,
}

impl Splits {
    pub fn get(&self, name: &str) -> Option<&[usize]> {
        self.sets
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }
}

fn keep(rec: &FrameRecord, spec: &SplitSpec) -> bool {
    if let Some(days) = &spec.day_filter {
        if !days.contains(&rec.day_id) {
            return false;
        }
    }
    if spec.interval_filters.is_empty() {
        return true;
    }
    spec.interval_filters
        .iter()
        .any(|&(lo, hi)| f64::from(rec.t_minutes) >= lo && f64::from(rec.t_minutes) < hi)
}

/// Build deterministic, disjoint splits over the records. Filters apply
/// before any sampling.
pub fn split(records: &[FrameRecord], spec: &SplitSpec) -> Result<Splits> {
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let filtered: Vec<usize> = records
        .iter()
        .enumerate()
        .filter(|(_, r)| keep(r, spec))
        .map(|(i, _)| i)
        .collect();

    match &spec.mode {
        SplitMode::Random602020 => {
            let mut idx = filtered;
            idx.shuffle(&mut rng);
            let n = idx.len();
            let n_train = (n as f64 * 0.6).round() as usize;
            let n_val = (n as f64 * 0.2).round() as usize;
            let train = idx[..n_train].to_vec();
            let val = idx[n_train..(n_train + n_val).min(n)].to_vec();
            let test = idx[(n_train + n_val).min(n)..].to_vec();
            Ok(Splits {
                sets: vec![
                    ("train".into(), train),
                    ("val".into(), val),
                    ("test".into(), test),
                ],
            })
        }
        SplitMode::PerDeviceCounts { train_n, test_n } => {
            let mut by_device: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
            for &i in &filtered {
                by_device.entry(records[i].device_id).or_default().push(i);
            }
            let mut train = Vec::new();
            let mut test = Vec::new();
            for (device_id, mut idx) in by_device {
                if idx.len() < train_n + test_n {
                    return Err(DatastoreError::InsufficientRecords {
                        device_id,
                        available: idx.len(),
                        needed: train_n + test_n,
                    });
                }
                idx.shuffle(&mut rng);
                train.extend_from_slice(&idx[..*train_n]);
                test.extend_from_slice(&idx[*train_n..train_n + test_n]);
            }
            Ok(Splits {
                sets: vec![("train".into(), train), ("test".into(), test)],
            })
        }
        SplitMode::KFold(k) => {
            if *k < 2 {
                return Err(DatastoreError::InvalidSplit(format!(
                    "k-fold needs k >= 2, got {k}"
                )));
            }
            let mut by_device: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
            for &i in &filtered {
                by_device.entry(records[i].device_id).or_default().push(i);
            }
            let mut folds: Vec<Vec<usize>> = vec![Vec::new(); *k];
            for (_, mut idx) in by_device {
                idx.shuffle(&mut rng);
                for (j, i) in idx.into_iter().enumerate() {
                    folds[j % k].push(i);
                }
            }
            Ok(Splits {
                sets: folds
                    .into_iter()
                    .enumerate()
                    .map(|(j, f)| (format!("fold{j}"), f))
                    .collect(),
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WindowPolicy {
    Head,
    Center,
    Random(u64),
}

/// Slice a contiguous `(2, window_len)` I/Q tensor out of a record:
/// row 0 is I, row 1 is Q.
pub fn extract_window(
    record: &FrameRecord,
    window_len: usize,
    policy: WindowPolicy,
) -> Result<Tensor> {
    let n = record.samples.len();
    if window_len > n {
        return Err(DatastoreError::WindowTooLong {
            window: window_len,
            record: n,
        });
    }
    let offset = match policy {
        WindowPolicy::Head => 0,
        WindowPolicy::Center => (n - window_len) / 2,
        WindowPolicy::Random(seed) => {
            if n == window_len {
                0
            } else {
                ChaCha12Rng::seed_from_u64(seed).gen_range(0..=n - window_len)
            }
        }
    };
    let mut data = Vec::with_capacity(2 * window_len);
    for s in &record.samples[offset..offset + window_len] {
        data.push(s.re);
    }
    for s in &record.samples[offset..offset + window_len] {
        data.push(s.im);
    }
    Ok(Tensor::from_vec(&[2, window_len], data))
}

#[cfg(test)]
mod tests {
    use super::super::toy_record;
    use super::*;

    fn toy_set(devices: u32, per_device: usize) -> Vec<FrameRecord> {
        let mut out = Vec::new();
        for d in 0..devices {
            for i in 0..per_device {
                let t = 30.0 * i as f32 / per_device as f32;
                out.push(toy_record(d, t, 4));
            }
        }
        out
    }

    #[test]
    fn random_split_sizes_match_fractions() {
        let records = toy_set(4, 250); // 1000 records
        let splits = split(&records, &SplitSpec::random_60_20_20(3)).unwrap();
        assert_eq!(splits.get("train").unwrap().len(), 600);
        assert_eq!(splits.get("val").unwrap().len(), 200);
        assert_eq!(splits.get("test").unwrap().len(), 200);
    }

    #[test]
    fn splits_are_disjoint_and_deterministic() {
        let records = toy_set(3, 100);
        let spec = SplitSpec::random_60_20_20(11);
        let a = split(&records, &spec).unwrap();
        let b = split(&records, &spec).unwrap();
        assert_eq!(a, b);
        let mut seen = std::collections::HashSet::new();
        for (_, set) in &a.sets {
            for &i in set {
                assert!(seen.insert(i), "index {i} in two sets");
            }
        }
        assert_eq!(seen.len(), 300);
    }

    #[test]
    fn per_device_counts_are_exact_and_disjoint() {
        let records = toy_set(3, 4000);
        let spec = SplitSpec {
            mode: SplitMode::PerDeviceCounts {
                train_n: 3200,
                test_n: 800,
            },
            interval_filters: vec![],
            day_filter: None,
            seed: 5,
        };
        let splits = split(&records, &spec).unwrap();
        let train = splits.get("train").unwrap();
        let test = splits.get("test").unwrap();
        assert_eq!(train.len(), 3 * 3200);
        assert_eq!(test.len(), 3 * 800);
        let train_set: std::collections::HashSet<_> = train.iter().collect();
        assert!(test.iter().all(|i| !train_set.contains(i)));
    }

    #[test]
    fn insufficient_records_error_names_device_and_shortfall() {
        let records = toy_set(2, 100);
        let spec = SplitSpec {
            mode: SplitMode::PerDeviceCounts {
                train_n: 90,
                test_n: 20,
            },
            interval_filters: vec![],
            day_filter: None,
            seed: 5,
        };
        match split(&records, &spec) {
            Err(DatastoreError::InsufficientRecords {
                device_id: 0,
                available: 100,
                needed: 110,
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn interval_filter_selects_only_matching_records() {
        let records = toy_set(2, 300);
        let spec = SplitSpec {
            mode: SplitMode::Random602020,
            interval_filters: vec![(0.0, 2.0)],
            day_filter: None,
            seed: 1,
        };
        let splits = split(&records, &spec).unwrap();
        for (_, set) in &splits.sets {
            for &i in set {
                assert!(records[i].t_minutes < 2.0);
            }
        }
        let total: usize = splits.sets.iter().map(|(_, s)| s.len()).sum();
        let expected = records.iter().filter(|r| r.t_minutes < 2.0).count();
        assert_eq!(total, expected);
    }

    #[test]
    fn kfold_partitions_the_filtered_set() {
        let records = toy_set(3, 101);
        let spec = SplitSpec {
            mode: SplitMode::KFold(5),
            interval_filters: vec![],
            day_filter: None,
            seed: 2,
        };
        let splits = split(&records, &spec).unwrap();
        assert_eq!(splits.sets.len(), 5);
        let mut all: Vec<usize> = splits.sets.iter().flat_map(|(_, s)| s.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..303).collect::<Vec<_>>());
        // Near-equal fold sizes.
        for (_, f) in &splits.sets {
            assert!((f.len() as i64 - 60).abs() <= 3, "fold size {}", f.len());
        }
    }

    #[test]
    fn window_policies_slice_as_documented() {
        let rec = toy_record(1, 0.0, 10);
        let head = extract_window(&rec, 4, WindowPolicy::Head).unwrap();
        assert_eq!(head.shape, vec![2, 4]);
        assert_eq!(head.data[0], rec.samples[0].re);
        assert_eq!(head.data[4], rec.samples[0].im);

        let center = extract_window(&rec, 4, WindowPolicy::Center).unwrap();
        assert_eq!(center.data[0], rec.samples[3].re);

        let full = extract_window(&rec, 10, WindowPolicy::Head).unwrap();
        assert_eq!(full.data[9], rec.samples[9].re);

        let r1 = extract_window(&rec, 4, WindowPolicy::Random(9)).unwrap();
        let r2 = extract_window(&rec, 4, WindowPolicy::Random(9)).unwrap();
        assert_eq!(r1, r2);

        assert!(extract_window(&rec, 11, WindowPolicy::Head).is_err());
    }
}
