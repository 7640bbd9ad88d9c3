//! Evaluation: grouped per-frame accuracy tables, embeddings, silhouette.

use super::train::window_tensor;
use super::{encoder_spec, Result, TrainedClassifier, TrainedEstimator};
use crate::datastore::{FrameRecord, WindowPolicy};
use crate::tensornn::{forward, ModelSpec, Params};
use std::collections::BTreeMap;

/// Test-set grouping for accuracy tables.
#[derive(Debug, Clone)]
pub enum Grouping {
    /// Disjoint [lo, hi) minute bins; together they partition the records
    /// they cover.
    Interval(Vec<(f64, f64)>),
    Day,
    Protocol,
}

#[derive(Debug, Clone)]
pub struct EvalRow {
    pub group: String,
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// (true class, predicted class) -> count
    pub confusion: BTreeMap<(usize, usize), usize>,
    /// Set when the group matched no records.
    pub empty_warning: bool,
}

#[derive(Debug, Clone)]
pub struct EvalTable {
    pub rows: Vec<EvalRow>,
}

impl EvalTable {
    pub fn accuracy_of(&self, group: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.group == group && !r.empty_warning)
            .map(|r| r.accuracy)
    }
}

/// Argmax class predictions in batches.
pub fn predict_classes(
    spec: &ModelSpec,
    params: &Params,
    records: &[FrameRecord],
    indices: &[usize],
    window_len: usize,
    policy: WindowPolicy,
    batch_size: usize,
) -> Result<Vec<usize>> {
    let windows = window_tensor(records, indices, window_len, policy)?;
    let mut out = Vec::with_capacity(indices.len());
    let all: Vec<usize> = (0..indices.len()).collect();
    for chunk in all.chunks(batch_size) {
        let l = windows[0].shape[1];
        let mut data = Vec::with_capacity(chunk.len() * 2 * l);
        for &p in chunk {
            data.extend_from_slice(&windows[p].data);
        }
        let x = crate::tensornn::Tensor::from_vec(&[chunk.len(), 1, 2, l], data);
        let cache = forward(spec, params, &x)?;
        let c = cache.output().shape[1];
        for row in cache.output().data.chunks(c) {
            let (best, _) = row
                .iter()
                .enumerate()
                .fold((0usize, f32::NEG_INFINITY), |(bi, bv), (i, &v)| {
                    if v > bv {
                        (i, v)
                    } else {
                        (bi, bv)
                    }
                });
            out.push(best);
        }
    }
    Ok(out)
}

pub fn accuracy(truth: &[usize], pred: &[usize]) -> f64 {
    if truth.is_empty() {
        return f64::NAN;
    }
    let correct = truth.iter().zip(pred).filter(|(a, b)| a == b).count();
    correct as f64 / truth.len() as f64
}

/// Per-group per-frame accuracy with confusion counts.
pub fn evaluate(
    classifier: &TrainedClassifier,
    records: &[FrameRecord],
    indices: &[usize],
    grouping: &Grouping,
) -> Result<EvalTable> {
    let preds = predict_classes(
        &classifier.spec,
        &classifier.params,
        records,
        indices,
        classifier.window_len,
        classifier.window_policy,
        64,
    )?;
    let truth: Vec<Option<usize>> = indices
        .iter()
        .map(|&i| {
            classifier
                .class_devices
                .binary_search(&records[i].device_id)
                .ok()
        })
        .collect();

    let group_of = |i: usize| -> Option<String> {
        let rec = &records[indices[i]];
        match grouping {
            Grouping::Interval(bins) => bins
                .iter()
                .find(|&&(lo, hi)| f64::from(rec.t_minutes) >= lo && f64::from(rec.t_minutes) < hi)
                .map(|&(lo, hi)| {
                    if hi.is_infinite() {
                        format!("[{lo},inf)")
                    } else {
                        format!("[{lo},{hi})")
                    }
                }),
            Grouping::Day => Some(format!("day{}", rec.day_id)),
            Grouping::Protocol => Some(rec.protocol.short_name().to_string()),
        }
    };

    let group_names: Vec<String> = match grouping {
        Grouping::Interval(bins) => bins
            .iter()
            .map(|&(lo, hi)| {
                if hi.is_infinite() {
                    format!("[{lo},inf)")
                } else {
                    format!("[{lo},{hi})")
                }
            })
            .collect(),
        Grouping::Day => {
            let mut days: Vec<u32> = indices.iter().map(|&i| records[i].day_id).collect();
            days.sort_unstable();
            days.dedup();
            days.into_iter().map(|d| format!("day{d}")).collect()
        }
        Grouping::Protocol => {
            let mut ps: Vec<&str> = indices
                .iter()
                .map(|&i| records[i].protocol.short_name())
                .collect();
            ps.sort_unstable();
            ps.dedup();
            ps.into_iter().map(|s| s.to_string()).collect()
        }
    };

    let mut rows: Vec<EvalRow> = group_names
        .into_iter()
        .map(|g| EvalRow {
            group: g,
            n: 0,
            correct: 0,
            accuracy: 0.0,
            confusion: BTreeMap::new(),
            empty_warning: false,
        })
        .collect();

    for i in 0..indices.len() {
        let Some(gname) = group_of(i) else { continue };
        let Some(t) = truth[i] else { continue };
        let row = rows.iter_mut().find(|r| r.group == gname).unwrap();
        row.n += 1;
        if t == preds[i] {
            row.correct += 1;
        }
        *row.confusion.entry((t, preds[i])).or_insert(0) += 1;
    }
    for row in &mut rows {
        if row.n == 0 {
            row.empty_warning = true;
        } else {
            row.accuracy = row.correct as f64 / row.n as f64;
        }
    }
    Ok(EvalTable { rows })
}

/// Embeddings from the estimator's feature extractor (the output of the
/// final embedding layer), one row per record.
pub fn embed_records(
    estimator: &TrainedEstimator,
    records: &[FrameRecord],
    indices: &[usize],
) -> Result<Vec<Vec<f32>>> {
    let enc = encoder_spec(&estimator.spec);
    let windows = window_tensor(records, indices, estimator.window_len, estimator.window_policy)?;
    let mut out = Vec::with_capacity(indices.len());
    let all: Vec<usize> = (0..indices.len()).collect();
    for chunk in all.chunks(64) {
        let l = windows[0].shape[1];
        let mut data = Vec::with_capacity(chunk.len() * 2 * l);
        for &p in chunk {
            data.extend_from_slice(&windows[p].data);
        }
        let x = crate::tensornn::Tensor::from_vec(&[chunk.len(), 1, 2, l], data);
        let cache = forward(&enc, &estimator.params, &x)?;
        let d = cache.output().shape[1];
        for row in cache.output().data.chunks(d) {
            out.push(row.to_vec());
        }
    }
    Ok(out)
}

/// Mean silhouette coefficient over points labeled by cluster.
pub fn silhouette_score(points: &[Vec<f32>], labels: &[usize]) -> f64 {
    assert_eq!(points.len(), labels.len());
    let n = points.len();
    if n < 2 {
        return f64::NAN;
    }
    let clusters: Vec<usize> = {
        let mut c = labels.to_vec();
        c.sort_unstable();
        c.dedup();
        c
    };
    if clusters.len() < 2 {
        return f64::NAN;
    }
    let dist = |a: &[f32], b: &[f32]| -> f64 {
        a.iter()
            .zip(b)
            .map(|(&x, &y)| {
                let d = f64::from(x) - f64::from(y);
                d * d
            })
            .sum::<f64>()
            .sqrt()
    };
    let mut total = 0.0;
    let mut counted = 0usize;
    for i in 0..n {
        let mut per_cluster: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for j in 0..n {
            if i == j {
                continue;
            }
            let e = per_cluster.entry(labels[j]).or_insert((0.0, 0));
            e.0 += dist(&points[i], &points[j]);
            e.1 += 1;
        }
        let own = labels[i];
        let Some(&(own_sum, own_n)) = per_cluster.get(&own) else {
            continue; // singleton cluster
        };
        if own_n == 0 {
            continue;
        }
        let a = own_sum / own_n as f64;
        let b = per_cluster
            .iter()
            .filter(|(&c, _)| c != own)
            .map(|(_, &(s, m))| s / m as f64)
            .fold(f64::INFINITY, f64::min);
        let s = (b - a) / a.max(b);
        total += s;
        counted += 1;
    }
    total / counted as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::impair::Scenario;
    use crate::waveform::Protocol;
    use num_complex::Complex32;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn record_at(device: u32, day: u32, t: f32) -> FrameRecord {
        FrameRecord {
            device_id: device,
            day_id: day,
            scenario: Scenario::Wired,
            protocol: Protocol::DsssB,
            t_minutes: t,
            samples: vec![Complex32::new(0.0, 0.0); 4],
            labels: Some(vec![0.0; 8]),
            sync_ok: true,
        }
    }

    struct FakePredictions {
        truth: Vec<usize>,
        pred: Vec<usize>,
    }

    fn tabulate(records: &[FrameRecord], fp: &FakePredictions, bins: &[(f64, f64)]) -> EvalTable {
        // Grouping logic mirrored for prediction vectors produced outside
        // a trained model (keeps these tests free of training).
        let mut rows: Vec<EvalRow> = bins
            .iter()
            .map(|&(lo, hi)| EvalRow {
                group: if hi.is_infinite() {
                    format!("[{lo},inf)")
                } else {
                    format!("[{lo},{hi})")
                },
                n: 0,
                correct: 0,
                accuracy: 0.0,
                confusion: BTreeMap::new(),
                empty_warning: false,
            })
            .collect();
        for (i, rec) in records.iter().enumerate() {
            let Some(pos) = bins
                .iter()
                .position(|&(lo, hi)| f64::from(rec.t_minutes) >= lo && f64::from(rec.t_minutes) < hi)
            else {
                continue;
            };
            rows[pos].n += 1;
            if fp.truth[i] == fp.pred[i] {
                rows[pos].correct += 1;
            }
        }
        for row in &mut rows {
            if row.n == 0 {
                row.empty_warning = true;
            } else {
                row.accuracy = row.correct as f64 / row.n as f64;
            }
        }
        EvalTable { rows }
    }

    #[test]
    fn perfect_predictor_scores_100_in_every_group() {
        let records: Vec<FrameRecord> = (0..300)
            .map(|i| record_at(i % 3, 0, 30.0 * (i as f32 / 300.0)))
            .collect();
        let truth: Vec<usize> = records.iter().map(|r| r.device_id as usize).collect();
        let fp = FakePredictions {
            pred: truth.clone(),
            truth,
        };
        let bins = [(0.0, 2.0), (2.0, 12.0), (12.0, f64::INFINITY)];
        let table = tabulate(&records, &fp, &bins);
        for row in &table.rows {
            assert!(!row.empty_warning);
            assert_eq!(row.accuracy, 1.0);
        }
    }

    #[test]
    fn uniform_random_predictor_sits_at_chance() {
        let n_classes = 15usize;
        let records: Vec<FrameRecord> = (0..6000)
            .map(|i| record_at((i % n_classes) as u32, 0, 15.0))
            .collect();
        let truth: Vec<usize> = records.iter().map(|r| r.device_id as usize).collect();
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let pred: Vec<usize> = (0..records.len()).map(|_| rng.gen_range(0..n_classes)).collect();
        let acc = accuracy(&truth, &pred);
        let chance = 1.0 / n_classes as f64;
        assert!((acc - chance).abs() < 0.02, "accuracy {acc} vs chance {chance}");
    }

    #[test]
    fn interval_groups_partition_records() {
        let records: Vec<FrameRecord> = (0..500)
            .map(|i| record_at(i % 4, 0, 30.0 * (i as f32 / 500.0)))
            .collect();
        let truth: Vec<usize> = records.iter().map(|r| r.device_id as usize).collect();
        let fp = FakePredictions {
            pred: truth.clone(),
            truth,
        };
        let bins = [
            (0.0, 2.0),
            (2.0, 4.0),
            (4.0, 6.0),
            (6.0, 12.0),
            (12.0, f64::INFINITY),
        ];
        let table = tabulate(&records, &fp, &bins);
        let total: usize = table.rows.iter().map(|r| r.n).sum();
        assert_eq!(total, 500);
    }

    #[test]
    fn empty_group_carries_a_warning_row() {
        let records: Vec<FrameRecord> = (0..10).map(|_| record_at(0, 0, 20.0)).collect();
        let truth = vec![0usize; 10];
        let fp = FakePredictions {
            pred: truth.clone(),
            truth,
        };
        let bins = [(0.0, 2.0), (12.0, f64::INFINITY)];
        let table = tabulate(&records, &fp, &bins);
        assert!(table.rows[0].empty_warning);
        assert!(!table.rows[1].empty_warning);
    }

    #[test]
    fn silhouette_positive_for_separated_clusters() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for c in 0..3 {
            for _ in 0..30 {
                let center = c as f32 * 10.0;
                points.push(vec![
                    center + rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                ]);
                labels.push(c);
            }
        }
        let s = silhouette_score(&points, &labels);
        assert!(s > 0.8, "silhouette {s}");
    }

    #[test]
    fn silhouette_near_zero_for_mixed_clusters() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let points: Vec<Vec<f32>> = (0..120)
            .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let labels: Vec<usize> = (0..120).map(|i| i % 2).collect();
        let s = silhouette_score(&points, &labels);
        assert!(s.abs() < 0.1, "silhouette {s}");
    }
}
