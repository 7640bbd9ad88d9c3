//! Min-max label normalization fitted on the training split.

use super::{MetrologyError, Result};
use serde::{Deserialize, Serialize};

/// Per-dimension min/max over the training labels. Persisted as JSON next
/// to datasets and checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub fields: Vec<String>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormStats {
    /// Fit per-dimension min/max. Dimensions with max == min are flagged
    /// degenerate and map to 0.5 under `apply`.
    pub fn fit(fields: &[&str], labels: &[Vec<f64>]) -> Result<Self> {
        if labels.is_empty() {
            return Err(MetrologyError::EmptyInput("NormStats::fit"));
        }
        let dims = fields.len();
        let mut min = vec![f64::INFINITY; dims];
        let mut max = vec![f64::NEG_INFINITY; dims];
        for row in labels {
            if row.len() != dims {
                return Err(MetrologyError::LengthMismatch(format!(
                    "label row has {} dims, schema has {dims}",
                    row.len()
                )));
            }
            for (d, &v) in row.iter().enumerate() {
                min[d] = min[d].min(v);
                max[d] = max[d].max(v);
            }
        }
        Ok(NormStats {
            fields: fields.iter().map(|s| s.to_string()).collect(),
            min,
            max,
        })
    }

    pub fn dims(&self) -> usize {
        self.fields.len()
    }

    /// Scale into [0,1], clamping out-of-range test values. Degenerate
    /// dimensions map to 0.5.
    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(d, &v)| {
                let w = self.max[d] - self.min[d];
                if w <= 0.0 {
                    0.5
                } else {
                    ((v - self.min[d]) / w).clamp(0.0, 1.0)
                }
            })
            .collect()
    }

    /// Inverse transform; degenerate dimensions return their pinned value.
    pub fn invert(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(d, &v)| {
                let w = self.max[d] - self.min[d];
                if w <= 0.0 {
                    self.min[d]
                } else {
                    self.min[d] + v * w
                }
            })
            .collect()
    }

    /// Restrict to a subset of the fields, in the given order.
    pub fn subset(&self, fields: &[String]) -> Option<NormStats> {
        let mut min = Vec::with_capacity(fields.len());
        let mut max = Vec::with_capacity(fields.len());
        for f in fields {
            let idx = self.fields.iter().position(|g| g == f)?;
            min.push(self.min[idx]);
            max.push(self.max[idx]);
        }
        Some(NormStats {
            fields: fields.to_vec(),
            min,
            max,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midpoint_maps_to_half() {
        let stats = NormStats::fit(&["a"], &[vec![-10.0], vec![10.0]]).unwrap();
        assert_eq!(stats.apply(&[0.0]), vec![0.5]);
    }

    #[test]
    fn degenerate_dimension_maps_to_half() {
        let stats = NormStats::fit(&["a", "b"], &[vec![3.0, 1.0], vec![3.0, 2.0]]).unwrap();
        let out = stats.apply(&[3.0, 1.5]);
        assert_eq!(out[0], 0.5);
        assert_eq!(out[1], 0.5);
    }

    #[test]
    fn apply_then_invert_round_trips_in_range() {
        let stats =
            NormStats::fit(&["a", "b"], &[vec![-1.0, 100.0], vec![4.0, 250.0]]).unwrap();
        let row = vec![2.5, 130.0];
        let back = stats.invert(&stats.apply(&row));
        for (x, y) in row.iter().zip(&back) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn out_of_range_values_clamp() {
        let stats = NormStats::fit(&["a"], &[vec![0.0], vec![1.0]]).unwrap();
        assert_eq!(stats.apply(&[5.0]), vec![1.0]);
        assert_eq!(stats.apply(&[-5.0]), vec![0.0]);
    }

    #[test]
    fn training_labels_normalize_into_unit_interval() {
        let labels: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![i as f64 * 3.0 - 10.0, (i as f64).sin()])
            .collect();
        let stats = NormStats::fit(&["a", "b"], &labels).unwrap();
        for row in &labels {
            for v in stats.apply(row) {
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn subset_preserves_per_field_ranges() {
        let stats = NormStats::fit(
            &["a", "b", "c"],
            &[vec![0.0, 10.0, -5.0], vec![1.0, 20.0, 5.0]],
        )
        .unwrap();
        let sub = stats.subset(&["c".into(), "a".into()]).unwrap();
        assert_eq!(sub.min, vec![-5.0, 0.0]);
        assert_eq!(sub.max, vec![5.0, 1.0]);
        assert!(stats.subset(&["zz".into()]).is_none());
    }
}
