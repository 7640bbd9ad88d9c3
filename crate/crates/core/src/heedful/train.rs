//! Training loops for the estimator and the classifiers.

use super::{
    build_estimator, ClassifierConfig, EstimatorConfig, HeedfulError, Result, TrainConfig,
};
use crate::datastore::{extract_window, FrameRecord, WindowPolicy};
use crate::derive_seed;
use crate::metrology::{mae, NormStats};
use crate::tensornn::{
    adam_step_masked, backward, forward, loss_mse, loss_xent_batch, AdamState, ModelSpec, Params,
    Tensor,
};
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// A pretrained impairment estimator plus everything needed to reuse or
/// evaluate it.
#[derive(Debug, Clone)]
pub struct TrainedEstimator {
    pub spec: ModelSpec,
    pub params: Params,
    pub norm: NormStats,
    pub label_fields: Vec<String>,
    pub window_len: usize,
    pub window_policy: WindowPolicy,
    pub outcome: EstimatorOutcome,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimatorOutcome {
    pub train_loss: Vec<f64>,
    pub val_mae_overall: f64,
    pub test_mae_overall: f64,
    pub test_mae_per_dim: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainedClassifier {
    pub spec: ModelSpec,
    pub params: Params,
    pub class_devices: Vec<u32>,
    pub window_len: usize,
    pub window_policy: WindowPolicy,
    pub outcome: ClassifierOutcome,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierOutcome {
    pub train_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
}

pub(super) fn window_tensor(
    records: &[FrameRecord],
    indices: &[usize],
    window_len: usize,
    policy: WindowPolicy,
) -> Result<Vec<Tensor>> {
    indices
        .iter()
        .map(|&i| Ok(extract_window(&records[i], window_len, policy)?))
        .collect()
}

fn batch_input(windows: &[Tensor], picks: &[usize]) -> Tensor {
    let l = windows[0].shape[1];
    let mut data = Vec::with_capacity(picks.len() * 2 * l);
    for &p in picks {
        data.extend_from_slice(&windows[p].data);
    }
    Tensor::from_vec(&[picks.len(), 1, 2, l], data)
}

/// Labels for the subset fields, in subset order.
fn subset_labels(
    records: &[FrameRecord],
    indices: &[usize],
    schema: &[String],
    subset: &[String],
) -> Result<Vec<Vec<f64>>> {
    let positions: Vec<usize> = subset
        .iter()
        .map(|f| {
            schema
                .iter()
                .position(|g| g == f)
                .ok_or_else(|| HeedfulError::UnknownLabel(f.clone()))
        })
        .collect::<Result<_>>()?;
    indices
        .iter()
        .map(|&i| {
            let labels = records[i]
                .labels
                .as_ref()
                .ok_or(HeedfulError::UnlabeledRecord)?;
            Ok(positions.iter().map(|&p| f64::from(labels[p])).collect())
        })
        .collect()
}

/// Train the multi-output regression estimator with MSE on normalized
/// labels. The training indices must span both warm-up and stable phases.
pub fn train_estimator(
    records: &[FrameRecord],
    schema: &[String],
    train_idx: &[usize],
    val_idx: &[usize],
    test_idx: &[usize],
    est_cfg: &EstimatorConfig,
    train_cfg: &TrainConfig,
    window_policy: WindowPolicy,
) -> Result<TrainedEstimator> {
    est_cfg.validate()?;
    train_cfg.validate()?;
    let thr = train_cfg.stabilization_min;
    let has_warm = train_idx
        .iter()
        .any(|&i| f64::from(records[i].t_minutes) < thr);
    let has_stable = train_idx
        .iter()
        .any(|&i| f64::from(records[i].t_minutes) >= thr);
    if !has_warm || !has_stable {
        return Err(HeedfulError::MissingPhaseCoverage(thr));
    }

    let spec = build_estimator(est_cfg)?;
    let mut params = Params::init(&spec, derive_seed(train_cfg.seed, "est-init", &[]))?;

    let window_len = est_cfg.input_shape.1;
    let train_windows = window_tensor(records, train_idx, window_len, window_policy)?;
    let train_raw = subset_labels(records, train_idx, schema, &est_cfg.label_subset)?;
    let fields: Vec<&str> = est_cfg.label_subset.iter().map(String::as_str).collect();
    let norm = NormStats::fit(&fields, &train_raw)?;
    let train_y: Vec<Vec<f64>> = train_raw.iter().map(|r| norm.apply(r)).collect();

    let dims = est_cfg.label_subset.len();
    let mut state = AdamState::new(&params, train_cfg.lr);
    let trainable = vec![true; params.tensors.len()];
    let mut history = Vec::with_capacity(train_cfg.epochs);
    let mut order: Vec<usize> = (0..train_idx.len()).collect();
    for epoch in 0..train_cfg.epochs {
        let mut rng =
            ChaCha12Rng::seed_from_u64(derive_seed(train_cfg.seed, "est-epoch", &[epoch as u64]));
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(train_cfg.batch_size) {
            let x = batch_input(&train_windows, chunk);
            let mut y = Tensor::zeros(&[chunk.len(), dims]);
            for (bi, &p) in chunk.iter().enumerate() {
                for d in 0..dims {
                    y.data[bi * dims + d] = train_y[p][d] as f32;
                }
            }
            let cache = forward(&spec, &params, &x)?;
            let (loss, grad) = loss_mse(cache.output(), &y)?;
            let (grads, _) = backward(&spec, &params, &cache, &grad)?;
            adam_step_masked(&mut params, &grads, &mut state, &trainable)?;
            epoch_loss += loss;
            batches += 1;
        }
        history.push(epoch_loss / batches.max(1) as f64);
    }

    let held_out_mae = |idx: &[usize]| -> Result<(f64, Vec<f64>)> {
        if idx.is_empty() {
            return Ok((f64::NAN, vec![f64::NAN; dims]));
        }
        let raw = subset_labels(records, idx, schema, &est_cfg.label_subset)?;
        let truth: Vec<Vec<f64>> = raw.iter().map(|r| norm.apply(r)).collect();
        let pred = predict_normalized(
            &spec,
            &params,
            records,
            idx,
            window_len,
            window_policy,
            train_cfg.batch_size,
        )?;
        let overall = mae(&truth, &pred)?;
        let mut per_dim = Vec::with_capacity(dims);
        for d in 0..dims {
            let t: Vec<Vec<f64>> = truth.iter().map(|r| vec![r[d]]).collect();
            let p: Vec<Vec<f64>> = pred.iter().map(|r| vec![r[d]]).collect();
            per_dim.push(mae(&t, &p)?);
        }
        Ok((overall, per_dim))
    };
    let (val_mae_overall, _) = held_out_mae(val_idx)?;
    let (test_mae_overall, test_mae_per_dim) = held_out_mae(test_idx)?;

    Ok(TrainedEstimator {
        spec,
        params,
        norm,
        label_fields: est_cfg.label_subset.clone(),
        window_len,
        window_policy,
        outcome: EstimatorOutcome {
            train_loss: history,
            val_mae_overall,
            test_mae_overall,
            test_mae_per_dim,
        },
    })
}

/// Batched normalized-label predictions.
pub fn predict_normalized(
    spec: &ModelSpec,
    params: &Params,
    records: &[FrameRecord],
    indices: &[usize],
    window_len: usize,
    policy: WindowPolicy,
    batch_size: usize,
) -> Result<Vec<Vec<f64>>> {
    let windows = window_tensor(records, indices, window_len, policy)?;
    let mut out = Vec::with_capacity(indices.len());
    let all: Vec<usize> = (0..indices.len()).collect();
    for chunk in all.chunks(batch_size) {
        let x = batch_input(&windows, chunk);
        let cache = forward(spec, params, &x)?;
        let dims = cache.output().shape[1];
        for row in cache.output().data.chunks(dims) {
            out.push(row.iter().map(|&v| f64::from(v)).collect());
        }
    }
    Ok(out)
}

/// Map device ids to class indices (sorted unique order).
pub(super) fn class_map(records: &[FrameRecord], indices: &[usize]) -> Vec<u32> {
    let mut devices: Vec<u32> = indices.iter().map(|&i| records[i].device_id).collect();
    devices.sort_unstable();
    devices.dedup();
    devices
}

/// Cross-entropy classifier training on stable records only. Any training
/// record below the stabilization threshold is rejected outright.
#[allow(clippy::too_many_arguments)]
pub fn train_classifier(
    spec: &ModelSpec,
    init_params: &Params,
    trainable: &[bool],
    records: &[FrameRecord],
    train_idx: &[usize],
    val_idx: &[usize],
    cls_cfg: &ClassifierConfig,
    train_cfg: &TrainConfig,
    window_policy: WindowPolicy,
) -> Result<TrainedClassifier> {
    train_cfg.validate()?;
    for &i in train_idx {
        if f64::from(records[i].t_minutes) < train_cfg.stabilization_min {
            return Err(HeedfulError::WarmupRecordInTraining {
                t_minutes: records[i].t_minutes,
                threshold: train_cfg.stabilization_min,
            });
        }
    }
    let devices = class_map(records, train_idx);
    if devices.len() < 2 {
        return Err(HeedfulError::TooFewClasses(devices.len()));
    }
    if devices.len() != cls_cfg.n_classes {
        return Err(HeedfulError::BadConfig(format!(
            "classifier built for {} classes but the training set has {}",
            cls_cfg.n_classes,
            devices.len()
        )));
    }

    // Cross entropy works on logits: drop the trailing softmax for training.
    let logits_spec = ModelSpec {
        input_shape: spec.input_shape,
        layers: spec.layers[..spec.layers.len() - 1].to_vec(),
    };

    let window_len = spec.input_shape.2;
    let train_windows = window_tensor(records, train_idx, window_len, window_policy)?;
    let train_classes: Vec<usize> = train_idx
        .iter()
        .map(|&i| devices.binary_search(&records[i].device_id).unwrap())
        .collect();

    let mut params = init_params.clone();
    let mut state = AdamState::new(&params, train_cfg.lr);
    let mut history = Vec::with_capacity(train_cfg.epochs);
    let mut val_acc = Vec::with_capacity(train_cfg.epochs);
    let mut order: Vec<usize> = (0..train_idx.len()).collect();
    for epoch in 0..train_cfg.epochs {
        let mut rng =
            ChaCha12Rng::seed_from_u64(derive_seed(train_cfg.seed, "cls-epoch", &[epoch as u64]));
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(train_cfg.batch_size) {
            let x = batch_input(&train_windows, chunk);
            let classes: Vec<usize> = chunk.iter().map(|&p| train_classes[p]).collect();
            let cache = forward(&logits_spec, &params, &x)?;
            let (loss, grad) = loss_xent_batch(cache.output(), &classes)?;
            let (grads, _) = backward(&logits_spec, &params, &cache, &grad)?;
            adam_step_masked(&mut params, &grads, &mut state, trainable)?;
            epoch_loss += loss;
            batches += 1;
        }
        history.push(epoch_loss / batches.max(1) as f64);

        if val_idx.is_empty() {
            val_acc.push(f64::NAN);
        } else {
            let preds = super::eval::predict_classes(
                &logits_spec,
                &params,
                records,
                val_idx,
                window_len,
                window_policy,
                train_cfg.batch_size,
            )?;
            let correct = val_idx
                .iter()
                .zip(&preds)
                .filter(|(&i, &p)| devices.binary_search(&records[i].device_id) == Ok(p))
                .count();
            val_acc.push(correct as f64 / val_idx.len() as f64);
        }
    }

    Ok(TrainedClassifier {
        spec: spec.clone(),
        params,
        class_devices: devices,
        window_len,
        window_policy,
        outcome: ClassifierOutcome {
            train_loss: history,
            val_accuracy: val_acc,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::super::{attach_classifier_head, EncoderPolicy, PoolingTail};
    use super::*;
    use crate::impair::Scenario;
    use crate::waveform::Protocol;
    use num_complex::Complex32;

    /// Synthetic records whose samples encode the device id as a DC level
    /// on the I rail, trivially separable.
    fn toy_records(devices: u32, per_device: usize, n: usize) -> Vec<FrameRecord> {
        let mut out = Vec::new();
        for d in 0..devices {
            for i in 0..per_device {
                let t = 30.0 * i as f32 / per_device as f32;
                let level = (d as f32 + 1.0) * 0.2;
                let samples = (0..n)
                    .map(|k| Complex32::new(level + 0.01 * (k as f32 * 0.7).sin(), -level))
                    .collect();
                out.push(FrameRecord {
                    device_id: d,
                    day_id: 0,
                    scenario: Scenario::Wired,
                    protocol: Protocol::DsssB,
                    t_minutes: t,
                    samples,
                    labels: Some(vec![
                        level, 0.0, 1.0, -30.0, 0.5, 0.1, -40.0, 0.0,
                    ]),
                    sync_ok: true,
                });
            }
        }
        out
    }

    fn schema() -> Vec<String> {
        crate::metrology::LABELS_B.iter().map(|s| s.to_string()).collect()
    }

    fn tiny_cfg(window: usize, labels: Vec<String>) -> EstimatorConfig {
        EstimatorConfig {
            input_shape: (2, window),
            conv_filters: vec![4, 4, 4, 4],
            dense_units: (16, 8),
            label_subset: labels,
            pooling_tail: PoolingTail::Flatten,
            kernel_w: 5,
        }
    }

    #[test]
    fn constant_labels_drive_test_mae_to_zero() {
        // One device, constant labels: min-max normalization degenerates to
        // 0.5 on every dimension and the head only has to learn a constant.
        let records = toy_records(1, 60, 128);
        let idx: Vec<usize> = (0..records.len()).collect();
        let (train, rest) = idx.split_at(40);
        let (val, test) = rest.split_at(10);
        let cfg = tiny_cfg(128, vec!["cfo_hz".into(), "sce_ppm".into()]);
        let mut tc = TrainConfig {
            epochs: 60,
            lr: 0.01,
            seed: 3,
            ..TrainConfig::default()
        };
        tc.batch_size = 16;
        let est = train_estimator(
            &records,
            &schema(),
            train,
            val,
            test,
            &cfg,
            &tc,
            WindowPolicy::Head,
        )
        .unwrap();
        assert!(
            est.outcome.test_mae_overall < 1e-3,
            "test MAE {}",
            est.outcome.test_mae_overall
        );
    }

    #[test]
    fn estimator_requires_phase_coverage() {
        let records = toy_records(2, 20, 128);
        // Only warm-up indices (t < 12).
        let idx: Vec<usize> = records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.t_minutes < 12.0)
            .map(|(i, _)| i)
            .collect();
        let cfg = tiny_cfg(128, vec!["cfo_hz".into()]);
        let err = train_estimator(
            &records,
            &schema(),
            &idx,
            &[],
            &[],
            &cfg,
            &TrainConfig::default(),
            WindowPolicy::Head,
        )
        .unwrap_err();
        assert!(matches!(err, HeedfulError::MissingPhaseCoverage(_)));
    }

    #[test]
    fn unknown_label_field_is_rejected() {
        let records = toy_records(2, 30, 128);
        let idx: Vec<usize> = (0..records.len()).collect();
        let cfg = tiny_cfg(128, vec!["nonexistent".into()]);
        let err = train_estimator(
            &records,
            &schema(),
            &idx,
            &[],
            &[],
            &cfg,
            &TrainConfig::default(),
            WindowPolicy::Head,
        )
        .unwrap_err();
        assert!(matches!(err, HeedfulError::UnknownLabel(_)));
    }

    #[test]
    fn classifier_rejects_warmup_training_records() {
        let records = toy_records(2, 30, 128);
        let idx: Vec<usize> = (0..records.len()).collect(); // includes warm-up
        let cfg = tiny_cfg(128, vec!["cfo_hz".into()]);
        let est_spec = build_estimator(&cfg).unwrap();
        let est_params = Params::init(&est_spec, 1).unwrap();
        let cls = ClassifierConfig::new(2, EncoderPolicy::FineTune);
        let (spec, params, mask) =
            attach_classifier_head(&est_spec, &est_params, &cls, 2).unwrap();
        let err = train_classifier(
            &spec,
            &params,
            &mask,
            &records,
            &idx,
            &[],
            &cls,
            &TrainConfig::default(),
            WindowPolicy::Head,
        )
        .unwrap_err();
        assert!(matches!(err, HeedfulError::WarmupRecordInTraining { .. }));
    }

    #[test]
    fn frozen_encoder_stays_bitwise_identical_through_training() {
        let records = toy_records(2, 40, 128);
        let stable: Vec<usize> = records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.t_minutes >= 12.0)
            .map(|(i, _)| i)
            .collect();
        let cfg = tiny_cfg(128, vec!["cfo_hz".into()]);
        let est_spec = build_estimator(&cfg).unwrap();
        let est_params = Params::init(&est_spec, 1).unwrap();
        let cls = ClassifierConfig::new(2, EncoderPolicy::Freeze);
        let (spec, params, mask) =
            attach_classifier_head(&est_spec, &est_params, &cls, 2).unwrap();
        let tc = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        let trained = train_classifier(
            &spec,
            &params,
            &mask,
            &records,
            &stable,
            &[],
            &cls,
            &tc,
            WindowPolicy::Head,
        )
        .unwrap();
        let n_encoder = super::super::encoder_spec(&est_spec)
            .param_shapes()
            .unwrap()
            .len();
        for i in 0..n_encoder {
            assert_eq!(
                trained.params.tensors[i], est_params.tensors[i],
                "encoder tensor {i} changed under FREEZE"
            );
        }
        // The head must have moved.
        assert_ne!(trained.params.tensors[n_encoder], params.tensors[n_encoder]);
    }

    #[test]
    fn same_seed_reproduces_identical_weights() {
        let records = toy_records(2, 30, 128);
        let idx: Vec<usize> = (0..records.len()).collect();
        let cfg = tiny_cfg(128, vec!["cfo_hz".into()]);
        let tc = TrainConfig {
            epochs: 2,
            seed: 77,
            ..TrainConfig::default()
        };
        let a = train_estimator(
            &records,
            &schema(),
            &idx,
            &[],
            &[],
            &cfg,
            &tc,
            WindowPolicy::Head,
        )
        .unwrap();
        let b = train_estimator(
            &records,
            &schema(),
            &idx,
            &[],
            &[],
            &cfg,
            &tc,
            WindowPolicy::Head,
        )
        .unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn fifty_adam_steps_decrease_both_losses() {
        // Regression loss.
        let records = toy_records(2, 40, 128);
        let idx: Vec<usize> = (0..records.len()).collect();
        let cfg = tiny_cfg(128, vec!["cfo_hz".into()]);
        let tc = TrainConfig {
            epochs: 25, // ~50 batches of 32 over 80 records
            seed: 5,
            ..TrainConfig::default()
        };
        let est = train_estimator(
            &records,
            &schema(),
            &idx,
            &[],
            &[],
            &cfg,
            &tc,
            WindowPolicy::Head,
        )
        .unwrap();
        assert!(
            est.outcome.train_loss.last().unwrap() < est.outcome.train_loss.first().unwrap(),
            "regression loss did not decrease: {:?}",
            est.outcome.train_loss
        );

        // Classification loss.
        let stable: Vec<usize> = records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.t_minutes >= 12.0)
            .map(|(i, _)| i)
            .collect();
        let est_spec = build_estimator(&cfg).unwrap();
        let est_params = Params::init(&est_spec, 1).unwrap();
        let cls = ClassifierConfig::new(2, EncoderPolicy::FineTune);
        let (spec, params, mask) =
            attach_classifier_head(&est_spec, &est_params, &cls, 2).unwrap();
        let trained = train_classifier(
            &spec,
            &params,
            &mask,
            &records,
            &stable,
            &[],
            &cls,
            &tc,
            WindowPolicy::Head,
        )
        .unwrap();
        assert!(
            trained.outcome.train_loss.last().unwrap()
                < trained.outcome.train_loss.first().unwrap(),
            "classification loss did not decrease: {:?}",
            trained.outcome.train_loss
        );
    }
}
