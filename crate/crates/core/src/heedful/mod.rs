//! The sequential-transfer fingerprinting pipeline: an impairment-estimation
//! regressor pretrained on warm-up plus stable frames, repurposed as the
//! feature extractor for a device-classification head trained on stable
//! frames only, and a same-topology baseline CNN trained directly on
//! classification.

mod eval;
mod train;

pub use eval::{
    accuracy, embed_records, evaluate, predict_classes, silhouette_score, EvalRow, EvalTable,
    Grouping,
};
pub use train::{
    train_classifier, train_estimator, ClassifierOutcome, EstimatorOutcome, TrainedClassifier,
    TrainedEstimator,
};

use crate::tensornn::{LayerSpec, ModelSpec, NnError, Padding, Params};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HeedfulError {
    #[error("estimator config: {0}")]
    BadConfig(String),
    #[error("label field {0:?} absent from the dataset schema")]
    UnknownLabel(String),
    #[error("training set must span warm-up and stable phases (threshold {0} min)")]
    MissingPhaseCoverage(f64),
    #[error(
        "classifier training rejects warm-up records: record at t={t_minutes} min is \
         below the stabilization threshold {threshold} min"
    )]
    WarmupRecordInTraining { t_minutes: f32, threshold: f64 },
    #[error("record without labels cannot train the estimator (sync failed)")]
    UnlabeledRecord,
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Datastore(#[from] crate::datastore::DatastoreError),
    #[error(transparent)]
    Metrology(#[from] crate::metrology::MetrologyError),
}

pub type Result<T> = std::result::Result<T, HeedfulError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PoolingTail {
    Flatten,
    GlobalAvgPool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EncoderPolicy {
    FineTune,
    Freeze,
}

/// Estimator architecture: four conv blocks, a pooling tail and a two-layer
/// dense trunk feeding the estimation head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// Input shape (rails, window length).
    pub input_shape: (usize, usize),
    /// Exactly four conv block filter counts.
    pub conv_filters: Vec<usize>,
    /// Dense trunk widths; the second one is the embedding size.
    pub dense_units: (usize, usize),
    /// Ordered label field names the head regresses.
    pub label_subset: Vec<String>,
    pub pooling_tail: PoolingTail,
    /// Temporal kernel width of every conv.
    pub kernel_w: usize,
}

impl EstimatorConfig {
    /// Small preset sized for CPU runs.
    pub fn desk(window_len: usize, label_subset: Vec<String>) -> Self {
        EstimatorConfig {
            input_shape: (2, window_len),
            conv_filters: vec![32, 16, 8, 8],
            dense_units: (256, 128),
            label_subset,
            pooling_tail: PoolingTail::Flatten,
            kernel_w: 7,
        }
    }

    /// Full-size preset (whole-frame input, wide conv stack).
    pub fn paper(window_len: usize, label_subset: Vec<String>) -> Self {
        EstimatorConfig {
            input_shape: (2, window_len),
            conv_filters: vec![256, 128, 64, 32],
            dense_units: (256, 128),
            label_subset,
            pooling_tail: PoolingTail::Flatten,
            kernel_w: 7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_filters.len() != 4 {
            return Err(HeedfulError::BadConfig(format!(
                "need exactly 4 conv blocks, got {}",
                self.conv_filters.len()
            )));
        }
        if self.label_subset.is_empty() {
            return Err(HeedfulError::BadConfig("empty label subset".into()));
        }
        if self.input_shape.0 != 2 {
            return Err(HeedfulError::BadConfig("input must carry 2 rails".into()));
        }
        if self.kernel_w == 0 {
            return Err(HeedfulError::BadConfig("zero kernel width".into()));
        }
        Ok(())
    }

    pub fn embedding_dim(&self) -> usize {
        self.dense_units.1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub n_classes: usize,
    pub head_units: usize,
    pub encoder_policy: EncoderPolicy,
}

impl ClassifierConfig {
    pub fn new(n_classes: usize, encoder_policy: EncoderPolicy) -> Self {
        ClassifierConfig {
            n_classes,
            head_units: 256,
            encoder_policy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Train/val/test fractions; must sum to 1.
    pub split_fractions: (f64, f64, f64),
    pub seed: u64,
    pub lr: f32,
    /// Records at or past this many minutes count as stable.
    pub stabilization_min: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 32,
            split_fractions: (0.6, 0.2, 0.2),
            seed: 0,
            lr: 2.5e-4,
            stabilization_min: 12.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let (a, b, c) = self.split_fractions;
        if (a + b + c - 1.0).abs() > 1e-9 {
            return Err(HeedfulError::BadConfig(format!(
                "split fractions {a}+{b}+{c} do not sum to 1"
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(HeedfulError::BadConfig("zero epochs or batch size".into()));
        }
        Ok(())
    }
}

/// Four [Conv -> ReLU -> MaxPool 1x2] blocks, the pooling tail, the dense
/// trunk, then a linear head with one output per label.
pub fn build_estimator(cfg: &EstimatorConfig) -> Result<ModelSpec> {
    cfg.validate()?;
    let mut layers = Vec::new();
    for (i, &filters) in cfg.conv_filters.iter().enumerate() {
        layers.push(LayerSpec::Conv2D {
            out_channels: filters,
            kernel_h: if i == 0 { 2 } else { 1 },
            kernel_w: cfg.kernel_w,
            stride: 1,
            padding: if i == 0 { Padding::Valid } else { Padding::SameTime },
        });
        layers.push(LayerSpec::ReLU);
        layers.push(LayerSpec::MaxPool1x2);
    }
    layers.push(match cfg.pooling_tail {
        PoolingTail::Flatten => LayerSpec::Flatten,
        PoolingTail::GlobalAvgPool => LayerSpec::GlobalAvgPool,
    });
    layers.push(LayerSpec::Dense {
        out_units: cfg.dense_units.0,
    });
    layers.push(LayerSpec::ReLU);
    layers.push(LayerSpec::Dense {
        out_units: cfg.dense_units.1,
    });
    layers.push(LayerSpec::ReLU);
    layers.push(LayerSpec::Dense {
        out_units: cfg.label_subset.len(),
    });
    let spec = ModelSpec {
        input_shape: (1, cfg.input_shape.0, cfg.input_shape.1),
        layers,
    };
    spec.shape_chain()?; // errors when the window is too short for 4 pools
    Ok(spec)
}

/// The encoder is everything up to and including the embedding ReLU (the
/// estimation head is the final Dense).
pub fn encoder_spec(estimator: &ModelSpec) -> ModelSpec {
    ModelSpec {
        input_shape: estimator.input_shape,
        layers: estimator.layers[..estimator.layers.len() - 1].to_vec(),
    }
}

/// Replace the estimation head with a fresh classification head:
/// Dense(head_units) -> ReLU -> Dense(n_classes) -> Softmax. Pretrained
/// encoder parameters are retained; the returned mask marks which parameter
/// tensors train under the configured policy.
pub fn attach_classifier_head(
    estimator_spec: &ModelSpec,
    estimator_params: &Params,
    cls_cfg: &ClassifierConfig,
    init_seed: u64,
) -> Result<(ModelSpec, Params, Vec<bool>)> {
    if cls_cfg.n_classes < 2 {
        return Err(HeedfulError::TooFewClasses(cls_cfg.n_classes));
    }
    let encoder = encoder_spec(estimator_spec);
    let mut layers = encoder.layers.clone();
    layers.push(LayerSpec::Dense {
        out_units: cls_cfg.head_units,
    });
    layers.push(LayerSpec::ReLU);
    layers.push(LayerSpec::Dense {
        out_units: cls_cfg.n_classes,
    });
    layers.push(LayerSpec::Softmax);
    let spec = ModelSpec {
        input_shape: encoder.input_shape,
        layers,
    };
    spec.shape_chain()?;

    let n_encoder_tensors = encoder.param_shapes()?.len();
    let fresh = Params::init(&spec, init_seed)?;
    let mut tensors = Vec::with_capacity(fresh.tensors.len());
    tensors.extend_from_slice(&estimator_params.tensors[..n_encoder_tensors]);
    tensors.extend_from_slice(&fresh.tensors[n_encoder_tensors..]);
    let params = Params { tensors };

    let mut trainable = vec![true; params.tensors.len()];
    if cls_cfg.encoder_policy == EncoderPolicy::Freeze {
        for t in trainable.iter_mut().take(n_encoder_tensors) {
            *t = false;
        }
    }
    Ok((spec, params, trainable))
}

/// Direct-classification baseline: identical topology to the transfer
/// classifier, randomly initialized end to end.
pub fn build_baseline_cnn(
    est_cfg: &EstimatorConfig,
    cls_cfg: &ClassifierConfig,
    init_seed: u64,
) -> Result<(ModelSpec, Params)> {
    let est_spec = build_estimator(est_cfg)?;
    let dummy = Params::init(&est_spec, init_seed)?;
    let (spec, _, _) = attach_classifier_head(&est_spec, &dummy, cls_cfg, init_seed)?;
    let params = Params::init(&spec, init_seed)?;
    Ok((spec, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensornn::Shape;

    fn labels8() -> Vec<String> {
        crate::metrology::LABELS_B.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn estimator_head_width_tracks_label_subset() {
        let cfg = EstimatorConfig::desk(1024, labels8());
        let spec = build_estimator(&cfg).unwrap();
        assert_eq!(spec.output_shape().unwrap(), Shape::Flat(8));

        let cfg1 = EstimatorConfig::desk(1024, vec!["cfo_hz".into()]);
        let spec1 = build_estimator(&cfg1).unwrap();
        assert_eq!(spec1.output_shape().unwrap(), Shape::Flat(1));
    }

    #[test]
    fn paper_preset_on_full_frames_has_eight_outputs() {
        let cfg = EstimatorConfig::paper(17550, labels8());
        let spec = build_estimator(&cfg).unwrap();
        assert_eq!(spec.output_shape().unwrap(), Shape::Flat(8));
    }

    #[test]
    fn too_short_input_for_four_poolings_fails_at_build() {
        let cfg = EstimatorConfig::desk(20, labels8());
        assert!(build_estimator(&cfg).is_err());
    }

    #[test]
    fn baseline_matches_transfer_classifier_parameter_count() {
        let cfg = EstimatorConfig::desk(512, labels8());
        let est_spec = build_estimator(&cfg).unwrap();
        let est_params = Params::init(&est_spec, 4).unwrap();
        let cls = ClassifierConfig::new(15, EncoderPolicy::FineTune);
        let (_, transfer_params, _) =
            attach_classifier_head(&est_spec, &est_params, &cls, 5).unwrap();
        let (_, baseline_params) = build_baseline_cnn(&cfg, &cls, 6).unwrap();
        assert_eq!(transfer_params.n_parameters(), baseline_params.n_parameters());
    }

    #[test]
    fn classifier_softmax_outputs_normalize() {
        let cfg = EstimatorConfig::desk(512, labels8());
        let est_spec = build_estimator(&cfg).unwrap();
        let est_params = Params::init(&est_spec, 4).unwrap();
        let cls = ClassifierConfig::new(15, EncoderPolicy::FineTune);
        let (spec, params, _) = attach_classifier_head(&est_spec, &est_params, &cls, 5).unwrap();
        let x = crate::tensornn::Tensor::zeros(&[2, 1, 2, 512]);
        let cache = crate::tensornn::forward(&spec, &params, &x).unwrap();
        for row in cache.output().data.chunks(15) {
            let s: f32 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn freeze_mask_covers_encoder_tensors() {
        let cfg = EstimatorConfig::desk(512, labels8());
        let est_spec = build_estimator(&cfg).unwrap();
        let est_params = Params::init(&est_spec, 4).unwrap();
        let cls = ClassifierConfig::new(3, EncoderPolicy::Freeze);
        let (_, params, mask) = attach_classifier_head(&est_spec, &est_params, &cls, 5).unwrap();
        let n_frozen = mask.iter().filter(|&&t| !t).count();
        // 4 conv + 2 dense trunk layers, two tensors each.
        assert_eq!(n_frozen, 12);
        assert_eq!(params.tensors.len(), 16);
    }
}
