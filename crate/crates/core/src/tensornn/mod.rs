//! Minimal dense/convolutional NN engine with reverse-mode gradients.
//!
//! Only the layers needed by the fingerprinting models are implemented:
//! Conv2D, ReLU, MaxPool 1x2, Flatten, GlobalAvgPool, Dense and Softmax.
//! Everything is f32 row-major on the CPU; losses accumulate in f64.
//! Determinism contract: fixed seeds give bit-identical initialization,
//! shuffling and final weights, and any internal parallelism reduces in a
//! fixed order.

mod adam;
mod checkpoint;
mod gradcheck;
mod layers;
mod linalg;
mod loss;

pub use adam::{adam_step, adam_step_masked, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use gradcheck::{grad_check, GradCheckReport};
pub use layers::{backward, forward, ForwardCache};
pub use loss::{loss_mse, loss_xent, loss_xent_batch};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch at layer {layer}: {detail}")]
    ShapeMismatch { layer: usize, detail: String },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("non-finite value in {context}")]
    NonFinite { context: String },
    #[error("class index {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;

/// Dense row-major f32 tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Padding mode along the time (width) axis. Height is never padded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Padding {
    Valid,
    SameTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    Conv2D {
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: Padding,
    },
    ReLU,
    /// 2D max-pooling, fixed 1x2 window with 1x2 stride.
    MaxPool1x2,
    Flatten,
    GlobalAvgPool,
    Dense {
        out_units: usize,
    },
    Softmax,
}

/// Ordered layer graph over a (channels, height, width) input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Input shape as (channels, height, width), batch excluded.
    pub input_shape: (usize, usize, usize),
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Chw(usize, usize, usize),
    Flat(usize),
}

impl Shape {
    pub fn elements(&self) -> usize {
        match *self {
            Shape::Chw(c, h, w) => c * h * w,
            Shape::Flat(n) => n,
        }
    }
}

impl ModelSpec {
    /// Chain-check all layer shapes; returns the per-layer output shapes
    /// (element 0 is the input shape itself).
    pub fn shape_chain(&self) -> Result<Vec<Shape>> {
        let (c, h, w) = self.input_shape;
        if c == 0 || h == 0 || w == 0 {
            return Err(NnError::InvalidModel("zero-sized input".into()));
        }
        let mut shapes = vec![Shape::Chw(c, h, w)];
        let mut cur = Shape::Chw(c, h, w);
        for (i, layer) in self.layers.iter().enumerate() {
            cur = layer_out_shape(layer, cur, i)?;
            shapes.push(cur);
        }
        Ok(shapes)
    }

    pub fn output_shape(&self) -> Result<Shape> {
        Ok(*self.shape_chain()?.last().unwrap())
    }

    /// Shapes of the parameter tensors, in layer order. Conv and Dense
    /// contribute (weight, bias); other layers contribute nothing.
    pub fn param_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let chain = self.shape_chain()?;
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Conv2D {
                    out_channels,
                    kernel_h,
                    kernel_w,
                    ..
                } => {
                    let in_c = match chain[i] {
                        Shape::Chw(c, _, _) => c,
                        Shape::Flat(_) => unreachable!("checked by shape_chain"),
                    };
                    out.push(vec![out_channels, in_c, kernel_h, kernel_w]);
                    out.push(vec![out_channels]);
                }
                LayerSpec::Dense { out_units } => {
                    let in_f = chain[i].elements();
                    out.push(vec![out_units, in_f]);
                    out.push(vec![out_units]);
                }
                _ => {}
            }
        }
        Ok(out)
    }

    /// Number of parameter tensors preceding each layer (for indexing into
    /// a `Params` vector during forward/backward).
    pub(crate) fn param_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut n = 0;
        for layer in &self.layers {
            offsets.push(n);
            if matches!(layer, LayerSpec::Conv2D { .. } | LayerSpec::Dense { .. }) {
                n += 2;
            }
        }
        offsets
    }
}

fn layer_out_shape(layer: &LayerSpec, input: Shape, idx: usize) -> Result<Shape> {
    let err = |detail: String| NnError::ShapeMismatch { layer: idx, detail };
    match *layer {
        LayerSpec::Conv2D {
            out_channels,
            kernel_h,
            kernel_w,
            stride,
            padding,
        } => {
            let (_, h, w) = match input {
                Shape::Chw(c, h, w) => (c, h, w),
                Shape::Flat(_) => return Err(err("Conv2D needs a CHW input".into())),
            };
            if stride == 0 || out_channels == 0 || kernel_h == 0 || kernel_w == 0 {
                return Err(err("conv hyperparameters must be positive".into()));
            }
            if kernel_h > h {
                return Err(err(format!("kernel_h {kernel_h} exceeds input height {h}")));
            }
            let (h_out, w_out) = match padding {
                Padding::Valid => {
                    if kernel_w > w {
                        return Err(err(format!("kernel_w {kernel_w} exceeds input width {w}")));
                    }
                    ((h - kernel_h) / stride + 1, (w - kernel_w) / stride + 1)
                }
                Padding::SameTime => ((h - kernel_h) / stride + 1, w.div_ceil(stride)),
            };
            Ok(Shape::Chw(out_channels, h_out, w_out))
        }
        LayerSpec::ReLU | LayerSpec::Softmax => Ok(input),
        LayerSpec::MaxPool1x2 => match input {
            Shape::Chw(c, h, w) => {
                if w < 2 {
                    return Err(err(format!("width {w} too short for 1x2 pooling")));
                }
                Ok(Shape::Chw(c, h, w / 2))
            }
            Shape::Flat(_) => Err(err("MaxPool1x2 needs a CHW input".into())),
        },
        LayerSpec::Flatten => Ok(Shape::Flat(input.elements())),
        LayerSpec::GlobalAvgPool => match input {
            Shape::Chw(c, _, _) => Ok(Shape::Flat(c)),
            Shape::Flat(_) => Err(err("GlobalAvgPool needs a CHW input".into())),
        },
        LayerSpec::Dense { out_units } => {
            if out_units == 0 {
                return Err(err("Dense with zero units".into()));
            }
            Ok(Shape::Flat(out_units))
        }
    }
}

/// Model parameters: one tensor per entry of `ModelSpec::param_shapes`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub tensors: Vec<Tensor>,
}

impl Params {
    /// Fan-in scaled uniform init (He-style) for weights, zeros for biases.
    pub fn init(spec: &ModelSpec, seed: u64) -> Result<Self> {
        let shapes = spec.param_shapes()?;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut tensors = Vec::with_capacity(shapes.len());
        for shape in &shapes {
            if shape.len() == 1 {
                tensors.push(Tensor::zeros(shape));
            } else {
                let fan_in: usize = shape[1..].iter().product();
                let limit = (6.0 / fan_in as f32).sqrt();
                let data = (0..shape.iter().product::<usize>())
                    .map(|_| rng.gen_range(-limit..limit))
                    .collect();
                tensors.push(Tensor::from_vec(shape, data));
            }
        }
        Ok(Params { tensors })
    }

    pub fn zeros_like(&self) -> Self {
        Params {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor::zeros(&t.shape))
                .collect(),
        }
    }

    pub fn n_parameters(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv(out: usize, kh: usize, kw: usize, padding: Padding) -> LayerSpec {
        LayerSpec::Conv2D {
            out_channels: out,
            kernel_h: kh,
            kernel_w: kw,
            stride: 1,
            padding,
        }
    }

    #[test]
    fn shape_chain_for_conv_stack() {
        let spec = ModelSpec {
            input_shape: (1, 2, 64),
            layers: vec![
                conv(8, 2, 7, Padding::Valid),
                LayerSpec::ReLU,
                LayerSpec::MaxPool1x2,
                conv(4, 1, 7, Padding::SameTime),
                LayerSpec::MaxPool1x2,
                LayerSpec::Flatten,
                LayerSpec::Dense { out_units: 3 },
            ],
        };
        let chain = spec.shape_chain().unwrap();
        assert_eq!(chain[1], Shape::Chw(8, 1, 58));
        assert_eq!(chain[3], Shape::Chw(8, 1, 29));
        assert_eq!(chain[4], Shape::Chw(4, 1, 29));
        assert_eq!(chain[5], Shape::Chw(4, 1, 14));
        assert_eq!(chain[6], Shape::Flat(56));
        assert_eq!(spec.output_shape().unwrap(), Shape::Flat(3));
    }

    #[test]
    fn pooling_too_short_is_a_build_error() {
        let spec = ModelSpec {
            input_shape: (1, 1, 3),
            layers: vec![LayerSpec::MaxPool1x2, LayerSpec::MaxPool1x2],
        };
        assert!(spec.shape_chain().is_err());
    }

    #[test]
    fn param_shapes_and_init_are_deterministic() {
        let spec = ModelSpec {
            input_shape: (1, 2, 16),
            layers: vec![
                conv(4, 2, 3, Padding::Valid),
                LayerSpec::Flatten,
                LayerSpec::Dense { out_units: 2 },
            ],
        };
        let shapes = spec.param_shapes().unwrap();
        assert_eq!(shapes, vec![vec![4, 1, 2, 3], vec![4], vec![2, 56], vec![2]]);
        let a = Params::init(&spec, 9).unwrap();
        let b = Params::init(&spec, 9).unwrap();
        assert_eq!(a, b);
        let c = Params::init(&spec, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn global_avg_pool_shape_is_channel_count() {
        let spec = ModelSpec {
            input_shape: (3, 1, 40),
            layers: vec![LayerSpec::GlobalAvgPool],
        };
        assert_eq!(spec.output_shape().unwrap(), Shape::Flat(3));
    }
}
