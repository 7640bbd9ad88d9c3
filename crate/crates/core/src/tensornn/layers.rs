//! Forward and backward passes for the supported layers.
//!
//! Convolutions run as im2col + matmul. The im2col buffers are cached during
//! the forward pass and reused by backward.

use super::linalg::{matmul, matmul_abt, matmul_atb};
use super::{LayerSpec, ModelSpec, NnError, Padding, Params, Result, Tensor};

/// Per-layer state kept from a forward pass for the matching backward pass.
pub struct ForwardCache {
    /// `activations[0]` is the input; `activations[i+1]` is layer `i` output.
    pub activations: Vec<Tensor>,
    /// im2col buffer + geometry per conv layer index.
    conv_cols: Vec<Option<ConvCols>>,
    /// Chosen element (0 or 1) per pooled output, per pool layer index.
    pool_argmax: Vec<Option<Vec<u8>>>,
}

struct ConvCols {
    cols: Vec<f32>,
    k: usize,
    n: usize,
}

impl ForwardCache {
    pub fn output(&self) -> &Tensor {
        self.activations.last().unwrap()
    }

    /// Discrete decisions (ReLU sign masks, pool argmax) taken during the
    /// pass. Used by the gradient checker to discard finite-difference
    /// coordinates that cross a non-differentiable tie.
    pub fn decision_signature(&self) -> Vec<Vec<u8>> {
        let mut sig = Vec::new();
        for t in &self.activations {
            // ReLU outputs are recognizable only by layer type; the caller
            // compares like-for-like signatures from identical specs, so we
            // simply record sign masks of every activation.
            sig.push(t.data.iter().map(|&v| u8::from(v > 0.0)).collect());
        }
        for am in self.pool_argmax.iter().flatten() {
            sig.push(am.clone());
        }
        sig
    }
}

fn batch_chw(t: &Tensor, layer: usize) -> Result<(usize, usize, usize, usize)> {
    if t.shape.len() != 4 {
        return Err(NnError::ShapeMismatch {
            layer,
            detail: format!("expected a 4-d activation, got shape {:?}", t.shape),
        });
    }
    Ok((t.shape[0], t.shape[1], t.shape[2], t.shape[3]))
}

/// Run the model forward over a `[batch, c, h, w]` input.
///
/// Width may differ from the declared input shape only for models whose
/// dense tail is fed by `GlobalAvgPool` (length-versatile conv stacks).
pub fn forward(spec: &ModelSpec, params: &Params, input: &Tensor) -> Result<ForwardCache> {
    let (_, c, h, w) = batch_chw(input, 0)?;
    let (sc, sh, sw) = spec.input_shape;
    let poly = spec.layers.iter().any(|l| matches!(l, LayerSpec::GlobalAvgPool))
        && !spec.layers.iter().any(|l| matches!(l, LayerSpec::Flatten));
    if c != sc || h != sh || (!poly && w != sw) {
        return Err(NnError::ShapeMismatch {
            layer: 0,
            detail: format!(
                "input ({c},{h},{w}) does not match declared ({sc},{sh},{sw})"
            ),
        });
    }

    let offsets = spec.param_offsets();
    let mut cache = ForwardCache {
        activations: vec![input.clone()],
        conv_cols: (0..spec.layers.len()).map(|_| None).collect(),
        pool_argmax: vec![None; spec.layers.len()],
    };

    for (i, layer) in spec.layers.iter().enumerate() {
        let x = cache.activations.last().unwrap();
        let out = match *layer {
            LayerSpec::Conv2D {
                out_channels,
                kernel_h,
                kernel_w,
                stride,
                padding,
            } => {
                let (b, ci, hi, wi) = batch_chw(x, i)?;
                let weight = &params.tensors[offsets[i]];
                let bias = &params.tensors[offsets[i] + 1];
                if weight.shape != [out_channels, ci, kernel_h, kernel_w] {
                    return Err(NnError::ShapeMismatch {
                        layer: i,
                        detail: format!(
                            "conv weight shape {:?} does not match spec",
                            weight.shape
                        ),
                    });
                }
                let geom = ConvGeom::new(hi, wi, kernel_h, kernel_w, stride, padding, i)?;
                let kdim = ci * kernel_h * kernel_w;
                let ncols = b * geom.h_out * geom.w_out;
                let mut cols = vec![0.0f32; kdim * ncols];
                im2col(&x.data, b, ci, hi, wi, &geom, &mut cols);
                let mut out_mat = vec![0.0f32; out_channels * ncols];
                matmul(&weight.data, &cols, out_channels, kdim, ncols, &mut out_mat);
                let mut out = Tensor::zeros(&[b, out_channels, geom.h_out, geom.w_out]);
                let plane = geom.h_out * geom.w_out;
                for bi in 0..b {
                    for co in 0..out_channels {
                        let dst = &mut out.data[(bi * out_channels + co) * plane..][..plane];
                        let src_row = &out_mat[co * ncols + bi * plane..][..plane];
                        let bv = bias.data[co];
                        for (d, &s) in dst.iter_mut().zip(src_row) {
                            *d = s + bv;
                        }
                    }
                }
                cache.conv_cols[i] = Some(ConvCols {
                    cols,
                    k: kdim,
                    n: ncols,
                });
                out
            }
            LayerSpec::ReLU => {
                let mut out = x.clone();
                for v in &mut out.data {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
                out
            }
            LayerSpec::MaxPool1x2 => {
                let (b, ci, hi, wi) = batch_chw(x, i)?;
                let wo = wi / 2;
                if wo == 0 {
                    return Err(NnError::ShapeMismatch {
                        layer: i,
                        detail: format!("width {wi} too short for 1x2 pooling"),
                    });
                }
                let mut out = Tensor::zeros(&[b, ci, hi, wo]);
                let mut argmax = vec![0u8; out.len()];
                for (row_o, (row_i, am)) in out
                    .data
                    .chunks_mut(wo)
                    .zip(x.data.chunks(wi).zip(argmax.chunks_mut(wo)))
                {
                    for j in 0..wo {
                        let a = row_i[2 * j];
                        let bv = row_i[2 * j + 1];
                        // Ties resolve to the left element.
                        if bv > a {
                            row_o[j] = bv;
                            am[j] = 1;
                        } else {
                            row_o[j] = a;
                        }
                    }
                }
                cache.pool_argmax[i] = Some(argmax);
                out
            }
            LayerSpec::Flatten => {
                let (b, ci, hi, wi) = batch_chw(x, i)?;
                Tensor::from_vec(&[b, ci * hi * wi], x.data.clone())
            }
            LayerSpec::GlobalAvgPool => {
                let (b, ci, hi, wi) = batch_chw(x, i)?;
                let plane = hi * wi;
                let mut out = Tensor::zeros(&[b, ci]);
                for (o, chunk) in out.data.iter_mut().zip(x.data.chunks(plane)) {
                    *o = chunk.iter().sum::<f32>() / plane as f32;
                }
                out
            }
            LayerSpec::Dense { out_units } => {
                if x.shape.len() != 2 {
                    return Err(NnError::ShapeMismatch {
                        layer: i,
                        detail: "Dense needs a flat input; add Flatten or GlobalAvgPool".into(),
                    });
                }
                let (b, f) = (x.shape[0], x.shape[1]);
                let weight = &params.tensors[offsets[i]];
                let bias = &params.tensors[offsets[i] + 1];
                if weight.shape != [out_units, f] {
                    return Err(NnError::ShapeMismatch {
                        layer: i,
                        detail: format!(
                            "dense weight {:?} does not accept {f} input features",
                            weight.shape
                        ),
                    });
                }
                let mut out = Tensor::zeros(&[b, out_units]);
                matmul_abt(&x.data, &weight.data, b, f, out_units, &mut out.data);
                for row in out.data.chunks_mut(out_units) {
                    for (v, &bv) in row.iter_mut().zip(&bias.data) {
                        *v += bv;
                    }
                }
                out
            }
            LayerSpec::Softmax => {
                if x.shape.len() != 2 {
                    return Err(NnError::ShapeMismatch {
                        layer: i,
                        detail: "Softmax needs a flat input".into(),
                    });
                }
                let f = x.shape[1];
                let mut out = x.clone();
                for row in out.data.chunks_mut(f) {
                    let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
                    let mut sum = 0.0f32;
                    for v in row.iter_mut() {
                        *v = (*v - max).exp();
                        sum += *v;
                    }
                    for v in row.iter_mut() {
                        *v /= sum;
                    }
                }
                out
            }
        };
        cache.activations.push(out);
    }
    Ok(cache)
}

/// Backpropagate `grad_out` (gradient w.r.t. the final activation) through
/// the model. Returns parameter gradients and the input gradient.
pub fn backward(
    spec: &ModelSpec,
    params: &Params,
    cache: &ForwardCache,
    grad_out: &Tensor,
) -> Result<(Params, Tensor)> {
    let offsets = spec.param_offsets();
    let mut grads = params.zeros_like();
    if grad_out.shape != cache.output().shape {
        return Err(NnError::ShapeMismatch {
            layer: spec.layers.len(),
            detail: format!(
                "output gradient shape {:?} does not match output {:?}",
                grad_out.shape,
                cache.output().shape
            ),
        });
    }
    let mut dy = grad_out.clone();

    for (i, layer) in spec.layers.iter().enumerate().rev() {
        let x = &cache.activations[i];
        let y = &cache.activations[i + 1];
        dy = match *layer {
            LayerSpec::Conv2D {
                out_channels,
                kernel_h,
                kernel_w,
                stride,
                padding,
            } => {
                let (b, ci, hi, wi) = batch_chw(x, i)?;
                let geom = ConvGeom::new(hi, wi, kernel_h, kernel_w, stride, padding, i)?;
                let cc = cache.conv_cols[i].as_ref().expect("conv cache populated");
                let weight = &params.tensors[offsets[i]];
                // Gather dOut into [out_c, ncols] layout.
                let plane = geom.h_out * geom.w_out;
                let mut dout_mat = vec![0.0f32; out_channels * cc.n];
                for bi in 0..b {
                    for co in 0..out_channels {
                        let src = &dy.data[(bi * out_channels + co) * plane..][..plane];
                        dout_mat[co * cc.n + bi * plane..][..plane].copy_from_slice(src);
                    }
                }
                let dw = &mut grads.tensors[offsets[i]];
                matmul_abt(&dout_mat, &cc.cols, out_channels, cc.n, cc.k, &mut dw.data);
                let db = &mut grads.tensors[offsets[i] + 1];
                for co in 0..out_channels {
                    db.data[co] = dout_mat[co * cc.n..(co + 1) * cc.n].iter().sum();
                }
                let mut dcols = vec![0.0f32; cc.k * cc.n];
                matmul_atb(&weight.data, &dout_mat, out_channels, cc.k, cc.n, &mut dcols);
                let mut dx = Tensor::zeros(&x.shape);
                col2im(&dcols, b, ci, hi, wi, &geom, &mut dx.data);
                dx
            }
            LayerSpec::ReLU => {
                let mut dx = dy.clone();
                for (g, &yv) in dx.data.iter_mut().zip(&y.data) {
                    if yv <= 0.0 {
                        *g = 0.0;
                    }
                }
                dx
            }
            LayerSpec::MaxPool1x2 => {
                let (_, _, _, wi) = batch_chw(x, i)?;
                let wo = wi / 2;
                let argmax = cache.pool_argmax[i].as_ref().expect("pool cache populated");
                let mut dx = Tensor::zeros(&x.shape);
                for ((row_dx, row_dy), am) in dx
                    .data
                    .chunks_mut(wi)
                    .zip(dy.data.chunks(wo))
                    .zip(argmax.chunks(wo))
                {
                    for j in 0..wo {
                        row_dx[2 * j + am[j] as usize] = row_dy[j];
                    }
                }
                dx
            }
            LayerSpec::Flatten => Tensor::from_vec(&x.shape, dy.data.clone()),
            LayerSpec::GlobalAvgPool => {
                let (_, _, hi, wi) = batch_chw(x, i)?;
                let plane = hi * wi;
                let mut dx = Tensor::zeros(&x.shape);
                let scale = 1.0 / plane as f32;
                for (chunk, &g) in dx.data.chunks_mut(plane).zip(&dy.data) {
                    chunk.fill(g * scale);
                }
                dx
            }
            LayerSpec::Dense { out_units } => {
                let (b, f) = (x.shape[0], x.shape[1]);
                let weight = &params.tensors[offsets[i]];
                let dw = &mut grads.tensors[offsets[i]];
                matmul_atb(&dy.data, &x.data, b, out_units, f, &mut dw.data);
                let db = &mut grads.tensors[offsets[i] + 1];
                for row in dy.data.chunks(out_units) {
                    for (dbv, &g) in db.data.iter_mut().zip(row) {
                        *dbv += g;
                    }
                }
                let mut dx = Tensor::zeros(&[b, f]);
                matmul(&dy.data, &weight.data, b, out_units, f, &mut dx.data);
                dx
            }
            LayerSpec::Softmax => {
                let f = x.shape[1];
                let mut dx = Tensor::zeros(&x.shape);
                for ((row_dx, row_dy), row_s) in dx
                    .data
                    .chunks_mut(f)
                    .zip(dy.data.chunks(f))
                    .zip(y.data.chunks(f))
                {
                    let dot: f32 = row_dy.iter().zip(row_s).map(|(a, b)| a * b).sum();
                    for j in 0..f {
                        row_dx[j] = row_s[j] * (row_dy[j] - dot);
                    }
                }
                dx
            }
        };
    }
    Ok((grads, dy))
}

struct ConvGeom {
    kernel_h: usize,
    kernel_w: usize,
    stride: usize,
    pad_left: usize,
    h_out: usize,
    w_out: usize,
}

impl ConvGeom {
    fn new(
        h: usize,
        w: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: Padding,
        layer: usize,
    ) -> Result<Self> {
        if kernel_h > h {
            return Err(NnError::ShapeMismatch {
                layer,
                detail: format!("kernel_h {kernel_h} exceeds input height {h}"),
            });
        }
        let (h_out, w_out, pad_left) = match padding {
            Padding::Valid => {
                if kernel_w > w {
                    return Err(NnError::ShapeMismatch {
                        layer,
                        detail: format!("kernel_w {kernel_w} exceeds input width {w}"),
                    });
                }
                ((h - kernel_h) / stride + 1, (w - kernel_w) / stride + 1, 0)
            }
            Padding::SameTime => {
                let w_out = w.div_ceil(stride);
                let pad_total = ((w_out - 1) * stride + kernel_w).saturating_sub(w);
                ((h - kernel_h) / stride + 1, w_out, pad_total / 2)
            }
        };
        Ok(ConvGeom {
            kernel_h,
            kernel_w,
            stride,
            pad_left,
            h_out,
            w_out,
        })
    }
}

fn im2col(x: &[f32], b: usize, c: usize, h: usize, w: usize, g: &ConvGeom, cols: &mut [f32]) {
    let ncols = b * g.h_out * g.w_out;
    for ci in 0..c {
        for ih in 0..g.kernel_h {
            for iw in 0..g.kernel_w {
                let krow = (ci * g.kernel_h + ih) * g.kernel_w + iw;
                let dst_base = krow * ncols;
                for bi in 0..b {
                    for ho in 0..g.h_out {
                        let src_row = ((bi * c + ci) * h + ho * g.stride + ih) * w;
                        let dst_row = dst_base + (bi * g.h_out + ho) * g.w_out;
                        for wo in 0..g.w_out {
                            let iw_src = (wo * g.stride + iw).wrapping_sub(g.pad_left);
                            cols[dst_row + wo] = if iw_src < w { x[src_row + iw_src] } else { 0.0 };
                        }
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f32], b: usize, c: usize, h: usize, w: usize, g: &ConvGeom, dx: &mut [f32]) {
    let ncols = b * g.h_out * g.w_out;
    for ci in 0..c {
        for ih in 0..g.kernel_h {
            for iw in 0..g.kernel_w {
                let krow = (ci * g.kernel_h + ih) * g.kernel_w + iw;
                let src_base = krow * ncols;
                for bi in 0..b {
                    for ho in 0..g.h_out {
                        let dst_row = ((bi * c + ci) * h + ho * g.stride + ih) * w;
                        let src_row = src_base + (bi * g.h_out + ho) * g.w_out;
                        for wo in 0..g.w_out {
                            let iw_dst = (wo * g.stride + iw).wrapping_sub(g.pad_left);
                            if iw_dst < w {
                                dx[dst_row + iw_dst] += cols[src_row + wo];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_identity_passes_input_through() {
        let spec = ModelSpec {
            input_shape: (1, 1, 3),
            layers: vec![LayerSpec::Flatten, LayerSpec::Dense { out_units: 3 }],
        };
        let mut params = Params::init(&spec, 0).unwrap();
        // Identity weights, zero bias.
        params.tensors[0] = Tensor::from_vec(
            &[3, 3],
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        );
        let x = Tensor::from_vec(&[1, 1, 1, 3], vec![0.5, -1.25, 3.0]);
        let cache = forward(&spec, &params, &x).unwrap();
        assert_eq!(cache.output().data, vec![0.5, -1.25, 3.0]);
    }

    #[test]
    fn maxpool_takes_pairwise_max() {
        let spec = ModelSpec {
            input_shape: (1, 1, 4),
            layers: vec![LayerSpec::MaxPool1x2],
        };
        let params = Params::init(&spec, 0).unwrap();
        let x = Tensor::from_vec(&[1, 1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]);
        let cache = forward(&spec, &params, &x).unwrap();
        assert_eq!(cache.output().data, vec![2.0, 4.0]);
    }

    #[test]
    fn global_avg_pool_of_constant_channel() {
        let spec = ModelSpec {
            input_shape: (2, 1, 5),
            layers: vec![LayerSpec::GlobalAvgPool],
        };
        let params = Params::init(&spec, 0).unwrap();
        let mut data = vec![7.0f32; 5];
        data.extend(vec![3.0f32; 5]);
        let x = Tensor::from_vec(&[1, 2, 1, 5], data);
        let cache = forward(&spec, &params, &x).unwrap();
        assert_eq!(cache.output().data, vec![7.0, 3.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let spec = ModelSpec {
            input_shape: (1, 1, 4),
            layers: vec![LayerSpec::Flatten, LayerSpec::Softmax],
        };
        let params = Params::init(&spec, 0).unwrap();
        let x = Tensor::from_vec(&[2, 1, 1, 4], vec![1.0, 2.0, 3.0, 4.0, -1.0, 0.0, 1.0, 100.0]);
        let cache = forward(&spec, &params, &x).unwrap();
        for row in cache.output().data.chunks(4) {
            let s: f32 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn mismatched_width_is_rejected_without_gap() {
        let spec = ModelSpec {
            input_shape: (1, 2, 64),
            layers: vec![LayerSpec::Flatten, LayerSpec::Dense { out_units: 2 }],
        };
        let params = Params::init(&spec, 0).unwrap();
        let x = Tensor::zeros(&[1, 1, 2, 32]);
        assert!(forward(&spec, &params, &x).is_err());
    }

    #[test]
    fn gap_models_accept_other_widths() {
        let spec = ModelSpec {
            input_shape: (1, 2, 64),
            layers: vec![
                LayerSpec::Conv2D {
                    out_channels: 3,
                    kernel_h: 2,
                    kernel_w: 7,
                    stride: 1,
                    padding: Padding::Valid,
                },
                LayerSpec::GlobalAvgPool,
                LayerSpec::Dense { out_units: 2 },
            ],
        };
        let params = Params::init(&spec, 0).unwrap();
        let x = Tensor::zeros(&[1, 1, 2, 100]);
        let cache = forward(&spec, &params, &x).unwrap();
        assert_eq!(cache.output().shape, vec![1, 2]);
    }
}
