//! Finite-difference gradient checking.
//!
//! The checker carries its own naive f64 forward evaluator, independent of
//! the im2col/matmul engine whose gradients it verifies. Central differences
//! use h = 1e-3 on the f32 parameters with 64-bit accumulation throughout
//! the check.

use super::layers::{backward, forward};
use super::loss::{loss_mse, loss_xent_batch};
use super::{LayerSpec, ModelSpec, NnError, Padding, Params, Result, Tensor};
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Loss under which gradients are checked.
pub enum CheckLoss<'a> {
    Mse(&'a Tensor),
    Xent(&'a [usize]),
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked_coords: usize,
    /// Coordinates whose +-h perturbation flipped a ReLU sign or a pool
    /// argmax; central differences are meaningless across such ties.
    pub skipped_ties: usize,
}

/// Compare analytic parameter gradients against central finite differences
/// of the reference evaluator on up to `max_coords` coordinates per
/// parameter tensor. Returns the max relative error over checked coordinates.
pub fn grad_check(
    spec: &ModelSpec,
    params: &Params,
    input: &Tensor,
    loss: &CheckLoss,
    max_coords: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    const H: f64 = 1e-3;
    // Coordinates with near-zero gradient are held to an absolute tolerance
    // instead of a meaningless ratio.
    const FLOOR: f64 = 1e-2;

    let cache = forward(spec, params, input)?;
    let grad_out = match loss {
        CheckLoss::Mse(target) => loss_mse(cache.output(), target)?.1,
        CheckLoss::Xent(classes) => loss_xent_batch(cache.output(), classes)?.1,
    };
    let (analytic, _) = backward(spec, params, &cache, &grad_out)?;

    // Cross-check the engine forward against the reference evaluator once;
    // a disagreement here means the engine itself is broken and per-
    // coordinate differences would be meaningless.
    let mut ref_params: Vec<Vec<f64>> = params
        .tensors
        .iter()
        .map(|t| t.data.iter().map(|&v| f64::from(v)).collect())
        .collect();
    let (ref_out, base_sig) = eval_f64(spec, &ref_params, input)?;
    for (&engine, reference) in cache.output().data.iter().zip(&ref_out.data) {
        if (f64::from(engine) - reference).abs() > 1e-3 * (1.0 + reference.abs()) {
            return Err(NnError::NonFinite {
                context: format!(
                    "engine forward diverges from reference: {engine} vs {reference}"
                ),
            });
        }
    }

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    let mut skipped = 0usize;

    for ti in 0..params.tensors.len() {
        let n = params.tensors[ti].len();
        let mut coords: Vec<usize> = (0..n).collect();
        if n > max_coords {
            coords.shuffle(&mut rng);
            coords.truncate(max_coords);
        }
        for ci in coords {
            let orig = ref_params[ti][ci];
            ref_params[ti][ci] = orig + H;
            let (out_p, sig_p) = eval_f64(spec, &ref_params, input)?;
            let lp = ref_loss(&out_p, loss)?;
            ref_params[ti][ci] = orig - H;
            let (out_m, sig_m) = eval_f64(spec, &ref_params, input)?;
            let lm = ref_loss(&out_m, loss)?;
            ref_params[ti][ci] = orig;

            if sig_p != base_sig || sig_m != base_sig {
                skipped += 1;
                continue;
            }
            let num = (lp - lm) / (2.0 * H);
            let ana = f64::from(analytic.tensors[ti].data[ci]);
            let rel = (num - ana).abs() / (num.abs() + ana.abs()).max(FLOOR);
            if rel > max_rel {
                max_rel = rel;
            }
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_err: max_rel,
        checked_coords: checked,
        skipped_ties: skipped,
    })
}

struct RefTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Naive f64 forward pass: direct loops, no im2col, no parallelism.
fn eval_f64(
    spec: &ModelSpec,
    params: &[Vec<f64>],
    input: &Tensor,
) -> Result<(RefTensor, Vec<Vec<u8>>)> {
    let offsets = spec.param_offsets();
    let param_shapes = spec.param_shapes()?;
    let mut x = RefTensor {
        shape: input.shape.clone(),
        data: input.data.iter().map(|&v| f64::from(v)).collect(),
    };
    let mut signature: Vec<Vec<u8>> = Vec::new();

    for (i, layer) in spec.layers.iter().enumerate() {
        x = match *layer {
            LayerSpec::Conv2D {
                out_channels,
                kernel_h,
                kernel_w,
                stride,
                padding,
            } => {
                let (b, c, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
                let weight = &params[offsets[i]];
                let bias = &params[offsets[i] + 1];
                debug_assert_eq!(
                    param_shapes[offsets[i]],
                    vec![out_channels, c, kernel_h, kernel_w]
                );
                let (pad_left, h_out, w_out) = match padding {
                    Padding::Valid => (0usize, (h - kernel_h) / stride + 1, (w - kernel_w) / stride + 1),
                    Padding::SameTime => {
                        let w_out = w.div_ceil(stride);
                        let pad = ((w_out - 1) * stride + kernel_w).saturating_sub(w);
                        (pad / 2, (h - kernel_h) / stride + 1, w_out)
                    }
                };
                let mut out = RefTensor {
                    shape: vec![b, out_channels, h_out, w_out],
                    data: vec![0.0; b * out_channels * h_out * w_out],
                };
                for bi in 0..b {
                    for co in 0..out_channels {
                        for ho in 0..h_out {
                            for wo in 0..w_out {
                                let mut acc = bias[co];
                                for ci in 0..c {
                                    for ih in 0..kernel_h {
                                        for iw in 0..kernel_w {
                                            let iw_src = (wo * stride + iw).wrapping_sub(pad_left);
                                            if iw_src < w {
                                                let xi = ((bi * c + ci) * h + ho * stride + ih) * w
                                                    + iw_src;
                                                let wi_ = ((co * c + ci) * kernel_h + ih) * kernel_w
                                                    + iw;
                                                acc += weight[wi_] * x.data[xi];
                                            }
                                        }
                                    }
                                }
                                out.data[((bi * out_channels + co) * h_out + ho) * w_out + wo] = acc;
                            }
                        }
                    }
                }
                out
            }
            LayerSpec::ReLU => {
                signature.push(x.data.iter().map(|&v| u8::from(v > 0.0)).collect());
                RefTensor {
                    shape: x.shape.clone(),
                    data: x.data.iter().map(|&v| v.max(0.0)).collect(),
                }
            }
            LayerSpec::MaxPool1x2 => {
                let wi = *x.shape.last().unwrap();
                let wo = wi / 2;
                let rows = x.data.len() / wi;
                let mut shape = x.shape.clone();
                *shape.last_mut().unwrap() = wo;
                let mut data = Vec::with_capacity(rows * wo);
                let mut argmax = Vec::with_capacity(rows * wo);
                for row in x.data.chunks(wi) {
                    for j in 0..wo {
                        if row[2 * j + 1] > row[2 * j] {
                            data.push(row[2 * j + 1]);
                            argmax.push(1u8);
                        } else {
                            data.push(row[2 * j]);
                            argmax.push(0u8);
                        }
                    }
                }
                signature.push(argmax);
                RefTensor { shape, data }
            }
            LayerSpec::Flatten => RefTensor {
                shape: vec![x.shape[0], x.data.len() / x.shape[0]],
                data: x.data,
            },
            LayerSpec::GlobalAvgPool => {
                let (b, c) = (x.shape[0], x.shape[1]);
                let plane = x.shape[2] * x.shape[3];
                let mut data = Vec::with_capacity(b * c);
                for chunk in x.data.chunks(plane) {
                    data.push(chunk.iter().sum::<f64>() / plane as f64);
                }
                RefTensor {
                    shape: vec![b, c],
                    data,
                }
            }
            LayerSpec::Dense { out_units } => {
                let (b, f) = (x.shape[0], x.shape[1]);
                let weight = &params[offsets[i]];
                let bias = &params[offsets[i] + 1];
                let mut data = vec![0.0; b * out_units];
                for bi in 0..b {
                    for u in 0..out_units {
                        let mut acc = bias[u];
                        for k in 0..f {
                            acc += weight[u * f + k] * x.data[bi * f + k];
                        }
                        data[bi * out_units + u] = acc;
                    }
                }
                RefTensor {
                    shape: vec![b, out_units],
                    data,
                }
            }
            LayerSpec::Softmax => {
                let f = x.shape[1];
                let mut data = x.data.clone();
                for row in data.chunks_mut(f) {
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut sum = 0.0;
                    for v in row.iter_mut() {
                        *v = (*v - max).exp();
                        sum += *v;
                    }
                    for v in row.iter_mut() {
                        *v /= sum;
                    }
                }
                RefTensor {
                    shape: x.shape.clone(),
                    data,
                }
            }
        };
    }
    Ok((x, signature))
}

fn ref_loss(out: &RefTensor, loss: &CheckLoss) -> Result<f64> {
    match loss {
        CheckLoss::Mse(target) => {
            let n = out.data.len() as f64;
            let mut acc = 0.0;
            for (&p, &t) in out.data.iter().zip(&target.data) {
                let d = p - f64::from(t);
                acc += d * d;
            }
            Ok(acc / n)
        }
        CheckLoss::Xent(classes) => {
            let b = out.shape[0];
            let c = out.shape[1];
            let mut acc = 0.0;
            for (row, &class) in out.data.chunks(c).zip(classes.iter()) {
                if class >= c {
                    return Err(NnError::ClassOutOfRange { index: class, classes: c });
                }
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let denom: f64 = row.iter().map(|&v| (v - max).exp()).sum();
                acc += denom.ln() - (row[class] - max);
            }
            Ok(acc / b as f64)
        }
    }
}
