//! Loss functions. Scalars accumulate in f64; gradients are f32 tensors.

use super::{NnError, Result, Tensor};

/// Mean squared error over all elements. Returns (loss, d loss / d pred).
pub fn loss_mse(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if pred.shape != target.shape {
        return Err(NnError::ShapeMismatch {
            layer: usize::MAX,
            detail: format!("mse: pred {:?} vs target {:?}", pred.shape, target.shape),
        });
    }
    if pred.is_empty() {
        return Err(NnError::InvalidModel("mse over empty tensors".into()));
    }
    let n = pred.len() as f64;
    let mut acc = 0.0f64;
    let mut grad = Tensor::zeros(&pred.shape);
    for ((g, &p), &t) in grad.data.iter_mut().zip(&pred.data).zip(&target.data) {
        let d = f64::from(p) - f64::from(t);
        acc += d * d;
        *g = (2.0 * d / n) as f32;
    }
    Ok((acc / n, grad))
}

/// Cross entropy of a single logit row against a class index:
/// `-log softmax(logits)[class]`.
pub fn loss_xent(logits: &[f32], class: usize) -> Result<(f64, Vec<f32>)> {
    if class >= logits.len() {
        return Err(NnError::ClassOutOfRange {
            index: class,
            classes: logits.len(),
        });
    }
    let max = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let mut denom = 0.0f64;
    for &v in logits {
        denom += f64::from(v - max).exp();
    }
    let log_denom = denom.ln();
    let loss = log_denom - f64::from(logits[class] - max);
    let grad = logits
        .iter()
        .enumerate()
        .map(|(j, &v)| {
            let p = (f64::from(v - max).exp() / denom) as f32;
            if j == class {
                p - 1.0
            } else {
                p
            }
        })
        .collect();
    Ok((loss, grad))
}

/// Batched cross entropy over `[batch, classes]` logits; mean over the batch.
pub fn loss_xent_batch(logits: &Tensor, classes: &[usize]) -> Result<(f64, Tensor)> {
    if logits.shape.len() != 2 || logits.shape[0] != classes.len() {
        return Err(NnError::ShapeMismatch {
            layer: usize::MAX,
            detail: format!(
                "xent: logits {:?} vs {} class labels",
                logits.shape,
                classes.len()
            ),
        });
    }
    let (b, c) = (logits.shape[0], logits.shape[1]);
    let mut grad = Tensor::zeros(&[b, c]);
    let mut acc = 0.0f64;
    for ((row, &class), grow) in logits
        .data
        .chunks(c)
        .zip(classes)
        .zip(grad.data.chunks_mut(c))
    {
        let (l, g) = loss_xent(row, class)?;
        acc += l;
        for (dst, src) in grow.iter_mut().zip(g) {
            *dst = src / b as f32;
        }
    }
    Ok((acc / b as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_zero_when_equal() {
        let p = Tensor::from_vec(&[2], vec![1.0, -2.0]);
        let (l, g) = loss_mse(&p, &p).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mse_of_unit_errors_is_one() {
        let p = Tensor::from_vec(&[2], vec![0.0, 0.0]);
        let t = Tensor::from_vec(&[2], vec![1.0, 1.0]);
        let (l, _) = loss_mse(&p, &t).unwrap();
        assert!((l - 1.0).abs() < 1e-12);
    }

    #[test]
    fn xent_uniform_logits_is_ln_c() {
        for c in [2usize, 5, 15] {
            let logits = vec![0.7f32; c];
            let (l, _) = loss_xent(&logits, 0).unwrap();
            assert!((l - (c as f64).ln()).abs() < 1e-6, "c={c}: {l}");
        }
    }

    #[test]
    fn xent_rejects_out_of_range_class() {
        assert!(loss_xent(&[0.0, 1.0], 2).is_err());
    }
}
