//! Bias-corrected Adam.

use super::{NnError, Params, Result, Tensor};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    /// Default hyperparameters with the pipeline's tuned learning rate.
    pub fn new(params: &Params, lr: f32) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.tensors.iter().map(|t| Tensor::zeros(&t.shape)).collect(),
            v: params.tensors.iter().map(|t| Tensor::zeros(&t.shape)).collect(),
        }
    }
}

/// One Adam update over every parameter tensor.
pub fn adam_step(params: &mut Params, grads: &Params, state: &mut AdamState) -> Result<()> {
    let mask = vec![true; params.tensors.len()];
    adam_step_masked(params, grads, state, &mask)
}

/// Adam update that leaves masked-out tensors (and their moments) untouched.
/// Used to freeze a pretrained encoder.
pub fn adam_step_masked(
    params: &mut Params,
    grads: &Params,
    state: &mut AdamState,
    trainable: &[bool],
) -> Result<()> {
    if grads.tensors.len() != params.tensors.len() || trainable.len() != params.tensors.len() {
        return Err(NnError::InvalidModel(
            "gradient/mask count does not match parameters".into(),
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (i, ((p, g), train)) in params
        .tensors
        .iter_mut()
        .zip(&grads.tensors)
        .zip(trainable)
        .enumerate()
    {
        if !train {
            continue;
        }
        if p.shape != g.shape {
            return Err(NnError::ShapeMismatch {
                layer: i,
                detail: format!("grad {:?} vs param {:?}", g.shape, p.shape),
            });
        }
        if !g.all_finite() {
            return Err(NnError::NonFinite {
                context: format!("gradient tensor {i} (shape {:?}) at step {t}", g.shape),
            });
        }
        let m = &mut state.m[i].data;
        let v = &mut state.v[i].data;
        for (((pv, &gv), mv), vv) in p.data.iter_mut().zip(&g.data).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mv = state.beta1 * *mv + (1.0 - state.beta1) * gv;
            *vv = state.beta2 * *vv + (1.0 - state.beta2) * gv * gv;
            let m_hat = *mv / bc1;
            let v_hat = *vv / bc2;
            *pv -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(v: f32) -> Params {
        Params {
            tensors: vec![Tensor::from_vec(&[1], vec![v])],
        }
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = one_param(0.5);
        let g = one_param(0.0);
        let mut st = AdamState::new(&p, 1e-3);
        for _ in 0..10 {
            adam_step(&mut p, &g, &mut st).unwrap();
        }
        assert_eq!(p.tensors[0].data[0], 0.5);
    }

    #[test]
    fn constant_gradient_update_approaches_lr() {
        // Scalar brute-force oracle in f64 for the same recurrence.
        let (lr, b1, b2, eps) = (1e-3f64, 0.9f64, 0.999f64, 1e-8f64);
        let g = 0.37f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        let mut oracle_step = 0.0f64;
        for t in 1..=5000 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            oracle_step = lr * mh / (vh.sqrt() + eps);
        }
        assert!((oracle_step - lr).abs() < 1e-3 * lr, "oracle sanity: {oracle_step}");

        let mut p = one_param(0.0);
        let grads = one_param(0.37);
        let mut st = AdamState::new(&p, 1e-3);
        let mut prev = 0.0f32;
        let mut last_step = 0.0f32;
        for _ in 0..5000 {
            adam_step(&mut p, &grads, &mut st).unwrap();
            last_step = prev - p.tensors[0].data[0];
            prev = p.tensors[0].data[0];
        }
        assert!(
            (f64::from(last_step) - oracle_step).abs() < 1e-6,
            "impl {last_step} vs oracle {oracle_step}"
        );
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = one_param(0.0);
        let g = one_param(f32::NAN);
        let mut st = AdamState::new(&p, 1e-3);
        let err = adam_step(&mut p, &g, &mut st).unwrap_err();
        assert!(matches!(err, NnError::NonFinite { .. }));
    }

    #[test]
    fn masked_tensors_stay_bitwise_identical() {
        let mut p = Params {
            tensors: vec![
                Tensor::from_vec(&[2], vec![1.0, 2.0]),
                Tensor::from_vec(&[2], vec![3.0, 4.0]),
            ],
        };
        let g = Params {
            tensors: vec![
                Tensor::from_vec(&[2], vec![0.1, 0.1]),
                Tensor::from_vec(&[2], vec![0.1, 0.1]),
            ],
        };
        let mut st = AdamState::new(&p, 1e-2);
        for _ in 0..5 {
            adam_step_masked(&mut p, &g, &mut st, &[false, true]).unwrap();
        }
        assert_eq!(p.tensors[0].data, vec![1.0, 2.0]);
        assert_ne!(p.tensors[1].data, vec![3.0, 4.0]);
    }
}
