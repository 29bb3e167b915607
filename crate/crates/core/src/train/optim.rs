use serde::{Deserialize, Serialize};

use crate::model::ModelParams;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Per-client optimizer memory. Never leaves the client.
#[derive(Debug, Clone)]
pub enum OptimizerState {
    Sgd,
    Adam {
        step: i32,
        m: Vec<Tensor>,
        v: Vec<Tensor>,
    },
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, params: &ModelParams) -> Self {
        match kind {
            OptimizerKind::Sgd => OptimizerState::Sgd,
            OptimizerKind::Adam => {
                let zeros: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
                OptimizerState::Adam {
                    step: 0,
                    m: zeros.clone(),
                    v: zeros,
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

/// Global L2 norm over every gradient tensor.
pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().map(Tensor::sum_squares).sum::<f64>().sqrt()
}

/// Rescales gradients so their global norm is at most `max_norm`; leaves
/// them untouched when already within bounds.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let k = max_norm / norm;
        for g in grads.iter_mut() {
            g.scale_in_place(k);
        }
    }
    norm
}

pub fn apply_update(
    params: &mut ModelParams,
    grads: &[Tensor],
    state: &mut OptimizerState,
    learning_rate: f64,
    adam: AdamHyper,
) {
    match state {
        OptimizerState::Sgd => {
            if learning_rate == 0.0 {
                return;
            }
            for (p, g) in params.tensors_mut().into_iter().zip(grads) {
                for (w, &d) in p.data_mut().iter_mut().zip(g.data()) {
                    *w -= learning_rate * d;
                }
            }
        }
        OptimizerState::Adam { step, m, v } => {
            *step += 1;
            let AdamHyper { beta1, beta2, epsilon } = adam;
            let bias1 = 1.0 - beta1.powi(*step);
            let bias2 = 1.0 - beta2.powi(*step);
            for (((p, g), m), v) in params.tensors_mut().into_iter().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
                let (m, v) = (m.data_mut(), v.data_mut());
                for (i, &d) in g.data().iter().enumerate() {
                    m[i] = beta1 * m[i] + (1.0 - beta1) * d;
                    v[i] = beta2 * v[i] + (1.0 - beta2) * d * d;
                }
                // A zero rate must leave the weights bit-for-bit unchanged,
                // which `w - 0.0 * x` does not guarantee for `w == -0.0`.
                if learning_rate == 0.0 {
                    continue;
                }
                for (w, (&m, &v)) in p.data_mut().iter_mut().zip(m.iter().zip(v.iter())) {
                    *w -= learning_rate * (m / bias1) / ((v / bias2).sqrt() + epsilon);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelDims;

    const HYPER: AdamHyper = AdamHyper {
        beta1: 0.9,
        beta2: 0.999,
        epsilon: 1e-8,
    };

    fn zero_grads(p: &ModelParams) -> Vec<Tensor> {
        p.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect()
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let p0 = ModelParams::init(ModelDims::new(6, 6, 3, 4), 2).unwrap();
        let grads = zero_grads(&p0);

        let mut p = p0.clone();
        apply_update(&mut p, &grads, &mut OptimizerState::Sgd, 0.1, HYPER);
        assert!(p.bitwise_eq(&p0));

        let mut p = p0.clone();
        let mut st = OptimizerState::new(OptimizerKind::Adam, &p0);
        apply_update(&mut p, &grads, &mut st, 0.1, HYPER);
        assert!(p.max_abs_diff(&p0).unwrap() < 1e-12);
    }

    #[test]
    fn clipping_leaves_small_gradients_alone() {
        let mut small = vec![Tensor::vector(vec![0.3, 0.4])];
        let before = small.clone();
        let norm = clip_global_norm(&mut small, 5.0);
        assert!((norm - 0.5).abs() < 1e-15);
        assert!(small[0].bitwise_eq(&before[0]));

        let mut big = vec![Tensor::vector(vec![30.0, 40.0])];
        clip_global_norm(&mut big, 5.0);
        assert!((global_norm(&big) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn sgd_moves_against_the_gradient() {
        let p0 = ModelParams::init(ModelDims::new(6, 6, 3, 4), 2).unwrap();
        let mut grads = zero_grads(&p0);
        grads[24] = Tensor::full(grads[24].shape(), 1.0);
        let mut p = p0.clone();
        apply_update(&mut p, &grads, &mut OptimizerState::Sgd, 0.5, HYPER);
        let diff = p.out_proj.data()[0] - p0.out_proj.data()[0];
        assert!((diff + 0.5).abs() < 1e-15);
    }
}
