use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::kernels::Real;
use crate::model::{SkipSpec, Weights};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub beta1: Real,
    pub beta2: Real,
    pub eps: Real,
    pub weight_decay: Real,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moments plus the number of steps taken.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Weights,
    pub v: Weights,
}

impl AdamState {
    pub fn new(like: &Weights) -> Self {
        Self {
            step: 0,
            m: like.zeros_like(),
            v: like.zeros_like(),
        }
    }
}

/// One AdamW update of a single tensor at step `t` (1-based). Decay is
/// applied to the parameter before the moment update, decoupled from the
/// gradient.
#[allow(clippy::too_many_arguments)]
pub fn adamw_update(
    param: &mut [Real],
    grad: &[Real],
    m: &mut [Real],
    v: &mut [Real],
    t: u64,
    lr: Real,
    hp: &AdamW,
    decay: bool,
) {
    let c1 = 1.0 - hp.beta1.powi(t as i32);
    let c2 = 1.0 - hp.beta2.powi(t as i32);
    for i in 0..param.len() {
        if decay {
            param[i] *= 1.0 - lr * hp.weight_decay;
        }
        m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * grad[i];
        v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * grad[i] * grad[i];
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + hp.eps);
    }
}

/// AdamW over every tensor outside `skip`. Frozen tensors and their
/// moments are left untouched; weight decay applies to matrices only.
pub fn adamw_step(
    weights: &mut Weights,
    grads: &Weights,
    state: &mut AdamState,
    skip: SkipSpec,
    lr: Real,
    hp: &AdamW,
) -> Result<()> {
    let shapes = |w: &Weights| w.tensors().into_iter().map(|(i, _)| i).collect::<Vec<_>>();
    let want = shapes(weights);
    if shapes(grads) != want || shapes(&state.m) != want || shapes(&state.v) != want {
        return invalid("gradient or optimizer state shapes do not match the weights");
    }
    state.step += 1;
    let t = state.step;
    let params = weights.tensors_mut();
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    for ((((info, p), (_, g)), (_, m)), (_, v)) in
        params.into_iter().zip(grads.tensors()).zip(ms).zip(vs)
    {
        if info.layer.is_some_and(|l| skip.skips(l)) {
            continue;
        }
        adamw_update(p, g, m, v, t, lr, hp, info.is_matrix());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let hp = AdamW {
            weight_decay: 0.0,
            ..AdamW::default()
        };
        let (mut p, mut m, mut v) = ([0.5], [0.0], [0.0]);
        adamw_update(&mut p, &[1.0], &mut m, &mut v, 1, 0.1, &hp, true);
        assert!((p[0] - 0.4).abs() < 1e-8);
    }

    #[test]
    fn zero_gradient_no_decay_is_identity() {
        let hp = AdamW {
            weight_decay: 0.0,
            ..AdamW::default()
        };
        let (mut p, mut m, mut v) = ([0.5, -2.0], [0.0; 2], [0.0; 2]);
        adamw_update(&mut p, &[0.0; 2], &mut m, &mut v, 1, 0.1, &hp, true);
        assert_eq!(p, [0.5, -2.0]);
    }
}
