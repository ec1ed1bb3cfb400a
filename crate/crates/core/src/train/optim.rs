use cuboidcast_tensor::{Element, ParamStore, Tensor};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-5 }
    }
}

/// First and second moments, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState<E: Element> {
    pub m: Vec<Tensor<E>>,
    pub v: Vec<Tensor<E>>,
    pub step: u64,
}

impl<E: Element> OptimState<E> {
    pub fn new(params: &ParamStore<E>) -> Self {
        let zeros: Vec<Tensor<E>> = params.ids().map(|id| Tensor::zeros(params.get(id).shape())).collect();
        Self { m: zeros.clone(), v: zeros, step: 0 }
    }
}

/// One bias-corrected Adam step with decoupled weight decay.
pub fn adamw_step<E: Element>(params: &mut ParamStore<E>, grads: &[Tensor<E>], state: &mut OptimState<E>, hp: &AdamW, lr: f64) {
    assert_eq!(grads.len(), state.m.len(), "one gradient per parameter");
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (E::of(hp.beta1), E::of(hp.beta2));
    let (c1, c2) = (E::of(1.0 - hp.beta1.powi(t)), E::of(1.0 - hp.beta2.powi(t)));
    let (lr_e, eps, decay) = (E::of(lr), E::of(hp.eps), E::of(1.0 - lr * hp.weight_decay));
    let ids: Vec<_> = params.ids().collect();
    for (i, id) in ids.into_iter().enumerate() {
        let p = params.get_mut(id).data_mut();
        let (m, v, g) = (state.m[i].data_mut(), state.v[i].data_mut(), grads[i].data());
        assert_eq!(p.len(), g.len(), "gradient shape");
        for j in 0..p.len() {
            m[j] = b1 * m[j] + (E::one() - b1) * g[j];
            v[j] = b2 * v[j] + (E::one() - b2) * g[j] * g[j];
            let (mh, vh) = (m[j] / c1, v[j] / c2);
            p[j] = p[j] * decay - lr_e * mh / (vh.sqrt() + eps);
        }
    }
}

/// Linear warmup to `base_lr`, then cosine decay to zero at `total`.
pub fn lr_schedule(step: usize, total: usize, warmup_frac: f64, base_lr: f64) -> f64 {
    let warm = warmup_frac * total as f64;
    let s = step.min(total) as f64;
    if s < warm {
        return base_lr * s / warm;
    }
    let span = total as f64 - warm;
    if span <= 0.0 {
        return base_lr;
    }
    0.5 * base_lr * (1.0 + (std::f64::consts::PI * (s - warm) / span).cos())
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<E: Element>(grads: &mut [Tensor<E>], max_norm: f64) -> f64 {
    let norm = grads.iter().flat_map(|g| g.data()).map(|&x| x.to_f64().unwrap_or(f64::NAN).powi(2)).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = E::of(max_norm / norm);
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x = *x * s);
        }
    }
    norm
}
