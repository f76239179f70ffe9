//! Adam with decoupled (default) or coupled weight decay.

use alloc::collections::BTreeMap;

use crate::param::{ParamId, Parameter};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// `true`: decay is added to the gradient (classic L2).
    /// `false`: decay shrinks the weights directly.
    pub coupled_weight_decay: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            coupled_weight_decay: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    moments: BTreeMap<ParamId, (Tensor, Tensor)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, id: ParamId) -> Option<&(Tensor, Tensor)> {
        self.moments.get(&id)
    }

    /// Applies one update to every non-frozen parameter from its `grad`.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut Parameter>) {
        self.step += 1;
        let c = self.config;
        let t = self.step as f64;
        let bias1 = 1.0 - libm::pow(c.beta1, t);
        let bias2 = 1.0 - libm::pow(c.beta2, t);
        for p in params {
            if p.frozen {
                continue;
            }
            let (m, v) = self
                .moments
                .entry(p.id)
                .or_insert_with(|| (Tensor::zeros(p.value.shape()), Tensor::zeros(p.value.shape())));
            let grads = p.grad.data();
            let values = p.value.data_mut();
            for (((w, &g0), m), v) in values.iter_mut().zip(grads).zip(m.data_mut()).zip(v.data_mut()) {
                let g = if c.coupled_weight_decay {
                    g0 + c.weight_decay * *w
                } else {
                    g0
                };
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                if !c.coupled_weight_decay && c.weight_decay != 0.0 {
                    *w -= c.lr * c.weight_decay * *w;
                }
                *w -= c.lr * m_hat / (libm::sqrt(v_hat) + c.eps);
            }
        }
    }
}
