use hpalf_tensor::{ParamStore, Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    // per ParamId; created on the first gradient
    moments: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

impl Default for Adam {
    fn default() -> Self {
        Self::new(0.9, 0.999, 1e-8)
    }
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            t: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected update of every trainable parameter that has a
    /// gradient; gradients are left in place.
    pub fn step<T: Scalar>(&mut self, store: &mut ParamStore<T>, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        if self.moments.len() < store.len() {
            self.moments.resize(store.len(), None);
        }
        for (id, p) in store.iter_mut() {
            if !p.requires_grad {
                continue;
            }
            let Some(g) = &p.grad else { continue };
            let n = g.numel();
            let (m, v) = self.moments[id.0].get_or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            let vals = p.value.data_mut();
            for (i, gi) in g.data().iter().enumerate() {
                let gi = gi.as_f64();
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                vals[i] = T::of_f64(vals[i].as_f64() - lr * mh / (vh.sqrt() + self.eps));
            }
        }
    }
}

/// `lr0 / 2^(epoch / period)`.
pub fn step_lr(lr0: f64, period: usize, epoch: usize) -> f64 {
    lr0 * 0.5f64.powi((epoch / period.max(1)) as i32)
}

pub(crate) fn grads_finite<T: Scalar>(store: &ParamStore<T>) -> bool {
    store
        .iter()
        .all(|(_, p)| p.grad.as_ref().is_none_or(Tensor::is_finite))
}
