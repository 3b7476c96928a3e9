use crate::error::{Error, Result};
use crate::numerics::ParamStore;

/// Linear warm-up over the first `warmup` fraction of `total` steps, then
/// linear decay. `step` counts from 1.
pub fn learning_rate(peak: f64, step: usize, total: usize, warmup: f64) -> f64 {
    if total == 0 || step == 0 {
        return 0.0;
    }
    let w = (warmup * total as f64).round() as usize;
    if step <= w {
        peak * step as f64 / w as f64
    } else {
        peak * (total + 1).saturating_sub(step) as f64 / (total - w) as f64
    }
}

/// AdamW with bias-corrected moments and decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: usize,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(store: &ParamStore, weight_decay: f64) -> Self {
        let zeros = || store.ids().map(|id| vec![0.0; store.get(id).numel()]).collect();
        AdamW {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-6,
            weight_decay,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Applies one update from the gradients held in `store`. Every
    /// gradient is checked before any parameter changes.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) -> Result<()> {
        for id in store.ids() {
            if let Some(g) = store.get(id).grad() {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numeric(format!(
                        "non-finite gradient for parameter {}",
                        store.name(id)
                    )));
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let p = store.get_mut(id);
            let grad = p.grad().map(<[f64]>::to_vec).unwrap_or_default();
            if grad.is_empty() {
                continue;
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, x) in p.data_mut().iter_mut().enumerate() {
                let g = grad[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let update = (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
                *x -= lr * (update + self.weight_decay * *x);
            }
        }
        Ok(())
    }
}
