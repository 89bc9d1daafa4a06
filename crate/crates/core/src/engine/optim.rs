//! Decoupled-weight-decay Adam and the warmup + cosine learning-rate schedule.

use crate::autodiff::{Matrix, ParamId, ParamStore};
use crate::config::TrainConfig;

/// Linear warmup followed by cosine decay to zero, evaluated per step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl LrSchedule {
    pub fn new(base: f64, warmup_steps: usize, total_steps: usize) -> Self {
        Self { base, warmup_steps, total_steps }
    }

    pub fn lr(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.base * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = self.total_steps.saturating_sub(self.warmup_steps).max(1);
        let t = ((step - self.warmup_steps) as f64 / span as f64).min(1.0);
        self.base * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

/// AdamW. Weight decay applies to parameters with more than one row; row
/// vectors (biases, norm gains, scale/shift, tokens) are not decayed.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    moments: Vec<Option<(Matrix, Matrix)>>,
}

impl AdamW {
    pub fn new(config: &TrainConfig) -> Self {
        Self {
            beta1: config.adam_beta1,
            beta2: config.adam_beta2,
            eps: config.adam_eps,
            weight_decay: config.weight_decay,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. Gradients of frozen parameters are ignored.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Matrix)], lr: f64) {
        self.step += 1;
        if self.moments.len() < store.len() {
            self.moments.resize(store.len(), None);
        }
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (id, grad) in grads {
            if !store.is_trainable(*id) {
                continue;
            }
            let (m, v) = self.moments[id.0].get_or_insert_with(|| (Matrix::zeros(grad.dim()), Matrix::zeros(grad.dim())));
            let (b1, b2) = (self.beta1, self.beta2);
            m.zip_mut_with(grad, |m, &g| *m = b1 * *m + (1.0 - b1) * g);
            v.zip_mut_with(grad, |v, &g| *v = b2 * *v + (1.0 - b2) * g * g);
            let decay = if store.get(*id).nrows() > 1 { self.weight_decay } else { 0.0 };
            let eps = self.eps;
            let p = store.get_mut(*id);
            ndarray::Zip::from(p).and(&*m).and(&*v).for_each(|p, &m, &v| {
                let update = (m / c1) / ((v / c2).sqrt() + eps);
                *p -= lr * (update + decay * *p);
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn schedule_shape() {
        let s = LrSchedule::new(1.0, 0, 10);
        assert_eq!(s.lr(0), 1.0);
        assert!((s.lr(5) - 0.5).abs() < 1e-12);
        assert!(s.lr(9) < s.lr(8));
        let w = LrSchedule::new(2.0, 4, 12);
        assert_eq!(w.lr(0), 0.5);
        assert_eq!(w.lr(3), 2.0);
        assert_eq!(w.lr(4), 2.0);
    }

    #[test]
    fn zero_lr_is_null_step() {
        let mut store = ParamStore::new();
        let id = store.add("w", array![[1.0, 2.0], [3.0, 4.0]], true);
        let mut opt = AdamW::new(&TrainConfig::default());
        opt.step(&mut store, &[(id, array![[1.0, -1.0], [0.5, 0.0]])], 0.0);
        assert_eq!(store.get(id), &array![[1.0, 2.0], [3.0, 4.0]]);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut store = ParamStore::new();
        let id = store.add("b", array![[0.0, 0.0]], true);
        let frozen = store.add("f", array![[1.0]], false);
        let mut opt = AdamW::new(&TrainConfig::default());
        opt.step(&mut store, &[(id, array![[2.0, -3.0]]), (frozen, array![[5.0]])], 0.1);
        let p = store.get(id);
        assert!((p[[0, 0]] + 0.1).abs() < 1e-6 && (p[[0, 1]] - 0.1).abs() < 1e-6);
        assert_eq!(store.get(frozen), &array![[1.0]]);
    }
}
