//! Stochastic gradient descent with momentum and weight decay.

use crate::nn::ParamStore;

/// Heavy-ball SGD: `v ← μv + g + λw`, `w ← w − ηv`. Velocity buffers are
/// allocated lazily per parameter group and dropped by [`Sgd::reset`].
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    store_velocity: Vec<Vec<f32>>,
    extra_velocity: Vec<Vec<Vec<f64>>>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum,
            weight_decay,
            store_velocity: Vec::new(),
            extra_velocity: Vec::new(),
        }
    }

    /// Clears all momentum state.
    pub fn reset(&mut self) {
        self.store_velocity.clear();
        self.extra_velocity.clear();
    }

    pub fn has_state(&self) -> bool {
        !self.store_velocity.is_empty() || !self.extra_velocity.is_empty()
    }

    /// Updates every parameter of a model store from its accumulated grads.
    pub fn step_store(&mut self, store: &mut ParamStore, lr: f64) {
        let params = store.params_mut();
        if self.store_velocity.len() != params.len() {
            self.store_velocity = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        let (mu, wd, lr) = (self.momentum as f32, self.weight_decay as f32, lr as f32);
        for (p, v) in params.iter_mut().zip(&mut self.store_velocity) {
            for ((w, g), vi) in p.value.iter_mut().zip(&p.grad).zip(v.iter_mut()) {
                *vi = mu * *vi + g + wd * *w;
                *w -= lr * *vi;
            }
        }
    }

    /// Updates an auxiliary f64 parameter group identified by `group`.
    pub fn step_arrays<'a>(
        &mut self,
        group: usize,
        params: impl Iterator<Item = &'a mut Vec<f64>>,
        grads: impl Iterator<Item = &'a Vec<f64>>,
        lr: f64,
    ) {
        if self.extra_velocity.len() <= group {
            self.extra_velocity.resize(group + 1, Vec::new());
        }
        let vel = &mut self.extra_velocity[group];
        for (i, (w, g)) in params.zip(grads).enumerate() {
            if vel.len() <= i {
                vel.push(vec![0.0; w.len()]);
            }
            for ((wi, gi), vi) in w.iter_mut().zip(g).zip(vel[i].iter_mut()) {
                *vi = self.momentum * *vi + gi + self.weight_decay * *wi;
                *wi -= lr * *vi;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_sgd_step() {
        let mut store = ParamStore::new();
        let id = store.add("w", &[2], vec![1.0, -2.0]);
        store.grad_mut(id).copy_from_slice(&[0.5, 0.25]);
        let mut opt = Sgd::new(0.0, 0.0);
        opt.step_store(&mut store, 0.1);
        assert_eq!(store.value(id), &[0.95, -2.025]);
    }

    #[test]
    fn momentum_accumulates_and_resets() {
        let mut store = ParamStore::new();
        let id = store.add("w", &[1], vec![0.0]);
        store.grad_mut(id)[0] = 1.0;
        let mut opt = Sgd::new(0.9, 0.0);
        opt.step_store(&mut store, 1.0);
        opt.step_store(&mut store, 1.0);
        // v1 = 1, v2 = 1.9 -> w = -2.9
        assert!((store.value(id)[0] + 2.9).abs() < 1e-6);
        opt.reset();
        assert!(!opt.has_state());
        opt.step_store(&mut store, 1.0);
        assert!((store.value(id)[0] + 3.9).abs() < 1e-6);
    }

    #[test]
    fn weight_decay_shrinks_weights() {
        let mut w = [vec![2.0f64]];
        let g = [vec![0.0f64]];
        let mut opt = Sgd::new(0.0, 0.5);
        opt.step_arrays(0, w.iter_mut(), g.iter(), 0.1);
        assert!((w[0][0] - 1.9).abs() < 1e-12);
    }

    #[test]
    fn zero_weight_with_zero_grad_stays_zero() {
        let mut store = ParamStore::new();
        let id = store.add("w", &[3], vec![0.0, 1.0, 0.0]);
        let mut opt = Sgd::new(0.9, 5e-4);
        for _ in 0..10 {
            store.grad_mut(id).copy_from_slice(&[0.0, 0.3, 0.0]);
            opt.step_store(&mut store, 0.05);
        }
        assert_eq!(store.value(id)[0], 0.0);
        assert_eq!(store.value(id)[2], 0.0);
    }
}
