//! Adam with optional global-norm clipping.

use alloc::vec::Vec;

use crate::linalg::Matrix;
use crate::math;
use crate::params::{Grads, ParamStore};

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros = || store.iter().map(|(_, p)| Matrix::zeros(p.rows(), p.cols())).collect();
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros(), v: zeros() }
    }

    /// Applies one update. Parameters without a gradient are left alone and
    /// keep their moment estimates.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads) {
        self.step += 1;
        let bc1 = 1.0 - math::powi(self.beta1, self.step);
        let bc2 = 1.0 - math::powi(self.beta2, self.step);
        for id in store.ids().collect::<Vec<_>>() {
            let Some(g) = grads.get(id) else { continue };
            let m = self.m[id.index()].as_mut_slice();
            let v = self.v[id.index()].as_mut_slice();
            let p = store.get_mut(id).as_mut_slice();
            for k in 0..p.len() {
                let gk = g.as_slice()[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p[k] -= self.lr * m_hat / (math::sqrt(v_hat) + self.eps);
            }
        }
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut Grads, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_minimises_a_quadratic() {
        let mut store = ParamStore::new();
        let x = store.add("x", Matrix::row_vector(alloc::vec![3.0, -2.0]));
        let mut opt = Adam::new(&store, 0.1);
        for _ in 0..500 {
            let mut g = Grads::new(1);
            let grad = store.get(x).map(|v| 2.0 * v);
            g.accumulate(x, &grad);
            opt.step(&mut store, &g);
        }
        assert!(store.get(x).sq_norm() < 1e-4);
    }

    #[test]
    fn zero_lr_changes_nothing() {
        let mut store = ParamStore::new();
        let x = store.add("x", Matrix::row_vector(alloc::vec![1.0]));
        let before = store.clone();
        let mut opt = Adam::new(&store, 0.0);
        let mut g = Grads::new(1);
        g.accumulate(x, &Matrix::row_vector(alloc::vec![5.0]));
        opt.step(&mut store, &g);
        assert_eq!(store, before);
    }

    #[test]
    fn clipping_caps_the_norm() {
        let mut store = ParamStore::new();
        let x = store.add("x", Matrix::row_vector(alloc::vec![0.0, 0.0]));
        let mut g = Grads::new(store.len());
        g.accumulate(x, &Matrix::row_vector(alloc::vec![3.0, 4.0]));
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g.global_norm() - 1.0).abs() < 1e-12);
    }
}
