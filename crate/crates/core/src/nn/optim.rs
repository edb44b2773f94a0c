use std::collections::BTreeMap;

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParamKey, ParamStore};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
            clip_norm: Some(1.0),
        }
    }
}

/// Adam with decoupled weight decay. Single-row tensors (biases, norm gains)
/// are not decayed.
pub struct AdamW<T> {
    config: AdamWConfig,
    step: i32,
    moments: BTreeMap<ParamKey, (Array2<T>, Array2<T>)>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: AdamWConfig) -> Self {
        AdamW {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// Applies one update to every parameter in `stores` that has a gradient.
    pub fn step(&mut self, stores: &mut [&mut ParamStore<T>], grads: &mut Gradients<T>) {
        if let Some(clip) = self.config.clip_norm {
            let norm = grads.global_norm().as_f64();
            if norm > clip {
                grads.scale(T::of(clip / norm));
            }
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let bc1 = T::one() - T::of(c.beta1.powi(self.step));
        let bc2 = T::one() - T::of(c.beta2.powi(self.step));
        let lr = T::of(c.learning_rate);
        let eps = T::of(c.epsilon);
        for (key, grad) in grads.iter() {
            let Some(store) = stores.iter_mut().find(|s| s.group() == key.group) else {
                continue;
            };
            let param = store.get_mut(*key);
            let decay = if param.nrows() > 1 { T::of(c.weight_decay) } else { T::zero() };
            let (m, v) = self
                .moments
                .entry(*key)
                .or_insert_with(|| (Array2::zeros(grad.dim()), Array2::zeros(grad.dim())));
            Zip::from(param)
                .and(m)
                .and(v)
                .and(grad)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (T::one() - b1) * g;
                    *v = b2 * *v + (T::one() - b2) * g * g;
                    let update = (*m / bc1) / ((*v / bc2).sqrt() + eps);
                    *p = *p - lr * (update + decay * *p);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Graph;
    use ndarray::array;

    #[test]
    fn minimizes_a_quadratic() {
        let mut store = ParamStore::<f64>::new(0);
        let w = store.add("w", array![[3.0, -2.0], [0.5, 4.0]]);
        let mut opt = AdamW::new(AdamWConfig {
            learning_rate: 0.05,
            weight_decay: 0.0,
            ..AdamWConfig::default()
        });
        for _ in 0..500 {
            let mut grads = {
                let mut g = Graph::new(&[&store]);
                let p = g.param(w);
                let sq = g.mul(p, p);
                let loss = g.sum_all(sq);
                g.backward(loss)
            };
            opt.step(&mut [&mut store], &mut grads);
        }
        assert!(store.get(w).iter().all(|x| x.abs() < 1e-2), "{:?}", store.get(w));
    }

    #[test]
    fn decay_skips_single_rows() {
        let mut store = ParamStore::<f64>::new(0);
        let b = store.add("b", array![[1.0, 1.0]]);
        let m = store.add("m", array![[1.0], [1.0]]);
        let mut opt = AdamW::new(AdamWConfig {
            weight_decay: 0.5,
            ..AdamWConfig::default()
        });
        let mut grads = Gradients::default();
        grads.accumulate(b, &array![[0.0, 0.0]]);
        grads.accumulate(m, &array![[0.0], [0.0]]);
        opt.step(&mut [&mut store], &mut grads);
        assert_eq!(store.get(b), &array![[1.0, 1.0]]);
        assert!(store.get(m)[[0, 0]] < 1.0);
    }
}
