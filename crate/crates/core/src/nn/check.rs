//! Central finite-difference gradient checking.
//!
//! The numeric side only evaluates the loss; it never touches the tape, so it
//! stays an independent check of [`Graph::backward`](super::Graph::backward).

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{Gradients, ParamStore};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub epsilon: f64,
    /// Entries sampled per tensor (all entries when the tensor is smaller).
    pub samples_per_tensor: usize,
    /// Denominator floor of the relative error, so that gradients that are
    /// numerically zero on both sides compare as equal.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            epsilon: 1e-5,
            samples_per_tensor: 6,
            floor: 1e-7,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheckReport {
    fn record(&mut self, name: &str, flat: usize, analytic: f64, numeric: f64, floor: f64) {
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
        self.checked += 1;
        if rel > self.max_rel_error || self.worst.is_none() {
            self.max_rel_error = self.max_rel_error.max(rel);
            if rel >= self.max_rel_error {
                self.worst = Some((name.to_owned(), flat, analytic, numeric));
            }
        }
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        if other.max_rel_error >= self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst.or(self.worst.take());
        }
    }
}

/// Checks the gradients of the store reached through `store_of` on a model
/// evaluated by `eval`, which returns `(loss, analytic gradients)`.
pub fn check_model<M, T: Scalar>(
    model: &mut M,
    store_of: impl Fn(&mut M) -> &mut ParamStore<T>,
    eval: impl Fn(&M) -> (T, Gradients<T>),
    config: &GradCheckConfig,
) -> GradCheckReport {
    let (_, grads) = eval(model);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut report = GradCheckReport::default();
    let keys: Vec<_> = store_of(model).keys().collect();
    for key in keys {
        let len = store_of(model).get(key).len();
        let picks: Vec<usize> = if config.samples_per_tensor >= len {
            (0..len).collect()
        } else {
            sample(&mut rng, len, config.samples_per_tensor).into_vec()
        };
        let name = store_of(model).name(key).to_owned();
        for flat in picks {
            let original = {
                let tensor = store_of(model).get_mut(key);
                let slot = tensor.iter_mut().nth(flat).expect("index in range");
                let original = *slot;
                *slot = original + T::of(config.epsilon);
                original
            };
            let plus = eval(model).0.as_f64();
            *store_of(model).get_mut(key).iter_mut().nth(flat).expect("index") = original - T::of(config.epsilon);
            let minus = eval(model).0.as_f64();
            *store_of(model).get_mut(key).iter_mut().nth(flat).expect("index") = original;
            let numeric = (plus - minus) / (2.0 * config.epsilon);
            let analytic = grads
                .get(key)
                .map(|g| g.iter().nth(flat).expect("index").as_f64())
                .unwrap_or(0.0);
            report.record(&name, flat, analytic, numeric, config.floor);
        }
    }
    report
}

/// Checks a loss that depends on a single store.
pub fn check_gradients<T: Scalar>(
    store: &ParamStore<T>,
    eval: impl Fn(&ParamStore<T>) -> (T, Gradients<T>),
    config: &GradCheckConfig,
) -> GradCheckReport {
    let mut owned = store.clone();
    check_model(&mut owned, |s| s, |s| eval(s), config)
}
