//! Named trainable parameters with gradient accumulators.

use ndarray::Array2;
use rand::Rng;

/// Handle to one parameter matrix inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Owns every trainable matrix of a model plus a same-shape gradient
/// accumulator per matrix. Insertion order is the canonical order used for
/// initialization and serialization.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
    grads: Vec<Array2<f64>>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>) -> ParamId {
        let id = ParamId(self.values.len());
        self.grads.push(Array2::zeros(value.raw_dim()));
        self.values.push(value);
        self.names.push(name.into());
        id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> Vec<ParamId> {
        (0..self.values.len()).map(ParamId).collect()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Array2<f64> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Array2<f64> {
        &self.grads[id.0]
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, delta: &Array2<f64>) {
        self.grads[id.0] += delta;
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.fill(0.0);
        }
    }

    /// Plain gradient descent: `p <- p - lr * g` for every parameter, then the
    /// accumulators are cleared for the next step.
    pub fn sgd_step(&mut self, lr: f64) {
        assert!(lr > 0.0, "learning rate must be positive");
        for (v, g) in self.values.iter_mut().zip(&mut self.grads) {
            v.scaled_add(-lr, g);
            g.fill(0.0);
        }
    }

    pub fn total_elements(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn snapshot(&self) -> Vec<Array2<f64>> {
        self.values.clone()
    }

    pub fn restore(&mut self, snapshot: &[Array2<f64>]) {
        assert_eq!(snapshot.len(), self.values.len(), "snapshot shape mismatch");
        for (v, s) in self.values.iter_mut().zip(snapshot) {
            v.assign(s);
        }
    }
}

/// Matrix with entries drawn uniformly from `(-k, k)` in row-major order.
pub fn uniform_matrix(rows: usize, cols: usize, k: f64, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-k..k))
}
