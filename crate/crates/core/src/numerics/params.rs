//! Named trainable parameters with Adam state and gradient accumulators.

use std::collections::HashMap;

use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::numerics::array::Array;
use crate::numerics::init;

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

struct Slot {
    name: String,
    value: Array,
    grad: Array,
    m: Vec<f32>,
    v: Vec<f32>,
}

/// Registration-ordered collection of named parameters. Iteration order is
/// the order of `register` calls, which keeps optimizer updates and
/// checkpoints deterministic across runs.
#[derive(Default)]
pub struct ParamStore {
    slots: Vec<Slot>,
    index: HashMap<String, usize>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a parameter. Names must be unique.
    pub fn register(&mut self, name: &str, value: Array) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(CoreError::invalid("register", format!("duplicate parameter {name:?}")));
        }
        let n = value.numel();
        self.index.insert(name.to_string(), self.slots.len());
        self.slots.push(Slot {
            name: name.to_string(),
            grad: Array::zeros(value.shape()),
            m: vec![0.0; n],
            v: vec![0.0; n],
            value,
        });
        Ok(())
    }

    /// Registers a weight drawn Kaiming-uniform from `rng` and a zero bias.
    pub fn register_linear(
        &mut self,
        prefix: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        let w = init::kaiming_uniform(rng, fan_in, vec![fan_in, fan_out]);
        self.register(&format!("{prefix}.w"), w)?;
        self.register(&format!("{prefix}.b"), Array::zeros(&[fan_out]))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.slots.iter().map(|s| s.name.as_str())
    }

    pub fn get(&self, name: &str) -> Result<&Array> {
        let idx = self.lookup(name)?;
        Ok(&self.slots[idx].value)
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Array> {
        let idx = self.lookup(name)?;
        Ok(&mut self.slots[idx].value)
    }

    pub fn grad(&self, name: &str) -> Result<&Array> {
        let idx = self.lookup(name)?;
        Ok(&self.slots[idx].grad)
    }

    pub(crate) fn lookup(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| CoreError::UnknownParameter(name.to_string()))
    }

    pub(crate) fn value_at(&self, idx: usize) -> &Array {
        &self.slots[idx].value
    }

    pub(crate) fn accumulate_grad(&mut self, idx: usize, delta: &Array) {
        let g = self.slots[idx].grad.data_mut();
        for (gi, di) in g.iter_mut().zip(delta.data()) {
            *gi += di;
        }
    }

    /// Number of optimizer steps taken so far.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Zeroes every gradient accumulator.
    pub fn clear_grads(&mut self) {
        for s in &mut self.slots {
            s.grad.data_mut().fill(0.0);
        }
    }

    /// One Adam update over all parameters from the accumulated gradients,
    /// then clears them. Fails on any non-finite gradient, naming the
    /// offending parameter.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        for s in &self.slots {
            if !s.grad.is_finite() {
                return Err(CoreError::NonFiniteGradient { name: s.name.clone() });
            }
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - (cfg.beta1 as f64).powf(t);
        let bc2 = 1.0 - (cfg.beta2 as f64).powf(t);
        let step_size = cfg.lr as f64 * bc2.sqrt() / bc1;
        for s in &mut self.slots {
            let g = s.grad.data();
            let w = s.value.data_mut();
            for i in 0..g.len() {
                let gi = g[i];
                s.m[i] = cfg.beta1 * s.m[i] + (1.0 - cfg.beta1) * gi;
                s.v[i] = cfg.beta2 * s.v[i] + (1.0 - cfg.beta2) * gi * gi;
                w[i] -= (step_size * s.m[i] as f64 / ((s.v[i] as f64).sqrt() + cfg.eps as f64))
                    as f32;
            }
        }
        self.clear_grads();
        Ok(())
    }

    /// Parameters as (name, array) pairs in registration order.
    /// Content hash over parameter names, shapes, and values, in
    /// registration order. Optimizer state is excluded.
    pub fn content_hash(&self) -> String {
        let mut bytes = Vec::new();
        for s in &self.slots {
            bytes.extend_from_slice(s.name.as_bytes());
            for &d in s.value.shape() {
                bytes.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in s.value.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        crate::util::sha256_hex(&bytes)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &Array)> {
        self.slots.iter().map(|s| (s.name.as_str(), &s.value))
    }

    /// Overwrites values from (name, array) pairs; shapes must match.
    pub fn load_values(&mut self, values: &[(String, Array)]) -> Result<()> {
        for (name, arr) in values {
            let idx = self.lookup(name)?;
            let slot = &mut self.slots[idx];
            if slot.value.shape() != arr.shape() {
                return Err(CoreError::ShapeMismatch {
                    op: "load_values",
                    lhs: slot.value.shape().to_vec(),
                    rhs: arr.shape().to_vec(),
                });
            }
            slot.value = arr.clone();
        }
        Ok(())
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.slots.iter().map(|s| s.value.numel()).sum()
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::numerics::graph::Graph;

    #[test]
    fn duplicate_registration_is_rejected() {
        let mut store = ParamStore::new();
        store.register("w", Array::zeros(&[2])).unwrap();
        assert!(store.register("w", Array::zeros(&[2])).is_err());
    }

    #[test]
    fn unknown_parameter_is_named_in_error() {
        let store = ParamStore::new();
        let err = store.get("missing").unwrap_err();
        assert!(err.to_string().contains("missing"));
    }

    #[test]
    fn first_adam_step_moves_by_learning_rate() {
        // With constant gradient g, the bias-corrected first step is
        // lr * g / (|g| + eps), i.e. very nearly lr in magnitude.
        let mut store = ParamStore::new();
        store.register("w", Array::from_vec(&[2], vec![1.0, -4.0]).unwrap()).unwrap();
        store
            .accumulate_grad(0, &Array::from_vec(&[2], vec![0.5, -0.25]).unwrap());
        let cfg = AdamConfig::default();
        store.adam_step(&cfg).unwrap();
        let w = store.get("w").unwrap().data();
        assert!((w[0] - (1.0 - 0.001)).abs() < 1e-6, "{}", w[0]);
        assert!((w[1] - (-4.0 + 0.001)).abs() < 1e-6, "{}", w[1]);
        assert_eq!(store.step_count(), 1);
        // Gradients are cleared after the step.
        assert!(store.grad("w").unwrap().data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn non_finite_gradient_names_offending_parameter() {
        let mut store = ParamStore::new();
        store.register("enc.w", Array::zeros(&[1])).unwrap();
        store.register("enc.b", Array::zeros(&[1])).unwrap();
        store.accumulate_grad(1, &Array::from_vec(&[1], vec![f32::NAN]).unwrap());
        let err = store.adam_step(&AdamConfig::default()).unwrap_err();
        assert!(err.to_string().contains("enc.b"), "{err}");
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        // loss = (w - 3)^2 summed over both coordinates.
        let mut store = ParamStore::new();
        store.register("w", Array::from_vec(&[2], vec![0.0, 10.0]).unwrap()).unwrap();
        let cfg = AdamConfig { lr: 0.05, ..AdamConfig::default() };
        for _ in 0..400 {
            let mut g = Graph::new();
            let w = g.param(&store, "w").unwrap();
            let target = g.constant(Array::from_vec(&[2], vec![3.0, 3.0]).unwrap());
            let diff = g.sub(w, target).unwrap();
            let sq = g.row_sumsq(diff).unwrap();
            let loss = g.sum_all(sq);
            g.backward(loss, &mut store).unwrap();
            store.adam_step(&cfg).unwrap();
        }
        for &wi in store.get("w").unwrap().data() {
            assert!((wi - 3.0).abs() < 0.05, "{wi}");
        }
    }

    #[test]
    fn registration_order_is_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParamStore::new();
        store.register_linear("l1", 4, 3, &mut rng).unwrap();
        store.register_linear("l2", 3, 2, &mut rng).unwrap();
        let names: Vec<&str> = store.names().collect();
        assert_eq!(names, vec!["l1.w", "l1.b", "l2.w", "l2.b"]);
        assert_eq!(store.numel(), 4 * 3 + 3 + 3 * 2 + 2);
    }
}
