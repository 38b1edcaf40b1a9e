use serde::{Deserialize, Serialize};

use crate::error::{GradError, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer over a fixed subset of a store's parameters.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    params: Vec<ParamId>,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step_count: u64,
}

impl Optimizer {
    pub fn new(
        kind: OptimizerKind,
        learning_rate: f64,
        store: &ParamStore,
        params: Vec<ParamId>,
    ) -> Result<Self> {
        if !(learning_rate > 0.0) {
            return Err(GradError::Contract(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        let moments = |_: ()| -> Vec<Tensor> {
            match kind {
                OptimizerKind::Sgd => Vec::new(),
                OptimizerKind::Adam { .. } => params
                    .iter()
                    .map(|&p| Tensor::zeros(store.value(p).shape()))
                    .collect(),
            }
        };
        Ok(Optimizer {
            kind,
            learning_rate,
            first: moments(()),
            second: moments(()),
            params,
            step_count: 0,
        })
    }

    pub fn sgd(learning_rate: f64, store: &ParamStore) -> Result<Self> {
        Self::new(OptimizerKind::Sgd, learning_rate, store, store.ids().collect())
    }

    pub fn adam(learning_rate: f64, store: &ParamStore) -> Result<Self> {
        Self::new(OptimizerKind::adam(), learning_rate, store, store.ids().collect())
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.learning_rate = lr;
    }

    /// Applies one update to every managed parameter and zeroes their grads.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        for &p in &self.params {
            store.take_update(p)?;
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let lr = self.learning_rate;
        for (i, &p) in self.params.iter().enumerate() {
            let (value, grad) = store.take_update(p)?;
            match self.kind {
                OptimizerKind::Sgd => {
                    for (w, g) in value.data_mut().iter_mut().zip(grad.data()) {
                        *w -= lr * g;
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let bc1 = 1.0 - beta1.powi(t);
                    let bc2 = 1.0 - beta2.powi(t);
                    let m = self.first[i].data_mut();
                    let v = self.second[i].data_mut();
                    for (((w, g), mi), vi) in value
                        .data_mut()
                        .iter_mut()
                        .zip(grad.data())
                        .zip(m.iter_mut())
                        .zip(v.iter_mut())
                    {
                        *mi = beta1 * *mi + (1.0 - beta1) * g;
                        *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                        let mhat = *mi / bc1;
                        let vhat = *vi / bc2;
                        *w -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
            store.clear_grad(p);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;

    fn quadratic_grad(store: &mut ParamStore, x: ParamId) {
        // loss = (x - 3)^2
        let mut tape = Tape::new();
        let xv = tape.param(store, x);
        let c = tape.constant(Tensor::scalar(3.0));
        let d = tape.sub(xv, c).unwrap();
        let l = tape.mul(d, d).unwrap();
        let l = tape.sum(l);
        tape.backward(l).unwrap().accumulate_into(store);
    }

    #[test]
    fn sgd_applies_plain_update() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::scalar(1.0));
        store.accumulate(p, &Tensor::scalar(2.0));
        store.mark_all_graded();
        let mut opt = Optimizer::sgd(0.1, &store).unwrap();
        opt.step(&mut store).unwrap();
        assert!((store.value(p).item() - 0.8).abs() < 1e-15);
        assert_eq!(store.grad(p), None);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::scalar(1.5));
        store.mark_all_graded();
        let mut opt = Optimizer::adam(0.1, &store).unwrap();
        opt.step(&mut store).unwrap();
        assert_eq!(store.value(p).item(), 1.5);
    }

    #[test]
    fn missing_gradient_is_a_contract_error() {
        let mut store = ParamStore::new();
        store.add("p", Tensor::scalar(1.0));
        let mut opt = Optimizer::sgd(0.1, &store).unwrap();
        assert!(matches!(opt.step(&mut store), Err(GradError::Contract(_))));
        assert_eq!(opt.step_count(), 0);
    }

    #[test]
    fn adam_converges_on_quadratic() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::scalar(0.0));
        let mut opt = Optimizer::adam(0.3, &store).unwrap();
        for _ in 0..100 {
            quadratic_grad(&mut store, x);
            opt.step(&mut store).unwrap();
        }
        assert!((store.value(x).item() - 3.0).abs() < 1e-2, "{}", store.value(x).item());
    }

    #[test]
    fn sgd_converges_on_quadratic() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::scalar(0.0));
        let mut opt = Optimizer::sgd(0.1, &store).unwrap();
        for _ in 0..100 {
            quadratic_grad(&mut store, x);
            opt.step(&mut store).unwrap();
        }
        assert!((store.value(x).item() - 3.0).abs() < 1e-2);
    }
}
