use rand::Rng;

use crate::error::{GradError, Result};
use crate::tensor::Tensor;

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
struct Slot {
    name: String,
    value: Tensor,
    grad: Tensor,
    has_grad: bool,
}

/// Named learnable tensors together with their accumulated gradients.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    slots: Vec<Slot>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let grad = Tensor::zeros(value.shape());
        self.slots.push(Slot {
            name: name.into(),
            value,
            grad,
            has_grad: false,
        });
        ParamId(self.slots.len() - 1)
    }

    /// Xavier-uniform `rows×cols` weight matrix.
    pub fn xavier(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        rng: &mut impl Rng,
    ) -> ParamId {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let value = Tensor::new(vec![rows, cols], data).expect("xavier shape");
        self.add(name, value)
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.slots.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.slots[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.slots.iter().position(|s| s.name == name).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.slots[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.slots[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> Option<&Tensor> {
        let s = &self.slots[id.0];
        s.has_grad.then_some(&s.grad)
    }

    /// Total scalar count across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.slots.iter().map(|s| s.value.len()).sum()
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, g: &Tensor) {
        self.slots[id.0].grad.add_assign(g);
    }

    /// Marks every parameter as carrying a (possibly zero) gradient.
    pub(crate) fn mark_all_graded(&mut self) {
        for s in &mut self.slots {
            s.has_grad = true;
        }
    }

    pub fn zero_grads(&mut self) {
        for s in &mut self.slots {
            s.grad.fill(0.0);
            s.has_grad = false;
        }
    }

    pub(crate) fn take_update(&mut self, id: ParamId) -> Result<(&mut Tensor, &mut Tensor)> {
        let s = &mut self.slots[id.0];
        if !s.has_grad {
            return Err(GradError::Contract(format!(
                "parameter `{}` has no gradient; run backward before stepping",
                s.name
            )));
        }
        Ok((&mut s.value, &mut s.grad))
    }

    pub(crate) fn clear_grad(&mut self, id: ParamId) {
        let s = &mut self.slots[id.0];
        s.grad.fill(0.0);
        s.has_grad = false;
    }

    /// Iterates `(name, value)` in insertion order.
    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.slots.iter().map(|s| (s.name.as_str(), &s.value))
    }
}
