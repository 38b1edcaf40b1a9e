//! Small layer building blocks shared by the networks in this workspace.

use rand::Rng;

use crate::error::Result;
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Whether a forward pass should record parameters as trainable.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Frozen,
}

pub fn read_param(tape: &mut Tape, store: &ParamStore, id: ParamId, mode: Mode) -> Var {
    match mode {
        Mode::Train => tape.param(store, id),
        Mode::Frozen => tape.frozen(store, id),
    }
}

/// Affine map `x·W + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.xavier(format!("{name}.weight"), input, output, rng);
        let bias = Some(store.zeros(format!("{name}.bias"), &[output]));
        Linear {
            weight,
            bias,
            input,
            output,
        }
    }

    pub fn without_bias(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.xavier(format!("{name}.weight"), input, output, rng);
        Linear {
            weight,
            bias: None,
            input,
            output,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, mode: Mode) -> Result<Var> {
        let w = read_param(tape, store, self.weight, mode);
        let y = tape.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = read_param(tape, store, b, mode);
                tape.add_bias(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Stack of linear layers with ReLU between them (none after the last).
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `sizes = [input, hidden.., output]`.
    pub fn new(store: &mut ParamStore, name: &str, sizes: &[usize], rng: &mut impl Rng) -> Self {
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Mlp { layers }
    }

    pub fn input(&self) -> usize {
        self.layers[0].input
    }

    pub fn output(&self) -> usize {
        self.layers.last().map_or(0, |l| l.output)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, mode: Mode) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, store, h, mode)?;
            if i + 1 < self.layers.len() {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-9;

    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        LayerNorm {
            gamma: store.add(format!("{name}.gamma"), Tensor::filled(&[dim], 1.0)),
            beta: store.zeros(format!("{name}.beta"), &[dim]),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, mode: Mode) -> Result<Var> {
        let g = read_param(tape, store, self.gamma, mode);
        let b = read_param(tape, store, self.beta, mode);
        tape.layer_norm(x, g, b, Self::EPS)
    }
}
