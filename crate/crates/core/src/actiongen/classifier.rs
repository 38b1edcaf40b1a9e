//! Single linear classifier over `[goal embedding | mean retrieved value]`,
//! the decoder-free ablation.

use gradcore::nn::{read_param, Linear, Mode};
use gradcore::{ParamId, ParamStore, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::decoder::softmax;
use crate::error::{Result, TamError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub goal_dim: usize,
    pub vocab: usize,
    pub goals: usize,
    pub slot_dim: usize,
}

#[derive(Clone, Debug)]
pub struct LinearPolicy {
    pub config: ClassifierConfig,
    pub store: ParamStore,
    goal_table: ParamId,
    out: Linear,
}

impl LinearPolicy {
    pub fn new(config: ClassifierConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let goal_table = store.xavier("goals", config.goals.max(1), config.goal_dim, &mut rng);
        let out = Linear::new(
            &mut store,
            "out",
            config.goal_dim + config.slot_dim,
            config.vocab,
            &mut rng,
        );
        LinearPolicy {
            config,
            store,
            goal_table,
            out,
        }
    }

    /// Logits for each `(goal, slots)` row.
    pub fn forward(
        &self,
        tape: &mut Tape,
        goals: &[usize],
        memory: &[&[Vec<f64>]],
        mode: Mode,
    ) -> Result<Var> {
        if goals.len() != memory.len() || goals.is_empty() {
            return Err(TamError::Contract("classifier batch shape mismatch".into()));
        }
        if let Some(g) = goals.iter().find(|&&g| g >= self.config.goals) {
            return Err(TamError::Contract(format!("goal {g} out of vocabulary")));
        }
        let width = self.config.slot_dim;
        let mut means = Vec::with_capacity(goals.len() * width);
        for slots in memory {
            let mut m = vec![0.0; width];
            for s in slots.iter() {
                if s.len() != width {
                    return Err(TamError::Contract("memory slot width mismatch".into()));
                }
                for (a, b) in m.iter_mut().zip(s) {
                    *a += b / slots.len() as f64;
                }
            }
            means.extend(m);
        }
        let table = read_param(tape, &self.store, self.goal_table, mode);
        let g = tape.embedding(table, goals)?;
        let m = tape.constant(Tensor::matrix(goals.len(), width, means)?);
        let x = tape.concat(&[g, m], gradcore::Axis::Cols)?;
        Ok(self.out.forward(tape, &self.store, x, mode)?)
    }

    pub fn predict(&self, goal: usize, slots: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let logits = self.forward(&mut tape, &[goal], &[slots], Mode::Frozen)?;
        Ok(softmax(tape.value(logits).row(0)))
    }
}
