//! The three memory networks: observation encoder with affordance
//! projection, goal associator, and siamese localizer.

use gradcore::nn::{Linear, Mlp, Mode};
use gradcore::{Axis, ParamStore, Tape, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TamError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetDims {
    /// Length of one frame's features.
    pub frame: usize,
    /// Embedding size D.
    pub dim: usize,
    pub hidden: usize,
    pub goal_dim: usize,
    pub goals: usize,
}

impl NetDims {
    pub fn new(frame: usize, goals: usize) -> Self {
        NetDims {
            frame,
            dim: 64,
            hidden: 128,
            goal_dim: 16,
            goals,
        }
    }
}

pub fn rows_tensor(rows: &[&[f64]]) -> Result<Tensor> {
    if rows.is_empty() {
        return Err(TamError::Contract("empty batch".into()));
    }
    Ok(Tensor::from_rows(rows)?)
}

pub fn tensor_rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

/// `Enc` over stacked `[start | end]` frames, and the affordance
/// projection `P_μ` (3-layer MLP, unit-norm output).
#[derive(Clone, Debug)]
pub struct AffordanceEncoder {
    pub store: ParamStore,
    pub enc: Mlp,
    pub proj: Mlp,
    pub tau: f64,
}

impl AffordanceEncoder {
    pub fn new(dims: &NetDims, tau: f64, rng: &mut impl Rng) -> Self {
        let mut store = ParamStore::new();
        let enc = Mlp::new(&mut store, "enc", &[2 * dims.frame, dims.hidden, dims.dim], rng);
        let proj = Mlp::new(&mut store, "proj", &[dims.dim, dims.dim, dims.dim, dims.dim], rng);
        AffordanceEncoder {
            store,
            enc,
            proj,
            tau,
        }
    }

    /// `v_a = Enc(o)` for a batch of stacked observations.
    pub fn encode(&self, tape: &mut Tape, x: Var, mode: Mode) -> Result<Var> {
        Ok(self.enc.forward(tape, &self.store, x, mode)?)
    }

    /// `z = P_μ(v_a)`, rows normalized to unit length.
    pub fn project(&self, tape: &mut Tape, v: Var, mode: Mode) -> Result<Var> {
        let z = self.proj.forward(tape, &self.store, v, mode)?;
        Ok(tape.l2_normalize_rows(z))
    }

    /// `(v_a, z)` rows for the given stacked observations.
    pub fn embed(&self, stacked: &[&[f64]]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let mut tape = Tape::new();
        let x = tape.constant(rows_tensor(stacked)?);
        let v = self.encode(&mut tape, x, Mode::Frozen)?;
        let z = self.project(&mut tape, v, Mode::Frozen)?;
        Ok((tensor_rows(tape.value(v)), tensor_rows(tape.value(z))))
    }
}

/// `P_σ(v_i, v_j, g)`: probability that two steps pursue goal `g`.
#[derive(Clone, Debug)]
pub struct GoalAssociator {
    pub store: ParamStore,
    pub goal_table: gradcore::ParamId,
    pub head: Mlp,
    pub goals: usize,
}

impl GoalAssociator {
    pub fn new(dims: &NetDims, rng: &mut impl Rng) -> Self {
        let mut store = ParamStore::new();
        let goal_table = store.xavier("assoc.goal", dims.goals, dims.goal_dim, rng);
        let head = Mlp::new(
            &mut store,
            "assoc",
            &[2 * dims.dim + dims.goal_dim, dims.hidden, dims.hidden / 2, 1],
            rng,
        );
        GoalAssociator {
            store,
            goal_table,
            head,
            goals: dims.goals,
        }
    }

    pub fn check_goal(&self, goal: usize) -> Result<()> {
        if goal >= self.goals {
            return Err(TamError::Contract(format!(
                "goal id {goal} outside vocabulary of {}",
                self.goals
            )));
        }
        Ok(())
    }

    /// Pre-sigmoid scores, one row per pair.
    pub fn logits(
        &self,
        tape: &mut Tape,
        vi: Var,
        vj: Var,
        goals: &[usize],
        mode: Mode,
    ) -> Result<Var> {
        for &g in goals {
            self.check_goal(g)?;
        }
        let table = gradcore::nn::read_param(tape, &self.store, self.goal_table, mode);
        let ge = tape.embedding(table, goals)?;
        let x = tape.concat(&[vi, vj, ge], Axis::Cols)?;
        Ok(self.head.forward(tape, &self.store, x, mode)?)
    }

    pub fn score(&self, vi: &[f64], vj: &[f64], goal: usize) -> Result<f64> {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::matrix(1, vi.len(), vi.to_vec())?);
        let b = tape.constant(Tensor::matrix(1, vj.len(), vj.to_vec())?);
        let l = self.logits(&mut tape, a, b, &[goal], Mode::Frozen)?;
        let p = tape.sigmoid(l);
        Ok(tape.value(p).data()[0])
    }
}

/// Siamese localizer: a shared frame branch `E` and a symmetric head over
/// `[(e1 − e2)², e1 ⊙ e2]`.
#[derive(Clone, Debug)]
pub struct LocalizationNet {
    pub store: ParamStore,
    pub branch: Mlp,
    pub head: Linear,
}

impl LocalizationNet {
    pub fn new(dims: &NetDims, rng: &mut impl Rng) -> Self {
        let mut store = ParamStore::new();
        let branch = Mlp::new(&mut store, "loc", &[dims.frame, dims.hidden, dims.dim], rng);
        let head = Linear::new(&mut store, "loc.head", 2 * dims.dim, 1, rng);
        LocalizationNet {
            store,
            branch,
            head,
        }
    }

    pub fn branch_forward(&self, tape: &mut Tape, frames: Var, mode: Mode) -> Result<Var> {
        Ok(self.branch.forward(tape, &self.store, frames, mode)?)
    }

    pub fn pair_logits(&self, tape: &mut Tape, e1: Var, e2: Var, mode: Mode) -> Result<Var> {
        let d = tape.sub(e1, e2)?;
        let d2 = tape.mul(d, d)?;
        let p = tape.mul(e1, e2)?;
        let x = tape.concat(&[d2, p], Axis::Cols)?;
        Ok(self.head.forward(tape, &self.store, x, mode)?)
    }

    /// Branch embeddings `E(f)` of raw frames.
    pub fn embed(&self, frames: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let x = tape.constant(rows_tensor(frames)?);
        let e = self.branch_forward(&mut tape, x, Mode::Frozen)?;
        Ok(tensor_rows(tape.value(e)))
    }

    /// Head logit between two branch embeddings. Symmetric bit for bit.
    pub fn logit(&self, e1: &[f64], e2: &[f64]) -> f64 {
        let w = self.store.value(self.head.weight).data();
        let b = self
            .head
            .bias
            .map_or(0.0, |b| self.store.value(b).data()[0]);
        let d = e1.len();
        let mut s = 0.0;
        for i in 0..d {
            let diff = e1[i] - e2[i];
            s += w[i] * (diff * diff);
        }
        for i in 0..d {
            s += w[d + i] * (e1[i] * e2[i]);
        }
        s + b
    }

    pub fn score(&self, e1: &[f64], e2: &[f64]) -> f64 {
        sigmoid(self.logit(e1, e2))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
