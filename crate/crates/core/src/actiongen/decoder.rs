//! Causal transformer decoder over action tokens with cross-attention to
//! retrieved memory slots.
//!
//! Sequence layout: row 0 is the goal slot, row `i ≥ 1` holds the token of
//! the `i`-th previous action. Row `i` predicts action `i` (or STOP). Every
//! row attends to its own `k` memory slots, which carry no position.

use gradcore::nn::{read_param, LayerNorm, Linear, Mode};
use gradcore::{ParamStore, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TamError};

const MASKED: f64 = -1e30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff: usize,
    /// Maximum rows per sequence (goal slot included).
    pub max_len: usize,
    pub vocab: usize,
    pub goals: usize,
    /// Width of one memory slot, `[z | v_a]`.
    pub slot_dim: usize,
    /// Cross-attention layers present.
    pub use_memory: bool,
    /// Goal embedding added to the goal slot.
    pub use_goal: bool,
    /// Dropout rate on residual branches during training; 0 disables it.
    #[serde(default)]
    pub dropout: f64,
}

impl DecoderConfig {
    pub fn new(vocab: usize, goals: usize, slot_dim: usize) -> Self {
        DecoderConfig {
            dim: 64,
            heads: 4,
            layers: 2,
            ff: 256,
            max_len: 24,
            vocab,
            goals,
            slot_dim,
            use_memory: true,
            use_goal: true,
            dropout: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.dim % self.heads != 0 {
            return Err(TamError::Config(format!(
                "width {} is not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        if self.layers == 0 || self.max_len < 2 || self.vocab == 0 {
            return Err(TamError::Config("decoder needs layers, vocab and max_len ≥ 2".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(TamError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Fixed sinusoidal position code.
pub fn sinusoid(pos: usize, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|j| {
            let i = (j / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * i / dim as f64);
            if j % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

#[derive(Clone, Debug)]
struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

impl Attention {
    fn new(store: &mut ParamStore, name: &str, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Attention {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, rng),
            k: Linear::new(store, &format!("{name}.k"), dim, dim, rng),
            v: Linear::new(store, &format!("{name}.v"), dim, dim, rng),
            o: Linear::new(store, &format!("{name}.o"), dim, dim, rng),
        }
    }
}

#[derive(Clone, Debug)]
struct Block {
    ln_self: LayerNorm,
    self_attn: Attention,
    ln_cross: LayerNorm,
    cross_attn: Option<Attention>,
    ln_ff: LayerNorm,
    ff_in: Linear,
    ff_out: Linear,
}

/// One sequence of a batch.
#[derive(Clone, Debug)]
pub struct SeqInput<'a> {
    pub goal: usize,
    /// Previous action tokens; the sequence has `history.len() + 1` rows.
    pub history: &'a [usize],
    /// Memory slots per row, `k` vectors of width `slot_dim` each. Ignored
    /// when the decoder has no cross-attention.
    pub memory: &'a [Vec<Vec<f64>>],
}

#[derive(Clone, Debug)]
pub struct Decoder {
    pub config: DecoderConfig,
    pub store: ParamStore,
    tokens: gradcore::ParamId,
    goal_table: Option<gradcore::ParamId>,
    mem_proj: Option<Linear>,
    blocks: Vec<Block>,
    ln_out: LayerNorm,
    out: Linear,
}

impl Decoder {
    pub fn new(config: DecoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = config.dim;
        let tokens = store.xavier("tokens", config.vocab, d, &mut rng);
        let goal_table = config
            .use_goal
            .then(|| store.xavier("goals", config.goals.max(1), d, &mut rng));
        let mem_proj = config
            .use_memory
            .then(|| Linear::new(&mut store, "memory", config.slot_dim, d, &mut rng));
        let blocks = (0..config.layers)
            .map(|l| Block {
                ln_self: LayerNorm::new(&mut store, &format!("block{l}.ln_self"), d),
                self_attn: Attention::new(&mut store, &format!("block{l}.self"), d, &mut rng),
                ln_cross: LayerNorm::new(&mut store, &format!("block{l}.ln_cross"), d),
                cross_attn: config
                    .use_memory
                    .then(|| Attention::new(&mut store, &format!("block{l}.cross"), d, &mut rng)),
                ln_ff: LayerNorm::new(&mut store, &format!("block{l}.ln_ff"), d),
                ff_in: Linear::new(&mut store, &format!("block{l}.ff_in"), d, config.ff, &mut rng),
                ff_out: Linear::new(&mut store, &format!("block{l}.ff_out"), config.ff, d, &mut rng),
            })
            .collect();
        let ln_out = LayerNorm::new(&mut store, "ln_out", d);
        let out = Linear::new(&mut store, "out", d, config.vocab, &mut rng);
        // small output head so the untrained decoder starts near uniform
        for w in store.value_mut(out.weight).data_mut() {
            *w *= 0.1;
        }
        Ok(Decoder {
            config,
            store,
            tokens,
            goal_table,
            mem_proj,
            blocks,
            ln_out,
            out,
        })
    }

    fn check(&self, batch: &[SeqInput]) -> Result<usize> {
        if batch.is_empty() {
            return Err(TamError::Contract("empty decoder batch".into()));
        }
        let mut slots = None;
        for s in batch {
            let rows = s.history.len() + 1;
            if rows > self.config.max_len {
                return Err(TamError::Contract(format!(
                    "sequence of {rows} rows exceeds max length {}",
                    self.config.max_len
                )));
            }
            if s.goal >= self.config.goals {
                return Err(TamError::Contract(format!("goal {} out of vocabulary", s.goal)));
            }
            if let Some(&t) = s.history.iter().find(|&&t| t >= self.config.vocab) {
                return Err(TamError::Contract(format!("token {t} out of vocabulary")));
            }
            if !self.config.use_memory {
                continue;
            }
            if s.memory.len() != rows {
                return Err(TamError::Contract(format!(
                    "{} memory rows for {rows} sequence rows",
                    s.memory.len()
                )));
            }
            for m in s.memory {
                if m.is_empty() || slots.is_some_and(|k| k != m.len()) {
                    return Err(TamError::Contract("memory slot counts differ".into()));
                }
                slots = Some(m.len());
                if m.iter().any(|v| v.len() != self.config.slot_dim) {
                    return Err(TamError::Contract("memory slot width mismatch".into()));
                }
            }
        }
        Ok(slots.unwrap_or(0))
    }

    /// Logits for every row of every sequence, stacked in batch order.
    pub fn forward(&self, tape: &mut Tape, batch: &[SeqInput], mode: Mode) -> Result<Var> {
        self.forward_with(tape, batch, mode, None)
    }

    /// [`Decoder::forward`] with dropout drawn from `rng` when the config
    /// enables it.
    pub fn forward_train(&self, tape: &mut Tape, batch: &[SeqInput], rng: &mut ChaCha8Rng) -> Result<Var> {
        self.forward_with(tape, batch, Mode::Train, Some(rng))
    }

    fn dropout(&self, tape: &mut Tape, x: Var, rng: &mut Option<&mut ChaCha8Rng>) -> Result<Var> {
        let p = self.config.dropout;
        let Some(rng) = rng.as_deref_mut().filter(|_| p > 0.0) else {
            return Ok(x);
        };
        let shape = tape.value(x).shape().to_vec();
        let n = tape.value(x).len();
        let keep: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { 1.0 / (1.0 - p) })
            .collect();
        let keep = tape.constant(Tensor::new(shape, keep)?);
        Ok(tape.mul(x, keep)?)
    }

    fn forward_with(
        &self,
        tape: &mut Tape,
        batch: &[SeqInput],
        mode: Mode,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let k = self.check(batch)?;
        let cfg = &self.config;
        let d = cfg.dim;
        let total: usize = batch.iter().map(|s| s.history.len() + 1).sum();

        // Inputs: token embeddings for history rows, the goal slot for row 0.
        let mut ids = Vec::with_capacity(total);
        let mut pos = Vec::with_capacity(total * d);
        let mut goal_rows = Vec::new();
        let mut starts = Vec::with_capacity(batch.len());
        for s in batch {
            starts.push(ids.len());
            goal_rows.push(ids.len());
            ids.push(0);
            pos.extend(sinusoid(0, d));
            for (i, &t) in s.history.iter().enumerate() {
                ids.push(t);
                pos.extend(sinusoid(i + 1, d));
            }
        }
        // Token table lookup, with goal-slot rows zeroed.
        let table = read_param(tape, &self.store, self.tokens, mode);
        let emb = tape.embedding(table, &ids)?;
        let mut keep = vec![1.0; total * d];
        for &r in &goal_rows {
            keep[r * d..(r + 1) * d].fill(0.0);
        }
        let keep = tape.constant(Tensor::matrix(total, d, keep)?);
        let mut x = tape.mul(emb, keep)?;
        if let Some(table) = self.goal_table {
            let mut goal_ids = vec![0; total];
            let mut goal_mask = vec![0.0; total * d];
            for (s, &r) in batch.iter().zip(&goal_rows) {
                goal_ids[r] = s.goal;
                goal_mask[r * d..(r + 1) * d].fill(1.0);
            }
            let gt = read_param(tape, &self.store, table, mode);
            let g = tape.embedding(gt, &goal_ids)?;
            let gm = tape.constant(Tensor::matrix(total, d, goal_mask)?);
            let g = tape.mul(g, gm)?;
            x = tape.add(x, g)?;
        }
        let pos = tape.constant(Tensor::matrix(total, d, pos)?);
        x = tape.add(x, pos)?;

        // Block-diagonal causal mask.
        let mut mask = vec![MASKED; total * total];
        for (s, &st) in batch.iter().zip(&starts) {
            let n = s.history.len() + 1;
            for a in 0..n {
                for b in 0..=a {
                    mask[(st + a) * total + st + b] = 0.0;
                }
            }
        }
        let mask = tape.constant(Tensor::matrix(total, total, mask)?);

        let memory = match &self.mem_proj {
            Some(proj) => {
                let mut flat = Vec::with_capacity(total * k * cfg.slot_dim);
                for s in batch {
                    for row in s.memory {
                        for slot in row {
                            flat.extend_from_slice(slot);
                        }
                    }
                }
                let m = tape.constant(Tensor::matrix(total * k, cfg.slot_dim, flat)?);
                Some(proj.forward(tape, &self.store, m, mode)?)
            }
            None => None,
        };

        for block in &self.blocks {
            let h = block.ln_self.forward(tape, &self.store, x, mode)?;
            let a = self.self_attention(tape, &block.self_attn, h, mask, mode)?;
            let a = self.dropout(tape, a, &mut rng)?;
            x = tape.add(x, a)?;
            if let (Some(attn), Some(m)) = (&block.cross_attn, memory) {
                let h = block.ln_cross.forward(tape, &self.store, x, mode)?;
                let a = self.cross_attention(tape, attn, h, m, k, mode)?;
                let a = self.dropout(tape, a, &mut rng)?;
                x = tape.add(x, a)?;
            }
            let h = block.ln_ff.forward(tape, &self.store, x, mode)?;
            let h = block.ff_in.forward(tape, &self.store, h, mode)?;
            let h = tape.relu(h);
            let h = block.ff_out.forward(tape, &self.store, h, mode)?;
            let h = self.dropout(tape, h, &mut rng)?;
            x = tape.add(x, h)?;
        }
        let h = self.ln_out.forward(tape, &self.store, x, mode)?;
        Ok(self.out.forward(tape, &self.store, h, mode)?)
    }

    fn self_attention(
        &self,
        tape: &mut Tape,
        attn: &Attention,
        x: Var,
        mask: Var,
        mode: Mode,
    ) -> Result<Var> {
        let q = attn.q.forward(tape, &self.store, x, mode)?;
        let k = attn.k.forward(tape, &self.store, x, mode)?;
        let v = attn.v.forward(tape, &self.store, x, mode)?;
        let dh = self.config.dim / self.config.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.config.heads);
        for h in 0..self.config.heads {
            let qh = tape.slice_cols(q, h * dh, dh)?;
            let kh = tape.slice_cols(k, h * dh, dh)?;
            let vh = tape.slice_cols(v, h * dh, dh)?;
            let kt = tape.transpose(kh)?;
            let s = tape.matmul(qh, kt)?;
            let s = tape.scale(s, scale);
            let s = tape.add(s, mask)?;
            let p = tape.softmax_rows(s)?;
            heads.push(tape.matmul(p, vh)?);
        }
        let cat = tape.concat(&heads, gradcore::Axis::Cols)?;
        Ok(attn.o.forward(tape, &self.store, cat, mode)?)
    }

    fn cross_attention(
        &self,
        tape: &mut Tape,
        attn: &Attention,
        x: Var,
        memory: Var,
        group: usize,
        mode: Mode,
    ) -> Result<Var> {
        let q = attn.q.forward(tape, &self.store, x, mode)?;
        let k = attn.k.forward(tape, &self.store, memory, mode)?;
        let v = attn.v.forward(tape, &self.store, memory, mode)?;
        let dh = self.config.dim / self.config.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.config.heads);
        for h in 0..self.config.heads {
            let qh = tape.slice_cols(q, h * dh, dh)?;
            let kh = tape.slice_cols(k, h * dh, dh)?;
            let vh = tape.slice_cols(v, h * dh, dh)?;
            let s = tape.grouped_dot(qh, kh, group)?;
            let s = tape.scale(s, scale);
            let p = tape.softmax_rows(s)?;
            heads.push(tape.grouped_combine(p, vh, group)?);
        }
        let cat = tape.concat(&heads, gradcore::Axis::Cols)?;
        Ok(attn.o.forward(tape, &self.store, cat, mode)?)
    }

    /// Next-token distribution after `seq` (its last row).
    pub fn decode_next(&self, seq: &SeqInput) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let logits = self.forward(&mut tape, std::slice::from_ref(seq), Mode::Frozen)?;
        let t = tape.value(logits);
        Ok(softmax(t.row(t.rows() - 1)))
    }

    /// Next-token distributions for every row of `seq`.
    pub fn row_distributions(&self, seq: &SeqInput) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let logits = self.forward(&mut tape, std::slice::from_ref(seq), Mode::Frozen)?;
        let t = tape.value(logits);
        Ok((0..t.rows()).map(|r| softmax(t.row(r))).collect())
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Mean cross-entropy of `logits` rows against `targets`.
pub fn cross_entropy(tape: &mut Tape, logits: Var, targets: &[usize]) -> Result<Var> {
    let t = tape.value(logits);
    let (rows, cols) = (t.rows(), t.cols());
    if targets.len() != rows {
        return Err(TamError::Contract(format!(
            "{} targets for {rows} rows",
            targets.len()
        )));
    }
    let mut w = vec![0.0; rows * cols];
    for (r, &y) in targets.iter().enumerate() {
        if y >= cols {
            return Err(TamError::Contract(format!("target {y} out of vocabulary")));
        }
        w[r * cols + y] = -1.0 / rows as f64;
    }
    let lp = tape.log_softmax_rows(logits)?;
    let w = tape.constant(Tensor::matrix(rows, cols, w)?);
    let picked = tape.mul(lp, w)?;
    Ok(tape.sum(picked))
}
