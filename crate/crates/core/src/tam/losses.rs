//! Supervised InfoNCE and binary cross-entropy on the tape.

use gradcore::{Tape, Tensor, Var};

use crate::error::{Result, TamError};

/// Added to self-similarities so an anchor never appears in its own
/// denominator.
const SELF_MASK: f64 = -1e30;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InfoNce {
    /// Summed loss over anchors with at least one positive.
    pub loss: Var,
    pub anchors: usize,
    /// Anchors skipped because no other batch member shares their label.
    pub skipped: usize,
}

/// Affordance loss over unit-norm rows `z` with action `labels`:
///
/// `Σ_i −1/|Pos(i)| Σ_{p∈Pos(i)} log[exp(z_i·z_p/τ) / Σ_{a≠i} exp(z_i·z_a/τ)]`
pub fn affordance_loss(tape: &mut Tape, z: Var, labels: &[usize], tau: f64) -> Result<InfoNce> {
    let b = labels.len();
    if tape.value(z).rows() != b {
        return Err(TamError::Contract(format!(
            "{} embeddings for {b} labels",
            tape.value(z).rows()
        )));
    }
    if !(tau > 0.0) {
        return Err(TamError::Config(format!("temperature must be positive, got {tau}")));
    }
    let zt = tape.transpose(z)?;
    let sim = tape.matmul(z, zt)?;
    let sim = tape.scale(sim, 1.0 / tau);
    let mut mask = Tensor::zeros(&[b, b]);
    let mut weights = Tensor::zeros(&[b, b]);
    let (mut anchors, mut skipped) = (0, 0);
    for i in 0..b {
        mask.data_mut()[i * b + i] = SELF_MASK;
        let pos: Vec<usize> = (0..b).filter(|&p| p != i && labels[p] == labels[i]).collect();
        if pos.is_empty() {
            skipped += 1;
            continue;
        }
        anchors += 1;
        let w = 1.0 / pos.len() as f64;
        for p in pos {
            weights.data_mut()[i * b + p] = w;
        }
    }
    let mask = tape.constant(mask);
    let masked = tape.add(sim, mask)?;
    let logp = tape.log_softmax_rows(masked)?;
    let weights = tape.constant(weights);
    let picked = tape.mul(logp, weights)?;
    let total = tape.sum(picked);
    let loss = tape.neg(total);
    Ok(InfoNce {
        loss,
        anchors,
        skipped,
    })
}

/// Mean binary cross-entropy of `logits` against 0/1 `labels`, computed
/// as `softplus(x) − y·x` for stability.
pub fn bce_with_logits(tape: &mut Tape, logits: Var, labels: &[f64]) -> Result<Var> {
    let n = tape.value(logits).len();
    if n != labels.len() {
        return Err(TamError::Contract(format!("{n} logits for {} labels", labels.len())));
    }
    let shape = tape.value(logits).shape().to_vec();
    let y = tape.constant(Tensor::new(shape, labels.to_vec())?);
    let sp = tape.softplus(logits);
    let yx = tape.mul(y, logits)?;
    let per = tape.sub(sp, yx)?;
    Ok(tape.mean(per))
}

/// One BCE term on a probability. Zero-weight terms are skipped, so a
/// confident correct prediction costs exactly 0.
pub fn bce_term(p: f64, y: f64) -> f64 {
    let mut loss = 0.0;
    if y != 0.0 {
        loss -= y * p.ln();
    }
    if y != 1.0 {
        loss -= (1.0 - y) * (1.0 - p).ln();
    }
    loss
}
