//! Teacher-forced training of the decoder and the linear ablation policy.

use gradcore::nn::Mode;
use gradcore::{Optimizer, Tape};
use log::debug;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::classifier::{ClassifierConfig, LinearPolicy};
use super::context::MemoryAccess;
use super::decoder::{cross_entropy, Decoder, DecoderConfig, SeqInput};
use super::vocab::ActionVocabulary;
use crate::error::{Result, TamError};
use crate::homesim::Demonstration;
use crate::tam::data::is_held_out;

/// One demonstration prepared for teacher forcing. Row `i` sees the first
/// `i` tokens and the memory retrieved for the `i`-th ground-truth frame.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderExample {
    pub episode_id: usize,
    pub goal: usize,
    pub tokens: Vec<usize>,
    /// `tokens` followed by STOP.
    pub targets: Vec<usize>,
    pub memory: Vec<Vec<Vec<f64>>>,
}

impl DecoderExample {
    pub fn input(&self) -> SeqInput<'_> {
        SeqInput {
            goal: self.goal,
            history: &self.tokens,
            memory: &self.memory,
        }
    }
}

/// Tokenizes `demos` and caches per-step retrievals. Each demonstration is
/// hidden from its own retrievals.
pub fn decoder_examples(
    demos: &[Demonstration],
    vocab: &ActionVocabulary,
    memory: Option<MemoryAccess>,
) -> Result<Vec<DecoderExample>> {
    if let Some(m) = memory {
        if let Some(n) = m.graph.nodes.iter().find(|n| vocab.encode_action(n.action).is_none()) {
            return Err(TamError::Provenance(format!(
                "memory action {} is not in the vocabulary",
                n.action
            )));
        }
    }
    let mut out = Vec::with_capacity(demos.len());
    for d in demos {
        if d.steps.is_empty() {
            continue;
        }
        let tokens = d
            .steps
            .iter()
            .map(|s| {
                vocab.encode_action(s.action).ok_or_else(|| {
                    TamError::Provenance(format!("demo action {} is not in the vocabulary", s.action))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut targets = tokens.clone();
        targets.push(vocab.stop());
        let mut rows = Vec::with_capacity(targets.len());
        if let Some(m) = memory {
            let mut prev = None;
            for i in 0..targets.len() {
                let frame = match d.steps.get(i) {
                    Some(s) => &s.observation.start_features,
                    None => &d.steps[i - 1].observation.end_features,
                };
                let look = m.lookup(Some(frame), prev, d.goal.id, Some(d.episode_id))?;
                prev = look.retrieval.as_ref().map(|r| r.nodes[0]);
                rows.push(look.slots);
            }
        }
        out.push(DecoderExample {
            episode_id: d.episode_id,
            goal: d.goal.id,
            tokens,
            targets,
            memory: rows,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderSchedule {
    pub epochs: usize,
    pub batch: usize,
    pub learning_rate: f64,
    /// Train on every example instead of holding some episodes out.
    pub use_all: bool,
    /// Probability of replacing each history token with a random action
    /// token during training. Targets and memory are left as recorded.
    pub history_noise: f64,
}

impl Default for DecoderSchedule {
    fn default() -> Self {
        DecoderSchedule {
            epochs: 40,
            batch: 16,
            learning_rate: 1e-3,
            use_all: false,
            history_noise: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderReport {
    pub loss_curve: Vec<f64>,
    pub train_accuracy: f64,
    /// Teacher-forced next-action accuracy on held-out episodes.
    pub held_out_accuracy: Option<f64>,
}

/// Highest-probability token other than PAD, lowest id on ties.
pub fn argmax_token(p: &[f64], vocab: &ActionVocabulary) -> usize {
    let mut best = 0;
    for (i, &x) in p.iter().enumerate() {
        if i != vocab.pad() && (best == vocab.pad() || x > p[best]) {
            best = i;
        }
    }
    best
}

fn noisy_history(tokens: &[usize], p: f64, actions: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if p <= 0.0 {
        return tokens.to_vec();
    }
    tokens
        .iter()
        .map(|&t| if rng.random::<f64>() < p { rng.random_range(0..actions) } else { t })
        .collect()
}

fn split(examples: &[DecoderExample], use_all: bool) -> (Vec<&DecoderExample>, Vec<&DecoderExample>) {
    if use_all {
        return (examples.iter().collect(), Vec::new());
    }
    examples.iter().partition(|e| !is_held_out(e.episode_id))
}

/// Teacher-forced accuracy of the decoder over every row of `examples`.
pub fn decoder_accuracy(decoder: &Decoder, examples: &[&DecoderExample], vocab: &ActionVocabulary) -> Result<f64> {
    let (mut hit, mut total) = (0usize, 0usize);
    for e in examples {
        let rows = decoder.row_distributions(&e.input())?;
        for (p, &y) in rows.iter().zip(&e.targets) {
            hit += usize::from(argmax_token(p, vocab) == y);
            total += 1;
        }
    }
    Ok(if total == 0 { 0.0 } else { hit as f64 / total as f64 })
}

pub fn train_decoder(
    examples: &[DecoderExample],
    config: DecoderConfig,
    schedule: &DecoderSchedule,
    seed: u64,
) -> Result<(Decoder, DecoderReport)> {
    let vocab = ActionVocabulary::default();
    if config.vocab != vocab.len() {
        return Err(TamError::Provenance(format!(
            "decoder vocabulary {} differs from action vocabulary {}",
            config.vocab,
            vocab.len()
        )));
    }
    let (train, held) = split(examples, schedule.use_all);
    if train.is_empty() {
        return Err(TamError::Config("no decoder training examples".into()));
    }
    let mut decoder = Decoder::new(config, seed)?;
    let mut opt = Optimizer::adam(schedule.learning_rate, &decoder.store)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xdec0de);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut loss_curve = Vec::new();
    for epoch in 0..schedule.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(schedule.batch.max(1)) {
            let histories: Vec<Vec<usize>> = chunk
                .iter()
                .map(|&i| noisy_history(&train[i].tokens, schedule.history_noise, vocab.stop(), &mut rng))
                .collect();
            let batch: Vec<SeqInput> = chunk
                .iter()
                .zip(&histories)
                .map(|(&i, h)| SeqInput {
                    history: h,
                    ..train[i].input()
                })
                .collect();
            let targets: Vec<usize> = chunk.iter().flat_map(|&i| train[i].targets.iter().copied()).collect();
            let mut tape = Tape::new();
            let logits = decoder.forward_train(&mut tape, &batch, &mut rng)?;
            let loss = cross_entropy(&mut tape, logits, &targets)?;
            loss_curve.push(tape.value(loss).item());
            let grads = tape.backward(loss)?;
            decoder.store.zero_grads();
            grads.accumulate_into(&mut decoder.store);
            opt.step(&mut decoder.store)?;
        }
        debug!("decoder epoch {epoch}: loss {:.4}", loss_curve.last().unwrap_or(&f64::NAN));
    }
    let train_accuracy = decoder_accuracy(&decoder, &train, &vocab)?;
    let held_out_accuracy = if held.is_empty() {
        None
    } else {
        Some(decoder_accuracy(&decoder, &held, &vocab)?)
    };
    Ok((
        decoder,
        DecoderReport {
            loss_curve,
            train_accuracy,
            held_out_accuracy,
        },
    ))
}

fn classifier_rows<'a>(examples: &[&'a DecoderExample]) -> Vec<(usize, &'a [Vec<f64>], usize)> {
    examples
        .iter()
        .flat_map(|e| {
            e.memory
                .iter()
                .zip(&e.targets)
                .map(move |(m, &y)| (e.goal, m.as_slice(), y))
        })
        .collect()
}

pub fn classifier_accuracy(
    policy: &LinearPolicy,
    examples: &[&DecoderExample],
    vocab: &ActionVocabulary,
) -> Result<f64> {
    let rows = classifier_rows(examples);
    let mut hit = 0usize;
    for &(g, m, y) in &rows {
        hit += usize::from(argmax_token(&policy.predict(g, m)?, vocab) == y);
    }
    Ok(if rows.is_empty() { 0.0 } else { hit as f64 / rows.len() as f64 })
}

/// Trains the linear policy on the same rows the decoder sees.
pub fn train_classifier(
    examples: &[DecoderExample],
    config: ClassifierConfig,
    schedule: &DecoderSchedule,
    seed: u64,
) -> Result<(LinearPolicy, DecoderReport)> {
    let vocab = ActionVocabulary::default();
    let (train, held) = split(examples, schedule.use_all);
    let rows = classifier_rows(&train);
    if rows.is_empty() || train.iter().any(|e| e.memory.is_empty()) {
        return Err(TamError::Config("classifier needs examples with memory".into()));
    }
    let mut policy = LinearPolicy::new(config, seed);
    let mut opt = Optimizer::adam(schedule.learning_rate, &policy.store)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc1a55);
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut loss_curve = Vec::new();
    let batch = schedule.batch.max(1) * 6;
    for _ in 0..schedule.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let goals: Vec<usize> = chunk.iter().map(|&i| rows[i].0).collect();
            let mem: Vec<&[Vec<f64>]> = chunk.iter().map(|&i| rows[i].1).collect();
            let targets: Vec<usize> = chunk.iter().map(|&i| rows[i].2).collect();
            let mut tape = Tape::new();
            let logits = policy.forward(&mut tape, &goals, &mem, Mode::Train)?;
            let loss = cross_entropy(&mut tape, logits, &targets)?;
            loss_curve.push(tape.value(loss).item());
            let grads = tape.backward(loss)?;
            policy.store.zero_grads();
            grads.accumulate_into(&mut policy.store);
            opt.step(&mut policy.store)?;
        }
    }
    let train_accuracy = classifier_accuracy(&policy, &train, &vocab)?;
    let held_out_accuracy = if held.is_empty() {
        None
    } else {
        Some(classifier_accuracy(&policy, &held, &vocab)?)
    };
    Ok((
        policy,
        DecoderReport {
            loss_curve,
            train_accuracy,
            held_out_accuracy,
        },
    ))
}
