//! Training of the three memory networks and their held-out metrics.

use std::collections::BTreeMap;

use gradcore::nn::Mode;
use gradcore::{Optimizer, Tape, Tensor};
use log::{debug, warn};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{split_samples, StepSample};
use super::losses::{affordance_loss, bce_with_logits};
use super::nets::{rows_tensor, AffordanceEncoder, GoalAssociator, LocalizationNet, NetDims};
use super::replan::ReplanConfig;
use crate::error::{Result, TamError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub steps: usize,
    pub learning_rate: f64,
    /// Batch size; for the affordance loss, the number of action classes
    /// per batch.
    pub batch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TamConfig {
    pub dim: usize,
    pub hidden: usize,
    pub goal_dim: usize,
    pub tau: f64,
    /// Observations drawn per action class in an affordance batch.
    pub per_class: usize,
    /// Retrieved neighbors.
    pub k: usize,
    /// Minimum step separation of a within-episode negative pair.
    pub delta: usize,
    /// Localization candidates considered when snapping a replanned node.
    pub candidate_pool: usize,
    pub affordance: TrainSchedule,
    pub goal_association: TrainSchedule,
    pub localization: TrainSchedule,
    pub replan: ReplanConfig,
}

impl Default for TamConfig {
    fn default() -> Self {
        TamConfig {
            dim: 64,
            hidden: 128,
            goal_dim: 16,
            tau: 0.1,
            per_class: 4,
            k: 5,
            delta: 3,
            candidate_pool: 32,
            affordance: TrainSchedule {
                steps: 600,
                learning_rate: 1e-3,
                batch: 8,
            },
            goal_association: TrainSchedule {
                steps: 1500,
                learning_rate: 1e-3,
                batch: 64,
            },
            localization: TrainSchedule {
                steps: 600,
                learning_rate: 1e-3,
                batch: 64,
            },
            replan: ReplanConfig::default(),
        }
    }
}

impl TamConfig {
    pub fn dims(&self, frame: usize, goals: usize) -> NetDims {
        NetDims {
            frame,
            dim: self.dim,
            hidden: self.hidden,
            goal_dim: self.goal_dim,
            goals,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffordanceReport {
    pub loss_curve: Vec<f64>,
    pub skipped_anchors: usize,
    /// Nearest-centroid action recovery in z-space on held-out steps.
    pub centroid_accuracy: f64,
    pub intra_cosine: f64,
    pub inter_cosine: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalAssociationReport {
    pub loss_curve: Vec<f64>,
    pub held_out_accuracy: f64,
    pub same_goal_mean: f64,
    pub cross_goal_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizationReport {
    pub loss_curve: Vec<f64>,
    pub held_out_auc: f64,
    /// Fraction of held-out (f, f', far) triples with `L(f, f') > L(f, far)`.
    pub ranking_rate: f64,
}

fn stacked_rows<'a>(batch: &[&'a StepSample]) -> Vec<&'a [f64]> {
    batch.iter().map(|s| s.stacked.as_slice()).collect()
}

/// Trains `Enc` and `P_μ` with the affordance loss.
pub fn train_affordance(
    samples: &[StepSample],
    dims: &NetDims,
    config: &TamConfig,
    seed: u64,
) -> Result<(AffordanceEncoder, AffordanceReport)> {
    let (train, held) = split_samples(samples);
    let mut by_action: BTreeMap<usize, Vec<&StepSample>> = BTreeMap::new();
    for &s in &train {
        by_action.entry(s.action).or_default().push(s);
    }
    let classes: Vec<usize> = by_action
        .iter()
        .filter(|(_, v)| v.len() >= 2)
        .map(|(&a, _)| a)
        .collect();
    if classes.len() < 2 {
        return Err(TamError::Config(
            "affordance training needs two action classes with at least two observations".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = AffordanceEncoder::new(dims, config.tau, &mut rng);
    let sched = &config.affordance;
    let mut opt = Optimizer::adam(sched.learning_rate, &net.store)?;
    let mut curve = Vec::with_capacity(sched.steps);
    let mut skipped = 0;
    let per_class = config.per_class.max(2);
    for step in 0..sched.steps {
        let chosen: Vec<usize> = classes
            .choose_multiple(&mut rng, sched.batch.min(classes.len()))
            .copied()
            .collect();
        let mut batch = Vec::new();
        let mut labels = Vec::new();
        for a in chosen {
            let pool = &by_action[&a];
            for s in pool.choose_multiple(&mut rng, per_class.min(pool.len())) {
                batch.push(*s);
                labels.push(a);
            }
        }
        let mut tape = Tape::new();
        let x = tape.constant(rows_tensor(&stacked_rows(&batch))?);
        let v = net.encode(&mut tape, x, Mode::Train)?;
        let z = net.project(&mut tape, v, Mode::Train)?;
        let nce = affordance_loss(&mut tape, z, &labels, net.tau)?;
        skipped += nce.skipped;
        let loss = tape.scale(nce.loss, 1.0 / nce.anchors.max(1) as f64);
        curve.push(tape.value(loss).item());
        tape.backward(loss)?.accumulate_into(&mut net.store);
        opt.step(&mut net.store)?;
        if step % 100 == 0 {
            debug!("affordance step {step}: {:.4}", curve[step]);
        }
    }
    if skipped > 0 {
        warn!("{skipped} affordance anchors had no positive and were skipped");
    }
    let (centroid_accuracy, intra_cosine, inter_cosine) = affordance_metrics(&net, &train, &held)?;
    Ok((
        net,
        AffordanceReport {
            loss_curve: curve,
            skipped_anchors: skipped,
            centroid_accuracy,
            intra_cosine,
            inter_cosine,
        },
    ))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn embed_z(net: &AffordanceEncoder, batch: &[&StepSample]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(batch.len());
    for chunk in batch.chunks(256) {
        out.extend(net.embed(&stacked_rows(chunk))?.1);
    }
    Ok(out)
}

/// Nearest-centroid accuracy on `held` with centroids from `train`, plus
/// mean intra- and inter-action cosine similarity among held-out steps.
pub fn affordance_metrics(
    net: &AffordanceEncoder,
    train: &[&StepSample],
    held: &[&StepSample],
) -> Result<(f64, f64, f64)> {
    if held.is_empty() || train.is_empty() {
        return Ok((0.0, 0.0, 0.0));
    }
    let zt = embed_z(net, train)?;
    let mut centroids: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (s, z) in train.iter().zip(&zt) {
        let c = centroids.entry(s.action).or_insert_with(|| vec![0.0; z.len()]);
        c.iter_mut().zip(z).for_each(|(a, b)| *a += b);
    }
    for c in centroids.values_mut() {
        let n = dot(c, c).sqrt().max(1e-12);
        c.iter_mut().for_each(|x| *x /= n);
    }
    let zh = embed_z(net, held)?;
    let mut correct = 0;
    for (s, z) in held.iter().zip(&zh) {
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for (&a, c) in &centroids {
            let sim = dot(z, c);
            if sim > best.0 {
                best = (sim, a);
            }
        }
        if best.1 == s.action {
            correct += 1;
        }
    }
    let (mut intra, mut ni, mut inter, mut nx) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..held.len() {
        for j in i + 1..held.len() {
            let c = dot(&zh[i], &zh[j]);
            if held[i].action == held[j].action {
                intra += c;
                ni += 1;
            } else {
                inter += c;
                nx += 1;
            }
        }
    }
    Ok((
        correct as f64 / held.len() as f64,
        intra / ni.max(1) as f64,
        inter / nx.max(1) as f64,
    ))
}

/// `(i, j, goal, label)` pairs. Positives share the queried goal; negatives
/// either pair steps from different goals or query a goal neither step
/// pursues. Balanced by construction.
fn association_pairs(
    samples: &[&StepSample],
    goals: usize,
    n: usize,
    rng: &mut impl Rng,
) -> Vec<(usize, usize, usize, f64)> {
    let mut by_goal: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        by_goal.entry(s.goal).or_default().push(i);
    }
    let goal_ids: Vec<usize> = by_goal.keys().copied().collect();
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let g = *goal_ids.choose(rng).expect("two goals");
        let i = *by_goal[&g].choose(rng).expect("nonempty");
        if k % 2 == 0 {
            let j = *by_goal[&g].choose(rng).expect("nonempty");
            out.push((i, j, g, 1.0));
        } else if k % 4 == 1 {
            let h = loop {
                let h = *goal_ids.choose(rng).expect("two goals");
                if h != g {
                    break h;
                }
            };
            let j = *by_goal[&h].choose(rng).expect("nonempty");
            out.push((i, j, g, 0.0));
        } else {
            let j = *by_goal[&g].choose(rng).expect("nonempty");
            let q = loop {
                let q = rng.random_range(0..goals);
                if q != g {
                    break q;
                }
            };
            out.push((i, j, q, 0.0));
        }
    }
    out
}

fn rows_of(vs: &[Vec<f64>], idx: impl Iterator<Item = usize>) -> Result<Tensor> {
    let rows: Vec<&[f64]> = idx.map(|i| vs[i].as_slice()).collect();
    rows_tensor(&rows)
}

/// Trains `P_σ` on embeddings of the frozen encoder.
pub fn train_goal_association(
    samples: &[StepSample],
    encoder: &AffordanceEncoder,
    dims: &NetDims,
    config: &TamConfig,
    seed: u64,
) -> Result<(GoalAssociator, GoalAssociationReport)> {
    let (train, held) = split_samples(samples);
    let distinct = |xs: &[&StepSample]| {
        xs.iter()
            .map(|s| s.goal)
            .collect::<std::collections::BTreeSet<_>>()
            .len()
    };
    if distinct(&train) < 2 {
        return Err(TamError::Config(
            "goal association needs at least two goals to form negatives".into(),
        ));
    }
    let v_train = embed_v(encoder, &train)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = GoalAssociator::new(dims, &mut rng);
    let sched = &config.goal_association;
    let mut opt = Optimizer::adam(sched.learning_rate, &net.store)?;
    let mut curve = Vec::with_capacity(sched.steps);
    for _ in 0..sched.steps {
        let pairs = association_pairs(&train, dims.goals, sched.batch, &mut rng);
        let mut tape = Tape::new();
        let vi = tape.constant(rows_of(&v_train, pairs.iter().map(|p| p.0))?);
        let vj = tape.constant(rows_of(&v_train, pairs.iter().map(|p| p.1))?);
        let goals: Vec<usize> = pairs.iter().map(|p| p.2).collect();
        let labels: Vec<f64> = pairs.iter().map(|p| p.3).collect();
        let logits = net.logits(&mut tape, vi, vj, &goals, Mode::Train)?;
        let loss = bce_with_logits(&mut tape, logits, &labels)?;
        curve.push(tape.value(loss).item());
        tape.backward(loss)?.accumulate_into(&mut net.store);
        opt.step(&mut net.store)?;
    }
    let (held_out_accuracy, same_goal_mean, cross_goal_mean) = if distinct(&held) >= 2 {
        association_metrics(&net, encoder, &held, dims.goals, seed ^ 0xa55a)?
    } else {
        (0.0, 0.0, 0.0)
    };
    Ok((
        net,
        GoalAssociationReport {
            loss_curve: curve,
            held_out_accuracy,
            same_goal_mean,
            cross_goal_mean,
        },
    ))
}

fn embed_v(net: &AffordanceEncoder, batch: &[&StepSample]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(batch.len());
    for chunk in batch.chunks(256) {
        out.extend(net.embed(&stacked_rows(chunk))?.0);
    }
    Ok(out)
}

/// Balanced held-out pair accuracy at threshold 0.5, and mean scores of
/// same-goal versus cross-goal pairs.
pub fn association_metrics(
    net: &GoalAssociator,
    encoder: &AffordanceEncoder,
    held: &[&StepSample],
    goals: usize,
    seed: u64,
) -> Result<(f64, f64, f64)> {
    let v = embed_v(encoder, held)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = association_pairs(held, goals, 2000, &mut rng);
    let mut tape = Tape::new();
    let vi = tape.constant(rows_of(&v, pairs.iter().map(|p| p.0))?);
    let vj = tape.constant(rows_of(&v, pairs.iter().map(|p| p.1))?);
    let g: Vec<usize> = pairs.iter().map(|p| p.2).collect();
    let logits = net.logits(&mut tape, vi, vj, &g, Mode::Frozen)?;
    let p = tape.sigmoid(logits);
    let probs = tape.value(p).data();
    let mut correct = 0;
    let (mut same, mut ns, mut cross, mut nc) = (0.0, 0usize, 0.0, 0usize);
    for (pair, &prob) in pairs.iter().zip(probs) {
        if (prob >= 0.5) == (pair.3 == 1.0) {
            correct += 1;
        }
        if held[pair.0].goal == held[pair.1].goal && pair.2 == held[pair.0].goal {
            same += prob;
            ns += 1;
        } else if held[pair.0].goal != held[pair.1].goal {
            cross += prob;
            nc += 1;
        }
    }
    Ok((
        correct as f64 / pairs.len() as f64,
        same / ns.max(1) as f64,
        cross / nc.max(1) as f64,
    ))
}

/// A frame at a time index inside an episode: time `t` is the start of
/// step `t`, time `t + 1` its end.
#[derive(Clone, Copy, Debug)]
struct Frame<'a> {
    features: &'a [f64],
    episode: usize,
    time: usize,
}

struct Episodes<'a> {
    /// Frames of each episode, both endpoints of every step.
    frames: Vec<Vec<Frame<'a>>>,
    positives: Vec<(Frame<'a>, Frame<'a>)>,
}

fn episodes<'a>(samples: &[&'a StepSample]) -> Episodes<'a> {
    let mut grouped: BTreeMap<usize, Vec<&'a StepSample>> = BTreeMap::new();
    for &s in samples {
        grouped.entry(s.episode).or_default().push(s);
    }
    let mut frames = Vec::new();
    let mut positives = Vec::new();
    for (ep, mut steps) in grouped {
        steps.sort_by_key(|s| s.step);
        if steps.len() < 2 {
            continue;
        }
        let mut fs = Vec::new();
        for s in &steps {
            fs.push(Frame {
                features: s.start(),
                episode: ep,
                time: s.step,
            });
            fs.push(Frame {
                features: s.end(),
                episode: ep,
                time: s.step + 1,
            });
        }
        for w in steps.windows(2) {
            positives.push((
                Frame {
                    features: w[0].end(),
                    episode: ep,
                    time: w[0].step + 1,
                },
                Frame {
                    features: w[1].start(),
                    episode: ep,
                    time: w[1].step,
                },
            ));
        }
        frames.push(fs);
    }
    Episodes { frames, positives }
}

/// A temporally distant pair: same episode at least `delta` steps apart
/// when possible, otherwise frames from different episodes.
fn negative<'a>(eps: &Episodes<'a>, delta: usize, rng: &mut impl Rng) -> (Frame<'a>, Frame<'a>) {
    let e = rng.random_range(0..eps.frames.len());
    let fs = &eps.frames[e];
    let a = *fs.choose(rng).expect("nonempty episode");
    if rng.random_bool(0.5) {
        let far: Vec<&Frame> = fs.iter().filter(|f| f.time.abs_diff(a.time) >= delta).collect();
        if let Some(b) = far.choose(rng) {
            return (a, **b);
        }
    }
    if eps.frames.len() > 1 {
        let other = loop {
            let o = rng.random_range(0..eps.frames.len());
            if o != e {
                break o;
            }
        };
        (a, *eps.frames[other].choose(rng).expect("nonempty episode"))
    } else {
        let far: Vec<&Frame> = fs.iter().filter(|f| f.time.abs_diff(a.time) >= delta).collect();
        (a, **far.choose(rng).expect("checked separation"))
    }
}

fn pair_probs(net: &LocalizationNet, pairs: &[(Frame, Frame)]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(256) {
        let a: Vec<&[f64]> = chunk.iter().map(|p| p.0.features).collect();
        let b: Vec<&[f64]> = chunk.iter().map(|p| p.1.features).collect();
        let ea = net.embed(&a)?;
        let eb = net.embed(&b)?;
        out.extend(ea.iter().zip(&eb).map(|(x, y)| net.score(x, y)));
    }
    Ok(out)
}

/// Area under the ROC curve with ties counted as one half.
pub fn roc_auc(positive: &[f64], negative: &[f64]) -> f64 {
    if positive.is_empty() || negative.is_empty() {
        return 0.5;
    }
    let mut neg = negative.to_vec();
    neg.sort_by(f64::total_cmp);
    let mut wins = 0.0;
    for &p in positive {
        let below = neg.partition_point(|&n| n < p);
        let not_above = neg.partition_point(|&n| n <= p);
        wins += below as f64 + 0.5 * (not_above - below) as f64;
    }
    wins / (positive.len() * negative.len()) as f64
}

/// Held-out adjacency AUC and the triple ranking rate of `net`.
pub fn localization_metrics(
    net: &LocalizationNet,
    held: &[&StepSample],
    delta: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let eps = episodes(held);
    if eps.positives.is_empty() {
        return Ok((0.5, 0.0));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let negs: Vec<_> = (0..eps.positives.len())
        .map(|_| negative(&eps, delta, &mut rng))
        .collect();
    let pos_p = pair_probs(net, &eps.positives)?;
    let neg_p = pair_probs(net, &negs)?;
    let auc = roc_auc(&pos_p, &neg_p);
    // triples (f, adjacent f', far frame from the same episode)
    let mut far_pairs = Vec::with_capacity(eps.positives.len());
    for &(a, _) in &eps.positives {
        let fs = eps
            .frames
            .iter()
            .find(|fs| fs[0].episode == a.episode)
            .expect("episode of a positive");
        let far: Vec<&Frame> = fs.iter().filter(|f| f.time.abs_diff(a.time) >= delta).collect();
        let b = match far.choose(&mut rng) {
            Some(b) => **b,
            None => negative(&eps, delta, &mut rng).1,
        };
        far_pairs.push((a, b));
    }
    let far_p = pair_probs(net, &far_pairs)?;
    let ranked = pos_p.iter().zip(&far_p).filter(|(p, f)| p > f).count();
    Ok((auc, ranked as f64 / pos_p.len() as f64))
}

/// Trains the siamese localizer on adjacent (positive) and distant
/// (negative) frame pairs.
pub fn train_localization(
    samples: &[StepSample],
    dims: &NetDims,
    config: &TamConfig,
    seed: u64,
) -> Result<(LocalizationNet, LocalizationReport)> {
    let (train, held) = split_samples(samples);
    let eps = episodes(&train);
    if eps.positives.is_empty() {
        return Err(TamError::Config("localization needs episodes with at least two steps".into()));
    }
    let longest = eps.frames.iter().map(|f| f.len() / 2).max().unwrap_or(0);
    if config.delta == 0 || config.delta > longest {
        return Err(TamError::Config(format!(
            "negative separation {} does not fit episodes of at most {longest} steps",
            config.delta
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = LocalizationNet::new(dims, &mut rng);
    let sched = &config.localization;
    let mut opt = Optimizer::adam(sched.learning_rate, &net.store)?;
    let mut curve = Vec::with_capacity(sched.steps);
    let half = (sched.batch / 2).max(1);
    for _ in 0..sched.steps {
        let mut pairs = Vec::with_capacity(2 * half);
        let mut labels = Vec::with_capacity(2 * half);
        for _ in 0..half {
            pairs.push(*eps.positives.choose(&mut rng).expect("nonempty"));
            labels.push(1.0);
            pairs.push(negative(&eps, config.delta, &mut rng));
            labels.push(0.0);
        }
        // random side order keeps the training data symmetric too
        let (a, b): (Vec<&[f64]>, Vec<&[f64]>) = pairs
            .iter()
            .map(|p| {
                if rng.random_bool(0.5) {
                    (p.0.features, p.1.features)
                } else {
                    (p.1.features, p.0.features)
                }
            })
            .unzip();
        let mut tape = Tape::new();
        let xa = tape.constant(rows_tensor(&a)?);
        let xb = tape.constant(rows_tensor(&b)?);
        let ea = net.branch_forward(&mut tape, xa, Mode::Train)?;
        let eb = net.branch_forward(&mut tape, xb, Mode::Train)?;
        let logits = net.pair_logits(&mut tape, ea, eb, Mode::Train)?;
        let loss = bce_with_logits(&mut tape, logits, &labels)?;
        curve.push(tape.value(loss).item());
        tape.backward(loss)?.accumulate_into(&mut net.store);
        opt.step(&mut net.store)?;
    }
    let (held_out_auc, ranking_rate) = localization_metrics(&net, &held, config.delta, seed ^ 0x10c)?;
    Ok((
        net,
        LocalizationReport {
            loss_curve: curve,
            held_out_auc,
            ranking_rate,
        },
    ))
}
