//! The memory graph: construction, localization, retrieval and replanning
//! against stored nodes.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use gradcore::checkpoint::{read_framed, write_framed};
use gradcore::nn::Mode;
use gradcore::{Tape, Tensor};
use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::model::TamModel;
use super::nets::sigmoid;
use super::replan::{sign_descent, ReplanConfig};
use crate::error::{Result, TamError};
use crate::homesim::{Action, Demonstration, Room};

pub const MEMORY_MAGIC: &[u8; 8] = b"TAMGRAPH";
pub const MEMORY_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TamNode {
    /// Localization-branch embedding of the step's start frame.
    pub key: Vec<f64>,
    /// Projected affordance feature `z`.
    pub value_affordance: Vec<f64>,
    /// Encoder embedding `v_a`.
    pub value_assoc: Vec<f64>,
    /// Raw start frame, used only by the raw-feature localization variant.
    pub frame: Vec<f64>,
    pub action: Action,
    pub goal: usize,
    pub episode_id: usize,
    pub step_index: usize,
    pub room: Room,
}

impl TamNode {
    /// `[z | v_a]`, the slot fed to the decoder.
    pub fn value(&self) -> Vec<f64> {
        let mut v = self.value_affordance.clone();
        v.extend_from_slice(&self.value_assoc);
        v
    }
}

/// Hashes of the inputs a memory was built from.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryProvenance {
    pub dataset_hash: String,
    pub checkpoint_hash: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TamGraph {
    pub nodes: Vec<TamNode>,
    pub by_goal: BTreeMap<usize, Vec<usize>>,
    pub by_action: BTreeMap<Action, Vec<usize>>,
    pub provenance: MemoryProvenance,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the concatenated checkpoints of the three networks.
pub fn model_hash(model: &TamModel) -> Result<String> {
    let mut h = Sha256::new();
    for net in super::model::TamNet::ALL {
        h.update(model.checkpoint(net)?);
    }
    Ok(hex::encode(h.finalize()))
}

impl TamGraph {
    pub fn from_nodes(nodes: Vec<TamNode>, provenance: MemoryProvenance) -> Result<Self> {
        if nodes.is_empty() {
            return Err(TamError::Contract("memory graph needs at least one node".into()));
        }
        let mut by_goal: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        let mut by_action: BTreeMap<Action, Vec<usize>> = BTreeMap::new();
        for (i, n) in nodes.iter().enumerate() {
            by_goal.entry(n.goal).or_default().push(i);
            by_action.entry(n.action).or_default().push(i);
        }
        Ok(TamGraph {
            nodes,
            by_goal,
            by_action,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn write<W: Write>(&self, w: W) -> Result<()> {
        let first = &self.nodes[0];
        let labels: Vec<_> = self
            .nodes
            .iter()
            .map(|n| json!([n.action, n.goal, n.episode_id, n.step_index, n.room]))
            .collect();
        let header = json!({
            "dim": first.key.len(),
            "frame": first.frame.len(),
            "nodes": self.nodes.len(),
            "provenance": self.provenance,
            "labels": labels,
        });
        let mut payload = Vec::new();
        for n in &self.nodes {
            payload.extend_from_slice(&n.key);
            payload.extend_from_slice(&n.value_affordance);
            payload.extend_from_slice(&n.value_assoc);
            payload.extend_from_slice(&n.frame);
        }
        Ok(write_framed(w, MEMORY_MAGIC, MEMORY_VERSION, &header, &payload)?)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        Ok(buf)
    }

    pub fn read<R: Read>(r: R) -> Result<Self> {
        let (version, header, payload) = read_framed(r, MEMORY_MAGIC)?;
        if version != MEMORY_VERSION {
            return Err(TamError::format("memory file", format!("version {version}")));
        }
        #[derive(Deserialize)]
        struct Header {
            dim: usize,
            frame: usize,
            nodes: usize,
            provenance: MemoryProvenance,
            labels: Vec<(Action, usize, usize, usize, Room)>,
        }
        let h: Header =
            serde_json::from_value(header).map_err(|e| TamError::format("memory header", e))?;
        let width = 3 * h.dim + h.frame;
        if h.labels.len() != h.nodes || payload.len() != width * h.nodes {
            return Err(TamError::format("memory file", "node table size mismatch"));
        }
        let nodes = h
            .labels
            .into_iter()
            .zip(payload.chunks_exact(width))
            .map(|((action, goal, episode_id, step_index, room), row)| TamNode {
                key: row[..h.dim].to_vec(),
                value_affordance: row[h.dim..2 * h.dim].to_vec(),
                value_assoc: row[2 * h.dim..3 * h.dim].to_vec(),
                frame: row[3 * h.dim..].to_vec(),
                action,
                goal,
                episode_id,
                step_index,
                room,
            })
            .collect();
        TamGraph::from_nodes(nodes, h.provenance)
    }

    /// SHA-256 of the serialized graph.
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(&self.to_bytes()?))
    }
}

/// One node per demonstration step, in dataset order.
pub fn build_memory(
    demos: &[Demonstration],
    model: &TamModel,
    provenance: MemoryProvenance,
) -> Result<TamGraph> {
    let mut nodes = Vec::new();
    for d in demos {
        if d.steps.is_empty() {
            continue;
        }
        let stacked: Vec<Vec<f64>> = d.steps.iter().map(|s| s.observation.stacked()).collect();
        let rows: Vec<&[f64]> = stacked.iter().map(|v| v.as_slice()).collect();
        let (v, z) = model.encoder.embed(&rows)?;
        let starts: Vec<&[f64]> = d
            .steps
            .iter()
            .map(|s| s.observation.start_features.as_slice())
            .collect();
        let keys = model.localizer.embed(&starts)?;
        let mut state_room = d.initial_state.agent.room;
        for (i, step) in d.steps.iter().enumerate() {
            nodes.push(TamNode {
                key: keys[i].clone(),
                value_affordance: z[i].clone(),
                value_assoc: v[i].clone(),
                frame: step.observation.start_features.clone(),
                action: step.action,
                goal: d.goal.id,
                episode_id: d.episode_id,
                step_index: i,
                room: state_room,
            });
            if let Action::Walk(r) = step.action {
                state_room = r;
            }
        }
    }
    TamGraph::from_nodes(nodes, provenance)
}

/// How the current frame is matched against memory keys.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Localization {
    /// The learned siamese scorer `L`.
    Learned,
    /// Cosine similarity of raw frame features.
    RawCosine,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    ab / (aa.sqrt() * bb.sqrt()).max(1e-12)
}

/// Similarity of `frame` to every node (higher is closer), by `mode`.
/// Learned scores are logits of `L`.
pub fn node_scores(
    frame: &[f64],
    graph: &TamGraph,
    model: &TamModel,
    mode: Localization,
) -> Result<Vec<f64>> {
    match mode {
        Localization::Learned => {
            let e = model.localizer.embed(&[frame])?.remove(0);
            Ok(graph
                .nodes
                .iter()
                .map(|n| model.localizer.logit(&e, &n.key))
                .collect())
        }
        Localization::RawCosine => Ok(graph.nodes.iter().map(|n| cosine(frame, &n.frame)).collect()),
    }
}

/// Node indices by descending score, ties by ascending index. Nodes for
/// which `allowed` is false are skipped.
pub fn rank(scores: &[f64], allowed: impl Fn(usize) -> bool) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).filter(|&i| allowed(i)).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// The node maximizing `L(E(frame), key)`, lowest index on ties.
pub fn localize(frame: &[f64], graph: &TamGraph, model: &TamModel) -> Result<usize> {
    if graph.is_empty() {
        return Err(TamError::Contract("localize on an empty memory".into()));
    }
    let scores = node_scores(frame, graph, model, Localization::Learned)?;
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Top-`k` nodes by `L` score; element 0 is [`localize`]'s answer. Asking
/// for more nodes than stored returns all of them.
pub fn retrieve_k_nearest(
    frame: &[f64],
    graph: &TamGraph,
    model: &TamModel,
    k: usize,
) -> Result<Vec<usize>> {
    if graph.is_empty() {
        return Err(TamError::Contract("retrieve on an empty memory".into()));
    }
    if k > graph.len() {
        warn!("asked for {k} neighbors from {} nodes", graph.len());
    }
    let scores = node_scores(frame, graph, model, Localization::Learned)?;
    let mut r = rank(&scores, |_| true);
    r.truncate(k.max(1));
    Ok(r)
}

/// `P_σ(v_a(a), v_a(b), goal)`.
pub fn goal_association_score(
    a: &TamNode,
    b: &TamNode,
    goal: usize,
    model: &TamModel,
) -> Result<f64> {
    model.associator.score(&a.value_assoc, &b.value_assoc, goal)
}

/// Gradient of `BCE(P_σ(m, v_prev, g), 1) = softplus(−logit)` with respect
/// to `m`.
pub fn association_loss_grad(
    model: &TamModel,
    m: &[f64],
    v_prev: &[f64],
    goal: usize,
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::matrix(1, m.len(), m.to_vec())?, true);
    let p = tape.constant(Tensor::matrix(1, v_prev.len(), v_prev.to_vec())?);
    let logit = model.associator.logits(&mut tape, x, p, &[goal], Mode::Frozen)?;
    let neg = tape.neg(logit);
    let sp = tape.softplus(neg);
    let loss = tape.sum(sp);
    let grads = tape.backward(loss)?;
    Ok(grads
        .wrt(x)
        .map(|g| g.data().to_vec())
        .unwrap_or_else(|| vec![0.0; m.len()]))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Replanned {
    pub node: usize,
    /// Gradient steps taken; 0 when the localized node was already accepted.
    pub trials: usize,
    /// The optimized embedding the node was snapped from.
    pub embedding: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
#[error("replan failed after {trials} trials")]
pub struct ReplanFailed {
    pub trials: usize,
}

/// Nearest candidate to `m` in `v_a` space, lowest index on ties.
pub fn snap(m: &[f64], graph: &TamGraph, candidates: &[usize]) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for &c in candidates {
        let d: f64 = graph.nodes[c]
            .value_assoc
            .iter()
            .zip(m)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        if best.is_none_or(|(bd, bi)| d < bd || (d == bd && c < bi)) {
            best = Some((d, c));
        }
    }
    best.map(|(_, i)| i)
}

/// Moves the value embedding of `n_t` toward goal consistency with
/// `n_prev`, then snaps it to the nearest real node among `candidates`.
pub fn replan(
    n_t: usize,
    n_prev: usize,
    goal: usize,
    graph: &TamGraph,
    model: &TamModel,
    candidates: &[usize],
    config: &ReplanConfig,
) -> Result<std::result::Result<Replanned, ReplanFailed>> {
    config.validate()?;
    model.associator.check_goal(goal)?;
    let v_prev = graph.nodes[n_prev].value_assoc.clone();
    let x0 = graph.nodes[n_t].value_assoc.clone();
    let run = sign_descent(
        &x0,
        config,
        |m| model.associator.score(m, &v_prev, goal),
        |m| association_loss_grad(model, m, &v_prev, goal),
    )?;
    if !run.accepted {
        return Ok(Err(ReplanFailed { trials: run.trials }));
    }
    if run.trials == 0 {
        return Ok(Ok(Replanned {
            node: n_t,
            trials: 0,
            embedding: run.embedding,
        }));
    }
    let node = snap(&run.embedding, graph, candidates).unwrap_or(n_t);
    Ok(Ok(Replanned {
        node,
        trials: run.trials,
        embedding: run.embedding,
    }))
}

/// Knobs of the per-step memory lookup used by the planner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalOptions {
    pub k: usize,
    pub localization: Localization,
    pub replan: bool,
    pub candidate_pool: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Retrieval {
    /// Node found by localization.
    pub localized: usize,
    /// Retrieved nodes; element 0 is the anchor the next step compares with.
    pub nodes: Vec<usize>,
    pub association: Option<f64>,
    pub replan_trials: usize,
    pub replanned: bool,
}

/// Localize, check goal association against the previous anchor, replan if
/// needed, and retrieve `k` nodes. `exclude_episode` hides one episode's
/// nodes (training on a demonstration must not see itself).
pub fn retrieve(
    frame: &[f64],
    prev: Option<usize>,
    goal: Option<usize>,
    graph: &TamGraph,
    model: &TamModel,
    opts: &RetrievalOptions,
    replan_config: &ReplanConfig,
    exclude_episode: Option<usize>,
) -> Result<Retrieval> {
    let scores = node_scores(frame, graph, model, opts.localization)?;
    let ranked = rank(&scores, |i| Some(graph.nodes[i].episode_id) != exclude_episode);
    if ranked.is_empty() {
        return Err(TamError::Contract("no memory nodes left to retrieve".into()));
    }
    let localized = ranked[0];
    let k = opts.k.max(1);
    let default = Retrieval {
        localized,
        nodes: ranked.iter().take(k).copied().collect(),
        association: None,
        replan_trials: 0,
        replanned: false,
    };
    let Some(goal) = goal else {
        return Ok(default);
    };
    let prev = prev.unwrap_or(localized);
    let assoc = goal_association_score(&graph.nodes[localized], &graph.nodes[prev], goal, model)?;
    let mut out = Retrieval {
        association: Some(assoc),
        ..default
    };
    if !opts.replan || assoc >= replan_config.threshold {
        return Ok(out);
    }
    let pool: Vec<usize> = ranked.iter().take(opts.candidate_pool.max(k)).copied().collect();
    // Snap targets: pool nodes that pass the association check themselves.
    let mut consistent = Vec::new();
    for &i in &pool {
        if goal_association_score(&graph.nodes[i], &graph.nodes[prev], goal, model)? >= replan_config.threshold {
            consistent.push(i);
        }
    }
    let candidates = if consistent.is_empty() { &pool } else { &consistent };
    match replan(localized, prev, goal, graph, model, candidates, replan_config)? {
        Ok(r) => {
            // The snapped node, then the rest of the consistent candidates in
            // localization order, then the rest of the pool.
            let mut nodes = vec![r.node];
            for &i in candidates.iter().chain(&pool) {
                if nodes.len() == k {
                    break;
                }
                if !nodes.contains(&i) {
                    nodes.push(i);
                }
            }
            out.nodes = nodes;
            out.replan_trials = r.trials;
            out.replanned = true;
        }
        Err(f) => out.replan_trials = f.trials,
    }
    Ok(out)
}

/// Probability form of a learned localization score.
pub fn localization_probability(logit: f64) -> f64 {
    sigmoid(logit)
}
