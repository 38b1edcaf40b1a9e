//! Closed-loop greedy planning: localize, check goal association, replan,
//! retrieve, decode, submit.

use std::io::Write;

use gradcore::checkpoint::{checkpoint_bytes, load_checkpoint, load_into};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::classifier::{ClassifierConfig, LinearPolicy};
use super::context::MemoryAccess;
use super::decoder::{Decoder, DecoderConfig, SeqInput};
use super::train::argmax_token;
use super::vocab::{ActionToken, ActionVocabulary};
use crate::error::{Result, TamError};
use crate::homesim::{Action, NotExecutable};

/// The network choosing the next action.
#[derive(Clone, Debug)]
pub enum Policy {
    Decoder(Decoder),
    /// Decoder-free ablation.
    Linear(LinearPolicy),
}

impl Policy {
    /// Checkpoint bytes; the header records the architecture.
    pub fn checkpoint(&self) -> Result<Vec<u8>> {
        let (store, meta) = match self {
            Policy::Decoder(d) => (&d.store, json!({"policy": "decoder", "config": d.config})),
            Policy::Linear(l) => (&l.store, json!({"policy": "linear", "config": l.config})),
        };
        Ok(checkpoint_bytes(store, meta)?)
    }

    pub fn from_checkpoint(bytes: &[u8]) -> Result<Self> {
        let (_, meta) = load_checkpoint(bytes)?;
        let bad = |e: serde_json::Error| TamError::format("policy checkpoint header", e);
        let mut policy = match meta["policy"].as_str() {
            Some("decoder") => {
                let config: DecoderConfig = serde_json::from_value(meta["config"].clone()).map_err(bad)?;
                Policy::Decoder(Decoder::new(config, 0)?)
            }
            Some("linear") => {
                let config: ClassifierConfig = serde_json::from_value(meta["config"].clone()).map_err(bad)?;
                Policy::Linear(LinearPolicy::new(config, 0))
            }
            other => {
                return Err(TamError::format(
                    "policy checkpoint",
                    format!("unknown policy kind {other:?}"),
                ))
            }
        };
        let store = match &mut policy {
            Policy::Decoder(d) => &mut d.store,
            Policy::Linear(l) => &mut l.store,
        };
        load_into(bytes, store)?;
        Ok(policy)
    }

    pub fn uses_memory(&self) -> bool {
        match self {
            Policy::Decoder(d) => d.config.use_memory,
            Policy::Linear(_) => true,
        }
    }

    fn max_rows(&self) -> usize {
        match self {
            Policy::Decoder(d) => d.config.max_len,
            Policy::Linear(_) => usize::MAX,
        }
    }

    /// Next-token distribution given the history and the memory of every row
    /// so far (the last entry belongs to the row being predicted).
    pub fn next(&self, goal: usize, history: &[usize], memory: &[Vec<Vec<f64>>]) -> Result<Vec<f64>> {
        match self {
            Policy::Decoder(d) => d.decode_next(&SeqInput {
                goal,
                history,
                memory,
            }),
            Policy::Linear(l) => {
                let last = memory
                    .last()
                    .ok_or_else(|| TamError::Contract("linear policy needs memory".into()))?;
                l.predict(goal, last)
            }
        }
    }
}

/// What happened to a submitted action.
#[derive(Clone, Debug, PartialEq)]
pub struct Submission {
    /// The action the environment ran, if any ran.
    pub executed: Option<Action>,
    pub failure: Option<NotExecutable>,
    /// The executed action replaced the submitted one.
    pub attacked: bool,
}

/// The planner's view of an episode.
pub trait PlanInterface {
    /// Current observation frame, `None` when the mode gives none.
    fn observation(&self) -> Option<Vec<f64>>;
    fn submit(&mut self, action: Action) -> Submission;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    pub predicted: Action,
    pub executed: Option<Action>,
    pub success: bool,
    pub failure: Option<String>,
    pub attacked: bool,
    pub localized: Option<usize>,
    pub replan_trials: usize,
    pub retrieved: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub steps: Vec<PlanStep>,
    /// The policy emitted STOP.
    pub stopped: bool,
}

impl Plan {
    pub fn predicted(&self) -> Vec<Action> {
        self.steps.iter().map(|s| s.predicted).collect()
    }

    pub fn replans(&self) -> usize {
        self.steps.iter().filter(|s| s.replan_trials > 0).count()
    }

    /// One JSON object per step.
    pub fn write_trace<W: Write>(&self, mut w: W) -> Result<()> {
        for s in &self.steps {
            let line = serde_json::to_string(s).map_err(|e| TamError::format("plan trace", e))?;
            writeln!(w, "{line}").map_err(|e| TamError::io("<plan trace>", e))?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Planner<'a> {
    pub policy: &'a Policy,
    pub memory: Option<MemoryAccess<'a>>,
}

impl Planner<'_> {
    /// Runs one episode. `exclude_episode` hides a memory episode from
    /// retrieval.
    pub fn plan_episode(
        &self,
        goal: usize,
        interface: &mut dyn PlanInterface,
        max_steps: usize,
        exclude_episode: Option<usize>,
    ) -> Result<Plan> {
        if self.policy.uses_memory() && self.memory.is_none() {
            return Err(TamError::Config("policy needs a memory to plan with".into()));
        }
        let vocab = ActionVocabulary::default();
        let mut plan = Plan::default();
        let mut history = Vec::new();
        let mut rows: Vec<Vec<Vec<f64>>> = Vec::new();
        let mut prev = None;
        for _ in 0..max_steps {
            if history.len() + 1 > self.policy.max_rows() {
                break;
            }
            let (retrieval, slots) = match &self.memory {
                Some(m) if self.policy.uses_memory() => {
                    let frame = interface.observation();
                    let look = m.lookup(frame.as_deref(), prev, goal, exclude_episode)?;
                    (look.retrieval, look.slots)
                }
                _ => (None, Vec::new()),
            };
            if let Some(r) = &retrieval {
                prev = Some(r.nodes[0]);
            }
            rows.push(slots);
            let p = self.policy.next(goal, &history, &rows)?;
            let token = argmax_token(&p, &vocab);
            let action = match vocab.decode(token) {
                Some(ActionToken::Act(a)) => a,
                _ => {
                    plan.stopped = true;
                    break;
                }
            };
            let sub = interface.submit(action);
            plan.steps.push(PlanStep {
                predicted: action,
                executed: sub.executed,
                success: sub.executed.is_some(),
                failure: sub.failure.map(|f| f.to_string()),
                attacked: sub.attacked,
                localized: retrieval.as_ref().map(|r| r.localized),
                replan_trials: retrieval.as_ref().map_or(0, |r| r.replan_trials),
                retrieved: retrieval.map(|r| r.nodes).unwrap_or_default(),
            });
            history.push(token);
        }
        Ok(plan)
    }
}

/// Greedy decoding without an episode to hide.
pub fn greedy_decode(
    planner: &Planner,
    goal: usize,
    interface: &mut dyn PlanInterface,
    max_steps: usize,
) -> Result<Plan> {
    planner.plan_episode(goal, interface, max_steps, None)
}
