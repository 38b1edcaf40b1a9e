//! Per-step memory lookup shared by training and planning.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tam::{retrieve, Localization, ReplanConfig, Retrieval, RetrievalOptions, TamGraph, TamModel};

/// How the planner consults memory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryOptions {
    pub k: usize,
    pub localization: Localization,
    pub replan: bool,
    /// Whether retrieval knows the goal (association check and replan).
    pub goal_aware: bool,
    pub candidate_pool: usize,
    pub replan_config: ReplanConfig,
}

impl Default for MemoryOptions {
    fn default() -> Self {
        MemoryOptions {
            k: 5,
            localization: Localization::Learned,
            replan: true,
            goal_aware: true,
            candidate_pool: 32,
            replan_config: ReplanConfig::default(),
        }
    }
}

/// Read-only view of a trained memory.
#[derive(Clone, Copy, Debug)]
pub struct MemoryAccess<'a> {
    pub model: &'a TamModel,
    pub graph: &'a TamGraph,
    pub options: &'a MemoryOptions,
}

/// Slots handed to the decoder for one step, and how they were found.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryLookup {
    pub slots: Vec<Vec<f64>>,
    pub retrieval: Option<Retrieval>,
}

impl MemoryAccess<'_> {
    /// Number of slots every row gets.
    pub fn slot_count(&self) -> usize {
        self.options.k.max(1).min(self.graph.len())
    }

    pub fn slot_dim(&self) -> usize {
        self.graph.nodes[0].value().len()
    }

    /// Retrieves memory for `frame`. Without a frame (no observations) the
    /// slots are zero. Missing slots are zero-padded.
    pub fn lookup(
        &self,
        frame: Option<&[f64]>,
        prev: Option<usize>,
        goal: usize,
        exclude_episode: Option<usize>,
    ) -> Result<MemoryLookup> {
        let k = self.slot_count();
        let zero = vec![0.0; self.slot_dim()];
        let Some(frame) = frame else {
            return Ok(MemoryLookup {
                slots: vec![zero; k],
                retrieval: None,
            });
        };
        let opts = RetrievalOptions {
            k,
            localization: self.options.localization,
            replan: self.options.replan,
            candidate_pool: self.options.candidate_pool,
        };
        let goal = self.options.goal_aware.then_some(goal);
        let r = retrieve(
            frame,
            prev,
            goal,
            self.graph,
            self.model,
            &opts,
            &self.options.replan_config,
            exclude_episode,
        )?;
        let mut slots: Vec<Vec<f64>> = r.nodes.iter().map(|&i| self.graph.nodes[i].value()).collect();
        slots.resize(k, zero);
        Ok(MemoryLookup {
            slots,
            retrieval: Some(r),
        })
    }
}
