//! Topological affordance memory: the encoder/affordance projection, goal
//! associator and siamese localizer, the memory graph built from
//! demonstrations, retrieval, and sign-gradient replanning.

pub mod data;
pub mod losses;
pub mod memory;
pub mod model;
pub mod nets;
pub mod replan;
pub mod train;

use serde::{Deserialize, Serialize};

pub use data::{step_samples, StepSample};
pub use losses::{affordance_loss, bce_term, bce_with_logits};
pub use memory::{
    build_memory, goal_association_score, localize, replan, retrieve, retrieve_k_nearest,
    Localization, MemoryProvenance, ReplanFailed, Replanned, Retrieval, RetrievalOptions,
    TamGraph, TamNode,
};
pub use model::{TamModel, TamNet};
pub use nets::NetDims;
pub use replan::{sign_descent, sign_step, ReplanConfig};
pub use train::{
    train_affordance, train_goal_association, train_localization, AffordanceReport,
    GoalAssociationReport, LocalizationReport, TamConfig, TrainSchedule,
};

use crate::error::{Result, TamError};
use crate::homesim::{feature_len, Demonstration, TaskTemplate};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TamReports {
    pub affordance: AffordanceReport,
    pub goal_association: GoalAssociationReport,
    pub localization: LocalizationReport,
}

/// Trains the encoder and projection, then the goal associator on the
/// frozen encoder, then the localizer. Each stage gets its own seed stream.
pub fn train_tam(
    demos: &[Demonstration],
    config: &TamConfig,
    seed: u64,
) -> Result<(TamModel, TamReports)> {
    if demos.is_empty() {
        return Err(TamError::Config("no demonstrations to train on".into()));
    }
    config.replan.validate()?;
    let samples = step_samples(demos);
    let dims = config.dims(feature_len(), TaskTemplate::ALL.len());
    let (encoder, affordance) = train_affordance(&samples, &dims, config, seed)?;
    let (associator, goal_association) =
        train_goal_association(&samples, &encoder, &dims, config, seed.wrapping_add(1))?;
    let (localizer, localization) =
        train_localization(&samples, &dims, config, seed.wrapping_add(2))?;
    Ok((
        TamModel {
            dims,
            config: config.clone(),
            encoder,
            associator,
            localizer,
        },
        TamReports {
            affordance,
            goal_association,
            localization,
        },
    ))
}
