//! Planner variants and the ablation table.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::modes::EvalMode;
use super::run::{run_evaluation, EpisodePlanner, EvalOptions, EvalReport, CSV_HEADER};
use crate::actiongen::{MemoryAccess, MemoryOptions, Plan, PlanInterface, Planner, Policy};
use crate::error::{Result, TamError};
use crate::homesim::Demonstration;
use crate::tam::{Localization, TamGraph, TamModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    WithoutReplan,
    PixelLocalize,
    WithoutTrans,
    NaiveGoal,
    /// Decoder on goal and history only, no memory.
    GoalOnly,
}

impl Variant {
    /// The full model and its four ablations, in table order.
    pub const ABLATIONS: [Variant; 5] = [
        Variant::Full,
        Variant::WithoutReplan,
        Variant::PixelLocalize,
        Variant::WithoutTrans,
        Variant::NaiveGoal,
    ];

    pub const ALL: [Variant; 6] = [
        Variant::Full,
        Variant::WithoutReplan,
        Variant::PixelLocalize,
        Variant::WithoutTrans,
        Variant::NaiveGoal,
        Variant::GoalOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::WithoutReplan => "without_replan",
            Variant::PixelLocalize => "pixel_localize",
            Variant::WithoutTrans => "without_trans",
            Variant::NaiveGoal => "naive_goal",
            Variant::GoalOnly => "goal_only",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = TamError;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == norm)
            .ok_or_else(|| TamError::Config(format!("unknown planner variant {s:?}")))
    }
}

/// Everything trained: memory networks, memory graph and the policies.
#[derive(Clone, Debug)]
pub struct PlannerSet {
    pub model: TamModel,
    pub graph: TamGraph,
    pub memory: MemoryOptions,
    pub full: Policy,
    /// Decoder trained on retrievals without replanning.
    pub without_replan: Policy,
    pub naive_goal: Policy,
    pub goal_only: Policy,
    pub linear: Policy,
}

/// A [`Planner`] with a report name.
pub struct NamedPlanner<'a> {
    pub name: String,
    pub planner: Planner<'a>,
}

impl EpisodePlanner for NamedPlanner<'_> {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn plan(&self, episode: &Demonstration, interface: &mut dyn PlanInterface, max_steps: usize) -> Result<Plan> {
        self.planner.plan_episode(episode.goal.id, interface, max_steps, None)
    }
}

impl PlannerSet {
    pub fn options(&self, variant: Variant) -> MemoryOptions {
        let mut o = self.memory.clone();
        match variant {
            Variant::WithoutReplan => o.replan = false,
            Variant::PixelLocalize => o.localization = Localization::RawCosine,
            Variant::NaiveGoal => o.goal_aware = false,
            _ => {}
        }
        o
    }

    fn policy(&self, variant: Variant) -> &Policy {
        match variant {
            Variant::Full | Variant::PixelLocalize => &self.full,
            Variant::WithoutReplan => &self.without_replan,
            Variant::WithoutTrans => &self.linear,
            Variant::NaiveGoal => &self.naive_goal,
            Variant::GoalOnly => &self.goal_only,
        }
    }

    pub fn planner<'a>(&'a self, variant: Variant, options: &'a MemoryOptions) -> NamedPlanner<'a> {
        let policy = self.policy(variant);
        NamedPlanner {
            name: variant.name().into(),
            planner: Planner {
                policy,
                memory: policy.uses_memory().then_some(MemoryAccess {
                    model: &self.model,
                    graph: &self.graph,
                    options,
                }),
            },
        }
    }

    pub fn evaluate(
        &self,
        variant: Variant,
        episodes: &[Demonstration],
        mode: EvalMode,
        options: &EvalOptions,
    ) -> Result<EvalReport> {
        let memory = self.options(variant);
        run_evaluation(&self.planner(variant, &memory), episodes, mode, options)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub report: EvalReport,
}

/// One row per ablation variant per interactive mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn get(&self, variant: Variant, mode: EvalMode) -> Option<&EvalReport> {
        self.rows
            .iter()
            .find(|r| r.variant == variant && r.report.mode == mode)
            .map(|r| &r.report)
    }

    /// CSV with one block per mode, mirroring the ablation tables.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| TamError::io("<ablation csv>", e);
        writeln!(w, "{CSV_HEADER}").map_err(io)?;
        for r in &self.rows {
            writeln!(w, "{}", r.report.csv_row()).map_err(io)?;
        }
        Ok(())
    }
}

pub fn run_ablation_suite(
    set: &PlannerSet,
    episodes: &[Demonstration],
    seed: u64,
    attack_p: f64,
) -> Result<AblationTable> {
    let mut rows = Vec::new();
    for mode in [EvalMode::VisInteractive, EvalMode::VisInteractiveAttack] {
        let options = EvalOptions::for_mode(mode, seed, attack_p);
        for variant in Variant::ABLATIONS {
            rows.push(AblationRow {
                variant,
                report: set.evaluate(variant, episodes, mode, &options)?,
            });
        }
    }
    Ok(AblationTable { rows })
}
