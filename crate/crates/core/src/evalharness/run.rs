//! Episode evaluation and reports.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::metrics::{graph_f1, lcs_normalized, simulate};
use super::modes::{AttackConfig, EvalMode, InteractiveInterface, PureTextInterface, StaticInterface};
use crate::actiongen::{Plan, PlanInterface, Submission};
use crate::error::{Result, TamError};
use crate::homesim::{graph_changes, graph_snapshot, Action, Demonstration, EnvironmentState};

/// Anything that can plan a test episode through an interface.
pub trait EpisodePlanner {
    fn name(&self) -> String;
    fn plan(&self, episode: &Demonstration, interface: &mut dyn PlanInterface, max_steps: usize) -> Result<Plan>;
}

/// Submits the ground-truth actions in order, then stops.
#[derive(Clone, Copy, Debug, Default)]
pub struct OraclePlanner;

impl EpisodePlanner for OraclePlanner {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn plan(&self, episode: &Demonstration, interface: &mut dyn PlanInterface, max_steps: usize) -> Result<Plan> {
        let mut plan = Plan::default();
        for a in episode.actions().into_iter().take(max_steps) {
            let Submission {
                executed,
                failure,
                attacked,
            } = interface.submit(a);
            plan.steps.push(crate::actiongen::PlanStep {
                predicted: a,
                executed,
                success: executed.is_some(),
                failure: failure.map(|f| f.to_string()),
                attacked,
                localized: None,
                replan_trials: 0,
                retrieved: Vec::new(),
            });
        }
        plan.stopped = plan.steps.len() == episode.steps.len();
        Ok(plan)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Observation noise of the live simulator.
    pub sigma: f64,
    pub seed: u64,
    /// Required for, and only allowed with, the attack mode.
    pub attack: Option<AttackConfig>,
    /// Count the executed replacement instead of the predicted action on
    /// attacked steps.
    pub lcs_counts_attacked: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            sigma: 0.05,
            seed: 0,
            attack: None,
            lcs_counts_attacked: false,
        }
    }
}

impl EvalOptions {
    /// Options for `mode`, attaching the default attack when it needs one.
    pub fn for_mode(mode: EvalMode, seed: u64, attack_p: f64) -> Self {
        EvalOptions {
            seed,
            attack: (mode == EvalMode::VisInteractiveAttack).then_some(AttackConfig { p: attack_p, seed }),
            ..EvalOptions::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub episode_id: usize,
    pub goal: usize,
    pub lcs: f64,
    pub executability: f64,
    pub f1: f64,
    pub f1_state: f64,
    pub f1_relation: f64,
    pub steps: usize,
    pub replans: usize,
    pub attacks: usize,
    pub stopped: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub lcs: f64,
    pub executability: f64,
    pub f1: f64,
    pub f1_state: f64,
    pub f1_relation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub planner: String,
    pub mode: EvalMode,
    pub options: EvalOptions,
    pub aggregate: Aggregate,
    pub episodes: Vec<EpisodeReport>,
    /// Hashes of the artifacts the planner was built from.
    pub hashes: BTreeMap<String, String>,
}

pub const CSV_HEADER: &str = "planner,mode,lcs,executability,f1,f1_state,f1_relation";

impl EvalReport {
    pub fn csv_row(&self) -> String {
        let a = &self.aggregate;
        format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.planner, self.mode, a.lcs, a.executability, a.f1, a.f1_state, a.f1_relation
        )
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self).map_err(|e| TamError::format("report", e))
    }
}

pub fn write_csv<W: Write>(reports: &[EvalReport], mut w: W) -> Result<()> {
    let io = |e| TamError::io("<report csv>", e);
    writeln!(w, "{CSV_HEADER}").map_err(io)?;
    for r in reports {
        writeln!(w, "{}", r.csv_row()).map_err(io)?;
    }
    Ok(())
}

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Step budget for an episode whose expert needs `expert_len` actions.
pub fn step_budget(expert_len: usize) -> usize {
    2 * expert_len + 4
}

fn score_episode(
    episode: &Demonstration,
    mode: EvalMode,
    plan: &Plan,
    final_state: &EnvironmentState,
    executability: f64,
    lcs_counts_attacked: bool,
) -> EpisodeReport {
    let gt = episode.actions();
    let pred: Vec<Action> = if mode.interactive() {
        plan.steps
            .iter()
            .filter(|s| s.success)
            .map(|s| match (s.attacked, s.executed) {
                (true, Some(e)) if lcs_counts_attacked => e,
                _ => s.predicted,
            })
            .collect()
    } else {
        plan.predicted()
    };
    let initial = graph_snapshot(&episode.initial_state);
    let want = graph_changes(&initial, &episode.final_facts);
    let got = graph_changes(&initial, &graph_snapshot(final_state));
    let f = graph_f1(&got, &want);
    EpisodeReport {
        episode_id: episode.episode_id,
        goal: episode.goal.id,
        lcs: lcs_normalized(&pred, &gt),
        executability,
        f1: f.f1,
        f1_state: f.f1_state,
        f1_relation: f.f1_relation,
        steps: plan.steps.len(),
        replans: plan.replans(),
        attacks: plan.steps.iter().filter(|s| s.attacked).count(),
        stopped: plan.stopped,
    }
}

/// Plans and scores one episode under `mode`.
pub fn evaluate_episode(
    planner: &dyn EpisodePlanner,
    episode: &Demonstration,
    mode: EvalMode,
    options: &EvalOptions,
) -> Result<(EpisodeReport, Plan)> {
    let budget = step_budget(episode.steps.len());
    let seed = mix(options.seed, episode.episode_id as u64);
    let (plan, final_state, executability) = match mode {
        EvalMode::PureText => {
            let mut io = PureTextInterface {
                shadow: episode.initial_state.clone(),
            };
            let plan = planner.plan(episode, &mut io, budget)?;
            let (ex, fin) = simulate(&plan.predicted(), &episode.initial_state);
            (plan, fin, ex)
        }
        EvalMode::VisStatic => {
            let mut io = StaticInterface::new(episode);
            let plan = planner.plan(episode, &mut io, budget)?;
            let (ex, fin) = simulate(&plan.predicted(), &episode.initial_state);
            (plan, fin, ex)
        }
        EvalMode::VisInteractive | EvalMode::VisInteractiveAttack => {
            let attack = options
                .attack
                .as_ref()
                .map(|a| (a.p, mix(a.seed ^ 0xa77a_c4ed, episode.episode_id as u64)));
            let mut io = InteractiveInterface::new(&episode.initial_state, options.sigma, seed, attack);
            let plan = planner.plan(episode, &mut io, budget)?;
            (plan, io.state, 1.0)
        }
    };
    let report = score_episode(episode, mode, &plan, &final_state, executability, options.lcs_counts_attacked);
    Ok((report, plan))
}

fn check_mode(mode: EvalMode, options: &EvalOptions) -> Result<()> {
    match (&options.attack, mode) {
        (None, EvalMode::VisInteractiveAttack) => Err(TamError::Config(
            "the attack mode needs an attack configuration".into(),
        )),
        (Some(_), m) if m != EvalMode::VisInteractiveAttack => Err(TamError::Config(format!(
            "an attack configuration is only valid in VIS_INTERACTIVE_ATTACK, not {m}"
        ))),
        (Some(a), _) => a.validate(),
        _ => Ok(()),
    }
}

pub fn aggregate(episodes: &[EpisodeReport]) -> Aggregate {
    if episodes.is_empty() {
        return Aggregate::default();
    }
    let n = episodes.len() as f64;
    let mean = |f: fn(&EpisodeReport) -> f64| episodes.iter().map(f).sum::<f64>() / n;
    Aggregate {
        lcs: mean(|e| e.lcs),
        executability: mean(|e| e.executability),
        f1: mean(|e| e.f1),
        f1_state: mean(|e| e.f1_state),
        f1_relation: mean(|e| e.f1_relation),
    }
}

/// Evaluates every episode under `mode`. Episodes are reported sorted by id.
pub fn run_evaluation(
    planner: &dyn EpisodePlanner,
    episodes: &[Demonstration],
    mode: EvalMode,
    options: &EvalOptions,
) -> Result<EvalReport> {
    check_mode(mode, options)?;
    let mut reports = Vec::with_capacity(episodes.len());
    for ep in episodes {
        reports.push(evaluate_episode(planner, ep, mode, options)?.0);
    }
    reports.sort_by_key(|r| r.episode_id);
    Ok(EvalReport {
        planner: planner.name(),
        mode,
        options: options.clone(),
        aggregate: aggregate(&reports),
        episodes: reports,
        hashes: BTreeMap::new(),
    })
}
