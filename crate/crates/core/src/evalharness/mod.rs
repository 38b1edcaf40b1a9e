//! Evaluation modes, the attack protocol, metrics and reports.

pub mod metrics;
pub mod modes;
pub mod run;
pub mod suite;

pub use metrics::{executability, graph_f1, lcs_len, lcs_normalized, simulate, GraphF1};
pub use modes::{AttackConfig, EvalMode, InteractiveInterface, PureTextInterface, StaticInterface};
pub use run::{
    aggregate, evaluate_episode, run_evaluation, step_budget, write_csv, Aggregate, EpisodePlanner,
    EpisodeReport, EvalOptions, EvalReport, OraclePlanner, CSV_HEADER,
};
pub use suite::{run_ablation_suite, AblationRow, AblationTable, NamedPlanner, PlannerSet, Variant};
