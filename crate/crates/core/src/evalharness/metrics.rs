//! Sequence and graph metrics.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::homesim::{apply, Action, EnvironmentState, FactKind};

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS length over the longer length; 1 for two empty sequences.
pub fn lcs_normalized<T: PartialEq>(pred: &[T], gt: &[T]) -> f64 {
    let n = pred.len().max(gt.len());
    if n == 0 {
        return 1.0;
    }
    lcs_len(pred, gt) as f64 / n as f64
}

/// Simulates `actions` from `initial`; failed steps leave the state as is.
/// Returns the successful-step fraction (1 for an empty sequence) and the
/// final state.
pub fn simulate(actions: &[Action], initial: &EnvironmentState) -> (f64, EnvironmentState) {
    let mut state = initial.clone();
    let mut ok = 0usize;
    for &a in actions {
        if apply(&mut state, a).is_ok() {
            ok += 1;
        }
    }
    let frac = if actions.is_empty() {
        1.0
    } else {
        ok as f64 / actions.len() as f64
    };
    (frac, state)
}

pub fn executability(actions: &[Action], initial: &EnvironmentState) -> f64 {
    simulate(actions, initial).0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphF1 {
    pub f1: f64,
    pub f1_state: f64,
    pub f1_relation: f64,
}

fn f1_of<T: Ord>(pred: &BTreeSet<&T>, gt: &BTreeSet<&T>) -> f64 {
    if pred.is_empty() && gt.is_empty() {
        return 1.0;
    }
    let hit = pred.intersection(gt).count() as f64;
    if hit == 0.0 {
        return 0.0;
    }
    let p = hit / pred.len() as f64;
    let r = hit / gt.len() as f64;
    2.0 * p * r / (p + r)
}

/// F1 between two fact sets, overall and restricted to state and relation
/// facts. An empty restriction on both sides scores 1.
pub fn graph_f1<T: Ord + FactKind>(pred: &BTreeSet<T>, gt: &BTreeSet<T>) -> GraphF1 {
    fn all<T: Ord>(s: &BTreeSet<T>) -> BTreeSet<&T> {
        s.iter().collect()
    }
    fn only<T: Ord + FactKind>(s: &BTreeSet<T>, state: bool) -> BTreeSet<&T> {
        s.iter().filter(|f| f.is_state() == state).collect()
    }
    GraphF1 {
        f1: f1_of(&all(pred), &all(gt)),
        f1_state: f1_of(&only(pred, true), &only(gt, true)),
        f1_relation: f1_of(&only(pred, false), &only(gt, false)),
    }
}
