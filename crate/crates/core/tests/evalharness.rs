use std::collections::BTreeSet;
use std::sync::OnceLock;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tamformer::actiongen::*;
use tamformer::evalharness::*;
use tamformer::homesim::*;
use tamformer::tam::*;
use tamformer::TamError;

/// Exhaustive LCS: the longest subsequence of `a` that is also one of `b`.
fn lcs_brute(a: &[u8], b: &[u8]) -> usize {
    fn is_subseq(s: &[u8], t: &[u8]) -> bool {
        let mut it = t.iter();
        s.iter().all(|x| it.any(|y| y == x))
    }
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let sub: Vec<u8> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| a[i]).collect();
        if sub.len() > best && is_subseq(&sub, b) {
            best = sub.len();
        }
    }
    best
}

#[test]
fn lcs_matches_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let a: Vec<u8> = (0..rng.random_range(0..=8)).map(|_| rng.random_range(0..4)).collect();
        let b: Vec<u8> = (0..rng.random_range(0..=8)).map(|_| rng.random_range(0..4)).collect();
        assert_eq!(lcs_len(&a, &b), lcs_brute(&a, &b), "{a:?} {b:?}");
    }
}

proptest! {
    #[test]
    fn normalized_lcs_is_symmetric_and_bounded(
        a in prop::collection::vec(0u8..5, 0..12),
        b in prop::collection::vec(0u8..5, 0..12),
    ) {
        let x = lcs_normalized(&a, &b);
        prop_assert_eq!(x, lcs_normalized(&b, &a));
        prop_assert!((0.0..=1.0).contains(&x));
        prop_assert_eq!(lcs_normalized(&a, &a), 1.0);
    }
}

#[test]
fn lcs_worked_examples() {
    assert_eq!(lcs_normalized(&['A', 'B', 'C', 'D'], &['B', 'C']), 0.5);
    assert_eq!(lcs_normalized::<u8>(&[], &[]), 1.0);
    assert_eq!(lcs_normalized(&[], &[1]), 0.0);
    assert_eq!(lcs_normalized(&[1], &[]), 0.0);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct F(u8, bool);

impl FactKind for F {
    fn is_state(&self) -> bool {
        self.1
    }
}

fn f1_oracle(pred: &BTreeSet<F>, gt: &BTreeSet<F>) -> f64 {
    if pred.is_empty() && gt.is_empty() {
        return 1.0;
    }
    let tp = pred.iter().filter(|f| gt.contains(f)).count() as f64;
    let fp = pred.len() as f64 - tp;
    let fn_ = gt.len() as f64 - tp;
    if tp == 0.0 {
        0.0
    } else {
        2.0 * tp / (2.0 * tp + fp + fn_)
    }
}

#[test]
fn graph_f1_matches_set_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let draw = |rng: &mut ChaCha8Rng| -> BTreeSet<F> {
        (0..rng.random_range(0..8))
            .map(|_| F(rng.random_range(0..6), rng.random()))
            .collect()
    };
    for _ in 0..200 {
        let p = draw(&mut rng);
        let g = draw(&mut rng);
        let got = graph_f1(&p, &g);
        assert!((got.f1 - f1_oracle(&p, &g)).abs() < 1e-12);
        let only = |s: &BTreeSet<F>, st: bool| s.iter().copied().filter(|f| f.1 == st).collect();
        assert!((got.f1_state - f1_oracle(&only(&p, true), &only(&g, true))).abs() < 1e-12);
        assert!((got.f1_relation - f1_oracle(&only(&p, false), &only(&g, false))).abs() < 1e-12);
    }
}

#[test]
fn graph_f1_worked_examples() {
    let s = |v: &[u8]| v.iter().map(|&i| F(i, false)).collect::<BTreeSet<_>>();
    // precision 1/2, recall 1 → 2/3
    assert!((graph_f1(&s(&[1, 2]), &s(&[1])).f1 - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(graph_f1(&s(&[1, 2]), &s(&[3, 4])).f1, 0.0);
    assert_eq!(graph_f1(&s(&[]), &s(&[])).f1, 1.0);
}

fn demos() -> &'static Vec<Demonstration> {
    static D: OnceLock<Vec<Demonstration>> = OnceLock::new();
    D.get_or_init(|| {
        generate_demonstrations(&TaskTemplate::ALL, 16, 2, &DemoConfig::test())
            .unwrap()
            .demos
    })
}

#[test]
fn grabbing_before_walking_is_not_executable() {
    let demo = demos()
        .iter()
        .find(|d| {
            let a = d.actions();
            matches!((a[0], a[1]), (Action::Walk(_), Action::Grab(_)))
        })
        .expect("a demo that walks then grabs");
    let a = demo.actions();
    let seq = [a[1], a[0], a[1]];
    assert!((executability(&seq, &demo.initial_state) - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(executability(&a, &demo.initial_state), 1.0);
    assert_eq!(executability(&[], &demo.initial_state), 1.0);
}

#[test]
fn oracle_planner_is_perfect_in_every_clean_mode() {
    for mode in [EvalMode::PureText, EvalMode::VisStatic, EvalMode::VisInteractive] {
        let r = run_evaluation(&OraclePlanner, demos(), mode, &EvalOptions::for_mode(mode, 1, 0.15)).unwrap();
        assert_eq!(r.aggregate.lcs, 1.0, "{mode}");
        assert_eq!(r.aggregate.f1, 1.0, "{mode}");
        assert_eq!(r.aggregate.executability, 1.0, "{mode}");
        assert_eq!(r.episodes.len(), demos().len());
    }
}

#[test]
fn mode_and_attack_must_agree() {
    let plain = EvalOptions::default();
    let err = run_evaluation(&OraclePlanner, demos(), EvalMode::VisInteractiveAttack, &plain).unwrap_err();
    assert!(matches!(err, TamError::Config(_)));
    let attack = EvalOptions::for_mode(EvalMode::VisInteractiveAttack, 0, 0.15);
    for mode in [EvalMode::PureText, EvalMode::VisStatic, EvalMode::VisInteractive] {
        assert!(matches!(
            run_evaluation(&OraclePlanner, demos(), mode, &attack),
            Err(TamError::Config(_))
        ));
    }
    let bad = EvalOptions {
        attack: Some(AttackConfig { p: 1.5, seed: 0 }),
        ..EvalOptions::default()
    };
    assert!(matches!(
        run_evaluation(&OraclePlanner, demos(), EvalMode::VisInteractiveAttack, &bad),
        Err(TamError::Config(_))
    ));
}

#[test]
fn modes_and_variants_parse_by_name() {
    for m in EvalMode::ALL {
        assert_eq!(m.name().parse::<EvalMode>().unwrap(), m);
        assert_eq!(m.name().to_lowercase().replace('_', "-").parse::<EvalMode>().unwrap(), m);
    }
    for v in Variant::ALL {
        assert_eq!(v.name().parse::<Variant>().unwrap(), v);
    }
    assert!(matches!("VIS_MOVING".parse::<EvalMode>(), Err(TamError::Config(_))));
    assert!(matches!("nope".parse::<Variant>(), Err(TamError::Config(_))));
}

#[test]
fn certain_attack_replaces_the_action_with_an_executable_one() {
    let demo = &demos()[0];
    let a = demo.actions()[0];
    let options = executable_actions(&demo.initial_state);
    for seed in 0..20 {
        let mut io = InteractiveInterface::new(&demo.initial_state, 0.05, 0, Some((1.0, seed)));
        let s = io.submit(a);
        assert!(s.attacked);
        let run = s.executed.expect("replacement executes");
        assert!(options.contains(&run));
    }
}

/// Untrained networks throughout: enough to exercise every code path.
fn planner_set() -> &'static PlannerSet {
    static P: OnceLock<PlannerSet> = OnceLock::new();
    P.get_or_init(|| {
        let train = generate_demonstrations(&TaskTemplate::ALL, 16, 1, &DemoConfig::train())
            .unwrap()
            .demos;
        let model = TamModel::untrained(TamConfig::default().dims(feature_len(), 8), TamConfig::default(), 1);
        let graph = build_memory(&train, &model, MemoryProvenance::default()).unwrap();
        let slot = graph.nodes[0].value().len();
        let cfg = DecoderConfig {
            dim: 16,
            heads: 2,
            ff: 32,
            ..DecoderConfig::new(113, 8, slot)
        };
        let dec = |c: DecoderConfig, seed| Policy::Decoder(Decoder::new(c, seed).unwrap());
        PlannerSet {
            model,
            graph,
            memory: MemoryOptions::default(),
            full: dec(cfg.clone(), 1),
            without_replan: dec(cfg.clone(), 2),
            naive_goal: dec(DecoderConfig { use_goal: false, ..cfg.clone() }, 3),
            goal_only: dec(DecoderConfig { use_memory: false, ..cfg.clone() }, 4),
            linear: Policy::Linear(LinearPolicy::new(
                ClassifierConfig {
                    goal_dim: 8,
                    vocab: 113,
                    goals: 8,
                    slot_dim: slot,
                },
                5,
            )),
        }
    })
}

#[test]
fn zero_probability_attack_matches_the_interactive_mode() {
    let set = planner_set();
    let eps = &demos()[..6];
    for v in [Variant::Full, Variant::WithoutTrans] {
        let plain = set
            .evaluate(v, eps, EvalMode::VisInteractive, &EvalOptions::for_mode(EvalMode::VisInteractive, 3, 0.0))
            .unwrap();
        let attack = set
            .evaluate(
                v,
                eps,
                EvalMode::VisInteractiveAttack,
                &EvalOptions::for_mode(EvalMode::VisInteractiveAttack, 3, 0.0),
            )
            .unwrap();
        assert_eq!(plain.episodes, attack.episodes);
        assert!(attack.episodes.iter().all(|e| e.attacks == 0));
    }
}

#[test]
fn ablation_table_has_five_rows_per_interactive_mode() {
    let table = run_ablation_suite(planner_set(), &demos()[..3], 0, 0.15).unwrap();
    assert_eq!(table.rows.len(), 10);
    for mode in [EvalMode::VisInteractive, EvalMode::VisInteractiveAttack] {
        for v in Variant::ABLATIONS {
            let r = table.get(v, mode).unwrap();
            assert_eq!(r.planner, v.name());
            assert_eq!(r.aggregate.executability, 1.0);
        }
    }
    let mut csv = Vec::new();
    table.write_csv(&mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 11);
}

/// Records, for every failed submission, whether the world moved.
struct Watch {
    inner: InteractiveInterface,
    failed_but_changed: usize,
    failed: usize,
}

impl PlanInterface for Watch {
    fn observation(&self) -> Option<Vec<f64>> {
        self.inner.observation()
    }

    fn submit(&mut self, action: Action) -> Submission {
        let before = self.inner.state.clone();
        let s = self.inner.submit(action);
        if s.executed.is_none() {
            self.failed += 1;
            if self.inner.state != before {
                self.failed_but_changed += 1;
            }
        }
        s
    }
}

#[test]
fn interactive_failures_leave_the_world_unchanged() {
    let set = planner_set();
    let memory = set.options(Variant::Full);
    let planner = set.planner(Variant::Full, &memory);
    let mut failed = 0;
    for demo in demos() {
        let mut io = Watch {
            inner: InteractiveInterface::new(&demo.initial_state, 0.05, 4, Some((0.3, 9))),
            failed_but_changed: 0,
            failed: 0,
        };
        let plan = planner.plan(demo, &mut io, 12).unwrap();
        assert_eq!(io.failed_but_changed, 0);
        failed += io.failed;
        for s in &plan.steps {
            assert_eq!(s.success, s.executed.is_some());
            assert_eq!(s.success, s.failure.is_none());
        }
    }
    assert!(failed > 0, "an untrained policy should attempt something impossible");
}

#[test]
fn interactive_reports_score_only_executed_steps() {
    let set = planner_set();
    let r = set
        .evaluate(
            Variant::Full,
            demos(),
            EvalMode::VisInteractive,
            &EvalOptions::for_mode(EvalMode::VisInteractive, 0, 0.15),
        )
        .unwrap();
    for e in &r.episodes {
        assert_eq!(e.executability, 1.0);
        assert!((0.0..=1.0).contains(&e.lcs));
        assert!((0.0..=1.0).contains(&e.f1));
    }
    let mut csv = Vec::new();
    write_csv(std::slice::from_ref(&r), &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().next(), Some(CSV_HEADER));
    assert_eq!(text.lines().count(), 2);
}

#[test]
fn evaluation_is_deterministic() {
    let set = planner_set();
    let o = EvalOptions::for_mode(EvalMode::VisInteractiveAttack, 8, 0.5);
    let a = set.evaluate(Variant::Full, demos(), EvalMode::VisInteractiveAttack, &o).unwrap();
    let b = set.evaluate(Variant::Full, demos(), EvalMode::VisInteractiveAttack, &o).unwrap();
    assert_eq!(a, b);
    assert!(a.episodes.iter().any(|e| e.attacks > 0));
}

#[test]
fn step_budget_grows_with_the_expert() {
    assert_eq!(step_budget(0), 4);
    assert_eq!(step_budget(10), 24);
}
