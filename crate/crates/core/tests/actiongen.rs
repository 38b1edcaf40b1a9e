use std::sync::OnceLock;

use gradcore::nn::Mode;
use gradcore::Tape;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tamformer::actiongen::*;
use tamformer::evalharness::{InteractiveInterface, StaticInterface};
use tamformer::homesim::world::Entity;
use tamformer::homesim::*;
use tamformer::tam::*;
use tamformer::TamError;

const SLOT: usize = 6;

fn small_config() -> DecoderConfig {
    DecoderConfig {
        dim: 16,
        heads: 2,
        ff: 32,
        max_len: 12,
        ..DecoderConfig::new(ActionVocabulary::default().len(), 8, SLOT)
    }
}

fn random_memory(rng: &mut ChaCha8Rng, rows: usize, k: usize) -> Vec<Vec<Vec<f64>>> {
    (0..rows)
        .map(|_| {
            (0..k)
                .map(|_| (0..SLOT).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect()
        })
        .collect()
}

fn random_history(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..111)).collect()
}

#[test]
fn vocabulary_round_trips_every_token() {
    let v = ActionVocabulary::default();
    assert_eq!(v.len(), 113);
    for id in 0..v.len() {
        let t = v.decode(id).unwrap();
        assert_eq!(v.encode(t), Some(id));
    }
    assert_eq!(v.decode(v.stop()), Some(ActionToken::Stop));
    assert_eq!(v.decode(v.pad()), Some(ActionToken::Pad));
    assert_eq!(v.decode(v.len()), None);
}

proptest! {
    #[test]
    fn next_token_distribution_sums_to_one(seed in 0u64..1000, n in 0usize..11, goal in 0usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dec = Decoder::new(small_config(), seed).unwrap();
        let history = random_history(&mut rng, n);
        let memory = random_memory(&mut rng, n + 1, 3);
        let p = dec.decode_next(&SeqInput { goal, history: &history, memory: &memory }).unwrap();
        prop_assert_eq!(p.len(), 113);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(p.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn later_tokens_never_change_earlier_rows(seed in 0u64..1000, n in 2usize..11, j in 0usize..10, t in 0usize..111) {
        let j = j % n;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dec = Decoder::new(small_config(), seed).unwrap();
        let history = random_history(&mut rng, n);
        let memory = random_memory(&mut rng, n + 1, 3);
        let mut changed = history.clone();
        changed[j] = t;
        let a = dec.row_distributions(&SeqInput { goal: 1, history: &history, memory: &memory }).unwrap();
        let b = dec.row_distributions(&SeqInput { goal: 1, history: &changed, memory: &memory }).unwrap();
        // history[j] sits on row j + 1
        for row in 0..=j {
            prop_assert_eq!(&a[row], &b[row]);
        }
    }

    #[test]
    fn memory_slot_order_does_not_matter(seed in 0u64..1000, n in 0usize..8, shift in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dec = Decoder::new(small_config(), seed).unwrap();
        let history = random_history(&mut rng, n);
        let memory = random_memory(&mut rng, n + 1, 4);
        let rotated: Vec<Vec<Vec<f64>>> = memory
            .iter()
            .map(|row| {
                let mut r = row.clone();
                r.rotate_left(shift);
                r.reverse();
                r
            })
            .collect();
        let a = dec.decode_next(&SeqInput { goal: 2, history: &history, memory: &memory }).unwrap();
        let b = dec.decode_next(&SeqInput { goal: 2, history: &history, memory: &rotated }).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn sequence_log_probability_is_the_sum_of_steps() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dec = Decoder::new(small_config(), 3).unwrap();
    let tokens = random_history(&mut rng, 9);
    let memory = random_memory(&mut rng, tokens.len() + 1, 3);
    let mut targets = tokens.clone();
    targets.push(ActionVocabulary::default().stop());
    let rows = dec
        .row_distributions(&SeqInput {
            goal: 4,
            history: &tokens,
            memory: &memory,
        })
        .unwrap();
    let joint: f64 = rows.iter().zip(&targets).map(|(p, &y)| p[y].ln()).sum();
    let mut stepwise = 0.0;
    for (i, &y) in targets.iter().enumerate() {
        let p = dec
            .decode_next(&SeqInput {
                goal: 4,
                history: &tokens[..i],
                memory: &memory[..i + 1],
            })
            .unwrap();
        stepwise += p[y].ln();
    }
    assert!((joint - stepwise).abs() < 1e-9, "{joint} vs {stepwise}");
}

#[test]
fn oversized_or_malformed_input_is_a_contract_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let dec = Decoder::new(small_config(), 1).unwrap();
    let long = random_history(&mut rng, 12);
    let memory = random_memory(&mut rng, 13, 3);
    let err = dec
        .decode_next(&SeqInput {
            goal: 0,
            history: &long,
            memory: &memory,
        })
        .unwrap_err();
    assert!(matches!(err, TamError::Contract(_)));
    let short = random_memory(&mut rng, 2, 3);
    assert!(matches!(
        dec.decode_next(&SeqInput { goal: 0, history: &long[..3], memory: &short }),
        Err(TamError::Contract(_))
    ));
    assert!(matches!(
        dec.decode_next(&SeqInput { goal: 8, history: &[], memory: &short[..1] }),
        Err(TamError::Contract(_))
    ));
}

#[test]
fn width_must_divide_into_heads() {
    let cfg = DecoderConfig {
        heads: 3,
        ..small_config()
    };
    assert!(matches!(Decoder::new(cfg, 0), Err(TamError::Config(_))));
}

#[test]
fn argmax_prefers_the_strict_maximum_then_the_lowest_id() {
    let v = ActionVocabulary::default();
    let mut p = vec![0.0; v.len()];
    p[40] = 0.7;
    assert_eq!(argmax_token(&p, &v), 40);
    p[12] = 0.7;
    assert_eq!(argmax_token(&p, &v), 12);
    p[v.pad()] = 0.9;
    assert_eq!(argmax_token(&p, &v), 12);
}

/// A memory from untrained networks: cheap, and enough to exercise
/// retrieval end to end.
struct Small {
    demos: Vec<Demonstration>,
    model: TamModel,
    graph: TamGraph,
}

fn small() -> &'static Small {
    static S: OnceLock<Small> = OnceLock::new();
    S.get_or_init(|| {
        let demos = generate_demonstrations(&TaskTemplate::ALL, 10, 4, &DemoConfig::train())
            .unwrap()
            .demos;
        let dims = TamConfig::default().dims(feature_len(), 8);
        let model = TamModel::untrained(dims, TamConfig::default(), 4);
        let graph = build_memory(&demos, &model, MemoryProvenance::default()).unwrap();
        Small { demos, model, graph }
    })
}

#[test]
fn untrained_loss_is_near_uniform() {
    let s = small();
    let options = MemoryOptions::default();
    let access = MemoryAccess {
        model: &s.model,
        graph: &s.graph,
        options: &options,
    };
    let vocab = ActionVocabulary::default();
    let examples = decoder_examples(&s.demos, &vocab, Some(access)).unwrap();
    let dec = Decoder::new(DecoderConfig::new(113, 8, access.slot_dim()), 9).unwrap();
    let inputs: Vec<SeqInput> = examples.iter().map(|e| e.input()).collect();
    let targets: Vec<usize> = examples.iter().flat_map(|e| e.targets.iter().copied()).collect();
    let mut tape = Tape::new();
    let logits = dec.forward(&mut tape, &inputs, Mode::Frozen).unwrap();
    let loss = cross_entropy(&mut tape, logits, &targets).unwrap();
    let l = tape.value(loss).item();
    let ln_v = (113f64).ln();
    assert!((l - ln_v).abs() <= 0.1 * ln_v, "initial loss {l}");
}

struct Overfit {
    decoder: Decoder,
    report: DecoderReport,
    examples: Vec<DecoderExample>,
}

fn overfit() -> &'static Overfit {
    static O: OnceLock<Overfit> = OnceLock::new();
    O.get_or_init(|| {
        let s = small();
        let options = MemoryOptions::default();
        let access = MemoryAccess {
            model: &s.model,
            graph: &s.graph,
            options: &options,
        };
        let vocab = ActionVocabulary::default();
        let examples = decoder_examples(&s.demos, &vocab, Some(access)).unwrap();
        let schedule = DecoderSchedule {
            epochs: 300,
            use_all: true,
            ..DecoderSchedule::default()
        };
        let cfg = DecoderConfig::new(113, 8, access.slot_dim());
        let (decoder, report) = train_decoder(&examples, cfg, &schedule, 21).unwrap();
        Overfit {
            decoder,
            report,
            examples,
        }
    })
}

#[test]
fn overfit_loss_decreases_for_100_steps() {
    let o = overfit();
    // ten demos fit in one batch, so each epoch is one step
    let c = &o.report.loss_curve;
    assert_eq!(c.len(), 300);
    for w in c[..100].windows(2) {
        assert!(w[1] < w[0], "loss rose from {} to {}", w[0], w[1]);
    }
}

#[test]
fn overfit_set_is_memorized() {
    let o = overfit();
    let refs: Vec<&DecoderExample> = o.examples.iter().collect();
    let acc = decoder_accuracy(&o.decoder, &refs, &ActionVocabulary::default()).unwrap();
    assert!(acc >= 0.99, "accuracy {acc}");
    assert_eq!(acc, o.report.train_accuracy);
}

#[test]
fn zeroed_memory_changes_the_trained_distribution() {
    let o = overfit();
    let e = &o.examples[0];
    let zero: Vec<Vec<Vec<f64>>> = e
        .memory
        .iter()
        .map(|row| row.iter().map(|s| vec![0.0; s.len()]).collect())
        .collect();
    let a = o.decoder.decode_next(&e.input()).unwrap();
    let b = o
        .decoder
        .decode_next(&SeqInput {
            memory: &zero,
            ..e.input()
        })
        .unwrap();
    let diff: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
    assert!(diff > 1e-3, "memory had no effect ({diff})");
}

#[test]
fn decoder_checkpoint_round_trips() {
    let o = overfit();
    let policy = Policy::Decoder(o.decoder.clone());
    let back = Policy::from_checkpoint(&policy.checkpoint().unwrap()).unwrap();
    let e = &o.examples[1];
    assert_eq!(
        policy.next(e.goal, &e.tokens, &e.memory).unwrap(),
        back.next(e.goal, &e.tokens, &e.memory).unwrap()
    );
}

#[test]
fn wrong_vocabulary_size_is_a_provenance_error() {
    let o = overfit();
    let cfg = DecoderConfig {
        vocab: 50,
        ..small_config()
    };
    let err = train_decoder(&o.examples, cfg, &DecoderSchedule::default(), 0).unwrap_err();
    assert!(matches!(err, TamError::Provenance(_)), "{err}");
}

fn planner<'a>(policy: &'a Policy, options: &'a MemoryOptions) -> Planner<'a> {
    let s = small();
    Planner {
        policy,
        memory: Some(MemoryAccess {
            model: &s.model,
            graph: &s.graph,
            options,
        }),
    }
}

#[test]
fn zero_step_budget_gives_an_empty_plan() {
    let policy = Policy::Decoder(overfit().decoder.clone());
    let options = MemoryOptions::default();
    let demo = &small().demos[0];
    let mut io = StaticInterface::new(demo);
    let plan = greedy_decode(&planner(&policy, &options), demo.goal.id, &mut io, 0).unwrap();
    assert!(plan.steps.is_empty());
    assert!(!plan.stopped);
}

#[test]
fn planning_is_deterministic_and_reproduces_training_demos() {
    let policy = Policy::Decoder(overfit().decoder.clone());
    let options = MemoryOptions::default();
    let demo = &small().demos[3];
    let run = || {
        let mut io = InteractiveInterface::new(&demo.initial_state, 0.05, 17, None);
        greedy_decode(&planner(&policy, &options), demo.goal.id, &mut io, 30).unwrap()
    };
    let a = run();
    assert_eq!(a, run());
    assert!(a.steps.iter().all(|s| s.retrieved.len() == 5));
}

#[test]
fn disabling_replan_never_touches_retrieval() {
    let policy = Policy::Decoder(overfit().decoder.clone());
    let options = MemoryOptions {
        replan: false,
        ..MemoryOptions::default()
    };
    for demo in &small().demos {
        let mut io = InteractiveInterface::new(&demo.initial_state, 0.05, 2, None);
        let plan = greedy_decode(&planner(&policy, &options), demo.goal.id, &mut io, 20).unwrap();
        for s in &plan.steps {
            assert_eq!(s.replan_trials, 0);
            assert_eq!(s.retrieved.first().copied(), s.localized);
        }
    }
}

#[test]
fn memory_policy_without_memory_is_a_config_error() {
    let policy = Policy::Decoder(overfit().decoder.clone());
    let demo = &small().demos[0];
    let mut io = StaticInterface::new(demo);
    let p = Planner {
        policy: &policy,
        memory: None,
    };
    assert!(matches!(greedy_decode(&p, 0, &mut io, 5), Err(TamError::Config(_))));
}

#[test]
fn trace_has_one_json_line_per_step() {
    let policy = Policy::Decoder(overfit().decoder.clone());
    let options = MemoryOptions::default();
    let demo = &small().demos[5];
    let mut io = InteractiveInterface::new(&demo.initial_state, 0.05, 1, None);
    let plan = greedy_decode(&planner(&policy, &options), demo.goal.id, &mut io, 20).unwrap();
    let mut buf = Vec::new();
    plan.write_trace(&mut buf).unwrap();
    let lines: Vec<&str> = std::str::from_utf8(&buf).unwrap().lines().collect();
    assert_eq!(lines.len(), plan.steps.len());
    for (line, step) in lines.iter().zip(&plan.steps) {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in ["predicted", "executed", "success", "failure", "localized", "replan_trials", "retrieved"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        let back: PlanStep = serde_json::from_value(v).unwrap();
        assert_eq!(&back, step);
    }
}

fn plate_and_table_in_dining_room(d: &Demonstration) -> bool {
    let room = |o| d.initial_state.objects.get(&o).and_then(|s| s.room);
    room(ObjectClass::Plate) == Some(Room::DiningRoom) && room(ObjectClass::Table) == Some(Room::DiningRoom)
}

fn dining_room_set_up(apartments: std::ops::Range<u64>, config: &DemoConfig) -> Vec<Demonstration> {
    apartments
        .filter_map(|apt| {
            tamformer::homesim::demo::demonstrate(TaskTemplate::SetUpTable, apt, Room::DiningRoom, config, 8, 0)
                .unwrap()
                .filter(plate_and_table_in_dining_room)
        })
        .collect()
}

#[test]
fn set_up_table_from_the_dining_room_puts_the_plate_on_the_table() {
    // Trained on this layout in other apartments, then run live in an
    // apartment never seen in training.
    let train = DemoConfig::train();
    let mut demos = generate_demonstrations(&[TaskTemplate::WatchTv], 40, 8, &train)
        .unwrap()
        .demos;
    for mut d in dining_room_set_up(1000..2000, &train) {
        d.episode_id = demos.len();
        demos.push(d);
    }
    let tam = TamConfig {
        affordance: TrainSchedule {
            steps: 200,
            ..TamConfig::default().affordance
        },
        goal_association: TrainSchedule {
            steps: 300,
            ..TamConfig::default().goal_association
        },
        localization: TrainSchedule {
            steps: 300,
            ..TamConfig::default().localization
        },
        ..TamConfig::default()
    };
    let (model, _) = train_tam(&demos, &tam, 8).unwrap();
    let graph = build_memory(&demos, &model, MemoryProvenance::default()).unwrap();
    let options = MemoryOptions::default();
    let access = MemoryAccess {
        model: &model,
        graph: &graph,
        options: &options,
    };
    let vocab = ActionVocabulary::default();
    let examples = decoder_examples(&demos, &vocab, Some(access)).unwrap();
    let schedule = DecoderSchedule {
        epochs: 30,
        use_all: true,
        ..DecoderSchedule::default()
    };
    let (dec, _) = train_decoder(&examples, DecoderConfig::new(113, 8, access.slot_dim()), &schedule, 8).unwrap();
    let policy = Policy::Decoder(dec);

    let episode = dining_room_set_up(0..500, &DemoConfig::test())
        .into_iter()
        .next()
        .expect("an apartment with plate and table in the dining room");
    let p = Planner {
        policy: &policy,
        memory: Some(access),
    };
    let mut io = InteractiveInterface::new(&episode.initial_state, 0.05, 3, None);
    let plan = greedy_decode(&p, episode.goal.id, &mut io, 20).unwrap();
    let plate_on_table = Fact::Relation(tamformer::homesim::Relation {
        subject: ObjectClass::Plate,
        kind: RelationKind::On,
        target: Entity::Object(ObjectClass::Table),
    });
    assert!(!graph_snapshot(&episode.initial_state).contains(&plate_on_table));
    assert!(
        graph_snapshot(&io.state).contains(&plate_on_table),
        "expert {:?} plan {:?}",
        episode.actions().iter().map(ToString::to_string).collect::<Vec<_>>(),
        plan.predicted().iter().map(ToString::to_string).collect::<Vec<_>>()
    );
}
