use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;
use tamformer::homesim::{read_jsonl, Action};
use tempfile::TempDir;

const TINY: &str = r#"{
  "seed": 4,
  "homesim": { "train_episodes": 64, "test_episodes": 4 },
  "tam": {
    "dim": 16,
    "hidden": 32,
    "goal_dim": 8,
    "affordance": { "steps": 30, "learning_rate": 0.001, "batch": 8 },
    "goal_association": { "steps": 30, "learning_rate": 0.001, "batch": 32 },
    "localization": { "steps": 30, "learning_rate": 0.001, "batch": 32 }
  },
  "actiongen": {
    "dim": 16,
    "heads": 2,
    "ff": 32,
    "classifier_goal_dim": 8,
    "schedule": { "epochs": 2 }
  }
}"#;

fn tamformer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tamformer"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tiny_config(dir: &Path) -> PathBuf {
    let p = dir.join("tiny.json");
    fs::write(&p, TINY).unwrap();
    p
}

/// Runs a command against the tiny config rooted at `root`.
fn tiny(root: &Path, args: &[&str]) -> Output {
    let cfg = tiny_config(root.parent().unwrap());
    let mut all = vec!["--config", cfg.to_str().unwrap(), "--out", root.to_str().unwrap()];
    all.extend_from_slice(args);
    let o = tamformer(&all);
    assert!(o.status.code().is_some());
    o
}

fn ok(o: Output) -> Output {
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    o
}

/// One trained tiny run shared by the read-only tests.
fn trained() -> &'static Path {
    static RUN: OnceLock<(TempDir, PathBuf)> = OnceLock::new();
    let (_, root) = RUN.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let root = dir.path().join("run");
        ok(tiny(&root, &["gen-data"]));
        ok(tiny(&root, &["train"]));
        ok(tiny(&root, &["build-mem"]));
        (dir, root)
    });
    root
}

/// A private copy of the trained run, for tests that tamper with it.
fn copy_of_trained() -> (TempDir, PathBuf) {
    let dir = TempDir::new().unwrap();
    let root = dir.path().join("run");
    copy_dir(trained(), &root);
    (dir, root)
}

fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for e in fs::read_dir(from).unwrap() {
        let e = e.unwrap();
        let target = to.join(e.file_name());
        if e.file_type().unwrap().is_dir() {
            copy_dir(&e.path(), &target);
        } else {
            fs::copy(e.path(), target).unwrap();
        }
    }
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

#[test]
fn help_and_usage_errors_have_their_exit_codes() {
    assert_eq!(code(&tamformer(&["--help"])), 0);
    assert_eq!(code(&tamformer(&["--version"])), 0);
    assert_eq!(code(&tamformer(&["frobnicate"])), 1);
    assert_eq!(code(&tamformer(&["eval", "--attack-p", "lots"])), 1);
}

#[test]
fn invalid_config_exits_with_one() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{ "tam": { "k": 0 } }"#).unwrap();
    let o = tamformer(&["--config", bad.to_str().unwrap(), "config"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("k must be"), "{}", stderr(&o));
    fs::write(&bad, "{ not json").unwrap();
    assert_eq!(code(&tamformer(&["--config", bad.to_str().unwrap(), "config"])), 1);
    let missing = dir.path().join("nowhere.json");
    assert_eq!(code(&tamformer(&["--config", missing.to_str().unwrap(), "config"])), 1);
}

#[test]
fn config_materializes_every_default() {
    let dir = TempDir::new().unwrap();
    let o = ok(tiny(&dir.path().join("run"), &["--seed", "9", "config"]));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["seed"], 9);
    assert_eq!(v["tam"]["dim"], 16);
    // untouched fields keep their defaults
    assert_eq!(v["tam"]["k"], 5);
    assert_eq!(v["tam"]["replan"]["threshold"], 0.5);
    assert_eq!(v["evalharness"]["attack_p"], 0.15);
    assert_eq!(v["actiongen"]["layers"], 2);
    // and the emitted config loads back to the same thing
    let round = dir.path().join("round.json");
    fs::write(&round, &o.stdout).unwrap();
    let again = tamformer(&["--config", round.to_str().unwrap(), "config"]);
    assert_eq!(again.stdout, o.stdout);
}

#[test]
fn default_dataset_spawns_in_four_rooms_per_task() {
    let dir = TempDir::new().unwrap();
    let root = dir.path().join("run");
    ok(tamformer(&["--out", root.to_str().unwrap(), "gen-data", "--test-episodes", "0"]));
    let m = json(&root.join("data/manifest.json"));
    let rooms = m["spawn_rooms"].as_object().unwrap();
    assert_eq!(rooms.len(), 8);
    for (goal, n) in rooms {
        assert_eq!(n, 4, "{goal}");
    }
    assert_eq!(m["train_episodes"], 1600);
}

#[test]
fn regenerating_gives_the_same_dataset() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(tiny(&a, &["gen-data"]));
    ok(tiny(&b, &["gen-data"]));
    ok(tiny(&a, &["gen-data"]));
    let ma = json(&a.join("data/manifest.json"));
    assert_eq!(ma, json(&b.join("data/manifest.json")));
    assert_eq!(fs::read(a.join("data/train.jsonl")).unwrap(), fs::read(b.join("data/train.jsonl")).unwrap());
    let other = ok(tiny(&b, &["--seed", "5", "gen-data"]));
    assert!(!String::from_utf8_lossy(&other.stdout).contains(ma["train_hash"].as_str().unwrap()));
}

#[test]
fn zero_episodes_gives_an_empty_dataset() {
    let dir = TempDir::new().unwrap();
    let root = dir.path().join("run");
    ok(tiny(&root, &["gen-data", "--episodes", "0", "--test-episodes", "0"]));
    assert!(fs::read(root.join("data/train.jsonl")).unwrap().is_empty());
    let m = json(&root.join("data/manifest.json"));
    assert_eq!(m["train_episodes"], 0);
    assert_eq!(m["train_steps"], 0);
    assert_eq!(m["config"]["train_episodes"], 0);
    assert_eq!(
        m["train_hash"],
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
    );
}

#[test]
fn training_without_a_dataset_names_the_missing_file() {
    let dir = TempDir::new().unwrap();
    let root = dir.path().join("run");
    let o = tiny(&root, &["train"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains(root.join("data").to_str().unwrap()), "{}", stderr(&o));
}

#[test]
fn training_records_every_checkpoint_and_falling_curves() {
    let root = trained();
    let m = json(&root.join("checkpoints/manifest.json"));
    let ckpts = m["checkpoints"].as_object().unwrap();
    for name in [
        "encoder",
        "goal_associator",
        "localizer",
        "full",
        "without_replan",
        "naive_goal",
        "goal_only",
        "without_trans",
    ] {
        assert!(ckpts.contains_key(name), "{name}");
        assert!(root.join(format!("checkpoints/{name}.ckpt")).exists());
    }
    for e in fs::read_dir(root.join("checkpoints/curves")).unwrap() {
        let text = fs::read_to_string(e.unwrap().path()).unwrap();
        let losses: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
        assert!(losses.len() > 1);
        assert!(losses.last() < losses.first(), "{text}");
    }
}

#[test]
fn retraining_reproduces_the_checkpoints() {
    let (_dir, root) = copy_of_trained();
    let before = json(&root.join("checkpoints/manifest.json"));
    ok(tiny(&root, &["train"]));
    assert_eq!(before, json(&root.join("checkpoints/manifest.json")));
}

#[test]
fn eval_writes_one_report_per_mode_and_the_ablation_tables() {
    let (_dir, root) = copy_of_trained();
    let o = ok(tiny(&root, &["eval", "--mode", "all", "--ablation"]));
    let stdout = String::from_utf8(o.stdout).unwrap();
    // header plus six variants in four modes
    assert_eq!(stdout.lines().count(), 1 + 24);
    for mode in ["PURE_TEXT", "VIS_STATIC", "VIS_INTERACTIVE", "VIS_INTERACTIVE_ATTACK"] {
        let r = json(&root.join(format!("reports/{mode}.json")));
        assert_eq!(r.as_array().unwrap().len(), 6);
        for report in r.as_array().unwrap() {
            for key in ["dataset", "memory", "config", "policy"] {
                assert!(report["hashes"].get(key).is_some(), "{key}");
            }
        }
        assert!(root.join(format!("reports/{mode}.csv")).exists());
    }
    let table = fs::read_to_string(root.join("reports/ablation.csv")).unwrap();
    assert_eq!(table.lines().count(), 11);
    assert_eq!(
        table.lines().next().unwrap(),
        "planner,mode,lcs,executability,f1,f1_state,f1_relation"
    );

    let first = fs::read(root.join("reports/VIS_INTERACTIVE_ATTACK.json")).unwrap();
    ok(tiny(&root, &["eval", "--mode", "all", "--ablation"]));
    assert_eq!(first, fs::read(root.join("reports/VIS_INTERACTIVE_ATTACK.json")).unwrap());
}

#[test]
fn eval_accepts_mode_and_variant_lists() {
    let (_dir, root) = copy_of_trained();
    let o = ok(tiny(
        &root,
        &["eval", "--mode", "vis-static,VIS_INTERACTIVE", "--variant", "full,goal_only", "--episodes", "2"],
    ));
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 5);
    assert_eq!(code(&tiny(&root, &["eval", "--mode", "VIS_MOVING"])), 1);
    assert_eq!(code(&tiny(&root, &["eval", "--attack-p", "1.5"])), 1);
}

#[test]
fn export_has_one_row_per_node_and_round_trips_labels() {
    let root = trained();
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("emb.csv");
    let o = ok(tiny(root, &["export-embeddings", "--output", out.to_str().unwrap()]));
    let text = fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();

    let demos = read_jsonl(&fs::read(root.join("data/train.jsonl")).unwrap()[..]).unwrap();
    let nodes: usize = demos.iter().map(|d| d.steps.len()).sum();
    assert_eq!(rows.len(), nodes);
    assert!(String::from_utf8(o.stdout).unwrap().starts_with(&format!("{nodes} nodes")));

    let d = 16;
    let labels = 6;
    assert_eq!(header.len(), 2 * d + labels);
    assert!(rows.iter().all(|r| r.len() == header.len()));

    let manifest = json(&root.join("data/manifest.json"));
    let goals = manifest["spawn_rooms"].as_object().unwrap();
    for r in &rows {
        assert!(goals.contains_key(r[3]), "unknown goal {}", r[3]);
        let ep: usize = r[1].parse().unwrap();
        let step: usize = r[2].parse().unwrap();
        let demo = demos.iter().find(|x| x.episode_id == ep).unwrap();
        assert_eq!(demo.goal.text, r[3]);
        assert_eq!(demo.steps[step].action.to_string(), r[4]);
        // the room the agent stands in when the step starts
        let room = demo.steps[..step]
            .iter()
            .fold(demo.spawn_room, |room, s| match s.action {
                Action::Walk(r) => r,
                _ => room,
            });
        assert_eq!(room.to_string(), r[5]);
    }
}

#[test]
fn export_of_a_missing_memory_fails_cleanly() {
    let dir = TempDir::new().unwrap();
    let o = tamformer(&[
        "export-embeddings",
        "--memory",
        dir.path().join("none.tam").to_str().unwrap(),
        "--output",
        dir.path().join("out.csv").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("none.tam"));
}

fn flip_last_byte(path: &Path) {
    let mut bytes = fs::read(path).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    fs::write(path, bytes).unwrap();
}

#[test]
fn tampered_checkpoint_is_a_provenance_error() {
    let (_dir, root) = copy_of_trained();
    flip_last_byte(&root.join("checkpoints/full.ckpt"));
    let o = tiny(&root, &["eval", "--mode", "VIS_STATIC"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("full"));
}

#[test]
fn tampered_memory_is_a_provenance_error() {
    let (_dir, root) = copy_of_trained();
    // a memory built from other networks
    let other = tempfile::TempDir::new().unwrap();
    let other_root = other.path().join("run");
    ok(tiny(&other_root, &["--seed", "11", "gen-data"]));
    ok(tiny(&other_root, &["--seed", "11", "train"]));
    ok(tiny(&other_root, &["--seed", "11", "build-mem"]));
    fs::copy(other_root.join("memory/memory.tam"), root.join("memory/memory.tam")).unwrap();
    assert_eq!(code(&tiny(&root, &["eval", "--mode", "VIS_STATIC"])), 2);
}

#[test]
fn tampered_dataset_is_a_provenance_error() {
    let (_dir, root) = copy_of_trained();
    let path = root.join("data/train.jsonl");
    let text = fs::read_to_string(&path).unwrap();
    let fewer: String = text.lines().skip(1).map(|l| format!("{l}\n")).collect();
    fs::write(&path, fewer).unwrap();
    assert_eq!(code(&tiny(&root, &["build-mem"])), 2);
    assert_eq!(code(&tiny(&root, &["train"])), 2);
}

#[test]
fn retrained_dataset_breaks_the_old_checkpoints() {
    let (_dir, root) = copy_of_trained();
    ok(tiny(&root, &["--seed", "8", "gen-data"]));
    assert_eq!(code(&tiny(&root, &["build-mem"])), 2);
    assert_eq!(code(&tiny(&root, &["eval"])), 2);
}
