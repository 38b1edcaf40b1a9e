//! Reproducible runs over files: dataset generation, training, memory
//! building, evaluation and embedding export.
//!
//! Every artifact records the hashes of its inputs, and each step checks
//! them before it reads anything, so a report can always be traced back to
//! one dataset and one set of checkpoints.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::actiongen::{
    decoder_examples, train_classifier, train_decoder, ActionVocabulary, ClassifierConfig,
    DecoderConfig, DecoderSchedule, MemoryAccess, MemoryOptions, Policy,
};
use crate::error::{Result, TamError};
use crate::evalharness::{
    AblationRow, AblationTable, EvalMode, EvalOptions, EvalReport, PlannerSet, Variant, CSV_HEADER,
};
use crate::homesim::{generate_demonstrations, read_jsonl, write_jsonl, DemoConfig, Demonstration, TaskTemplate};
use crate::tam::memory::{model_hash, sha256_hex};
use crate::tam::{build_memory, train_tam, MemoryProvenance, TamConfig, TamGraph, TamModel, TamNet, TamReports};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    /// Where each command writes the effective config.
    pub config: PathBuf,
    /// Directory with `train.jsonl`, `test.jsonl` and `manifest.json`.
    pub dataset: PathBuf,
    pub checkpoints: PathBuf,
    /// Memory file.
    pub memory: PathBuf,
    pub reports: PathBuf,
}

impl Paths {
    pub fn under(root: &Path) -> Self {
        Paths {
            config: root.join("config.json"),
            dataset: root.join("data"),
            checkpoints: root.join("checkpoints"),
            memory: root.join("memory").join("memory.tam"),
            reports: root.join("reports"),
        }
    }
}

impl Default for Paths {
    fn default() -> Self {
        Paths::under(Path::new("run"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub train_episodes: usize,
    pub test_episodes: usize,
    pub train: DemoConfig,
    pub test: DemoConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train_episodes: 1600,
            test_episodes: 50,
            train: DemoConfig::train(),
            test: DemoConfig::test(),
        }
    }
}

/// Decoder shape and training schedule shared by every policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff: usize,
    pub max_len: usize,
    pub dropout: f64,
    /// Goal embedding width of the decoder-free classifier.
    pub classifier_goal_dim: usize,
    pub schedule: DecoderSchedule,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            dim: 64,
            heads: 4,
            layers: 2,
            ff: 256,
            max_len: 24,
            dropout: 0.0,
            classifier_goal_dim: 16,
            schedule: DecoderSchedule {
                epochs: 12,
                history_noise: 0.15,
                ..DecoderSchedule::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub sigma: f64,
    pub attack_p: f64,
    pub lcs_counts_attacked: bool,
    /// Evaluate only the first this many test episodes.
    pub episodes: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            sigma: 0.05,
            attack_p: 0.15,
            lcs_counts_attacked: false,
            episodes: None,
        }
    }
}

/// Everything a run depends on. Written next to the artifacts with every
/// default filled in.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub homesim: DataConfig,
    pub tam: TamConfig,
    pub actiongen: PolicyConfig,
    pub evalharness: EvalConfig,
}

/// Seeds of the individual stages, all offsets of the global seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Seeds {
    pub train_data: u64,
    pub test_data: u64,
    pub eval: u64,
    pub tam: u64,
    pub full: u64,
    pub naive_goal: u64,
    pub goal_only: u64,
    pub without_trans: u64,
    pub without_replan: u64,
}

impl RunConfig {
    pub fn with_root(root: &Path) -> Self {
        RunConfig {
            paths: Paths::under(root),
            ..RunConfig::default()
        }
    }

    pub fn seeds(&self) -> Seeds {
        let s = |o: u64| self.seed.wrapping_add(o);
        Seeds {
            train_data: s(1),
            test_data: s(2),
            eval: s(5),
            tam: s(7),
            full: s(11),
            naive_goal: s(12),
            goal_only: s(13),
            without_trans: s(14),
            without_replan: s(15),
        }
    }

    /// Memory lookup settings, taken from the memory config.
    pub fn memory_options(&self) -> MemoryOptions {
        MemoryOptions {
            k: self.tam.k,
            candidate_pool: self.tam.candidate_pool,
            replan_config: self.tam.replan.clone(),
            ..MemoryOptions::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.tam.replan.validate()?;
        if self.tam.k == 0 {
            return Err(TamError::Config("k must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.evalharness.attack_p) {
            return Err(TamError::Config(format!(
                "attack probability {} outside [0, 1]",
                self.evalharness.attack_p
            )));
        }
        if !(0.0..=1.0).contains(&self.actiongen.schedule.history_noise) {
            return Err(TamError::Config("history noise outside [0, 1]".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: RunConfig = read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Hash of everything but the paths, so a run moved to another
    /// directory keeps its lineage.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        v["paths"] = serde_json::Value::Null;
        sha256_hex(v.to_string().as_bytes())
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| TamError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| TamError::format(path.display().to_string(), e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json_to<W: Write, T: Serialize>(mut w: W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| TamError::format("json", e))?;
    w.write_all(b"\n").map_err(|e| TamError::io("<json>", e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = Vec::new();
    write_json_to(&mut bytes, value)?;
    write_file(path, &bytes)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| TamError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| TamError::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| TamError::io(path, e))
}

pub fn file_hash(path: &Path) -> Result<String> {
    Ok(sha256_hex(&read_file(path)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub train_hash: String,
    pub test_hash: String,
    pub train_episodes: usize,
    pub test_episodes: usize,
    pub train_steps: usize,
    pub resampled: usize,
    /// Distinct spawn rooms per template in the training set.
    pub spawn_rooms: BTreeMap<String, usize>,
    pub config: DataConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub train_accuracy: f64,
    pub held_out_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainManifest {
    pub dataset_hash: String,
    pub tam_hash: String,
    /// Memory the policies were trained against.
    pub memory_hash: String,
    pub checkpoints: BTreeMap<String, String>,
    pub tam: TamReports,
    pub policies: BTreeMap<String, PolicySummary>,
    pub config_hash: String,
}

impl Paths {
    pub fn train_set(&self) -> PathBuf {
        self.dataset.join("train.jsonl")
    }

    pub fn test_set(&self) -> PathBuf {
        self.dataset.join("test.jsonl")
    }

    pub fn dataset_manifest(&self) -> PathBuf {
        self.dataset.join("manifest.json")
    }

    pub fn train_manifest(&self) -> PathBuf {
        self.checkpoints.join("manifest.json")
    }

    pub fn checkpoint(&self, name: &str) -> PathBuf {
        self.checkpoints.join(format!("{name}.ckpt"))
    }
}

/// Checkpoint names of the three memory networks.
fn net_name(net: TamNet) -> &'static str {
    net.name()
}

/// Checkpoint name of the policy behind each variant.
pub fn policy_name(variant: Variant) -> &'static str {
    match variant {
        Variant::PixelLocalize => "full",
        v => v.name(),
    }
}

const POLICIES: [Variant; 5] = [
    Variant::Full,
    Variant::WithoutReplan,
    Variant::NaiveGoal,
    Variant::GoalOnly,
    Variant::WithoutTrans,
];

pub fn cmd_gen_data(cfg: &RunConfig) -> Result<DatasetManifest> {
    let seeds = cfg.seeds();
    let templates = TaskTemplate::ALL;
    let train = generate_demonstrations(&templates, cfg.homesim.train_episodes, seeds.train_data, &cfg.homesim.train)?;
    let test = generate_demonstrations(&templates, cfg.homesim.test_episodes, seeds.test_data, &cfg.homesim.test)?;
    let p = &cfg.paths;
    let mut bytes = Vec::new();
    write_jsonl(&train.demos, &mut bytes)?;
    write_file(&p.train_set(), &bytes)?;
    let train_hash = sha256_hex(&bytes);
    bytes.clear();
    write_jsonl(&test.demos, &mut bytes)?;
    write_file(&p.test_set(), &bytes)?;
    let test_hash = sha256_hex(&bytes);

    let mut rooms: BTreeMap<String, Vec<_>> = BTreeMap::new();
    for d in &train.demos {
        let r = rooms.entry(d.goal.text.clone()).or_default();
        if !r.contains(&d.initial_state.agent.room) {
            r.push(d.initial_state.agent.room);
        }
    }
    let manifest = DatasetManifest {
        seed: cfg.seed,
        train_hash,
        test_hash,
        train_episodes: train.demos.len(),
        test_episodes: test.demos.len(),
        train_steps: train.demos.iter().map(|d| d.steps.len()).sum(),
        resampled: train.resampled + test.resampled,
        spawn_rooms: rooms.into_iter().map(|(k, v)| (k, v.len())).collect(),
        config: cfg.homesim.clone(),
    };
    write_json(&p.dataset_manifest(), &manifest)?;
    info!(
        "wrote {} training and {} test episodes",
        manifest.train_episodes, manifest.test_episodes
    );
    Ok(manifest)
}

/// Training demonstrations after checking them against the dataset manifest.
fn checked_dataset(cfg: &RunConfig) -> Result<(DatasetManifest, Vec<Demonstration>)> {
    let p = &cfg.paths;
    let manifest: DatasetManifest = read_json(&p.dataset_manifest())?;
    let bytes = read_file(&p.train_set())?;
    let hash = sha256_hex(&bytes);
    if hash != manifest.train_hash {
        return Err(TamError::Provenance(format!(
            "{} has hash {hash}, the dataset manifest expects {}",
            p.train_set().display(),
            manifest.train_hash
        )));
    }
    Ok((manifest, read_jsonl(&bytes[..])?))
}

fn curve_csv(curve: &[f64]) -> Vec<u8> {
    let mut out = b"step,loss\n".to_vec();
    for (i, l) in curve.iter().enumerate() {
        writeln!(out, "{i},{l:.9}").expect("write to vec");
    }
    out
}

fn summary(curve: &[f64], train_accuracy: f64, held_out_accuracy: Option<f64>) -> PolicySummary {
    PolicySummary {
        initial_loss: curve.first().copied().unwrap_or(f64::NAN),
        final_loss: curve.last().copied().unwrap_or(f64::NAN),
        train_accuracy,
        held_out_accuracy,
    }
}

/// Trains the memory networks, builds the memory in process and trains
/// every policy against it.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainManifest> {
    cfg.validate()?;
    let (manifest, demos) = checked_dataset(cfg)?;
    let seeds = cfg.seeds();
    let p = &cfg.paths;
    let curves = p.checkpoints.join("curves");
    let mut checkpoints = BTreeMap::new();

    let (model, tam) = train_tam(&demos, &cfg.tam, seeds.tam)?;
    info!(
        "memory networks: centroid accuracy {:.3}, association accuracy {:.3}, adjacency AUC {:.3}",
        tam.affordance.centroid_accuracy,
        tam.goal_association.held_out_accuracy,
        tam.localization.held_out_auc
    );
    for net in TamNet::ALL {
        let bytes = model.checkpoint(net)?;
        write_file(&p.checkpoint(net_name(net)), &bytes)?;
        checkpoints.insert(net_name(net).to_string(), sha256_hex(&bytes));
    }
    write_file(&curves.join("encoder.csv"), &curve_csv(&tam.affordance.loss_curve))?;
    write_file(&curves.join("associator.csv"), &curve_csv(&tam.goal_association.loss_curve))?;
    write_file(&curves.join("localizer.csv"), &curve_csv(&tam.localization.loss_curve))?;

    let tam_hash = model_hash(&model)?;
    let graph = build_memory(
        &demos,
        &model,
        MemoryProvenance {
            dataset_hash: manifest.train_hash.clone(),
            checkpoint_hash: tam_hash.clone(),
        },
    )?;
    let memory_hash = graph.hash()?;

    let vocab = ActionVocabulary::default();
    let slot_dim = graph.nodes[0].value().len();
    let a = &cfg.actiongen;
    let base = DecoderConfig {
        dim: a.dim,
        heads: a.heads,
        layers: a.layers,
        ff: a.ff,
        max_len: a.max_len,
        dropout: a.dropout,
        ..DecoderConfig::new(vocab.len(), TaskTemplate::ALL.len(), slot_dim)
    };
    let full_opts = cfg.memory_options();
    let mut policies = BTreeMap::new();
    let mut full_examples = None;
    for variant in POLICIES {
        let name = policy_name(variant);
        let opts = match variant {
            Variant::WithoutReplan => MemoryOptions {
                replan: false,
                ..full_opts.clone()
            },
            Variant::NaiveGoal => MemoryOptions {
                goal_aware: false,
                ..full_opts.clone()
            },
            _ => full_opts.clone(),
        };
        let access = MemoryAccess {
            model: &model,
            graph: &graph,
            options: &opts,
        };
        let (policy, curve, s) = match variant {
            Variant::WithoutTrans => {
                let examples = match full_examples.take() {
                    Some(e) => e,
                    None => decoder_examples(&demos, &vocab, Some(access))?,
                };
                let config = ClassifierConfig {
                    goal_dim: a.classifier_goal_dim,
                    vocab: vocab.len(),
                    goals: TaskTemplate::ALL.len(),
                    slot_dim,
                };
                let (lin, r) = train_classifier(&examples, config, &a.schedule, seeds.without_trans)?;
                let s = summary(&r.loss_curve, r.train_accuracy, r.held_out_accuracy);
                (Policy::Linear(lin), r.loss_curve, s)
            }
            _ => {
                let (config, memory, seed) = match variant {
                    Variant::Full => (base.clone(), Some(access), seeds.full),
                    Variant::WithoutReplan => (base.clone(), Some(access), seeds.without_replan),
                    Variant::NaiveGoal => (
                        DecoderConfig {
                            use_goal: false,
                            ..base.clone()
                        },
                        Some(access),
                        seeds.naive_goal,
                    ),
                    _ => (
                        DecoderConfig {
                            use_memory: false,
                            ..base.clone()
                        },
                        None,
                        seeds.goal_only,
                    ),
                };
                let examples = decoder_examples(&demos, &vocab, memory)?;
                let (dec, r) = train_decoder(&examples, config, &a.schedule, seed)?;
                if variant == Variant::Full {
                    full_examples = Some(examples);
                }
                let s = summary(&r.loss_curve, r.train_accuracy, r.held_out_accuracy);
                (Policy::Decoder(dec), r.loss_curve, s)
            }
        };
        info!(
            "policy {name}: train accuracy {:.3}, held-out {:?}",
            s.train_accuracy, s.held_out_accuracy
        );
        let bytes = policy.checkpoint()?;
        write_file(&p.checkpoint(name), &bytes)?;
        write_file(&curves.join(format!("{name}.csv")), &curve_csv(&curve))?;
        checkpoints.insert(name.to_string(), sha256_hex(&bytes));
        policies.insert(name.to_string(), s);
    }

    let out = TrainManifest {
        dataset_hash: manifest.train_hash,
        tam_hash,
        memory_hash,
        checkpoints,
        tam,
        policies,
        config_hash: cfg.hash(),
    };
    write_json(&p.train_manifest(), &out)?;
    Ok(out)
}

fn load_model(cfg: &RunConfig, train: &TrainManifest) -> Result<TamModel> {
    let mut bytes = Vec::new();
    for net in TamNet::ALL {
        let path = cfg.paths.checkpoint(net_name(net));
        let b = read_file(&path)?;
        check_checkpoint(train, net_name(net), &path, &b)?;
        bytes.push(b);
    }
    TamModel::from_checkpoints(&bytes[0][..], &bytes[1][..], &bytes[2][..])
}

fn check_checkpoint(train: &TrainManifest, name: &str, path: &Path, bytes: &[u8]) -> Result<()> {
    let hash = sha256_hex(bytes);
    match train.checkpoints.get(name) {
        Some(h) if *h == hash => Ok(()),
        Some(h) => Err(TamError::Provenance(format!(
            "{} has hash {hash}, training recorded {h}",
            path.display()
        ))),
        None => Err(TamError::Provenance(format!("training recorded no checkpoint named {name}"))),
    }
}

fn checked_training(cfg: &RunConfig, dataset: &DatasetManifest) -> Result<TrainManifest> {
    let train: TrainManifest = read_json(&cfg.paths.train_manifest())?;
    if train.dataset_hash != dataset.train_hash {
        return Err(TamError::Provenance(format!(
            "checkpoints were trained on dataset {}, the dataset manifest has {}",
            train.dataset_hash, dataset.train_hash
        )));
    }
    Ok(train)
}

/// Rebuilds the memory from the dataset and the trained networks.
pub fn cmd_build_mem(cfg: &RunConfig) -> Result<TamGraph> {
    let (dataset, demos) = checked_dataset(cfg)?;
    let train = checked_training(cfg, &dataset)?;
    let model = load_model(cfg, &train)?;
    let tam_hash = model_hash(&model)?;
    let graph = build_memory(
        &demos,
        &model,
        MemoryProvenance {
            dataset_hash: dataset.train_hash,
            checkpoint_hash: tam_hash,
        },
    )?;
    let bytes = graph.to_bytes()?;
    let hash = sha256_hex(&bytes);
    if hash != train.memory_hash {
        return Err(TamError::Provenance(format!(
            "rebuilt memory has hash {hash}, the policies were trained against {}",
            train.memory_hash
        )));
    }
    write_file(&cfg.paths.memory, &bytes)?;
    info!("memory with {} nodes written to {}", graph.len(), cfg.paths.memory.display());
    Ok(graph)
}

/// Trained planners plus the hashes of everything they came from.
pub struct LoadedRun {
    pub planners: PlannerSet,
    pub test: Vec<Demonstration>,
    pub hashes: BTreeMap<String, String>,
}

/// Loads memory, networks, policies and the test set, refusing any
/// artifact whose lineage does not match.
pub fn load_run(cfg: &RunConfig) -> Result<LoadedRun> {
    let p = &cfg.paths;
    let dataset: DatasetManifest = read_json(&p.dataset_manifest())?;
    let train = checked_training(cfg, &dataset)?;
    let test_bytes = read_file(&p.test_set())?;
    let test_hash = sha256_hex(&test_bytes);
    if test_hash != dataset.test_hash {
        return Err(TamError::Provenance(format!(
            "{} has hash {test_hash}, the dataset manifest expects {}",
            p.test_set().display(),
            dataset.test_hash
        )));
    }
    let model = load_model(cfg, &train)?;
    let memory_bytes = read_file(&p.memory)?;
    let graph = TamGraph::read(&memory_bytes[..])?;
    let memory_hash = sha256_hex(&memory_bytes);
    let tam_hash = model_hash(&model)?;
    if graph.provenance.dataset_hash != train.dataset_hash || graph.provenance.checkpoint_hash != tam_hash {
        return Err(TamError::Provenance(format!(
            "{} was built from other data or networks",
            p.memory.display()
        )));
    }
    if memory_hash != train.memory_hash {
        return Err(TamError::Provenance(format!(
            "{} has hash {memory_hash}, the policies were trained against {}",
            p.memory.display(),
            train.memory_hash
        )));
    }
    let mut policies = BTreeMap::new();
    for variant in POLICIES {
        let name = policy_name(variant);
        let path = p.checkpoint(name);
        let bytes = read_file(&path)?;
        check_checkpoint(&train, name, &path, &bytes)?;
        policies.insert(variant, Policy::from_checkpoint(&bytes)?);
    }
    let mut take = |v| policies.remove(&v).expect("every policy loaded");
    let planners = PlannerSet {
        model,
        graph,
        memory: cfg.memory_options(),
        full: take(Variant::Full),
        without_replan: take(Variant::WithoutReplan),
        naive_goal: take(Variant::NaiveGoal),
        goal_only: take(Variant::GoalOnly),
        linear: take(Variant::WithoutTrans),
    };
    let mut test = read_jsonl(&test_bytes[..])?;
    if let Some(n) = cfg.evalharness.episodes {
        test.truncate(n);
    }
    let hashes = BTreeMap::from([
        ("dataset".to_string(), dataset.train_hash),
        ("test".to_string(), test_hash),
        ("memory".to_string(), memory_hash),
        ("networks".to_string(), tam_hash),
        ("config".to_string(), cfg.hash()),
    ]);
    Ok(LoadedRun { planners, test, hashes })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOutput {
    pub reports: Vec<EvalReport>,
    pub ablation: Option<AblationTable>,
}

impl EvalOutput {
    pub fn get(&self, variant: Variant, mode: EvalMode) -> Option<&EvalReport> {
        self.reports
            .iter()
            .find(|r| r.planner == variant.name() && r.mode == mode)
    }
}

fn write_reports(path: &Path, reports: &[&EvalReport]) -> Result<()> {
    write_json(&path.with_extension("json"), &reports)?;
    let mut csv = Vec::new();
    writeln!(csv, "{CSV_HEADER}").expect("write to vec");
    for r in reports {
        writeln!(csv, "{}", r.csv_row()).expect("write to vec");
    }
    write_file(&path.with_extension("csv"), &csv)
}

/// Evaluates `variants` in `modes`, plus the ablation table when asked.
/// Writes one JSON and one CSV file per mode, and `ablation.{json,csv}`.
pub fn cmd_eval(cfg: &RunConfig, modes: &[EvalMode], variants: &[Variant], ablation: bool) -> Result<EvalOutput> {
    cfg.validate()?;
    let run = load_run(cfg)?;
    let e = &cfg.evalharness;
    let seed = cfg.seeds().eval;
    let mut done: BTreeMap<(EvalMode, Variant), EvalReport> = BTreeMap::new();
    let mut wanted: Vec<(EvalMode, Variant)> = Vec::new();
    for &m in modes {
        wanted.extend(variants.iter().map(|&v| (m, v)));
    }
    if ablation {
        for m in [EvalMode::VisInteractive, EvalMode::VisInteractiveAttack] {
            wanted.extend(Variant::ABLATIONS.iter().map(|&v| (m, v)));
        }
    }
    for (mode, variant) in wanted {
        if done.contains_key(&(mode, variant)) {
            continue;
        }
        let options = EvalOptions {
            sigma: e.sigma,
            lcs_counts_attacked: e.lcs_counts_attacked,
            ..EvalOptions::for_mode(mode, seed, e.attack_p)
        };
        let mut report = run.planners.evaluate(variant, &run.test, mode, &options)?;
        report.hashes = run.hashes.clone();
        report.hashes.insert(
            "policy".into(),
            file_hash(&cfg.paths.checkpoint(policy_name(variant)))?,
        );
        info!("{}", report.csv_row());
        done.insert((mode, variant), report);
    }

    let mut reports = Vec::new();
    for &m in modes {
        let rows: Vec<&EvalReport> = variants.iter().map(|&v| &done[&(m, v)]).collect();
        write_reports(&cfg.paths.reports.join(m.name()), &rows)?;
        reports.extend(rows.into_iter().cloned());
    }
    let ablation = ablation.then(|| {
        let rows = [EvalMode::VisInteractive, EvalMode::VisInteractiveAttack]
            .into_iter()
            .flat_map(|m| Variant::ABLATIONS.into_iter().map(move |v| (m, v)))
            .map(|(m, v)| AblationRow {
                variant: v,
                report: done[&(m, v)].clone(),
            })
            .collect();
        AblationTable { rows }
    });
    if let Some(t) = &ablation {
        write_json(&cfg.paths.reports.join("ablation.json"), t)?;
        let mut csv = Vec::new();
        t.write_csv(&mut csv)?;
        write_file(&cfg.paths.reports.join("ablation.csv"), &csv)?;
    }
    Ok(EvalOutput { reports, ablation })
}

/// One CSV row per memory node: labels, then the key and the value
/// embedding `v_a`. Returns the row count.
pub fn cmd_export_embeddings(memory: &Path, out: &Path) -> Result<usize> {
    let graph = TamGraph::read(&read_file(memory)?[..])?;
    let mut csv = Vec::new();
    let (kd, vd) = graph.nodes.first().map_or((0, 0), |n| (n.key.len(), n.value_assoc.len()));
    write!(csv, "node,episode,step,goal,action,room").expect("write to vec");
    for i in 0..kd {
        write!(csv, ",key_{i}").expect("write to vec");
    }
    for i in 0..vd {
        write!(csv, ",value_{i}").expect("write to vec");
    }
    csv.push(b'\n');
    for (id, n) in graph.nodes.iter().enumerate() {
        let goal = TaskTemplate::from_goal_id(n.goal).map_or_else(|| n.goal.to_string(), |t| t.text().to_string());
        write!(csv, "{id},{},{},{goal},{},{}", n.episode_id, n.step_index, n.action, n.room).expect("write to vec");
        for x in n.key.iter().chain(&n.value_assoc) {
            write!(csv, ",{x}").expect("write to vec");
        }
        csv.push(b'\n');
    }
    write_file(out, &csv)?;
    Ok(graph.len())
}

/// Writes the effective config to its place among the artifacts.
pub fn emit_config(cfg: &RunConfig) -> Result<()> {
    write_json(&cfg.paths.config, cfg)
}

/// Runs every step with every variant in every mode.
pub fn run_all(cfg: &RunConfig) -> Result<EvalOutput> {
    cfg.validate()?;
    emit_config(cfg)?;
    cmd_gen_data(cfg)?;
    cmd_train(cfg)?;
    cmd_build_mem(cfg)?;
    cmd_eval(cfg, &EvalMode::ALL, &Variant::ALL, true)
}
