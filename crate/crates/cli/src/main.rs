//! `tamformer` command line.
//!
//! Exit codes: 0 on success, 1 on usage or configuration errors, 2 when an
//! artifact's lineage does not match.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;
use tamformer::evalharness::{EvalMode, Variant};
use tamformer::pipeline::{self, Paths, RunConfig};
use tamformer::TamError;

#[derive(Parser, Debug)]
#[command(name = "tamformer", version, about = "Action planning with a topological affordance memory")]
struct Cli {
    /// JSON run config; defaults are used for anything missing.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root directory for every artifact; overrides the paths in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the effective config as JSON.
    Config,
    /// Generate training and test demonstrations.
    GenData {
        /// Training episodes.
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        test_episodes: Option<usize>,
    },
    /// Train the memory networks and every policy.
    Train {
        /// Decoder epochs.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Build the memory file from the dataset and trained networks.
    BuildMem,
    /// Evaluate planners and write reports.
    Eval(EvalArgs),
    /// Write node labels and embeddings of a memory file as CSV.
    ExportEmbeddings {
        /// Memory file; defaults to the one in the config.
        #[arg(long)]
        memory: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
    /// gen-data, train, build-mem and a full evaluation.
    Run,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// PURE_TEXT, VIS_STATIC, VIS_INTERACTIVE, VIS_INTERACTIVE_ATTACK or all.
    #[arg(long, default_value = "all")]
    mode: String,
    /// Planner variant or all.
    #[arg(long, default_value = "all")]
    variant: String,
    #[arg(long)]
    attack_p: Option<f64>,
    /// Evaluate only the first N test episodes.
    #[arg(long)]
    episodes: Option<usize>,
    /// Also write the ablation table.
    #[arg(long)]
    ablation: bool,
    /// Score the executed replacement on attacked steps.
    #[arg(long)]
    lcs_counts_attacked: bool,
}

fn parse_all<T: std::str::FromStr<Err = TamError> + Copy>(s: &str, all: &[T]) -> Result<Vec<T>, TamError> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(all.to_vec());
    }
    s.split(',').map(|x| x.trim().parse()).collect()
}

fn config(cli: &Cli) -> Result<RunConfig, TamError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.paths = Paths::under(out);
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match &cli.command {
        Command::GenData { episodes, test_episodes } => {
            if let Some(n) = episodes {
                cfg.homesim.train_episodes = *n;
            }
            if let Some(n) = test_episodes {
                cfg.homesim.test_episodes = *n;
            }
        }
        Command::Train { epochs: Some(e) } => cfg.actiongen.schedule.epochs = *e,
        Command::Eval(a) => {
            if let Some(p) = a.attack_p {
                cfg.evalharness.attack_p = p;
            }
            if a.episodes.is_some() {
                cfg.evalharness.episodes = a.episodes;
            }
            cfg.evalharness.lcs_counts_attacked |= a.lcs_counts_attacked;
        }
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), TamError> {
    let cfg = config(cli)?;
    if !matches!(cli.command, Command::Config | Command::ExportEmbeddings { .. }) {
        pipeline::emit_config(&cfg)?;
    }
    match &cli.command {
        Command::Config => {
            print!("{}", serde_json_pretty(&cfg));
        }
        Command::GenData { .. } => {
            let m = pipeline::cmd_gen_data(&cfg)?;
            println!("dataset {} ({} train, {} test episodes)", m.train_hash, m.train_episodes, m.test_episodes);
        }
        Command::Train { .. } => {
            let m = pipeline::cmd_train(&cfg)?;
            for (name, hash) in &m.checkpoints {
                println!("{name} {hash}");
            }
        }
        Command::BuildMem => {
            let g = pipeline::cmd_build_mem(&cfg)?;
            println!("memory {} ({} nodes)", g.hash()?, g.len());
        }
        Command::Eval(a) => {
            let modes = parse_all(&a.mode, &EvalMode::ALL)?;
            let variants = parse_all(&a.variant, &Variant::ALL)?;
            let out = pipeline::cmd_eval(&cfg, &modes, &variants, a.ablation)?;
            println!("{}", tamformer::evalharness::CSV_HEADER);
            for r in &out.reports {
                println!("{}", r.csv_row());
            }
        }
        Command::ExportEmbeddings { memory, output } => {
            let memory = memory.clone().unwrap_or(cfg.paths.memory.clone());
            let n = pipeline::cmd_export_embeddings(&memory, output)?;
            println!("{n} nodes written to {}", output.display());
        }
        Command::Run => {
            let out = pipeline::run_all(&cfg)?;
            println!("{}", tamformer::evalharness::CSV_HEADER);
            for r in &out.reports {
                println!("{}", r.csv_row());
            }
        }
    }
    Ok(())
}

fn serde_json_pretty(cfg: &RunConfig) -> String {
    let mut buf = Vec::new();
    pipeline::write_json_to(&mut buf, cfg).expect("config serializes");
    String::from_utf8(buf).expect("json is utf-8")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ TamError::Provenance(_)) => {
            error!("{e}");
            ExitCode::from(2)
        }
        Err(e) => {
            error!("{e}");
            ExitCode::from(1)
        }
    }
}
