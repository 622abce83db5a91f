//! Command-line driver.
//!
//! Exit codes: 0 success, 1 output could not be written, 2 invalid
//! configuration or input files, 3 numeric failure during training or
//! rollout. Command-line flags take precedence over config values.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::config::{self, ConfigError, RunConfig};
use crate::kv::Num;
use crate::morphology::{serialize_morphology, Morphology};
use crate::network::checkpoint::{self, CheckpointError};
use crate::network::ActorCritic;
use crate::randomization::{Randomizer, DESC_DIM};
use crate::rng::{Purpose, RandomStream};
use crate::trainer::{self, EvalConfig, TrainError};

/// Environment variable that sets the worker thread count.
pub const THREADS_VAR: &str = "MORPHRL_THREADS";

#[derive(Debug, Parser)]
#[command(name = "morphrl", version, about = "Train and inspect embodiment-aware locomotion policies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a policy on the robots listed in a run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's `seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config's `output`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Roll out the deterministic policy on a robot and report per-episode metrics.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        robot: PathBuf,
        #[arg(long)]
        episodes: usize,
        #[arg(long)]
        beta: f64,
        /// Head to use for multi-head checkpoints.
        #[arg(long, default_value_t = 0)]
        robot_index: usize,
        #[command(flatten)]
        common: RolloutArgs,
    },
    /// Sample randomized embodiments of a robot and dump their description vectors.
    Generate {
        #[arg(long)]
        robot: PathBuf,
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for `embodiment_NNN.morph` files and `descriptions.csv`;
        /// everything goes to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Take randomization ranges from this run config.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write the trajectory of one deterministic rollout as CSV.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        robot: PathBuf,
        #[arg(long)]
        steps: usize,
        #[arg(long, default_value_t = 0.0)]
        beta: f64,
        #[command(flatten)]
        common: RolloutArgs,
    },
}

#[derive(Debug, Args)]
pub struct RolloutArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Take env, randomization and curriculum settings from this run config.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("checkpoint {path}: {source}")]
    Checkpoint { path: String, source: CheckpointError },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("cannot write {path}: {source}")]
    Output { path: String, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Usage(_) | CliError::Checkpoint { .. } => 2,
            CliError::Numeric(_) => 3,
            CliError::Output { .. } => 1,
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(m) => CliError::Usage(m),
            TrainError::Numeric(m) => CliError::Numeric(m),
            TrainError::Io(source) => CliError::Output {
                path: "run directory".into(),
                source,
            },
            TrainError::Checkpoint(source) => CliError::Checkpoint {
                path: "run directory".into(),
                source,
            },
        }
    }
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { config, seed, out } => cmd_train(&config, seed, out),
        Command::Eval {
            checkpoint,
            robot,
            episodes,
            beta,
            robot_index,
            common,
        } => cmd_eval(&checkpoint, &robot, episodes, beta, robot_index, &common),
        Command::Generate {
            robot,
            beta,
            count,
            seed,
            out,
            config,
        } => cmd_generate(&robot, beta, count, seed, out.as_deref(), config.as_deref()),
        Command::Inspect {
            checkpoint,
            robot,
            steps,
            beta,
            common,
        } => cmd_inspect(&checkpoint, &robot, steps, beta, &common),
    }
}

fn threads_from_env() -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_VAR) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Usage(format!("{THREADS_VAR} must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(None),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|source| CliError::Output {
        path: path.display().to_string(),
        source,
    })
}

fn emit(out: Option<&Path>, contents: &str) -> Result<(), CliError> {
    match out {
        Some(path) => write_file(path, contents),
        None => std::io::stdout().write_all(contents.as_bytes()).map_err(|source| CliError::Output {
            path: "stdout".into(),
            source,
        }),
    }
}

fn check_beta(beta: f64) -> Result<(), CliError> {
    if (0.0..=1.0).contains(&beta) {
        Ok(())
    } else {
        Err(CliError::Usage(format!("--beta must lie in [0, 1], got {beta}")))
    }
}

fn file_stem(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' }).collect()
}

/// Copies the robots into the run directory and writes the fully explicit
/// config plus the manifest.
fn write_run_files(cfg: &RunConfig, dir: &Path, config_path: &Path) -> Result<(), CliError> {
    let robots_dir = dir.join("robots");
    fs::create_dir_all(&robots_dir).map_err(|source| CliError::Output {
        path: robots_dir.display().to_string(),
        source,
    })?;
    let mut paths = Vec::new();
    for (i, r) in cfg.setup.robots.iter().chain(cfg.holdout.iter()).enumerate() {
        let rel = format!("robots/{i:02}_{}.morph", file_stem(&r.name));
        write_file(&dir.join(&rel), &serialize_morphology(r))?;
        paths.push(rel);
    }
    let rendered = config::render_run_config(cfg, &paths);
    write_file(&dir.join("run.cfg"), &rendered)?;
    let hash = |s: &str| -> String { Sha256::digest(s.as_bytes()).iter().map(|b| format!("{b:02x}")).collect() };
    let s = &cfg.setup;
    let mut manifest = String::new();
    for (k, v) in [
        ("version", env!("CARGO_PKG_VERSION").to_string()),
        ("config", config_path.display().to_string()),
        ("config_sha256", cfg.hash.clone()),
        ("run_config", "run.cfg".to_string()),
        ("run_config_sha256", hash(&rendered)),
        ("seed", s.train.seed.to_string()),
        ("architecture", s.arch.name().to_string()),
        ("robots", s.robots.iter().map(|r| r.name.as_str()).collect::<Vec<_>>().join(" ")),
        ("iterations", s.iterations().to_string()),
        ("steps_per_iteration", s.steps_per_iteration().to_string()),
        ("threads", s.train.threads.to_string()),
    ] {
        manifest.push_str(&format!("{k}: {v}\n"));
    }
    write_file(&dir.join("manifest.txt"), &manifest)
}

pub fn cmd_train(config_path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<(), CliError> {
    let mut cfg = config::load_run_config(config_path)?;
    if let Some(seed) = seed {
        cfg.setup.train.seed = seed;
    }
    if let Some(out) = out {
        cfg.output = Some(out);
    }
    if let Some(threads) = threads_from_env()? {
        cfg.setup.train.threads = threads;
    }
    let dir = cfg
        .output
        .clone()
        .ok_or_else(|| CliError::Usage("no output directory: pass --out or set `output` in the config".into()))?;
    fs::create_dir_all(&dir).map_err(|source| CliError::Output {
        path: dir.display().to_string(),
        source,
    })?;
    write_run_files(&cfg, &dir, config_path)?;
    let names: Vec<String> = cfg.setup.robots.iter().map(|r| r.name.clone()).collect();
    let report = trainer::train(cfg.setup, Some(&dir))?;
    for (name, beta) in names.iter().zip(&report.final_betas) {
        eprintln!("{name}: beta {}", Num(*beta));
    }
    eprintln!("mean beta {} -> {}", Num(report.final_mean_beta()), dir.display());
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Box<dyn ActorCritic>, CliError> {
    checkpoint::load(path).map_err(|source| CliError::Checkpoint {
        path: path.display().to_string(),
        source,
    })
}

fn eval_config(episodes: usize, beta: f64, args: &RolloutArgs) -> Result<EvalConfig, CliError> {
    check_beta(beta)?;
    let mut cfg = EvalConfig::new(episodes, beta, args.seed);
    if let Some(path) = &args.config {
        let run = config::load_run_config(path)?;
        cfg.env = run.setup.env;
        cfg.randomizer = run.setup.randomizer;
        cfg.curriculum = run.setup.curriculum;
    }
    Ok(cfg)
}

pub fn cmd_eval(
    checkpoint_path: &Path,
    robot_path: &Path,
    episodes: usize,
    beta: f64,
    robot_index: usize,
    args: &RolloutArgs,
) -> Result<(), CliError> {
    let cfg = eval_config(episodes, beta, args)?;
    let policy = load_checkpoint(checkpoint_path)?;
    let robot = Arc::new(config::load_robot(robot_path)?);
    let metrics = trainer::evaluate_zero_shot(policy.as_ref(), robot_index, robot, &cfg)?;
    emit(args.out.as_deref(), &metrics.csv())?;
    if metrics.episodes > 0 {
        eprintln!(
            "{} episodes: success rate {}, mean return {}, mean tracking error {}",
            metrics.episodes,
            Num(metrics.success_rate),
            Num(metrics.mean_return),
            Num(metrics.mean_tracking_error)
        );
    }
    Ok(())
}

pub fn cmd_inspect(checkpoint_path: &Path, robot_path: &Path, steps: usize, beta: f64, args: &RolloutArgs) -> Result<(), CliError> {
    let cfg = eval_config(0, beta, args)?;
    let policy = load_checkpoint(checkpoint_path)?;
    let robot = Arc::new(config::load_robot(robot_path)?);
    let csv = trainer::inspect_trajectory(policy.as_ref(), robot, steps, &cfg)?;
    emit(args.out.as_deref(), &csv)
}

/// Serialized visible robots, one per embodiment, and a CSV of all
/// description vectors keyed by embodiment and joint.
pub fn generate_embodiments(base: Arc<Morphology>, randomizer: &Randomizer, beta: f64, count: usize, seed: u64) -> (Vec<String>, String) {
    let mut csv = String::from("embodiment,joint");
    for k in 0..DESC_DIM {
        csv.push_str(&format!(",d{k}"));
    }
    csv.push('\n');
    let mut robots = Vec::with_capacity(count);
    for i in 0..count {
        let mut stream = RandomStream::for_slot(seed, 0, i as u64, Purpose::Embodiment);
        let e = randomizer.sample_embodiment(&base, beta, &mut stream);
        robots.push(serialize_morphology(&e.visible_morphology()));
        for (j, d) in e.descriptions.iter().enumerate() {
            csv.push_str(&format!("{i},{j}"));
            for v in d {
                csv.push_str(&format!(",{}", Num(*v)));
            }
            csv.push('\n');
        }
    }
    (robots, csv)
}

pub fn cmd_generate(robot_path: &Path, beta: f64, count: usize, seed: u64, out: Option<&Path>, config_path: Option<&Path>) -> Result<(), CliError> {
    check_beta(beta)?;
    let randomizer = match config_path {
        Some(p) => config::load_run_config(p)?.setup.randomizer,
        None => Randomizer::default(),
    };
    let base = Arc::new(config::load_robot(robot_path)?);
    let (robots, csv) = generate_embodiments(base, &randomizer, beta, count, seed);
    match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|source| CliError::Output {
                path: dir.display().to_string(),
                source,
            })?;
            for (i, text) in robots.iter().enumerate() {
                write_file(&dir.join(format!("embodiment_{i:03}.morph")), text)?;
            }
            write_file(&dir.join("descriptions.csv"), &csv)
        }
        None => {
            let mut text = String::new();
            for (i, r) in robots.iter().enumerate() {
                text.push_str(&format!("# embodiment {i}\n{r}\n"));
            }
            text.push_str("# descriptions\n");
            text.push_str(&csv);
            emit(None, &text)
        }
    }
}
