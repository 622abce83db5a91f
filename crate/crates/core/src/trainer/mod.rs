//! Multi-robot clipped policy-gradient training.
//!
//! Each base morphology owns a group of environments and its own curriculum
//! coefficient. Rollouts are stored per robot so every forward batch has a
//! single joint count; a minibatch takes one chunk of every robot's
//! shuffled samples and sums the per-robot gradients in robot order.

pub mod adam;
pub mod buffer;
pub mod ppo;
pub mod rollout;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::curriculum::{CurriculumState, SuccessThresholds};
use crate::env::{self, EnvConfig};
use crate::morphology::Morphology;
use crate::network::baselines::{BaselineConfig, MultiHeadPolicy, ZeroPaddingPolicy};
use crate::network::checkpoint;
use crate::network::urma::{UrmaConfig, UrmaPolicy};
use crate::network::ActorCritic;
use crate::randomization::Randomizer;
use crate::rng::{Purpose, RandomStream};

pub use adam::Adam;
pub use buffer::{compute_gae, RobotSegment, RolloutBuffer};
pub use ppo::{update_policy, UpdateStats};
pub use rollout::{FinishedEpisode, RobotGroup};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Checkpoint(#[from] checkpoint::CheckpointError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub envs_per_robot: usize,
    pub rollout_length: usize,
    pub epochs: usize,
    pub minibatches: usize,
    pub clip_epsilon: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub learning_rate: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub total_steps: u64,
    pub seed: u64,
    /// Write a checkpoint every this many iterations; 0 writes only the final one.
    pub checkpoint_every: usize,
    /// Worker threads for rollouts and per-robot gradients; 1 runs inline.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            envs_per_robot: 16,
            rollout_length: 128,
            epochs: 10,
            minibatches: 16,
            clip_epsilon: 0.2,
            gamma: 0.99,
            gae_lambda: 0.95,
            learning_rate: 3e-4,
            entropy_coef: 0.005,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            total_steps: 2_000_000,
            seed: 0,
            checkpoint_every: 0,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        let counts = [
            ("envs_per_robot", self.envs_per_robot),
            ("rollout_length", self.rollout_length),
            ("epochs", self.epochs),
            ("minibatches", self.minibatches),
            ("threads", self.threads),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(format!("train.{name} must be > 0"));
            }
        }
        let reals = [
            ("clip_epsilon", self.clip_epsilon),
            ("gamma", self.gamma),
            ("gae_lambda", self.gae_lambda),
            ("learning_rate", self.learning_rate),
            ("entropy_coef", self.entropy_coef),
            ("value_coef", self.value_coef),
            ("max_grad_norm", self.max_grad_norm),
        ];
        for (name, v) in reals {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("train.{name} must be > 0"));
            }
        }
        if self.gamma > 1.0 || self.gae_lambda > 1.0 {
            return Err("train.gamma and train.gae_lambda must be <= 1".into());
        }
        if self.total_steps == 0 {
            return Err("train.total_steps must be > 0".into());
        }
        let per_robot = self.rollout_length * self.envs_per_robot;
        if per_robot % self.minibatches != 0 {
            return Err(format!(
                "train.minibatches ({}) must divide rollout_length * envs_per_robot ({per_robot})",
                self.minibatches
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurriculumConfig {
    pub delta_beta: f64,
    pub min_episode_fraction: f64,
    pub max_tracking_error: f64,
    pub min_return: Option<f64>,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        CurriculumConfig {
            delta_beta: 1e-3,
            min_episode_fraction: 0.9,
            max_tracking_error: 0.25,
            min_return: None,
        }
    }
}

impl CurriculumConfig {
    pub fn thresholds(&self, horizon: usize) -> SuccessThresholds {
        SuccessThresholds {
            min_episode_length: (horizon as f64 * self.min_episode_fraction).ceil() as usize,
            max_tracking_error: self.max_tracking_error,
            min_return: self.min_return,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.delta_beta > 0.0 && self.delta_beta <= 1.0) {
            return Err("curriculum.delta_beta must lie in (0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.min_episode_fraction) {
            return Err("curriculum.min_episode_fraction must lie in [0, 1]".into());
        }
        if !(self.max_tracking_error >= 0.0) {
            return Err("curriculum.max_tracking_error must be >= 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArchSpec {
    Urma(UrmaConfig),
    ZeroPadding(BaselineConfig),
    MultiHead(BaselineConfig),
}

impl ArchSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ArchSpec::Urma(_) => "urma_v2",
            ArchSpec::ZeroPadding(_) => "zero_padding",
            ArchSpec::MultiHead(_) => "multi_head",
        }
    }

    pub fn build(&self, robots: &[Arc<Morphology>], seed: u64) -> Box<dyn ActorCritic> {
        let joints: Vec<usize> = robots.iter().map(|r| r.joints.len()).collect();
        match self {
            ArchSpec::Urma(c) => Box::new(UrmaPolicy::new(c.clone(), seed)),
            ArchSpec::ZeroPadding(c) => {
                Box::new(ZeroPaddingPolicy::new(c.clone(), joints.iter().copied().max().unwrap_or(1), seed))
            }
            ArchSpec::MultiHead(c) => Box::new(MultiHeadPolicy::new(c.clone(), joints, seed)),
        }
    }
}

/// Everything a training run needs.
#[derive(Debug, Clone)]
pub struct TrainSetup {
    pub train: TrainConfig,
    pub env: EnvConfig,
    pub randomizer: Randomizer,
    pub curriculum: CurriculumConfig,
    pub robots: Vec<Arc<Morphology>>,
    pub arch: ArchSpec,
}

impl TrainSetup {
    /// Defaults with the given roster and architecture.
    pub fn new(robots: Vec<Arc<Morphology>>, arch: ArchSpec) -> Self {
        TrainSetup {
            train: TrainConfig::default(),
            env: EnvConfig::default(),
            randomizer: Randomizer::default(),
            curriculum: CurriculumConfig::default(),
            robots,
            arch,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        self.train.validate()?;
        self.env.validate()?;
        self.randomizer.er.validate()?;
        self.curriculum.validate()?;
        if self.robots.is_empty() {
            return Err("at least one robot is required".into());
        }
        if let ArchSpec::Urma(c) = &self.arch {
            c.validate()?;
        }
        Ok(())
    }

    pub fn steps_per_iteration(&self) -> u64 {
        (self.train.rollout_length * self.train.envs_per_robot * self.robots.len()) as u64
    }

    pub fn iterations(&self) -> u64 {
        self.train.total_steps.div_ceil(self.steps_per_iteration())
    }
}

/// One line of the metrics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub iteration: u64,
    pub steps: u64,
    pub robot: String,
    pub beta: f64,
    pub mean_return: f64,
    pub mean_tracking_error: f64,
    pub success_rate: f64,
    pub stats: UpdateStats,
}

pub const METRICS_HEADER: &str =
    "iteration,steps,robot,beta,mean_return,mean_tracking_error,success_rate,policy_loss,value_loss,entropy,kl,clip_frac";

impl MetricsRow {
    pub fn csv(&self) -> String {
        let s = &self.stats;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.iteration,
            self.steps,
            self.robot,
            self.beta,
            self.mean_return,
            self.mean_tracking_error,
            self.success_rate,
            s.policy_loss,
            s.value_loss,
            s.entropy,
            s.kl,
            s.clip_frac
        )
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

pub struct Trainer {
    pub setup: TrainSetup,
    pub policy: Box<dyn ActorCritic>,
    pub optimizer: Adam,
    pub groups: Vec<RobotGroup>,
    pub iteration: u64,
    pub steps: u64,
    shuffle: RandomStream,
    pool: Option<rayon::ThreadPool>,
    rows_cache: Vec<MetricsRow>,
}

impl Trainer {
    pub fn new(setup: TrainSetup) -> Result<Self, TrainError> {
        let policy = setup.arch.build(&setup.robots, setup.train.seed);
        Trainer::with_policy(setup, policy)
    }

    pub fn with_policy(setup: TrainSetup, policy: Box<dyn ActorCritic>) -> Result<Self, TrainError> {
        setup.validate().map_err(TrainError::Config)?;
        for (r, m) in setup.robots.iter().enumerate() {
            policy.supports(r, m.joints.len()).map_err(TrainError::Config)?;
        }
        let thresholds = setup.curriculum.thresholds(setup.env.horizon);
        let groups = setup
            .robots
            .iter()
            .enumerate()
            .map(|(r, m)| {
                RobotGroup::new(
                    r,
                    Arc::clone(m),
                    CurriculumState::new(setup.curriculum.delta_beta, thresholds),
                    setup.train.envs_per_robot,
                    setup.train.seed,
                    &setup.randomizer,
                    &setup.env,
                )
            })
            .collect();
        let pool = if setup.train.threads > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(setup.train.threads)
                .build()
                .map_err(|e| TrainError::Config(format!("thread pool: {e}")))?;
            Some(pool)
        } else {
            None
        };
        Ok(Trainer {
            optimizer: Adam::new(policy.params(), setup.train.learning_rate),
            shuffle: RandomStream::new(setup.train.seed, Purpose::Shuffle as u64),
            policy,
            groups,
            iteration: 0,
            steps: 0,
            setup,
            pool,
            rows_cache: Vec::new(),
        })
    }

    pub fn betas(&self) -> Vec<f64> {
        self.groups.iter().map(|g| g.curriculum.beta).collect()
    }

    pub fn mean_beta(&self) -> f64 {
        mean(self.betas().into_iter())
    }

    fn in_pool<T: Send>(&self, f: impl FnOnce() -> T + Send) -> T {
        match &self.pool {
            Some(p) => p.install(f),
            None => f(),
        }
    }

    /// Runs every robot's environments for one rollout. Robots are
    /// independent, so the result does not depend on the thread count.
    pub fn collect_rollout(&mut self) -> Result<RolloutBuffer, TrainError> {
        use rayon::prelude::*;
        let policy = self.policy.as_ref();
        let setup = &self.setup;
        let steps = setup.train.rollout_length;
        let mut groups = std::mem::take(&mut self.groups);
        let parallel = self.pool.is_some();
        let results: Vec<Result<RobotSegment, TrainError>> = self.in_pool(|| {
            if parallel {
                groups.par_iter_mut().map(|g| g.collect(policy, steps, &setup.randomizer, &setup.env)).collect()
            } else {
                groups.iter_mut().map(|g| g.collect(policy, steps, &setup.randomizer, &setup.env)).collect()
            }
        });
        self.groups = groups;
        let segments = results.into_iter().collect::<Result<Vec<_>, _>>()?;
        self.steps += setup.steps_per_iteration();
        Ok(RolloutBuffer { segments })
    }

    pub fn update(&mut self, buffer: &mut RolloutBuffer) -> Result<Vec<UpdateStats>, TrainError> {
        let cfg = self.setup.train.clone();
        buffer.compute_gae(cfg.gamma, cfg.gae_lambda);
        buffer.normalize_advantages();
        let parallel = self.pool.is_some();
        let Trainer {
            policy,
            optimizer,
            shuffle,
            pool,
            ..
        } = self;
        let mut run = || update_policy(policy.as_mut(), optimizer, buffer, &cfg, shuffle, parallel);
        let result = match pool {
            Some(p) => p.install(run),
            None => run(),
        };
        result.map_err(|e| TrainError::Numeric(format!("policy update: {e}")))
    }

    /// One rollout plus update; returns per-robot rows followed by the mean row.
    pub fn iterate(&mut self) -> Result<Vec<MetricsRow>, TrainError> {
        let mut buffer = self.collect_rollout()?;
        let stats = self.update(&mut buffer)?;
        self.iteration += 1;
        let mut rows = Vec::with_capacity(self.groups.len() + 1);
        for (g, s) in self.groups.iter_mut().zip(&stats) {
            let eps = g.take_episodes();
            rows.push(MetricsRow {
                iteration: self.iteration,
                steps: self.steps,
                robot: g.base.name.clone(),
                beta: g.curriculum.beta,
                mean_return: mean(eps.iter().map(|e| e.stats.episode_return)),
                mean_tracking_error: mean(eps.iter().map(|e| e.stats.mean_tracking_error)),
                success_rate: mean(eps.iter().map(|e| f64::from(u8::from(e.success)))),
                stats: *s,
            });
        }
        let avg = |f: &dyn Fn(&MetricsRow) -> f64| mean(rows.iter().map(f).filter(|v| !v.is_nan()));
        let mean_row = MetricsRow {
            iteration: self.iteration,
            steps: self.steps,
            robot: "mean".into(),
            beta: avg(&|r| r.beta),
            mean_return: avg(&|r| r.mean_return),
            mean_tracking_error: avg(&|r| r.mean_tracking_error),
            success_rate: avg(&|r| r.success_rate),
            stats: UpdateStats {
                policy_loss: avg(&|r| r.stats.policy_loss),
                value_loss: avg(&|r| r.stats.value_loss),
                entropy: avg(&|r| r.stats.entropy),
                kl: avg(&|r| r.stats.kl),
                clip_frac: avg(&|r| r.stats.clip_frac),
            },
        };
        rows.push(mean_row);
        Ok(rows)
    }
}

/// Outcome of a full run.
pub struct TrainReport {
    pub rows: Vec<MetricsRow>,
    pub final_betas: Vec<f64>,
    pub policy: Box<dyn ActorCritic>,
}

impl TrainReport {
    pub fn final_mean_beta(&self) -> f64 {
        mean(self.final_betas.iter().copied())
    }

    pub fn metrics_csv(&self) -> String {
        let mut out = String::from(METRICS_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(out, "{}", r.csv());
        }
        out
    }
}

/// Trains for `setup.iterations()` iterations. With `out_dir`, streams
/// `metrics.csv` and writes checkpoints there; a numeric failure dumps the
/// last good parameters to `abort.urm2`.
pub fn train(setup: TrainSetup, out_dir: Option<&Path>) -> Result<TrainReport, TrainError> {
    let mut trainer = Trainer::new(setup)?;
    run_trainer(&mut trainer, out_dir)?;
    Ok(TrainReport {
        rows: std::mem::take(&mut trainer.rows_cache),
        final_betas: trainer.betas(),
        policy: trainer.policy,
    })
}

fn checkpoint_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.urm2"))
}

impl Trainer {
    fn record(&mut self, rows: &[MetricsRow]) {
        self.rows_cache.extend_from_slice(rows);
    }
}

pub fn run_trainer(trainer: &mut Trainer, out_dir: Option<&Path>) -> Result<(), TrainError> {
    let iterations = trainer.setup.iterations();
    let mut csv = None;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        let path = dir.join("metrics.csv");
        fs::write(&path, format!("{METRICS_HEADER}\n"))?;
        csv = Some(path);
    }
    let every = trainer.setup.train.checkpoint_every;
    while trainer.iteration < iterations {
        let before = trainer.policy.params().clone();
        let rows = match trainer.iterate() {
            Ok(rows) => rows,
            Err(e @ TrainError::Numeric(_)) => {
                if let Some(dir) = out_dir {
                    let bytes = checkpoint::encode(&trainer.policy.metadata(), &before);
                    fs::write(checkpoint_path(dir, "abort"), bytes)?;
                }
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        if let Some(path) = &csv {
            let mut text = String::new();
            for r in &rows {
                let _ = writeln!(text, "{}", r.csv());
            }
            use std::io::Write as _;
            fs::OpenOptions::new().append(true).open(path)?.write_all(text.as_bytes())?;
        }
        trainer.record(&rows);
        if let Some(dir) = out_dir {
            if every > 0 && trainer.iteration % every as u64 == 0 {
                checkpoint::save(trainer.policy.as_ref(), &checkpoint_path(dir, &format!("iter_{:06}", trainer.iteration)))?;
            }
        }
    }
    if let Some(dir) = out_dir {
        checkpoint::save(trainer.policy.as_ref(), &checkpoint_path(dir, "final"))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    ZeroPadding,
    MultiHead,
}

/// Trains a comparison policy with the same loop, environments and curriculum.
pub fn run_baseline(kind: BaselineKind, config: BaselineConfig, mut setup: TrainSetup, out_dir: Option<&Path>) -> Result<TrainReport, TrainError> {
    setup.arch = match kind {
        BaselineKind::ZeroPadding => ArchSpec::ZeroPadding(config),
        BaselineKind::MultiHead => ArchSpec::MultiHead(config),
    };
    train(setup, out_dir)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalMetrics {
    pub episodes: usize,
    pub mean_return: f64,
    pub mean_tracking_error: f64,
    pub success_rate: f64,
    pub per_episode: Vec<FinishedEpisode>,
}

pub const EVAL_HEADER: &str = "episode,length,return,mean_tracking_error,success";

impl EvalMetrics {
    pub fn csv(&self) -> String {
        let mut out = format!("{EVAL_HEADER}\n");
        for (k, e) in self.per_episode.iter().enumerate() {
            let _ = writeln!(
                out,
                "{k},{},{},{},{}",
                e.stats.length,
                e.stats.episode_return,
                e.stats.mean_tracking_error,
                u8::from(e.success)
            );
        }
        out
    }
}

/// Settings for [`evaluate_zero_shot`].
#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub episodes: usize,
    pub beta: f64,
    pub num_envs: usize,
    pub seed: u64,
    pub env: EnvConfig,
    pub randomizer: Randomizer,
    pub curriculum: CurriculumConfig,
}

impl EvalConfig {
    pub fn new(episodes: usize, beta: f64, seed: u64) -> Self {
        EvalConfig {
            episodes,
            beta,
            num_envs: 16,
            seed,
            env: EnvConfig::default(),
            randomizer: Randomizer::default(),
            curriculum: CurriculumConfig::default(),
        }
    }
}

/// Rolls out the deterministic policy (actions = mean) on `robot` at a fixed
/// curriculum level and reports episode statistics. Parameters are not
/// touched; `robot_index` only matters for the multi-head policy.
pub fn evaluate_zero_shot(
    policy: &dyn ActorCritic,
    robot_index: usize,
    robot: Arc<Morphology>,
    cfg: &EvalConfig,
) -> Result<EvalMetrics, TrainError> {
    policy.supports(robot_index, robot.joints.len()).map_err(TrainError::Config)?;
    let j = robot.joints.len();
    let thresholds = cfg.curriculum.thresholds(cfg.env.horizon);
    let mut curriculum = CurriculumState::new(cfg.curriculum.delta_beta, thresholds);
    curriculum.beta = cfg.beta;
    let n = cfg.num_envs.min(cfg.episodes).max(1);
    let mut group = RobotGroup::new(robot_index, robot, curriculum, n, cfg.seed, &cfg.randomizer, &cfg.env);
    group.frozen = true;
    let mut finished: Vec<FinishedEpisode> = Vec::new();
    // Environments keep running until enough episodes have started; only
    // the first `episodes` completions in order are reported.
    while finished.len() < cfg.episodes {
        let (actor_in, _) = group.current_inputs();
        let mu = policy.act(robot_index, &actor_in).mu;
        if mu.iter().any(|m| !m.is_finite()) {
            return Err(TrainError::Numeric("non-finite action during evaluation".into()));
        }
        for i in 0..n {
            group.step_env(i, &mu[i * j..(i + 1) * j], &cfg.randomizer, &cfg.env)?;
        }
        finished.extend(group.take_episodes());
    }
    finished.truncate(cfg.episodes);
    let per = &finished;
    Ok(EvalMetrics {
        episodes: per.len(),
        mean_return: mean(per.iter().map(|e| e.stats.episode_return)),
        mean_tracking_error: mean(per.iter().map(|e| e.stats.mean_tracking_error)),
        success_rate: mean(per.iter().map(|e| f64::from(u8::from(e.success)))),
        per_episode: finished,
    })
}

/// Deterministic rollout of `steps` steps in a single environment, as CSV.
pub fn inspect_trajectory(
    policy: &dyn ActorCritic,
    robot: Arc<Morphology>,
    steps: usize,
    cfg: &EvalConfig,
) -> Result<String, TrainError> {
    policy.supports(0, robot.joints.len()).map_err(TrainError::Config)?;
    let j = robot.joints.len();
    let thresholds = cfg.curriculum.thresholds(cfg.env.horizon);
    let mut curriculum = CurriculumState::new(cfg.curriculum.delta_beta, thresholds);
    curriculum.beta = cfg.beta;
    let mut group = RobotGroup::new(0, robot, curriculum, 1, cfg.seed, &cfg.randomizer, &cfg.env);
    group.frozen = true;
    let mut out = env::trajectory_header(j);
    out.push('\n');
    for t in 0..steps {
        let (actor_in, _) = group.current_inputs();
        let mu = policy.act(0, &actor_in).mu;
        let (reward, done) = group.step_env(0, &mu, &cfg.randomizer, &cfg.env)?;
        out.push_str(&env::trajectory_row(t, 0, reward, done, cfg.beta, &group.envs[0].state));
        out.push('\n');
    }
    Ok(out)
}
