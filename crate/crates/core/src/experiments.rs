//! Scaled comparison protocols: architecture comparison on the six bundled
//! templates, and zero-shot transfer to a held-out template.
//!
//! Both the experiment runner (`examples/experiments.rs`) and the acceptance
//! suite build their setups from here, so stored results can be checked
//! against a fresh rerun of the first iterations.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use crate::morphology::Morphology;
use crate::network::baselines::BaselineConfig;
use crate::network::urma::UrmaConfig;
use crate::network::ActorCritic;
use crate::templates;
use crate::trainer::{evaluate_zero_shot, ArchSpec, EvalConfig, TrainError, TrainSetup};

pub const TOTAL_STEPS: u64 = 2_000_000;
pub const SEEDS: [u64; 3] = [0, 1, 2];
pub const HOLDOUT: &str = "quadruped_b";
pub const EVAL_BETA: f64 = 0.3;
pub const EVAL_EPISODES: usize = 32;
/// Offset between a run's training seed and its evaluation seed.
pub const EVAL_SEED_OFFSET: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    Urma,
    ZeroPadding,
    MultiHead,
}

impl Arch {
    pub const ALL: [Arch; 3] = [Arch::Urma, Arch::ZeroPadding, Arch::MultiHead];

    pub fn name(self) -> &'static str {
        match self {
            Arch::Urma => "urma_v2",
            Arch::ZeroPadding => "zero_padding",
            Arch::MultiHead => "multi_head",
        }
    }

    /// Desk-width networks; the topology matches the full-size ones.
    pub fn spec(self) -> ArchSpec {
        match self {
            Arch::Urma => ArchSpec::Urma(UrmaConfig::desk()),
            Arch::ZeroPadding => ArchSpec::ZeroPadding(BaselineConfig::desk()),
            Arch::MultiHead => ArchSpec::MultiHead(BaselineConfig::desk()),
        }
    }
}

fn roster(skip: Option<&str>) -> Vec<Arc<Morphology>> {
    templates::all().into_iter().filter(|m| Some(m.name.as_str()) != skip).map(Arc::new).collect()
}

/// All six templates, default hyperparameters.
pub fn comparison_setup(arch: Arch, seed: u64) -> TrainSetup {
    let mut s = TrainSetup::new(roster(None), arch.spec());
    s.train.seed = seed;
    s.train.total_steps = TOTAL_STEPS;
    s
}

/// Every template except [`HOLDOUT`].
pub fn holdout_setup(arch: Arch, seed: u64) -> TrainSetup {
    let mut s = TrainSetup::new(roster(Some(HOLDOUT)), arch.spec());
    s.train.seed = seed;
    s.train.total_steps = TOTAL_STEPS;
    s
}

pub fn holdout_robot() -> Arc<Morphology> {
    Arc::new(templates::load(HOLDOUT).expect("bundled template"))
}

pub fn eval_config(seed: u64) -> EvalConfig {
    EvalConfig::new(EVAL_EPISODES, EVAL_BETA, seed + EVAL_SEED_OFFSET)
}

/// Success rates at [`EVAL_BETA`]: mean over the training robots, and on the holdout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferResult {
    pub train_success: f64,
    pub holdout_success: f64,
}

pub fn evaluate_transfer(policy: &dyn ActorCritic, setup: &TrainSetup, seed: u64) -> Result<TransferResult, TrainError> {
    let cfg = eval_config(seed);
    let mut sum = 0.0;
    for (i, r) in setup.robots.iter().enumerate() {
        sum += evaluate_zero_shot(policy, i, Arc::clone(r), &cfg)?.success_rate;
    }
    let holdout = evaluate_zero_shot(policy, 0, holdout_robot(), &cfg)?;
    Ok(TransferResult {
        train_success: sum / setup.robots.len() as f64,
        holdout_success: holdout.success_rate,
    })
}

/// Mean curriculum coefficient of the last row of a metrics CSV, with its step count.
pub fn final_mean_beta(metrics_csv: &str) -> Option<(u64, f64)> {
    let header: Vec<&str> = metrics_csv.lines().next()?.split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name);
    let (steps, robot, beta) = (col("steps")?, col("robot")?, col("beta")?);
    metrics_csv.lines().rev().find_map(|line| {
        let f: Vec<&str> = line.split(',').collect();
        (f.get(robot) == Some(&"mean")).then(|| Some((f.get(steps)?.parse().ok()?, f.get(beta)?.parse().ok()?)))?
    })
}

pub fn read_final_mean_beta(path: &Path) -> Result<(u64, f64), String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    final_mean_beta(&text).ok_or_else(|| format!("{}: no mean row", path.display()))
}
