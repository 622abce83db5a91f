//! Runs the architecture comparison and the holdout transfer experiments and
//! writes their artifacts under `--out` (default `results/`).
//!
//! Finished runs are skipped, so the command can be restarted after an
//! interruption. Runs execute one after another; expect about a quarter of an
//! hour per run on one core.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, ValueEnum};
use morphrl::experiments::{self, Arch, SEEDS};
use morphrl::network::checkpoint;
use morphrl::trainer::{self, TrainSetup};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Which {
    Comparison,
    Holdout,
    All,
}

#[derive(Debug, Parser)]
struct Args {
    #[arg(long, default_value = "results")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Which::All)]
    only: Which,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

fn run(dir: &Path, setup: TrainSetup, keep_checkpoint: bool) -> Result<Option<Box<dyn morphrl::network::ActorCritic>>, String> {
    let done = dir.join("run.txt");
    if done.exists() {
        eprintln!("skip {}", dir.display());
        return Ok(None);
    }
    eprintln!("run {}", dir.display());
    let start = Instant::now();
    let report = trainer::train(setup, Some(dir)).map_err(|e| format!("{}: {e}", dir.display()))?;
    let seconds = start.elapsed().as_secs_f64();
    if !keep_checkpoint {
        let _ = fs::remove_file(dir.join("final.urm2"));
    }
    let (steps, beta) = experiments::read_final_mean_beta(&dir.join("metrics.csv"))?;
    fs::write(&done, format!("steps: {steps}\nfinal_mean_beta: {beta}\nwall_seconds: {seconds:.1}\n")).map_err(|e| e.to_string())?;
    eprintln!("  mean beta {beta:.3} after {steps} steps, {seconds:.0} s");
    Ok(Some(report.policy))
}

fn main() -> Result<(), String> {
    let args = Args::parse();
    let seeds = args.seeds.unwrap_or(SEEDS.to_vec());
    if matches!(args.only, Which::Comparison | Which::All) {
        for &seed in &seeds {
            for arch in Arch::ALL {
                let dir = args.out.join("comparison").join(format!("{}_s{seed}", arch.name()));
                run(&dir, experiments::comparison_setup(arch, seed), false)?;
            }
        }
    }
    if matches!(args.only, Which::Holdout | Which::All) {
        for &seed in &seeds {
            for arch in [Arch::Urma, Arch::ZeroPadding] {
                let dir = args.out.join("holdout").join(format!("{}_s{seed}", arch.name()));
                let setup = experiments::holdout_setup(arch, seed);
                let policy = match run(&dir, setup.clone(), true)? {
                    Some(p) => p,
                    None => checkpoint::load(&dir.join("final.urm2")).map_err(|e| e.to_string())?,
                };
                let t = experiments::evaluate_transfer(policy.as_ref(), &setup, seed).map_err(|e| e.to_string())?;
                let text = format!("train_success,holdout_success\n{},{}\n", t.train_success, t.holdout_success);
                fs::write(dir.join("transfer.csv"), text).map_err(|e| e.to_string())?;
                eprintln!("  transfer: train {:.3}, holdout {:.3}", t.train_success, t.holdout_success);
            }
        }
    }
    Ok(())
}
