//! Frozen-seed fixtures shared by the golden and acceptance suites.
//!
//! Golden values live in `tests/golden/checksums.txt` as `name value` lines.
//! Run with `MORPHRL_BLESS=1` to rewrite them after an intentional change.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::sync::Arc;

use morphrl::morphology::{norm3, JointSpec, Morphology};
use morphrl::network::baselines::{BaselineConfig, MultiHeadPolicy, ZeroPaddingPolicy};
use morphrl::network::tensor::Tensor;
use morphrl::network::urma::{UrmaConfig, UrmaPolicy};
use morphrl::network::{ActorCritic, PolicyInput, D_GEN, D_OBS, D_OBS_CRITIC};
use morphrl::randomization::DESC_DIM;
use morphrl::rng::RandomStream;
use morphrl::templates;
use morphrl::trainer::{ArchSpec, TrainSetup, Trainer};

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("golden")
}

pub fn blessing() -> bool {
    std::env::var_os("MORPHRL_BLESS").is_some_and(|v| v == "1")
}

fn checksum_path() -> PathBuf {
    golden_dir().join("checksums.txt")
}

fn read_checksums() -> BTreeMap<String, String> {
    let text = fs::read_to_string(checksum_path()).unwrap_or_default();
    text.lines()
        .filter_map(|l| l.split_once(' '))
        .map(|(k, v)| (k.to_string(), v.trim().to_string()))
        .collect()
}

/// Compares `value` with the stored golden entry, or stores it when blessing.
pub fn check_golden(name: &str, value: &str) -> Result<(), String> {
    let mut all = read_checksums();
    if blessing() {
        all.insert(name.to_string(), value.to_string());
        let text: String = all.iter().map(|(k, v)| format!("{k} {v}\n")).collect();
        fs::create_dir_all(golden_dir()).map_err(|e| e.to_string())?;
        fs::write(checksum_path(), text).map_err(|e| e.to_string())?;
        return Ok(());
    }
    match all.get(name) {
        Some(v) if v == value => Ok(()),
        Some(v) => Err(format!("{name}: golden {v}, got {value}")),
        None => Err(format!("{name}: no golden value (run with MORPHRL_BLESS=1)")),
    }
}

/// Compares a whole file under `tests/golden`, or writes it when blessing.
pub fn check_golden_file(name: &str, contents: &[u8]) -> Result<(), String> {
    let path = golden_dir().join(name);
    if blessing() {
        fs::create_dir_all(golden_dir()).map_err(|e| e.to_string())?;
        return fs::write(&path, contents).map_err(|e| e.to_string());
    }
    let stored = fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    if stored == contents {
        Ok(())
    } else {
        Err(format!("{name} differs from the golden copy"))
    }
}

pub fn fnv(values: impl IntoIterator<Item = f64>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

/// Random inputs: `k` embodiments of `j` joints, `b` samples.
pub fn random_input(j: usize, k: usize, b: usize, joint_width: usize, stream: &mut RandomStream) -> PolicyInput {
    let mut fill = |n: usize| (0..n).map(|_| stream.symmetric()).collect::<Vec<_>>();
    let descriptions = Tensor::from_vec(k * j, DESC_DIM, fill(k * j * DESC_DIM));
    let joint_obs = Tensor::from_vec(b * j, joint_width, fill(b * j * joint_width));
    let general_obs = Tensor::from_vec(b, D_GEN, fill(b * D_GEN));
    let embodiment_index = (0..b).map(|i| i % k).collect();
    PolicyInput {
        num_joints: j,
        descriptions,
        embodiment_index,
        joint_obs,
        general_obs,
    }
}

/// Checksum over actor means, standard deviations and critic values of the
/// seed-7 desk networks on a fixed input.
pub fn forward_checksum(arch: &str) -> u64 {
    let j = 4;
    let policy: Box<dyn ActorCritic> = match arch {
        "urma_v2" => Box::new(UrmaPolicy::new(UrmaConfig::desk(), 7)),
        "zero_padding" => Box::new(ZeroPaddingPolicy::new(BaselineConfig::desk(), 8, 7)),
        "multi_head" => Box::new(MultiHeadPolicy::new(BaselineConfig::desk(), vec![j, 8], 7)),
        other => panic!("unknown architecture {other}"),
    };
    let mut s = RandomStream::new(99, 0);
    let actor = random_input(j, 2, 3, D_OBS, &mut s);
    let critic = PolicyInput {
        joint_obs: random_input(j, 2, 3, D_OBS_CRITIC, &mut s).joint_obs,
        ..actor.clone()
    };
    let a = policy.act(0, &actor);
    let v = policy.value(0, &critic);
    fnv(a.mu.into_iter().chain(a.sigma).chain(v))
}

/// Parameter checksum after one rollout and one single-minibatch,
/// single-epoch update of a seed-5 desk URMA policy on `biped_a`.
pub fn update_checksum() -> u64 {
    let robot = Arc::new(templates::load("biped_a").unwrap());
    let mut setup = TrainSetup::new(vec![robot], ArchSpec::Urma(UrmaConfig::desk()));
    setup.train.seed = 5;
    setup.train.envs_per_robot = 4;
    setup.train.rollout_length = 32;
    setup.train.epochs = 1;
    setup.train.minibatches = 1;
    setup.train.total_steps = 128;
    let mut t = Trainer::new(setup).unwrap();
    let mut buffer = t.collect_rollout().unwrap();
    t.update(&mut buffer).unwrap();
    t.policy.params().checksum()
}

pub fn hex(v: u64) -> String {
    format!("{v:016x}")
}

/// Uniform magnitude in `[lo, hi)` with a random sign.
fn nz(s: &mut RandomStream, lo: f64, hi: f64) -> f64 {
    let v = s.uniform(lo, hi);
    if s.unit() < 0.5 {
        -v
    } else {
        v
    }
}

/// A valid morphology with `j` joints and every optional field non-zero.
pub fn random_morphology(j: usize, s: &mut RandomStream) -> Morphology {
    let mut joints = Vec::with_capacity(j);
    for i in 0..j {
        let raw = [nz(s, 0.1, 1.0), nz(s, 0.1, 1.0), nz(s, 0.1, 1.0)];
        let n = norm3(&raw);
        let axis = raw.map(|v| v / n);
        let lo = -nz(s, 0.5, 1.5).abs();
        let hi = nz(s, 0.5, 1.5).abs();
        let mut spec = JointSpec::new(
            format!("j{i}"),
            axis,
            nz(s, 5.0, 50.0).abs(),
            nz(s, 5.0, 20.0).abs(),
            (lo, hi),
            nz(s, 0.01, 0.3),
            nz(s, 5.0, 50.0).abs(),
        );
        spec.kd = nz(s, 0.2, 2.0).abs();
        spec.damping = nz(s, 0.02, 0.2).abs();
        spec.friction = nz(s, 0.005, 0.05).abs();
        spec.armature = nz(s, 0.005, 0.05).abs();
        spec.stiffness = nz(s, 0.1, 2.0).abs();
        spec.leverage = [nz(s, 0.1, 2.0), nz(s, 0.1, 2.0), nz(s, 0.1, 2.0)];
        spec.attach_offset = [nz(s, 0.05, 0.4), nz(s, 0.05, 0.4), nz(s, 0.05, 0.4)];
        spec.track_nominal = s.unit() < 0.1;
        joints.push(spec);
    }
    Morphology {
        name: format!("random_{j}"),
        trunk_mass: nz(s, 5.0, 30.0).abs(),
        trunk_inertia: [nz(s, 0.1, 1.0).abs(), nz(s, 0.1, 1.0).abs(), nz(s, 0.1, 1.0).abs()],
        trunk_com: [nz(s, 0.001, 0.05), nz(s, 0.001, 0.05), nz(s, 0.001, 0.05)],
        imu_position: [nz(s, 0.01, 0.1), nz(s, 0.01, 0.1), nz(s, 0.01, 0.1)],
        joints,
        control_frequency: 50.0,
    }
}
