//! C interface to morphrl.
//!
//! Objects are opaque handles created by `mr_*_new`/`mr_*_load` functions and
//! released with the matching `mr_*_free`. Every fallible call returns an
//! [`MrStatus`]; on failure a description is available from
//! [`mr_last_error_message`] on the same thread. Array arguments are
//! row-major `double` buffers whose lengths are given in the function docs.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use morphrl::curriculum::CurriculumState;
use morphrl::env::EnvConfig;
use morphrl::morphology::{parse_morphology, serialize_morphology, Morphology};
use morphrl::network::checkpoint;
use morphrl::network::urma::{UrmaConfig, UrmaPolicy};
use morphrl::network::{ActorCritic, PolicyInput, Tensor, D_GEN, D_OBS, D_OBS_CRITIC};
use morphrl::randomization::{Randomizer, DESC_DIM};
use morphrl::templates;
use morphrl::trainer::{CurriculumConfig, RobotGroup};

/// Width of a joint description vector.
pub const MR_DESC_DIM: usize = 20;
/// Width of an actor joint observation.
pub const MR_OBS_DIM: usize = 4;
/// Width of a critic joint observation.
pub const MR_CRITIC_OBS_DIM: usize = 5;
/// Width of the general observation.
pub const MR_GEN_DIM: usize = 13;

// The header needs literal values; keep them in step with the library.
const _: () = assert!(MR_DESC_DIM == DESC_DIM && MR_OBS_DIM == D_OBS && MR_CRITIC_OBS_DIM == D_OBS_CRITIC && MR_GEN_DIM == D_GEN);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Io = 4,
    Shape = 5,
    Numeric = 6,
    Panic = 7,
}

/// A parsed base morphology.
pub struct MrMorphology(Arc<Morphology>);

/// A policy loaded from a checkpoint or freshly initialized.
pub struct MrPolicy(Box<dyn ActorCritic>);

/// One environment of a robot at a fixed curriculum level. Episodes reset
/// automatically, with a newly sampled embodiment.
pub struct MrEnv {
    group: RobotGroup,
    randomizer: Randomizer,
    config: EnvConfig,
    seed: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

type Outcome = Result<(), (MrStatus, String)>;

fn guard(f: impl FnOnce() -> Outcome) -> MrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            MrStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            MrStatus::Panic
        }
    }
}

fn null(what: &str) -> (MrStatus, String) {
    (MrStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (MrStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (MrStatus::InvalidArgument, format!("`{what}` is not valid UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], (MrStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], (MrStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Outcome {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn parse_failure(e: impl std::fmt::Display) -> (MrStatus, String) {
    (MrStatus::Parse, e.to_string())
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn mr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Parses morphology text.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mr_morphology_parse(text: *const c_char, out: *mut *mut MrMorphology) -> MrStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        let m = parse_morphology(text).map_err(parse_failure)?;
        put(out, MrMorphology(Arc::new(m)))
    })
}

/// Reads and parses a morphology file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mr_morphology_load(path: *const c_char, out: *mut *mut MrMorphology) -> MrStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let text = std::fs::read_to_string(path).map_err(|e| (MrStatus::Io, format!("{path}: {e}")))?;
        let m = parse_morphology(&text).map_err(|e| (MrStatus::Parse, format!("{path}: {e}")))?;
        put(out, MrMorphology(Arc::new(m)))
    })
}

/// One of the bundled templates, by name.
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mr_morphology_template(name: *const c_char, out: *mut *mut MrMorphology) -> MrStatus {
    guard(|| {
        let name = str_arg(name, "name")?;
        if templates::text(name).is_none() {
            return Err((MrStatus::InvalidArgument, format!("unknown template `{name}`")));
        }
        let m = templates::load(name).map_err(parse_failure)?;
        put(out, MrMorphology(Arc::new(m)))
    })
}

/// Number of joints, or 0 for a null handle.
///
/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mr_morphology_num_joints(m: *const MrMorphology) -> usize {
    m.as_ref().map_or(0, |m| m.0.joints.len())
}

/// Writes the canonical text form into `buf` (NUL-terminated) and its length
/// without the terminator into `len_out`. When `capacity` is too small
/// nothing is written except `len_out` and `InvalidArgument` is returned.
///
/// # Safety
/// `m` must be a live handle; `buf` must hold `capacity` bytes or be null
/// when `capacity` is 0; `len_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mr_morphology_serialize(
    m: *const MrMorphology,
    buf: *mut c_char,
    capacity: usize,
    len_out: *mut usize,
) -> MrStatus {
    guard(|| {
        let m = m.as_ref().ok_or_else(|| null("morphology"))?;
        if len_out.is_null() {
            return Err(null("len_out"));
        }
        let text = serialize_morphology(&m.0);
        *len_out = text.len();
        if capacity <= text.len() {
            return Err((MrStatus::InvalidArgument, format!("buffer needs {} bytes", text.len() + 1)));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        ptr::copy_nonoverlapping(text.as_ptr(), buf.cast::<u8>(), text.len());
        *buf.add(text.len()) = 0;
        Ok(())
    })
}

/// # Safety
/// `m` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mr_morphology_free(m: *mut MrMorphology) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// A freshly initialized policy with the default widths.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mr_policy_new(seed: u64, out: *mut *mut MrPolicy) -> MrStatus {
    guard(|| put(out, MrPolicy(Box::new(UrmaPolicy::new(UrmaConfig::default(), seed)))))
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mr_policy_load(path: *const c_char, out: *mut *mut MrPolicy) -> MrStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let policy = checkpoint::load(Path::new(path)).map_err(|e| {
            let status = match e {
                checkpoint::CheckpointError::Io(_) => MrStatus::Io,
                checkpoint::CheckpointError::Format(_) => MrStatus::Parse,
                checkpoint::CheckpointError::Shape(_) => MrStatus::Shape,
            };
            (status, format!("{path}: {e}"))
        })?;
        put(out, MrPolicy(policy))
    })
}

/// # Safety
/// `p` must be a live handle; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mr_policy_save(p: *const MrPolicy, path: *const c_char) -> MrStatus {
    guard(|| {
        let p = p.as_ref().ok_or_else(|| null("policy"))?;
        let path = str_arg(path, "path")?;
        checkpoint::save(p.0.as_ref(), Path::new(path)).map_err(|e| (MrStatus::Io, format!("{path}: {e}")))
    })
}

fn single_input(j: usize, desc: &[f64], joint_obs: &[f64], width: usize, general: &[f64]) -> PolicyInput {
    PolicyInput {
        num_joints: j,
        descriptions: Tensor::from_vec(j, DESC_DIM, desc.to_vec()),
        embodiment_index: vec![0],
        joint_obs: Tensor::from_vec(j, width, joint_obs.to_vec()),
        general_obs: Tensor::from_vec(1, D_GEN, general.to_vec()),
    }
}

/// Action mean and standard deviation for one robot state.
///
/// `descriptions` holds `num_joints * MR_DESC_DIM` values, `joint_obs`
/// `num_joints * MR_OBS_DIM`, `general_obs` `MR_GEN_DIM`; `mu_out` and
/// `sigma_out` receive `num_joints` values each. `robot_index` selects the
/// head of a multi-head policy and is ignored otherwise.
///
/// # Safety
/// All pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn mr_policy_act(
    p: *const MrPolicy,
    robot_index: usize,
    num_joints: usize,
    descriptions: *const f64,
    joint_obs: *const f64,
    general_obs: *const f64,
    mu_out: *mut f64,
    sigma_out: *mut f64,
) -> MrStatus {
    guard(|| {
        let p = p.as_ref().ok_or_else(|| null("policy"))?;
        if num_joints == 0 {
            return Err((MrStatus::InvalidArgument, "num_joints must be > 0".into()));
        }
        p.0.supports(robot_index, num_joints).map_err(|e| (MrStatus::Shape, e))?;
        let d = slice_arg(descriptions, num_joints * DESC_DIM, "descriptions")?;
        let o = slice_arg(joint_obs, num_joints * D_OBS, "joint_obs")?;
        let g = slice_arg(general_obs, D_GEN, "general_obs")?;
        let mu = out_slice(mu_out, num_joints, "mu_out")?;
        let sigma = out_slice(sigma_out, num_joints, "sigma_out")?;
        let dist = p.0.act(robot_index, &single_input(num_joints, d, o, D_OBS, g));
        if dist.mu.iter().chain(&dist.sigma).any(|v| !v.is_finite()) {
            return Err((MrStatus::Numeric, "non-finite policy output".into()));
        }
        mu.copy_from_slice(&dist.mu);
        sigma.copy_from_slice(&dist.sigma);
        Ok(())
    })
}

/// Critic value for one robot state; `joint_obs` holds
/// `num_joints * MR_CRITIC_OBS_DIM` values.
///
/// # Safety
/// All pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn mr_policy_value(
    p: *const MrPolicy,
    robot_index: usize,
    num_joints: usize,
    descriptions: *const f64,
    joint_obs: *const f64,
    general_obs: *const f64,
    value_out: *mut f64,
) -> MrStatus {
    guard(|| {
        let p = p.as_ref().ok_or_else(|| null("policy"))?;
        if num_joints == 0 {
            return Err((MrStatus::InvalidArgument, "num_joints must be > 0".into()));
        }
        p.0.supports(robot_index, num_joints).map_err(|e| (MrStatus::Shape, e))?;
        let d = slice_arg(descriptions, num_joints * DESC_DIM, "descriptions")?;
        let o = slice_arg(joint_obs, num_joints * D_OBS_CRITIC, "joint_obs")?;
        let g = slice_arg(general_obs, D_GEN, "general_obs")?;
        let out = out_slice(value_out, 1, "value_out")?;
        let v = p.0.value(robot_index, &single_input(num_joints, d, o, D_OBS_CRITIC, g))[0];
        if !v.is_finite() {
            return Err((MrStatus::Numeric, "non-finite value".into()));
        }
        out[0] = v;
        Ok(())
    })
}

/// # Safety
/// `p` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mr_policy_free(p: *mut MrPolicy) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

fn build_env(base: Arc<Morphology>, beta: f64, seed: u64) -> MrEnv {
    let config = EnvConfig::default();
    let randomizer = Randomizer::default();
    let c = CurriculumConfig::default();
    let mut curriculum = CurriculumState::new(c.delta_beta, c.thresholds(config.horizon));
    curriculum.beta = beta;
    let mut group = RobotGroup::new(0, base, curriculum, 1, seed, &randomizer, &config);
    group.frozen = true;
    MrEnv {
        group,
        randomizer,
        config,
        seed,
    }
}

/// A single environment at curriculum level `beta` in [0, 1], with default
/// settings. The same seed gives the same trajectory for the same actions.
///
/// # Safety
/// `m` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mr_env_new(m: *const MrMorphology, beta: f64, seed: u64, out: *mut *mut MrEnv) -> MrStatus {
    guard(|| {
        let m = m.as_ref().ok_or_else(|| null("morphology"))?;
        if !(0.0..=1.0).contains(&beta) {
            return Err((MrStatus::InvalidArgument, format!("beta must lie in [0, 1], got {beta}")));
        }
        put(out, build_env(m.0.clone(), beta, seed))
    })
}

/// Returns the environment to its initial state.
///
/// # Safety
/// `e` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mr_env_reset(e: *mut MrEnv) -> MrStatus {
    guard(|| {
        let e = e.as_mut().ok_or_else(|| null("env"))?;
        *e = build_env(e.group.base.clone(), e.group.curriculum.beta, e.seed);
        Ok(())
    })
}

/// # Safety
/// `e` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mr_env_num_joints(e: *const MrEnv) -> usize {
    e.as_ref().map_or(0, |e| e.group.num_joints())
}

/// Current policy inputs: `descriptions` (`J * MR_DESC_DIM`), `joint_obs`
/// (`J * MR_OBS_DIM`) and `general_obs` (`MR_GEN_DIM`).
///
/// # Safety
/// All pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn mr_env_observe(
    e: *const MrEnv,
    descriptions: *mut f64,
    joint_obs: *mut f64,
    general_obs: *mut f64,
) -> MrStatus {
    guard(|| {
        let e = e.as_ref().ok_or_else(|| null("env"))?;
        let j = e.group.num_joints();
        let d = out_slice(descriptions, j * DESC_DIM, "descriptions")?;
        let o = out_slice(joint_obs, j * D_OBS, "joint_obs")?;
        let g = out_slice(general_obs, D_GEN, "general_obs")?;
        let (actor, _) = e.group.current_inputs();
        d.copy_from_slice(actor.descriptions.data());
        o.copy_from_slice(actor.joint_obs.data());
        g.copy_from_slice(actor.general_obs.data());
        Ok(())
    })
}

/// Applies `J` actions. `done_out` is set to 1 when the episode ended; the
/// environment has then already been reset.
///
/// # Safety
/// `actions` must hold `J` values; `reward_out` and `done_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mr_env_step(e: *mut MrEnv, actions: *const f64, reward_out: *mut f64, done_out: *mut i32) -> MrStatus {
    guard(|| {
        let e = e.as_mut().ok_or_else(|| null("env"))?;
        let a = slice_arg(actions, e.group.num_joints(), "actions")?;
        if reward_out.is_null() || done_out.is_null() {
            return Err(null("reward_out/done_out"));
        }
        let (reward, done) = e
            .group
            .step_env(0, a, &e.randomizer, &e.config)
            .map_err(|err| (MrStatus::Numeric, err.to_string()))?;
        e.group.take_episodes();
        *reward_out = reward;
        *done_out = i32::from(done);
        Ok(())
    })
}

/// # Safety
/// `e` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mr_env_free(e: *mut MrEnv) {
    if !e.is_null() {
        drop(Box::from_raw(e));
    }
}
