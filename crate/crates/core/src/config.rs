//! Run configuration files.
//!
//! Same grammar as `.morph` files, with sections:
//!
//! ```text
//! seed: 7
//! output: runs/demo
//!
//! [train]        # TrainConfig fields, plus `architecture` and `network`
//! [ranges]       # embodiment randomization half-widths
//! [domain]       # hidden randomization widths and observation noise
//! [curriculum]   # delta_beta, min_episode_fraction, max_tracking_error, min_return
//! [env]          # horizon, reward weights, perturbations
//! [robots]       # `path: file.morph` or `template: name`, repeated; optional `holdout:`
//! ```
//!
//! Relative robot paths are resolved against the config file's directory.
//! Command-line flags override `seed` and `output`.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::kv::{self, Num, Pair, ParseError, Section, Tuple};
use crate::morphology::{parse_morphology, Morphology};
use crate::network::baselines::BaselineConfig;
use crate::network::urma::UrmaConfig;
use crate::templates;
use crate::trainer::{ArchSpec, TrainSetup};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Parse { path: String, source: ParseError },
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub setup: TrainSetup,
    /// Width preset name, `desk` or `full`.
    pub network: String,
    pub output: Option<PathBuf>,
    pub holdout: Option<Arc<Morphology>>,
    /// Where each training robot came from (file path or `template:<name>`).
    pub robot_sources: Vec<String>,
    /// SHA-256 of the config text.
    pub hash: String,
    pub text: String,
}

/// Reads and validates a robot file.
pub fn load_robot(path: &Path) -> Result<Morphology, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.display().to_string(),
        source,
    })?;
    parse_morphology(&text).map_err(|source| ConfigError::Parse {
        path: path.display().to_string(),
        source,
    })
}

fn invalid(p: &Pair, section: &str, msg: impl std::fmt::Display) -> ConfigError {
    ConfigError::Invalid(format!("line {}: {section}.{}: {msg}", p.line, p.key))
}

/// Applies each pair of `section` through `apply`, rejecting unknown and repeated keys.
fn apply_section(
    file: &str,
    section: &Section,
    mut apply: impl FnMut(&Pair) -> Result<bool, ParseError>,
) -> Result<(), ConfigError> {
    let mut seen: Vec<&str> = Vec::new();
    if let Some(b) = section.blocks.first() {
        return Err(ConfigError::Invalid(format!("line {}: blocks are not allowed in [{}]", b.line, section.name)));
    }
    for p in &section.pairs {
        if seen.contains(&p.key.as_str()) {
            return Err(invalid(p, &section.name, "repeated key"));
        }
        seen.push(&p.key);
        let known = apply(p).map_err(|source| ConfigError::Parse {
            path: file.to_string(),
            source,
        })?;
        if !known {
            return Err(invalid(p, &section.name, "unknown key"));
        }
    }
    Ok(())
}

pub fn parse_run_config(text: &str, base_dir: &Path, file: &str) -> Result<RunConfig, ConfigError> {
    let doc = kv::parse_document(text).map_err(|source| ConfigError::Parse {
        path: file.to_string(),
        source,
    })?;
    let mut setup = TrainSetup::new(Vec::new(), ArchSpec::Urma(UrmaConfig::desk()));
    let mut output = None;
    apply_section(file, &doc.root, |p| {
        match p.key.as_str() {
            "seed" => setup.train.seed = p.as_u64()?,
            "output" => output = Some(PathBuf::from(&p.value)),
            _ => return Ok(false),
        }
        Ok(true)
    })?;

    let mut architecture = "urma_v2".to_string();
    let mut network = "desk".to_string();
    let mut robot_sources = Vec::new();
    let mut robots = Vec::new();
    let mut holdout = None;
    for section in &doc.sections {
        match section.name.as_str() {
            "train" => {
                let t = &mut setup.train;
                apply_section(file, section, |p| {
                    match p.key.as_str() {
                        "envs_per_robot" => t.envs_per_robot = p.as_usize()?,
                        "rollout_length" => t.rollout_length = p.as_usize()?,
                        "epochs" => t.epochs = p.as_usize()?,
                        "minibatches" => t.minibatches = p.as_usize()?,
                        "clip_epsilon" => t.clip_epsilon = p.as_f64()?,
                        "gamma" => t.gamma = p.as_f64()?,
                        "gae_lambda" => t.gae_lambda = p.as_f64()?,
                        "learning_rate" => t.learning_rate = p.as_f64()?,
                        "entropy_coef" => t.entropy_coef = p.as_f64()?,
                        "value_coef" => t.value_coef = p.as_f64()?,
                        "max_grad_norm" => t.max_grad_norm = p.as_f64()?,
                        "total_steps" => t.total_steps = p.as_u64()?,
                        "checkpoint_every" => t.checkpoint_every = p.as_usize()?,
                        "threads" => t.threads = p.as_usize()?,
                        "architecture" => architecture = p.value.clone(),
                        "network" => network = p.value.clone(),
                        _ => return Ok(false),
                    }
                    Ok(true)
                })?;
            }
            "ranges" => {
                let r = &mut setup.randomizer.er;
                apply_section(file, section, |p| {
                    let v = p.as_f64()?;
                    match p.key.as_str() {
                        "body_size" => r.body_size = v,
                        "body_position" => r.body_position = v,
                        "mass" => r.mass = v,
                        "inertia" => r.inertia = v,
                        "com_offset" => r.com_offset = v,
                        "axis_tilt" => r.axis_tilt = v,
                        "imu_offset" => r.imu_offset = v,
                        "torque_limit" => r.torque_limit = v,
                        "velocity_limit" => r.velocity_limit = v,
                        "position_limit" => r.position_limit = v,
                        "damping" => r.damping = v,
                        "friction" => r.friction = v,
                        "armature" => r.armature = v,
                        "stiffness" => r.stiffness = v,
                        "nominal_position" => r.nominal_position = v,
                        "kp" => r.kp = v,
                        "kd" => r.kd = v,
                        "action_scale" => r.action_scale = v,
                        "resample_probability_max" => r.resample_probability_max = v,
                        _ => return Ok(false),
                    }
                    Ok(true)
                })?;
            }
            "domain" => {
                let d = &mut setup.randomizer.dr;
                apply_section(file, section, |p| {
                    let v = p.as_f64()?;
                    match p.key.as_str() {
                        "multiplier" => d.multiplier = v,
                        "noise_joint_position" => d.noise_joint_position = v,
                        "noise_joint_velocity" => d.noise_joint_velocity = v,
                        "noise_linear_velocity" => d.noise_linear_velocity = v,
                        "noise_angular_velocity" => d.noise_angular_velocity = v,
                        "noise_gravity" => d.noise_gravity = v,
                        _ => return Ok(false),
                    }
                    Ok(true)
                })?;
            }
            "curriculum" => {
                let c = &mut setup.curriculum;
                apply_section(file, section, |p| {
                    match p.key.as_str() {
                        "delta_beta" => c.delta_beta = p.as_f64()?,
                        "min_episode_fraction" => c.min_episode_fraction = p.as_f64()?,
                        "max_tracking_error" => c.max_tracking_error = p.as_f64()?,
                        "min_return" => c.min_return = Some(p.as_f64()?),
                        _ => return Ok(false),
                    }
                    Ok(true)
                })?;
            }
            "env" => {
                let e = &mut setup.env;
                apply_section(file, section, |p| {
                    match p.key.as_str() {
                        "horizon" => e.horizon = p.as_usize()?,
                        "tracking_weight" => e.reward.tracking_weight = p.as_f64()?,
                        "tracking_width" => e.reward.tracking_width = p.as_f64()?,
                        "torque_penalty" => e.reward.torque = p.as_pair()?,
                        "action_rate_penalty" => e.reward.action_rate = p.as_pair()?,
                        "joint_velocity_penalty" => e.reward.joint_velocity = p.as_pair()?,
                        "orientation_penalty" => e.reward.orientation = p.as_pair()?,
                        "action_scale" => e.action_scale = p.as_f64()?,
                        "command_max" => e.command_max = p.as_vec3()?,
                        "tilt_limit" => e.tilt_limit = p.as_pair()?,
                        "push_interval" => {
                            let (lo, hi) = p.as_pair()?;
                            e.push_interval = (lo as u32, hi as u32);
                        }
                        "push_magnitude" => e.push_magnitude = p.as_f64()?,
                        "trunk_lag" => e.trunk_lag = p.as_f64()?,
                        "velocity_feedthrough" => e.velocity_feedthrough = p.as_f64()?,
                        "yaw_gain" => e.yaw_gain = p.as_f64()?,
                        "upright_gain" => e.upright_gain = p.as_f64()?,
                        "contact_depth" => e.contact_depth = p.as_f64()?,
                        _ => return Ok(false),
                    }
                    Ok(true)
                })?;
            }
            "robots" => {
                if let Some(b) = section.blocks.first() {
                    return Err(ConfigError::Invalid(format!("line {}: blocks are not allowed in [robots]", b.line)));
                }
                for p in &section.pairs {
                    let (source, robot) = match p.key.as_str() {
                        "path" | "holdout" => {
                            let path = base_dir.join(&p.value);
                            (path.display().to_string(), load_robot(&path)?)
                        }
                        "template" => {
                            let m = templates::load(&p.value)
                                .map_err(|_| invalid(p, "robots", format!("unknown template `{}`", p.value)))?;
                            (format!("template:{}", p.value), m)
                        }
                        _ => return Err(invalid(p, "robots", "unknown key")),
                    };
                    if p.key == "holdout" {
                        if holdout.is_some() {
                            return Err(invalid(p, "robots", "only one holdout robot is allowed"));
                        }
                        holdout = Some(Arc::new(robot));
                    } else {
                        robot_sources.push(source);
                        robots.push(Arc::new(robot));
                    }
                }
            }
            other => {
                return Err(ConfigError::Invalid(format!("line {}: unknown section [{other}]", section.line)));
            }
        }
    }
    if let Some(h) = &holdout {
        if robots.iter().any(|r| r.as_ref() == h.as_ref() || r.name == h.name) {
            return Err(ConfigError::Invalid(format!("holdout robot `{}` is also in the training list", h.name)));
        }
    }
    setup.robots = robots;
    setup.arch = arch_from_names(&architecture, &network)?;
    setup.validate().map_err(ConfigError::Invalid)?;
    let hash = Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect();
    Ok(RunConfig {
        setup,
        network,
        output,
        holdout,
        robot_sources,
        hash,
        text: text.to_string(),
    })
}

/// `network` picks the width preset: `desk` (narrow) or `full`.
pub fn arch_from_names(architecture: &str, network: &str) -> Result<ArchSpec, ConfigError> {
    let full = match network {
        "desk" => false,
        "full" => true,
        other => return Err(ConfigError::Invalid(format!("train.network must be `desk` or `full`, got `{other}`"))),
    };
    let baseline = if full { BaselineConfig::default() } else { BaselineConfig::desk() };
    Ok(match architecture {
        "urma_v2" => ArchSpec::Urma(if full { UrmaConfig::default() } else { UrmaConfig::desk() }),
        "zero_padding" => ArchSpec::ZeroPadding(baseline),
        "multi_head" => ArchSpec::MultiHead(baseline),
        other => {
            return Err(ConfigError::Invalid(format!(
                "train.architecture must be urma_v2, zero_padding or multi_head, got `{other}`"
            )))
        }
    })
}

/// Writes every setting explicitly, with robots referenced by `robot_paths`
/// (training robots first, then the holdout). Parsing the result gives back
/// the same setup.
pub fn render_run_config(config: &RunConfig, robot_paths: &[String]) -> String {
    let s = &config.setup;
    let mut out = String::new();
    let num = |v: f64| Num(v).to_string();
    let pair = |p: (f64, f64)| Tuple(&[p.0, p.1]).to_string();
    line(&mut out, "seed", s.train.seed.to_string());
    if let Some(o) = &config.output {
        line(&mut out, "output", o.display().to_string());
    }
    let t = &s.train;
    out.push_str("\n[train]\n");
    line(&mut out, "architecture", s.arch.name().to_string());
    line(&mut out, "network", config.network.clone());
    for (k, v) in [
        ("envs_per_robot", t.envs_per_robot as u64),
        ("rollout_length", t.rollout_length as u64),
        ("epochs", t.epochs as u64),
        ("minibatches", t.minibatches as u64),
        ("total_steps", t.total_steps),
        ("checkpoint_every", t.checkpoint_every as u64),
        ("threads", t.threads as u64),
    ] {
        line(&mut out, k, v.to_string());
    }
    for (k, v) in [
        ("clip_epsilon", t.clip_epsilon),
        ("gamma", t.gamma),
        ("gae_lambda", t.gae_lambda),
        ("learning_rate", t.learning_rate),
        ("entropy_coef", t.entropy_coef),
        ("value_coef", t.value_coef),
        ("max_grad_norm", t.max_grad_norm),
    ] {
        line(&mut out, k, num(v));
    }
    let r = &s.randomizer.er;
    out.push_str("\n[ranges]\n");
    for (k, v) in [
        ("body_size", r.body_size),
        ("body_position", r.body_position),
        ("mass", r.mass),
        ("inertia", r.inertia),
        ("com_offset", r.com_offset),
        ("axis_tilt", r.axis_tilt),
        ("imu_offset", r.imu_offset),
        ("torque_limit", r.torque_limit),
        ("velocity_limit", r.velocity_limit),
        ("position_limit", r.position_limit),
        ("damping", r.damping),
        ("friction", r.friction),
        ("armature", r.armature),
        ("stiffness", r.stiffness),
        ("nominal_position", r.nominal_position),
        ("kp", r.kp),
        ("kd", r.kd),
        ("action_scale", r.action_scale),
        ("resample_probability_max", r.resample_probability_max),
    ] {
        line(&mut out, k, num(v));
    }
    let d = &s.randomizer.dr;
    out.push_str("\n[domain]\n");
    for (k, v) in [
        ("multiplier", d.multiplier),
        ("noise_joint_position", d.noise_joint_position),
        ("noise_joint_velocity", d.noise_joint_velocity),
        ("noise_linear_velocity", d.noise_linear_velocity),
        ("noise_angular_velocity", d.noise_angular_velocity),
        ("noise_gravity", d.noise_gravity),
    ] {
        line(&mut out, k, num(v));
    }
    let c = &s.curriculum;
    out.push_str("\n[curriculum]\n");
    line(&mut out, "delta_beta", num(c.delta_beta));
    line(&mut out, "min_episode_fraction", num(c.min_episode_fraction));
    line(&mut out, "max_tracking_error", num(c.max_tracking_error));
    if let Some(m) = c.min_return {
        line(&mut out, "min_return", num(m));
    }
    let e = &s.env;
    out.push_str("\n[env]\n");
    line(&mut out, "horizon", e.horizon.to_string());
    line(&mut out, "tracking_weight", num(e.reward.tracking_weight));
    line(&mut out, "tracking_width", num(e.reward.tracking_width));
    line(&mut out, "torque_penalty", pair(e.reward.torque));
    line(&mut out, "action_rate_penalty", pair(e.reward.action_rate));
    line(&mut out, "joint_velocity_penalty", pair(e.reward.joint_velocity));
    line(&mut out, "orientation_penalty", pair(e.reward.orientation));
    line(&mut out, "action_scale", num(e.action_scale));
    line(&mut out, "command_max", Tuple(&e.command_max).to_string());
    line(&mut out, "tilt_limit", pair(e.tilt_limit));
    line(&mut out, "push_interval", format!("({}, {})", e.push_interval.0, e.push_interval.1));
    for (k, v) in [
        ("push_magnitude", e.push_magnitude),
        ("trunk_lag", e.trunk_lag),
        ("velocity_feedthrough", e.velocity_feedthrough),
        ("yaw_gain", e.yaw_gain),
        ("upright_gain", e.upright_gain),
        ("contact_depth", e.contact_depth),
    ] {
        line(&mut out, k, num(v));
    }
    out.push_str("\n[robots]\n");
    let n = s.robots.len();
    for (i, p) in robot_paths.iter().enumerate() {
        line(&mut out, if i < n { "path" } else { "holdout" }, p.clone());
    }
    out
}

fn line(out: &mut String, key: &str, value: String) {
    out.push_str(key);
    out.push_str(": ");
    out.push_str(&value);
    out.push('\n');
}

pub fn load_run_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.display().to_string(),
        source,
    })?;
    let dir = path.parent().unwrap_or(Path::new("."));
    parse_run_config(&text, dir, &path.display().to_string())
}
