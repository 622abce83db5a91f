//! Nominal robot descriptions and the `.morph` file format.
//!
//! A morphology is a single trunk with an ordered list of actuated joints.
//! Joint order is semantic: it fixes the order of observations, actions and
//! description vectors everywhere downstream.
//!
//! `leverage` and `attach_offset` are extensions used only by the toy
//! locomotion dynamics in [`crate::env`].

use std::collections::HashSet;
use std::fmt::Write as _;

use crate::kv::{self, Block, Num, Pair, ParseError, Section, Tuple};

pub type Vec3 = [f64; 3];

pub const DEFAULT_DAMPING: f64 = 0.05;
pub const DEFAULT_FRICTION: f64 = 0.01;
pub const DEFAULT_ARMATURE: f64 = 0.01;
pub const DEFAULT_STIFFNESS: f64 = 0.0;
pub const DEFAULT_KD: f64 = 0.5;
pub const DEFAULT_CONTROL_FREQUENCY: f64 = 50.0;

const AXIS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct JointSpec {
    pub name: String,
    pub axis: Vec3,
    pub torque_limit: f64,
    pub velocity_limit: f64,
    pub position_limits: (f64, f64),
    pub damping: f64,
    pub friction: f64,
    pub armature: f64,
    pub stiffness: f64,
    pub nominal_position: f64,
    pub kp: f64,
    pub kd: f64,
    pub leverage: Vec3,
    pub attach_offset: Vec3,
    pub track_nominal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Morphology {
    pub name: String,
    pub trunk_mass: f64,
    pub trunk_inertia: Vec3,
    pub trunk_com: Vec3,
    pub imu_position: Vec3,
    pub joints: Vec<JointSpec>,
    pub control_frequency: f64,
}

pub fn norm3(v: &Vec3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

impl JointSpec {
    /// A joint with the documented defaults for every optional field.
    pub fn new(
        name: impl Into<String>,
        axis: Vec3,
        torque_limit: f64,
        velocity_limit: f64,
        position_limits: (f64, f64),
        nominal_position: f64,
        kp: f64,
    ) -> Self {
        JointSpec {
            name: name.into(),
            axis,
            torque_limit,
            velocity_limit,
            position_limits,
            damping: DEFAULT_DAMPING,
            friction: DEFAULT_FRICTION,
            armature: DEFAULT_ARMATURE,
            stiffness: DEFAULT_STIFFNESS,
            nominal_position,
            kp,
            kd: DEFAULT_KD,
            leverage: [0.0; 3],
            attach_offset: [0.0; 3],
            track_nominal: false,
        }
    }

    fn validate(&self) -> Result<(), ParseError> {
        let path = |field: &str| format!("joints[{}].{field}", self.name);
        if (norm3(&self.axis) - 1.0).abs() > AXIS_TOLERANCE {
            return Err(ParseError::semantic(path("axis"), "axis not unit norm"));
        }
        for (field, value) in [("torque_limit", self.torque_limit), ("velocity_limit", self.velocity_limit), ("kp", self.kp)] {
            if value <= 0.0 {
                return Err(ParseError::semantic(path(field), "must be > 0"));
            }
        }
        for (field, value) in [
            ("damping", self.damping),
            ("friction", self.friction),
            ("armature", self.armature),
            ("stiffness", self.stiffness),
            ("kd", self.kd),
        ] {
            if value < 0.0 {
                return Err(ParseError::semantic(path(field), "must be >= 0"));
            }
        }
        let (lo, hi) = self.position_limits;
        if lo >= hi {
            return Err(ParseError::semantic(path("position_limits"), "lower limit must be < upper limit"));
        }
        if !(lo..=hi).contains(&self.nominal_position) {
            return Err(ParseError::semantic(path("nominal_position"), "outside position_limits"));
        }
        Ok(())
    }
}

impl Morphology {
    pub fn num_joints(&self) -> usize {
        self.joints.len()
    }

    pub fn control_dt(&self) -> f64 {
        1.0 / self.control_frequency
    }

    /// Checks every typed invariant; errors name the offending field.
    pub fn validate(&self) -> Result<(), ParseError> {
        if !kv::is_name(&self.name) {
            return Err(ParseError::semantic("name", "invalid identifier"));
        }
        if self.trunk_mass <= 0.0 {
            return Err(ParseError::semantic("trunk_mass", "must be > 0"));
        }
        if self.trunk_inertia.iter().any(|&v| v <= 0.0) {
            return Err(ParseError::semantic("trunk_inertia", "components must be > 0"));
        }
        if self.control_frequency <= 0.0 {
            return Err(ParseError::semantic("control_frequency", "must be > 0"));
        }
        if self.joints.is_empty() {
            return Err(ParseError::semantic("joints", "at least one joint is required"));
        }
        let mut seen = HashSet::new();
        for joint in &self.joints {
            if !kv::is_name(&joint.name) {
                return Err(ParseError::semantic(format!("joints[{}].name", joint.name), "invalid identifier"));
            }
            if !seen.insert(joint.name.as_str()) {
                return Err(ParseError::DuplicateJoint(joint.name.clone()));
            }
            joint.validate()?;
        }
        Ok(())
    }
}

fn required<'a>(pairs: &'a [Pair], key: &str, path: &str, line: usize) -> Result<&'a Pair, ParseError> {
    pairs
        .iter()
        .find(|p| p.key == key)
        .ok_or_else(|| ParseError::syntax(line, 1, format!("missing required key `{path}{key}`")))
}

fn optional<'a>(pairs: &'a [Pair], key: &str) -> Option<&'a Pair> {
    pairs.iter().find(|p| p.key == key)
}

fn reject_unknown(pairs: &[Pair], known: &[&str]) -> Result<(), ParseError> {
    let mut seen = HashSet::new();
    for p in pairs {
        if !known.contains(&p.key.as_str()) {
            return Err(ParseError::syntax(p.line, 1, format!("unknown key `{}`", p.key)));
        }
        if !seen.insert(p.key.as_str()) {
            return Err(ParseError::syntax(p.line, 1, format!("duplicate key `{}`", p.key)));
        }
    }
    Ok(())
}

const TOP_KEYS: &[&str] = &["name", "trunk_mass", "trunk_inertia", "trunk_com", "imu_position", "control_frequency"];
const JOINT_KEYS: &[&str] = &[
    "axis",
    "torque_limit",
    "velocity_limit",
    "position_limits",
    "nominal_position",
    "kp",
    "kd",
    "damping",
    "friction",
    "armature",
    "stiffness",
    "leverage",
    "attach_offset",
    "track_nominal",
];

fn parse_joint(block: &Block) -> Result<JointSpec, ParseError> {
    if block.kind != "joint" {
        return Err(ParseError::syntax(block.line, 1, format!("unknown block kind `{}`", block.kind)));
    }
    let pairs = &block.pairs;
    reject_unknown(pairs, JOINT_KEYS)?;
    let path = format!("joints[{}].", block.name);
    let req = |key: &str| required(pairs, key, &path, block.line);
    let opt_f64 = |key: &str, default: f64| optional(pairs, key).map_or(Ok(default), Pair::as_f64);
    let opt_vec3 = |key: &str| optional(pairs, key).map_or(Ok([0.0; 3]), Pair::as_vec3);

    Ok(JointSpec {
        name: block.name.clone(),
        axis: req("axis")?.as_vec3()?,
        torque_limit: req("torque_limit")?.as_f64()?,
        velocity_limit: req("velocity_limit")?.as_f64()?,
        position_limits: req("position_limits")?.as_pair()?,
        nominal_position: req("nominal_position")?.as_f64()?,
        kp: req("kp")?.as_f64()?,
        kd: opt_f64("kd", DEFAULT_KD)?,
        damping: opt_f64("damping", DEFAULT_DAMPING)?,
        friction: opt_f64("friction", DEFAULT_FRICTION)?,
        armature: opt_f64("armature", DEFAULT_ARMATURE)?,
        stiffness: opt_f64("stiffness", DEFAULT_STIFFNESS)?,
        leverage: opt_vec3("leverage")?,
        attach_offset: opt_vec3("attach_offset")?,
        track_nominal: optional(pairs, "track_nominal").map_or(Ok(false), Pair::as_bool)?,
    })
}

fn morphology_from_section(section: &Section) -> Result<Morphology, ParseError> {
    let pairs = &section.pairs;
    reject_unknown(pairs, TOP_KEYS)?;
    let req = |key: &str| required(pairs, key, "", 1);
    let name = req("name")?;
    if !kv::is_name(&name.value) {
        return Err(ParseError::syntax(name.line, name.column, "invalid robot name"));
    }
    let joints = section.blocks.iter().map(parse_joint).collect::<Result<Vec<_>, _>>()?;
    let m = Morphology {
        name: name.value.clone(),
        trunk_mass: req("trunk_mass")?.as_f64()?,
        trunk_inertia: req("trunk_inertia")?.as_vec3()?,
        trunk_com: optional(pairs, "trunk_com").map_or(Ok([0.0; 3]), Pair::as_vec3)?,
        imu_position: optional(pairs, "imu_position").map_or(Ok([0.0; 3]), Pair::as_vec3)?,
        control_frequency: optional(pairs, "control_frequency")
            .map_or(Ok(DEFAULT_CONTROL_FREQUENCY), Pair::as_f64)?,
        joints,
    };
    m.validate()?;
    Ok(m)
}

/// Parses a `.morph` document.
pub fn parse_morphology(text: &str) -> Result<Morphology, ParseError> {
    let doc = kv::parse_document(text)?;
    if let Some(section) = doc.sections.first() {
        return Err(ParseError::syntax(section.line, 1, "sections are not allowed in .morph files"));
    }
    morphology_from_section(&doc.root)
}

/// Canonical text form. Key order is fixed and every optional field is
/// written out, so equal morphologies serialize to identical bytes.
pub fn serialize_morphology(m: &Morphology) -> String {
    let mut out = String::new();
    // Writing into a String cannot fail.
    let _ = writeln!(out, "name: {}", m.name);
    let _ = writeln!(out, "trunk_mass: {}", Num(m.trunk_mass));
    let _ = writeln!(out, "trunk_inertia: {}", Tuple(&m.trunk_inertia));
    let _ = writeln!(out, "trunk_com: {}", Tuple(&m.trunk_com));
    let _ = writeln!(out, "imu_position: {}", Tuple(&m.imu_position));
    let _ = writeln!(out, "control_frequency: {}", Num(m.control_frequency));
    for j in &m.joints {
        let _ = writeln!(out);
        let _ = writeln!(out, "joint {}:", j.name);
        let _ = writeln!(out, "  axis: {}", Tuple(&j.axis));
        let _ = writeln!(out, "  torque_limit: {}", Num(j.torque_limit));
        let _ = writeln!(out, "  velocity_limit: {}", Num(j.velocity_limit));
        let _ = writeln!(out, "  position_limits: {}", Tuple(&[j.position_limits.0, j.position_limits.1]));
        let _ = writeln!(out, "  nominal_position: {}", Num(j.nominal_position));
        let _ = writeln!(out, "  kp: {}", Num(j.kp));
        let _ = writeln!(out, "  kd: {}", Num(j.kd));
        let _ = writeln!(out, "  damping: {}", Num(j.damping));
        let _ = writeln!(out, "  friction: {}", Num(j.friction));
        let _ = writeln!(out, "  armature: {}", Num(j.armature));
        let _ = writeln!(out, "  stiffness: {}", Num(j.stiffness));
        let _ = writeln!(out, "  leverage: {}", Tuple(&j.leverage));
        let _ = writeln!(out, "  attach_offset: {}", Tuple(&j.attach_offset));
        let _ = writeln!(out, "  track_nominal: {}", j.track_nominal);
    }
    out
}
