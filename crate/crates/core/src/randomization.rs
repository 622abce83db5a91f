//! Embodiment randomization (visible to the policy) layered with domain
//! randomization (hidden from it).
//!
//! Every randomized quantity is drawn uniformly from a symmetric range whose
//! half-width is the configured value at `beta = 1`, multiplied by `beta`.
//! Relative groups scale the nominal value, absolute groups offset it.
//!
//! The toy robot has no separate body parts, so "body part size and
//! position" act on the joint attachment offsets: a per-dimension trunk size
//! scale shared by all joints, times a per-joint position scale.

use std::sync::Arc;

use crate::curriculum::scale;
use crate::morphology::{norm3, JointSpec, Morphology, Vec3};
use crate::rng::{RandomStream, SeedTrace};

/// Width of a joint description vector.
pub const DESC_DIM: usize = 20;

/// Offsets of the entries of a joint description vector.
pub mod desc {
    pub const AXIS: usize = 0;
    pub const ATTACH_OFFSET: usize = 3;
    pub const TORQUE_LIMIT: usize = 6;
    pub const VELOCITY_LIMIT: usize = 7;
    pub const POSITION_LO: usize = 8;
    pub const POSITION_HI: usize = 9;
    pub const DAMPING: usize = 10;
    pub const FRICTION: usize = 11;
    pub const ARMATURE: usize = 12;
    pub const STIFFNESS: usize = 13;
    pub const NOMINAL_POSITION: usize = 14;
    pub const KP: usize = 15;
    pub const KD: usize = 16;
    pub const ACTION_SCALE: usize = 17;
    pub const TRACK_NOMINAL: usize = 18;
    pub const JOINT_INDEX: usize = 19;
}

pub type JointDescription = [f64; DESC_DIM];

/// Half-widths at `beta = 1`. Fractions of nominal unless noted.
#[derive(Debug, Clone, PartialEq)]
pub struct ErRanges {
    pub body_size: f64,
    pub body_position: f64,
    pub mass: f64,
    pub inertia: f64,
    /// Absolute, metres.
    pub com_offset: f64,
    /// Absolute, radians.
    pub axis_tilt: f64,
    /// Absolute, metres.
    pub imu_offset: f64,
    pub torque_limit: f64,
    pub velocity_limit: f64,
    pub position_limit: f64,
    pub damping: f64,
    pub friction: f64,
    pub armature: f64,
    pub stiffness: f64,
    /// Absolute, radians.
    pub nominal_position: f64,
    pub kp: f64,
    pub kd: f64,
    pub action_scale: f64,
    pub resample_probability_max: f64,
}

impl Default for ErRanges {
    fn default() -> Self {
        ErRanges {
            body_size: 0.3,
            body_position: 0.2,
            mass: 0.5,
            inertia: 0.5,
            com_offset: 0.1,
            axis_tilt: 0.15,
            imu_offset: 0.05,
            torque_limit: 0.4,
            velocity_limit: 0.4,
            position_limit: 0.2,
            damping: 0.8,
            friction: 0.8,
            armature: 0.8,
            stiffness: 0.8,
            nominal_position: 0.2,
            kp: 0.4,
            kd: 0.4,
            action_scale: 0.3,
            resample_probability_max: 0.002,
        }
    }
}

impl ErRanges {
    pub fn validate(&self) -> Result<(), String> {
        let widths = [
            ("body_size", self.body_size),
            ("body_position", self.body_position),
            ("mass", self.mass),
            ("inertia", self.inertia),
            ("com_offset", self.com_offset),
            ("axis_tilt", self.axis_tilt),
            ("imu_offset", self.imu_offset),
            ("torque_limit", self.torque_limit),
            ("velocity_limit", self.velocity_limit),
            ("position_limit", self.position_limit),
            ("damping", self.damping),
            ("friction", self.friction),
            ("armature", self.armature),
            ("stiffness", self.stiffness),
            ("nominal_position", self.nominal_position),
            ("kp", self.kp),
            ("kd", self.kd),
            ("action_scale", self.action_scale),
        ];
        for (name, w) in widths {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(format!("ranges.{name} must be a finite half-width >= 0"));
            }
        }
        // Relative half-widths of 1 or more could zero out or flip positive quantities.
        for (name, w) in [
            ("mass", self.mass),
            ("inertia", self.inertia),
            ("torque_limit", self.torque_limit),
            ("velocity_limit", self.velocity_limit),
            ("kp", self.kp),
            ("action_scale", self.action_scale),
            ("body_size", self.body_size),
        ] {
            if w >= 1.0 {
                return Err(format!("ranges.{name} must be < 1"));
            }
        }
        if !(0.0..=1.0).contains(&self.resample_probability_max) {
            return Err("ranges.resample_probability_max must lie in [0, 1]".into());
        }
        Ok(())
    }
}

/// Hidden perturbations applied on top of the visible values.
#[derive(Debug, Clone, PartialEq)]
pub struct DrRanges {
    /// Relative half-width of the mass, friction, damping and gain multipliers.
    pub multiplier: f64,
    pub noise_joint_position: f64,
    pub noise_joint_velocity: f64,
    pub noise_linear_velocity: f64,
    pub noise_angular_velocity: f64,
    pub noise_gravity: f64,
}

impl Default for DrRanges {
    fn default() -> Self {
        DrRanges {
            multiplier: 0.1,
            noise_joint_position: 0.01,
            noise_joint_velocity: 0.15,
            noise_linear_velocity: 0.05,
            noise_angular_velocity: 0.1,
            noise_gravity: 0.03,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrunkEr {
    pub size_scale: Vec3,
    /// Applied to both mass and inertia.
    pub mass_inertia_scale: f64,
    pub mass_scale: f64,
    pub inertia_scale: Vec3,
    pub com: Vec3,
    pub imu_position: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointEr {
    /// Tilt angles about two directions perpendicular to the nominal axis.
    pub axis_tilt: [f64; 2],
    pub axis: Vec3,
    pub position_scale: Vec3,
    pub torque_limit_scale: f64,
    pub velocity_limit_scale: f64,
    pub position_lo: f64,
    pub position_hi: f64,
    pub damping_scale: f64,
    pub friction_scale: f64,
    pub armature_scale: f64,
    pub stiffness_scale: f64,
    pub nominal_position: f64,
    pub kp_scale: f64,
    pub kd_scale: f64,
    pub action_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErParams {
    pub trunk: TrunkEr,
    pub joints: Vec<JointEr>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointDr {
    pub friction: f64,
    pub damping: f64,
    pub kp: f64,
    pub kd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationNoise {
    pub joint_position: f64,
    pub joint_velocity: f64,
    pub linear_velocity: f64,
    pub angular_velocity: f64,
    pub gravity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrParams {
    pub mass: f64,
    pub joints: Vec<JointDr>,
    pub noise: ObservationNoise,
}

/// A concrete randomized robot.
#[derive(Debug, Clone, PartialEq)]
pub struct Embodiment {
    pub base: Arc<Morphology>,
    pub er: ErParams,
    pub dr: DrParams,
    pub descriptions: Vec<JointDescription>,
    pub seed_trace: Option<SeedTrace>,
}

/// Resolved per-joint physics (visible values times hidden multipliers).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointPhysics {
    pub axis: Vec3,
    /// Leverage rotated along with the joint axis.
    pub coupling: Vec3,
    /// Attachment point relative to the trunk centre of mass.
    pub lever_arm: Vec3,
    pub torque_limit: f64,
    pub velocity_limit: f64,
    pub position_lo: f64,
    pub position_hi: f64,
    pub damping: f64,
    pub friction: f64,
    pub armature: f64,
    pub stiffness: f64,
    pub nominal_position: f64,
    pub kp: f64,
    pub kd: f64,
    pub action_scale: f64,
    pub track_nominal: bool,
}

fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn normalize(v: Vec3) -> Vec3 {
    let n = norm3(&v);
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Two unit vectors completing `axis` to an orthonormal basis.
fn perpendicular_basis(axis: &Vec3) -> (Vec3, Vec3) {
    let helper = if axis[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let e1 = normalize(cross(axis, &helper));
    let e2 = cross(axis, &e1);
    (e1, e2)
}

/// Rotates `v` by the minimal rotation carrying unit vector `from` onto `to`.
fn rotate_between(v: &Vec3, from: &Vec3, to: &Vec3) -> Vec3 {
    let k = cross(from, to);
    let s = norm3(&k);
    let c = dot(from, to);
    if s < 1e-15 {
        return *v;
    }
    let k = [k[0] / s, k[1] / s, k[2] / s];
    let kxv = cross(&k, v);
    let kv = dot(&k, v);
    std::array::from_fn(|i| v[i] * c + kxv[i] * s + k[i] * kv * (1.0 - c))
}

fn relative(stream: &mut RandomStream, beta: f64, half_width: f64) -> f64 {
    1.0 + beta * half_width * stream.symmetric()
}

fn absolute(stream: &mut RandomStream, nominal: f64, beta: f64, half_width: f64) -> f64 {
    nominal + beta * half_width * stream.symmetric()
}

fn relative3(stream: &mut RandomStream, beta: f64, half_width: f64) -> Vec3 {
    std::array::from_fn(|_| relative(stream, beta, half_width))
}

/// Range configuration for [`Randomizer::sample_embodiment`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Randomizer {
    pub er: ErRanges,
    pub dr: DrRanges,
}

impl Randomizer {
    pub fn new(er: ErRanges, dr: DrRanges) -> Self {
        Randomizer { er, dr }
    }

    /// Draws a new embodiment of `base` at curriculum level `beta`.
    ///
    /// The draw order is fixed, so the result is a pure function of
    /// `(base, beta, stream position)`.
    pub fn sample_embodiment(&self, base: &Arc<Morphology>, beta: f64, stream: &mut RandomStream) -> Embodiment {
        let trace = stream.trace();
        let r = &self.er;
        let trunk = TrunkEr {
            size_scale: relative3(stream, beta, r.body_size),
            mass_inertia_scale: relative(stream, beta, r.mass),
            mass_scale: relative(stream, beta, r.mass),
            inertia_scale: relative3(stream, beta, r.inertia),
            com: std::array::from_fn(|i| absolute(stream, base.trunk_com[i], beta, r.com_offset)),
            imu_position: std::array::from_fn(|i| absolute(stream, base.imu_position[i], beta, r.imu_offset)),
        };
        let joints = base
            .joints
            .iter()
            .map(|j| {
                let tilt = [
                    absolute(stream, 0.0, beta, r.axis_tilt),
                    absolute(stream, 0.0, beta, r.axis_tilt),
                ];
                let (e1, e2) = perpendicular_basis(&j.axis);
                let (t1, t2) = (tilt[0].tan(), tilt[1].tan());
                let axis = if t1 == 0.0 && t2 == 0.0 {
                    j.axis
                } else {
                    normalize(std::array::from_fn(|i| j.axis[i] + t1 * e1[i] + t2 * e2[i]))
                };
                let position_scale = relative3(stream, beta, r.body_position);
                let torque_limit_scale = relative(stream, beta, r.torque_limit);
                let velocity_limit_scale = relative(stream, beta, r.velocity_limit);
                let mut lo = j.position_limits.0 * relative(stream, beta, r.position_limit);
                let mut hi = j.position_limits.1 * relative(stream, beta, r.position_limit);
                if lo > hi {
                    std::mem::swap(&mut lo, &mut hi);
                }
                let damping_scale = relative(stream, beta, r.damping);
                let friction_scale = relative(stream, beta, r.friction);
                let armature_scale = relative(stream, beta, r.armature);
                let stiffness_scale = relative(stream, beta, r.stiffness);
                let nominal_position = absolute(stream, j.nominal_position, beta, r.nominal_position).clamp(lo, hi);
                JointEr {
                    axis_tilt: tilt,
                    axis,
                    position_scale,
                    torque_limit_scale,
                    velocity_limit_scale,
                    position_lo: lo,
                    position_hi: hi,
                    damping_scale,
                    friction_scale,
                    armature_scale,
                    stiffness_scale,
                    nominal_position,
                    kp_scale: relative(stream, beta, r.kp),
                    kd_scale: relative(stream, beta, r.kd),
                    action_scale: relative(stream, beta, r.action_scale),
                }
            })
            .collect();
        let er = ErParams { trunk, joints };

        let d = &self.dr;
        let mass = relative(stream, beta, d.multiplier);
        let joints = base
            .joints
            .iter()
            .map(|_| JointDr {
                friction: relative(stream, beta, d.multiplier),
                damping: relative(stream, beta, d.multiplier),
                kp: relative(stream, beta, d.multiplier),
                kd: relative(stream, beta, d.multiplier),
            })
            .collect();
        let noise = ObservationNoise {
            joint_position: scale(0.0, d.noise_joint_position, beta),
            joint_velocity: scale(0.0, d.noise_joint_velocity, beta),
            linear_velocity: scale(0.0, d.noise_linear_velocity, beta),
            angular_velocity: scale(0.0, d.noise_angular_velocity, beta),
            gravity: scale(0.0, d.noise_gravity, beta),
        };
        let dr = DrParams { mass, joints, noise };
        let mut e = Embodiment {
            base: Arc::clone(base),
            descriptions: Vec::new(),
            er,
            dr,
            seed_trace: Some(trace),
        };
        e.descriptions = build_description_vectors(&e);
        e
    }

    /// Called once per environment step: with probability
    /// `beta * resample_probability_max` returns a fresh embodiment.
    pub fn maybe_resample(&self, current: &Embodiment, beta: f64, stream: &mut RandomStream) -> Option<Embodiment> {
        let p = scale(0.0, self.er.resample_probability_max, beta);
        (stream.unit() < p).then(|| self.sample_embodiment(&current.base, beta, stream))
    }
}

impl Embodiment {
    /// The unperturbed robot.
    pub fn nominal(base: Arc<Morphology>) -> Self {
        let trunk = TrunkEr {
            size_scale: [1.0; 3],
            mass_inertia_scale: 1.0,
            mass_scale: 1.0,
            inertia_scale: [1.0; 3],
            com: base.trunk_com,
            imu_position: base.imu_position,
        };
        let joints = base
            .joints
            .iter()
            .map(|j| JointEr {
                axis_tilt: [0.0; 2],
                axis: j.axis,
                position_scale: [1.0; 3],
                torque_limit_scale: 1.0,
                velocity_limit_scale: 1.0,
                position_lo: j.position_limits.0,
                position_hi: j.position_limits.1,
                damping_scale: 1.0,
                friction_scale: 1.0,
                armature_scale: 1.0,
                stiffness_scale: 1.0,
                nominal_position: j.nominal_position,
                kp_scale: 1.0,
                kd_scale: 1.0,
                action_scale: 1.0,
            })
            .collect();
        let dr = DrParams {
            mass: 1.0,
            joints: base
                .joints
                .iter()
                .map(|_| JointDr {
                    friction: 1.0,
                    damping: 1.0,
                    kp: 1.0,
                    kd: 1.0,
                })
                .collect(),
            noise: ObservationNoise {
                joint_position: 0.0,
                joint_velocity: 0.0,
                linear_velocity: 0.0,
                angular_velocity: 0.0,
                gravity: 0.0,
            },
        };
        let mut e = Embodiment {
            base,
            er: ErParams { trunk, joints },
            dr,
            descriptions: Vec::new(),
            seed_trace: None,
        };
        e.descriptions = build_description_vectors(&e);
        e
    }

    pub fn num_joints(&self) -> usize {
        self.base.joints.len()
    }

    /// The robot as the policy sees it: every visible parameter applied to
    /// the base morphology, hidden multipliers left out. The per-joint action
    /// scale has no morphology field and only appears in the descriptions.
    pub fn visible_morphology(&self) -> Morphology {
        let t = &self.er.trunk;
        let base = &self.base;
        let joints = base
            .joints
            .iter()
            .zip(&self.er.joints)
            .enumerate()
            .map(|(j, (spec, er))| JointSpec {
                axis: er.axis,
                torque_limit: spec.torque_limit * er.torque_limit_scale,
                velocity_limit: spec.velocity_limit * er.velocity_limit_scale,
                position_limits: (er.position_lo, er.position_hi),
                damping: spec.damping * er.damping_scale,
                friction: spec.friction * er.friction_scale,
                armature: spec.armature * er.armature_scale,
                stiffness: spec.stiffness * er.stiffness_scale,
                nominal_position: er.nominal_position,
                kp: spec.kp * er.kp_scale,
                kd: spec.kd * er.kd_scale,
                leverage: rotate_between(&spec.leverage, &spec.axis, &er.axis),
                attach_offset: self.attach_offset(j),
                ..spec.clone()
            })
            .collect();
        Morphology {
            name: base.name.clone(),
            trunk_mass: base.trunk_mass * t.mass_inertia_scale * t.mass_scale,
            trunk_inertia: std::array::from_fn(|i| base.trunk_inertia[i] * t.mass_inertia_scale * t.inertia_scale[i]),
            trunk_com: t.com,
            imu_position: t.imu_position,
            joints,
            control_frequency: base.control_frequency,
        }
    }

    /// Sampled attachment offset in the trunk frame.
    pub fn attach_offset(&self, j: usize) -> Vec3 {
        let nominal = &self.base.joints[j].attach_offset;
        let size = &self.er.trunk.size_scale;
        let pos = &self.er.joints[j].position_scale;
        std::array::from_fn(|i| nominal[i] * size[i] * pos[i])
    }

    /// Effective trunk mass including the hidden multiplier.
    pub fn trunk_mass(&self) -> f64 {
        let t = &self.er.trunk;
        self.base.trunk_mass * t.mass_inertia_scale * t.mass_scale * self.dr.mass
    }

    pub fn trunk_inertia(&self) -> Vec3 {
        let t = &self.er.trunk;
        std::array::from_fn(|i| self.base.trunk_inertia[i] * t.mass_inertia_scale * t.inertia_scale[i] * self.dr.mass)
    }

    /// IMU position relative to the centre of mass.
    pub fn imu_lever_arm(&self) -> Vec3 {
        sub(&self.er.trunk.imu_position, &self.er.trunk.com)
    }

    pub fn joint_physics(&self, j: usize) -> JointPhysics {
        let spec = &self.base.joints[j];
        let er = &self.er.joints[j];
        let dr = &self.dr.joints[j];
        JointPhysics {
            axis: er.axis,
            coupling: rotate_between(&spec.leverage, &spec.axis, &er.axis),
            lever_arm: sub(&self.attach_offset(j), &self.er.trunk.com),
            torque_limit: spec.torque_limit * er.torque_limit_scale,
            velocity_limit: spec.velocity_limit * er.velocity_limit_scale,
            position_lo: er.position_lo,
            position_hi: er.position_hi,
            damping: spec.damping * er.damping_scale * dr.damping,
            friction: spec.friction * er.friction_scale * dr.friction,
            armature: spec.armature * er.armature_scale,
            stiffness: spec.stiffness * er.stiffness_scale,
            nominal_position: er.nominal_position,
            kp: spec.kp * er.kp_scale * dr.kp,
            kd: spec.kd * er.kd_scale * dr.kd,
            action_scale: er.action_scale,
            track_nominal: spec.track_nominal,
        }
    }
}

/// Builds one description vector per joint from the visible parameters.
///
/// Limits and gains are reported relative to their own nominal value, so a
/// nominal robot reads exactly 1.0 in those slots. Position limits and the
/// nominal position are absolute radians; offsets are metres relative to the
/// sampled centre of mass.
pub fn build_description_vectors(e: &Embodiment) -> Vec<JointDescription> {
    let n = e.base.joints.len();
    e.base
        .joints
        .iter()
        .zip(&e.er.joints)
        .enumerate()
        .map(|(j, (spec, er))| {
            let mut d = [0.0; DESC_DIM];
            d[desc::AXIS..desc::AXIS + 3].copy_from_slice(&er.axis);
            let arm = sub(&e.attach_offset(j), &e.er.trunk.com);
            d[desc::ATTACH_OFFSET..desc::ATTACH_OFFSET + 3].copy_from_slice(&arm);
            d[desc::TORQUE_LIMIT] = er.torque_limit_scale;
            d[desc::VELOCITY_LIMIT] = er.velocity_limit_scale;
            d[desc::POSITION_LO] = er.position_lo;
            d[desc::POSITION_HI] = er.position_hi;
            d[desc::DAMPING] = er.damping_scale;
            d[desc::FRICTION] = er.friction_scale;
            d[desc::ARMATURE] = er.armature_scale;
            d[desc::STIFFNESS] = er.stiffness_scale;
            d[desc::NOMINAL_POSITION] = er.nominal_position;
            d[desc::KP] = er.kp_scale;
            d[desc::KD] = er.kd_scale;
            d[desc::ACTION_SCALE] = er.action_scale;
            d[desc::TRACK_NOMINAL] = if spec.track_nominal { 1.0 } else { 0.0 };
            d[desc::JOINT_INDEX] = if n > 1 { j as f64 / (n - 1) as f64 } else { 0.0 };
            d
        })
        .collect()
}
