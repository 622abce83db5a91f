//! Toy multi-embodiment locomotion environment.
//!
//! Joints are independent PD-actuated rotors with torque, velocity and
//! position limits, viscous damping, Coulomb friction, armature and a spring
//! towards the nominal position. The trunk is not simulated physically: each
//! joint contributes a drive signal `s_j = (q_j - nominal_j) + T_v * qd_j`
//! which is mapped through the joint's leverage vector to a target linear
//! velocity, and through `lever_arm x leverage` to a target angular velocity.
//! The trunk follows these targets with a first-order lag whose time
//! constants scale with mass and inertia, and a restoring term pulls the
//! trunk back upright. Sustained trunk velocity therefore needs sustained
//! joint deflection, which the PD controllers provide.
//!
//! Every randomized parameter enters either the joint dynamics or the trunk
//! mapping, so the description vectors carry information the policy needs.

use crate::curriculum::scale;
use crate::morphology::Vec3;
use crate::network::{D_GEN, D_OBS, D_OBS_CRITIC};
use crate::randomization::{cross, Embodiment, JointPhysics};
use crate::rng::RandomStream;

/// Reward weights. Penalty coefficients are `(value_at_beta0, value_at_beta1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardConfig {
    pub tracking_weight: f64,
    pub tracking_width: f64,
    pub torque: (f64, f64),
    pub action_rate: (f64, f64),
    pub joint_velocity: (f64, f64),
    pub orientation: (f64, f64),
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            tracking_weight: 0.1,
            tracking_width: 0.25,
            torque: (0.0, 0.01),
            action_rate: (0.0, 0.01),
            joint_velocity: (0.0, 0.005),
            orientation: (0.0, 0.1),
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.tracking_weight > 0.0 && self.tracking_weight.is_finite()) {
            return Err("env.tracking_weight must be > 0".into());
        }
        if !(self.tracking_width > 0.0 && self.tracking_width.is_finite()) {
            return Err("env.tracking_width must be > 0".into());
        }
        for (name, (a, b)) in [
            ("torque_penalty", self.torque),
            ("action_rate_penalty", self.action_rate),
            ("joint_velocity_penalty", self.joint_velocity),
            ("orientation_penalty", self.orientation),
        ] {
            if !(a >= 0.0 && b >= 0.0 && a.is_finite() && b.is_finite()) {
                return Err(format!("env.{name} must be >= 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub horizon: usize,
    pub reward: RewardConfig,
    /// Nominal action-to-target scale in radians; multiplied by the sampled factor.
    pub action_scale: f64,
    /// Command half-ranges `(v_x, v_y, yaw rate)` at `beta = 1`.
    pub command_max: Vec3,
    /// Tilt (rad) beyond which an episode terminates, `(beta0, beta1)`.
    pub tilt_limit: (f64, f64),
    /// Steps between pushes, drawn uniformly from this inclusive range.
    pub push_interval: (u32, u32),
    /// Push magnitude at `beta = 1` (m/s, and rad/s for roll and pitch rates).
    pub push_magnitude: f64,
    /// Trunk lag time constant (s) of the nominal robot.
    pub trunk_lag: f64,
    /// Weight of joint velocity in the drive signal (s).
    pub velocity_feedthrough: f64,
    pub yaw_gain: f64,
    pub upright_gain: f64,
    /// A foot touches the ground when its joint is this far below nominal (rad).
    pub contact_depth: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            horizon: 1000,
            reward: RewardConfig::default(),
            action_scale: 0.5,
            command_max: [1.0, 0.5, 1.0],
            tilt_limit: (0.8, 0.4),
            push_interval: (150, 250),
            push_magnitude: 0.5,
            trunk_lag: 0.1,
            velocity_feedthrough: 0.05,
            yaw_gain: 5.0,
            upright_gain: 2.0,
            contact_depth: 0.1,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.reward.validate()?;
        if self.horizon == 0 {
            return Err("env.horizon must be > 0".into());
        }
        let positive = [
            ("action_scale", self.action_scale),
            ("trunk_lag", self.trunk_lag),
            ("tilt_limit", self.tilt_limit.0.min(self.tilt_limit.1)),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("env.{name} must be > 0"));
            }
        }
        let nonneg = [
            ("push_magnitude", self.push_magnitude),
            ("velocity_feedthrough", self.velocity_feedthrough),
            ("yaw_gain", self.yaw_gain),
            ("upright_gain", self.upright_gain),
            ("contact_depth", self.contact_depth),
            ("command_max", self.command_max.iter().copied().fold(f64::INFINITY, f64::min)),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("env.{name} must be >= 0"));
            }
        }
        if self.push_interval.0 == 0 || self.push_interval.0 > self.push_interval.1 {
            return Err("env.push_interval must be (lo, hi) with 0 < lo <= hi".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    /// Trunk-frame linear velocity at the centre of mass.
    pub lin_vel: Vec3,
    /// Trunk-frame angular velocity.
    pub ang_vel: Vec3,
    /// Trunk-to-world rotation `(w, x, y, z)`.
    pub orientation: [f64; 4],
    pub step_index: usize,
    /// `(v_x, v_y, yaw rate)`.
    pub command: Vec3,
    /// One flag per joint; always false for joints that are not feet.
    pub foot_contact: Vec<bool>,
    pub prev_action: Vec<f64>,
    pub steps_to_push: u32,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepInfo {
    pub tracking_error: f64,
    /// Tilt limit exceeded (or numeric failure).
    pub terminated: bool,
    /// Horizon reached.
    pub truncated: bool,
    pub error: Option<String>,
}

/// Actor and critic views of one environment.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub joint: Vec<[f64; D_OBS]>,
    pub general: [f64; D_GEN],
    pub critic_joint: Vec<[f64; D_OBS_CRITIC]>,
    pub critic_general: [f64; D_GEN],
}

/// The last joint of every morphology is its foot.
pub fn is_foot(j: usize, num_joints: usize) -> bool {
    j + 1 == num_joints
}

/// Mean effective rotor inertia per joint: the trunk inertia shared across
/// joints and axes.
pub fn inertia_proxy(e: &Embodiment) -> f64 {
    let inertia = e.trunk_inertia();
    inertia.iter().sum::<f64>() / (3.0 * e.num_joints() as f64)
}

pub fn pd_target(p: &JointPhysics, action: f64, nominal_action_scale: f64) -> f64 {
    if p.track_nominal {
        p.nominal_position
    } else {
        p.nominal_position + nominal_action_scale * p.action_scale * action
    }
}

pub fn pd_torque(p: &JointPhysics, target: f64, q: f64, qd: f64) -> f64 {
    (p.kp * (target - q) - p.kd * qd).clamp(-p.torque_limit, p.torque_limit)
}

/// One semi-implicit Euler step of a single joint under `torque`.
///
/// Friction opposes the current velocity but never reverses it within a
/// step; velocity is clamped to the limit and position hard-clamped to the
/// range with any outward velocity removed.
pub fn joint_step(p: &JointPhysics, inertia: f64, dt: f64, q: f64, qd: f64, torque: f64) -> (f64, f64) {
    let mass = inertia + p.armature;
    let accel = (torque - p.damping * qd - p.stiffness * (q - p.nominal_position)) / mass;
    let free = qd + dt * accel;
    let friction = dt * p.friction * qd.signum() * f64::from(qd != 0.0) / mass;
    let mut qd_next = free - friction;
    if free != 0.0 && qd_next.signum() != free.signum() {
        qd_next = 0.0;
    }
    qd_next = qd_next.clamp(-p.velocity_limit, p.velocity_limit);
    let mut q_next = q + dt * qd_next;
    if q_next < p.position_lo {
        q_next = p.position_lo;
        qd_next = qd_next.max(0.0);
    } else if q_next > p.position_hi {
        q_next = p.position_hi;
        qd_next = qd_next.min(0.0);
    }
    (q_next, qd_next)
}

fn quat_mul(a: &[f64; 4], b: &[f64; 4]) -> [f64; 4] {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

/// World up expressed in the trunk frame.
pub fn up_in_trunk(q: &[f64; 4]) -> Vec3 {
    let [w, x, y, z] = *q;
    // Third row of the trunk-to-world rotation matrix.
    [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)]
}

/// Angle between trunk up and world up.
pub fn tilt(q: &[f64; 4]) -> f64 {
    up_in_trunk(q)[2].clamp(-1.0, 1.0).acos()
}

fn integrate_orientation(q: &[f64; 4], omega: &Vec3, dt: f64) -> [f64; 4] {
    let angle = (omega[0] * omega[0] + omega[1] * omega[1] + omega[2] * omega[2]).sqrt() * dt;
    let dq = if angle < 1e-300 {
        [1.0, 0.0, 0.0, 0.0]
    } else {
        let s = (angle / 2.0).sin() / (angle / dt);
        [(angle / 2.0).cos(), omega[0] * s, omega[1] * s, omega[2] * s]
    };
    let r = quat_mul(q, &dq);
    let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    r.map(|v| v / n)
}

fn contact_flags(e: &Embodiment, q: &[f64], depth: f64) -> Vec<bool> {
    let n = q.len();
    (0..n)
        .map(|j| is_foot(j, n) && q[j] < e.er.joints[j].nominal_position - depth)
        .collect()
}

fn sample_push_interval(cfg: &EnvConfig, stream: &mut RandomStream) -> u32 {
    let (lo, hi) = cfg.push_interval;
    lo + stream.below((hi - lo + 1) as usize) as u32
}

/// Rest state at the embodiment's nominal posture with a fresh command.
///
/// `stream` supplies the command and the first push delay.
pub fn reset(cfg: &EnvConfig, e: &Embodiment, beta: f64, stream: &mut RandomStream) -> EnvState {
    let n = e.num_joints();
    let q: Vec<f64> = e.er.joints.iter().map(|j| j.nominal_position).collect();
    let command = std::array::from_fn(|i| scale(0.0, cfg.command_max[i], beta) * stream.symmetric());
    let foot_contact = contact_flags(e, &q, cfg.contact_depth);
    EnvState {
        q,
        qd: vec![0.0; n],
        lin_vel: [0.0; 3],
        ang_vel: [0.0; 3],
        orientation: [1.0, 0.0, 0.0, 0.0],
        step_index: 0,
        command,
        foot_contact,
        prev_action: vec![0.0; n],
        steps_to_push: sample_push_interval(cfg, stream),
    }
}

/// Puts the joints of a newly sampled embodiment at rest in their nominal
/// positions, so no joint starts outside its new limits. Trunk state,
/// command and episode progress are kept.
pub fn adapt_to_embodiment(state: &mut EnvState, e: &Embodiment, cfg: &EnvConfig) {
    for j in 0..state.q.len() {
        state.q[j] = e.er.joints[j].nominal_position;
        state.qd[j] = 0.0;
    }
    state.foot_contact = contact_flags(e, &state.q, cfg.contact_depth);
}

/// Velocity-tracking error `|(v_x, v_y, yaw rate) - command|`.
pub fn tracking_error(state: &EnvState) -> f64 {
    let d = [
        state.lin_vel[0] - state.command[0],
        state.lin_vel[1] - state.command[1],
        state.ang_vel[2] - state.command[2],
    ];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

fn has_non_finite(state: &EnvState) -> bool {
    state.q.iter().chain(&state.qd).chain(&state.lin_vel).chain(&state.ang_vel).chain(&state.orientation).any(|v| !v.is_finite())
}

/// Advances one control step. `stream` drives the push perturbations.
pub fn step(
    cfg: &EnvConfig,
    state: &EnvState,
    actions: &[f64],
    e: &Embodiment,
    beta: f64,
    stream: &mut RandomStream,
) -> (EnvState, f64, bool, StepInfo) {
    let n = e.num_joints();
    assert_eq!(actions.len(), n, "expected {n} actions");
    if let Some(bad) = actions.iter().position(|a| !a.is_finite()) {
        let info = StepInfo {
            terminated: true,
            error: Some(format!("non-finite action for joint {bad}")),
            ..StepInfo::default()
        };
        return (state.clone(), 0.0, true, info);
    }
    let dt = 1.0 / e.base.control_frequency;
    let inertia = inertia_proxy(e);
    let mut next = state.clone();
    let mut v_target = [0.0; 3];
    let mut w_target = [0.0; 3];
    let (mut torque_cost, mut rate_cost, mut vel_cost) = (0.0, 0.0, 0.0);
    for j in 0..n {
        let p = e.joint_physics(j);
        let target = pd_target(&p, actions[j], cfg.action_scale);
        let torque = pd_torque(&p, target, state.q[j], state.qd[j]);
        let (q, qd) = joint_step(&p, inertia, dt, state.q[j], state.qd[j], torque);
        next.q[j] = q;
        next.qd[j] = qd;
        let drive = (q - p.nominal_position) + cfg.velocity_feedthrough * qd;
        let moment = cross(&p.lever_arm, &p.coupling);
        for i in 0..3 {
            v_target[i] += p.coupling[i] * drive;
            w_target[i] += cfg.yaw_gain * moment[i] * drive;
        }
        torque_cost += (torque / p.torque_limit).powi(2);
        rate_cost += (actions[j] - state.prev_action[j]).powi(2);
        vel_cost += (qd / p.velocity_limit).powi(2);
    }
    let inv_n = 1.0 / n as f64;
    let up = up_in_trunk(&state.orientation);
    let upright = cross(&[0.0, 0.0, 1.0], &up);
    for i in 0..3 {
        v_target[i] *= inv_n;
        w_target[i] = w_target[i] * inv_n + cfg.upright_gain * upright[i];
    }
    let mass_ratio = e.trunk_mass() / e.base.trunk_mass;
    let inertia_now = e.trunk_inertia();
    for i in 0..3 {
        let kv = (dt / (cfg.trunk_lag * mass_ratio)).min(1.0);
        next.lin_vel[i] += kv * (v_target[i] - state.lin_vel[i]);
        let kw = (dt / (cfg.trunk_lag * inertia_now[i] / e.base.trunk_inertia[i])).min(1.0);
        next.ang_vel[i] += kw * (w_target[i] - state.ang_vel[i]);
    }

    if next.steps_to_push <= 1 {
        let magnitude = scale(0.0, cfg.push_magnitude, beta);
        let heading = std::f64::consts::TAU * stream.unit();
        let (s, c) = heading.sin_cos();
        next.lin_vel[0] += magnitude * c;
        next.lin_vel[1] += magnitude * s;
        next.ang_vel[0] += magnitude * s;
        next.ang_vel[1] -= magnitude * c;
        next.steps_to_push = sample_push_interval(cfg, stream);
    } else {
        next.steps_to_push -= 1;
    }

    next.orientation = integrate_orientation(&state.orientation, &next.ang_vel, dt);
    next.step_index += 1;
    next.prev_action = actions.to_vec();
    next.foot_contact = contact_flags(e, &next.q, cfg.contact_depth);

    if has_non_finite(&next) {
        let info = StepInfo {
            terminated: true,
            error: Some(format!("non-finite state at step {}", next.step_index)),
            ..StepInfo::default()
        };
        return (next, 0.0, true, info);
    }

    let err = tracking_error(&next);
    let tilt_now = tilt(&next.orientation);
    let r = &cfg.reward;
    let reward = r.tracking_weight * (-err * err / r.tracking_width).exp()
        - scale(r.torque.0, r.torque.1, beta) * torque_cost * inv_n
        - scale(r.action_rate.0, r.action_rate.1, beta) * rate_cost * inv_n
        - scale(r.joint_velocity.0, r.joint_velocity.1, beta) * vel_cost * inv_n
        - scale(r.orientation.0, r.orientation.1, beta) * tilt_now * tilt_now;
    let terminated = tilt_now > scale(cfg.tilt_limit.0, cfg.tilt_limit.1, beta);
    let truncated = !terminated && next.step_index >= cfg.horizon;
    let info = StepInfo {
        tracking_error: err,
        terminated,
        truncated,
        error: None,
    };
    (next, reward, terminated || truncated, info)
}

/// Builds the actor's (noisy) and critic's (noise-free) observations.
///
/// Noise standard deviations come from the embodiment's hidden parameters;
/// `stream` is only consumed when they are non-zero.
pub fn observe(state: &EnvState, e: &Embodiment, beta: f64, stream: &mut RandomStream) -> Observation {
    let noise = &e.dr.noise;
    let mut draw = |std: f64| if std > 0.0 { std * stream.normal() } else { 0.0 };
    let n = e.num_joints();
    let mut joint = Vec::with_capacity(n);
    let mut critic_joint = Vec::with_capacity(n);
    for j in 0..n {
        let flag = if e.base.joints[j].track_nominal { 1.0 } else { 0.0 };
        let (q, qd, a) = (state.q[j], state.qd[j], state.prev_action[j]);
        joint.push([q + draw(noise.joint_position), qd + draw(noise.joint_velocity), a, flag]);
        critic_joint.push([q, qd, a, flag, f64::from(u8::from(state.foot_contact[j]))]);
    }
    // The IMU sits away from the centre of mass and sees the rotational term too.
    let arm = e.imu_lever_arm();
    let wxr = cross(&state.ang_vel, &arm);
    let imu_vel: Vec3 = std::array::from_fn(|i| state.lin_vel[i] + wxr[i]);
    let up = up_in_trunk(&state.orientation);
    let gravity = up.map(|v| -v);
    let mut critic_general = [0.0; D_GEN];
    critic_general[0..3].copy_from_slice(&imu_vel);
    critic_general[3..6].copy_from_slice(&state.ang_vel);
    critic_general[6..9].copy_from_slice(&gravity);
    critic_general[9..12].copy_from_slice(&state.command);
    critic_general[12] = beta;
    let mut general = critic_general;
    for v in &mut general[0..3] {
        *v += draw(noise.linear_velocity);
    }
    for v in &mut general[3..6] {
        *v += draw(noise.angular_velocity);
    }
    let noisy: Vec3 = std::array::from_fn(|i| gravity[i] + draw(noise.gravity));
    let norm = (noisy[0] * noisy[0] + noisy[1] * noisy[1] + noisy[2] * noisy[2]).sqrt();
    for i in 0..3 {
        general[6 + i] = noisy[i] / norm;
    }
    Observation {
        joint,
        general,
        critic_joint,
        critic_general,
    }
}

/// Header of the trajectory CSV written by `inspect`.
pub fn trajectory_header(num_joints: usize) -> String {
    let mut cols = vec!["step".to_string(), "env".into(), "reward".into(), "done".into(), "beta".into()];
    cols.extend((0..num_joints).map(|j| format!("q{j}")));
    cols.extend((0..num_joints).map(|j| format!("qd{j}")));
    cols.extend(["vx", "vy", "wz", "cmd_vx", "cmd_vy", "cmd_wz"].map(String::from));
    cols.join(",")
}

pub fn trajectory_row(step: usize, env: usize, reward: f64, done: bool, beta: f64, s: &EnvState) -> String {
    let mut cols = vec![step.to_string(), env.to_string(), reward.to_string(), u8::from(done).to_string(), beta.to_string()];
    cols.extend(s.q.iter().chain(&s.qd).map(f64::to_string));
    cols.extend([s.lin_vel[0], s.lin_vel[1], s.ang_vel[2]].iter().chain(&s.command).map(f64::to_string));
    cols.join(",")
}
