//! Vectorized environments of one robot and rollout collection.

use std::sync::Arc;

use super::buffer::RobotSegment;
use super::TrainError;
use crate::curriculum::{CurriculumState, EpisodeStats};
use crate::env::{self, EnvConfig, EnvState, Observation};
use crate::morphology::Morphology;
use crate::network::graph::LOG_SQRT_2PI;
use crate::network::{ActorCritic, Graph, PolicyInput, Tensor, D_GEN, D_OBS, D_OBS_CRITIC};
use crate::randomization::{Embodiment, Randomizer, DESC_DIM};
use crate::rng::{Purpose, RandomStream};

/// Log-density of `a` under `N(mu, exp(log_std)^2)`, written exactly as the graph op computes it.
pub fn gaussian_log_prob(mu: f64, log_std: f64, a: f64) -> f64 {
    let z = (a - mu) * (-log_std).exp();
    -0.5 * z * z - log_std - LOG_SQRT_2PI
}

#[derive(Debug, Clone)]
pub struct EnvSlot {
    pub embodiment: Embodiment,
    pub state: EnvState,
    pub obs: Observation,
    pub embodiment_stream: RandomStream,
    pub dynamics_stream: RandomStream,
    pub noise_stream: RandomStream,
    pub command_stream: RandomStream,
    pub policy_stream: RandomStream,
    table_row: usize,
    episode_length: usize,
    error_sum: f64,
    episode_return: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinishedEpisode {
    pub env: usize,
    pub stats: EpisodeStats,
    pub success: bool,
}

/// All environments of one base morphology plus its curriculum.
#[derive(Debug, Clone)]
pub struct RobotGroup {
    pub robot: usize,
    pub base: Arc<Morphology>,
    pub curriculum: CurriculumState,
    pub envs: Vec<EnvSlot>,
    /// Episodes finished since the last call to [`RobotGroup::take_episodes`].
    pub episodes: Vec<FinishedEpisode>,
    /// Judge episodes without moving the curriculum (evaluation).
    pub frozen: bool,
}

impl RobotGroup {
    /// Streams are derived from `(seed, robot, env index)`, so the group's
    /// trajectory does not depend on how many other robots exist.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        robot: usize,
        base: Arc<Morphology>,
        curriculum: CurriculumState,
        num_envs: usize,
        seed: u64,
        randomizer: &Randomizer,
        cfg: &EnvConfig,
    ) -> Self {
        let beta = curriculum.beta;
        let envs = (0..num_envs)
            .map(|i| {
                let stream = |p| RandomStream::for_slot(seed, robot as u64, i as u64, p);
                let mut embodiment_stream = stream(Purpose::Embodiment);
                let mut command_stream = stream(Purpose::Command);
                let mut noise_stream = stream(Purpose::Noise);
                let embodiment = randomizer.sample_embodiment(&base, beta, &mut embodiment_stream);
                let state = env::reset(cfg, &embodiment, beta, &mut command_stream);
                let obs = env::observe(&state, &embodiment, beta, &mut noise_stream);
                EnvSlot {
                    embodiment,
                    state,
                    obs,
                    embodiment_stream,
                    dynamics_stream: stream(Purpose::Dynamics),
                    noise_stream,
                    command_stream,
                    policy_stream: stream(Purpose::Policy),
                    table_row: 0,
                    episode_length: 0,
                    error_sum: 0.0,
                    episode_return: 0.0,
                }
            })
            .collect();
        RobotGroup {
            robot,
            base,
            curriculum,
            envs,
            episodes: Vec::new(),
            frozen: false,
        }
    }

    pub fn num_joints(&self) -> usize {
        self.base.joints.len()
    }

    pub fn take_episodes(&mut self) -> Vec<FinishedEpisode> {
        std::mem::take(&mut self.episodes)
    }

    /// Current observations of every environment as network inputs, one
    /// description block per environment.
    pub fn current_inputs(&self) -> (PolicyInput, PolicyInput) {
        let j = self.num_joints();
        let n = self.envs.len();
        let mut desc = Vec::with_capacity(n * j * DESC_DIM);
        let (mut jo, mut cjo) = (Vec::with_capacity(n * j * D_OBS), Vec::with_capacity(n * j * D_OBS_CRITIC));
        let (mut go, mut cgo) = (Vec::with_capacity(n * D_GEN), Vec::with_capacity(n * D_GEN));
        for slot in &self.envs {
            for d in &slot.embodiment.descriptions {
                desc.extend_from_slice(d);
            }
            for (a, c) in slot.obs.joint.iter().zip(&slot.obs.critic_joint) {
                jo.extend_from_slice(a);
                cjo.extend_from_slice(c);
            }
            go.extend_from_slice(&slot.obs.general);
            cgo.extend_from_slice(&slot.obs.critic_general);
        }
        let descriptions = Tensor::from_vec(n * j, DESC_DIM, desc);
        let actor = PolicyInput {
            num_joints: j,
            descriptions: descriptions.clone(),
            embodiment_index: (0..n).collect(),
            joint_obs: Tensor::from_vec(n * j, D_OBS, jo),
            general_obs: Tensor::from_vec(n, D_GEN, go),
        };
        let critic = PolicyInput {
            joint_obs: Tensor::from_vec(n * j, D_OBS_CRITIC, cjo),
            general_obs: Tensor::from_vec(n, D_GEN, cgo),
            ..actor.clone()
        };
        (actor, critic)
    }

    /// Steps environment `i` with `actions` and handles episode ends and
    /// embodiment resampling. Returns `(reward, done)`.
    pub fn step_env(&mut self, i: usize, actions: &[f64], randomizer: &Randomizer, cfg: &EnvConfig) -> Result<(f64, bool), TrainError> {
        let beta = self.curriculum.beta;
        let slot = &mut self.envs[i];
        let (state, reward, done, info) = env::step(cfg, &slot.state, actions, &slot.embodiment, beta, &mut slot.dynamics_stream);
        if let Some(msg) = info.error {
            return Err(TrainError::Numeric(format!("robot {} env {i}: {msg}", self.base.name)));
        }
        slot.state = state;
        slot.episode_length += 1;
        slot.error_sum += info.tracking_error;
        slot.episode_return += reward;
        if done {
            let stats = EpisodeStats {
                length: slot.episode_length,
                mean_tracking_error: slot.error_sum / slot.episode_length as f64,
                episode_return: slot.episode_return,
            };
            slot.episode_length = 0;
            slot.error_sum = 0.0;
            slot.episode_return = 0.0;
            let success = if self.frozen {
                self.curriculum.judge_episode(&stats)
            } else {
                self.curriculum.record(&stats)
            };
            self.episodes.push(FinishedEpisode { env: i, stats, success });
            let beta = self.curriculum.beta;
            let slot = &mut self.envs[i];
            slot.embodiment = randomizer.sample_embodiment(&self.base, beta, &mut slot.embodiment_stream);
            slot.state = env::reset(cfg, &slot.embodiment, beta, &mut slot.command_stream);
            slot.obs = env::observe(&slot.state, &slot.embodiment, beta, &mut slot.noise_stream);
        } else {
            if let Some(e) = randomizer.maybe_resample(&slot.embodiment, beta, &mut slot.embodiment_stream) {
                slot.embodiment = e;
                env::adapt_to_embodiment(&mut slot.state, &slot.embodiment, cfg);
            }
            slot.obs = env::observe(&slot.state, &slot.embodiment, beta, &mut slot.noise_stream);
        }
        Ok((reward, done))
    }

    /// Collects `steps` transitions from every environment with stochastic actions.
    pub fn collect(
        &mut self,
        policy: &dyn ActorCritic,
        steps: usize,
        randomizer: &Randomizer,
        cfg: &EnvConfig,
    ) -> Result<RobotSegment, TrainError> {
        let j = self.num_joints();
        let n = self.envs.len();
        let mut seg = RobotSegment::new(self.robot, j, n);
        for i in 0..n {
            self.envs[i].table_row = seg.add_embodiment(&self.envs[i].embodiment.descriptions);
        }
        for _ in 0..steps {
            let (actor_in, critic_in) = self.current_inputs();
            let mut g = Graph::new(policy.params());
            let nodes = policy.actor_nodes(&mut g, self.robot, &actor_in);
            let value = policy.critic_node(&mut g, self.robot, &critic_in);
            g.check_finite().map_err(|e| TrainError::Numeric(format!("forward pass for robot {}: {e}", self.base.name)))?;
            let (mu, log_std, values) = (g.value(nodes.mu).data(), g.value(nodes.log_std).data(), g.value(value).data());
            let mut all_actions = Vec::with_capacity(n * j);
            for i in 0..n {
                let slot = &mut self.envs[i];
                let mut logp = 0.0;
                for k in i * j..(i + 1) * j {
                    let a = mu[k] + log_std[k].exp() * slot.policy_stream.normal();
                    logp += gaussian_log_prob(mu[k], log_std[k], a);
                    all_actions.push(a);
                }
                seg.embodiment_index.push(slot.table_row);
                for (a, c) in slot.obs.joint.iter().zip(&slot.obs.critic_joint) {
                    seg.joint_obs.extend_from_slice(a);
                    seg.critic_joint_obs.extend_from_slice(c);
                }
                seg.general_obs.extend_from_slice(&slot.obs.general);
                seg.critic_general_obs.extend_from_slice(&slot.obs.critic_general);
                seg.log_probs.push(logp);
                seg.values.push(values[i]);
            }
            for i in 0..n {
                let actions = &all_actions[i * j..(i + 1) * j];
                let before = self.envs[i].embodiment.seed_trace;
                let episodes_before = self.episodes.len();
                let (reward, done) = self.step_env(i, actions, randomizer, cfg)?;
                seg.rewards.push(reward);
                seg.dones.push(done);
                let changed = self.episodes.len() != episodes_before || self.envs[i].embodiment.seed_trace != before;
                if changed {
                    self.envs[i].table_row = seg.add_embodiment(&self.envs[i].embodiment.descriptions);
                }
            }
            seg.actions.extend(all_actions);
            seg.steps += 1;
        }
        let (_, critic_in) = self.current_inputs();
        seg.last_values = policy.value(self.robot, &critic_in);
        if seg.last_values.iter().any(|v| !v.is_finite()) {
            return Err(TrainError::Numeric(format!("non-finite value estimate for robot {}", self.base.name)));
        }
        Ok(seg)
    }
}
