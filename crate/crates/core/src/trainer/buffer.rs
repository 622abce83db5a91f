use crate::network::{PolicyInput, Tensor, D_GEN, D_OBS, D_OBS_CRITIC};
use crate::randomization::{JointDescription, DESC_DIM};

/// Transitions of one robot's environments over one rollout, stored
/// time-major: sample `t * num_envs + i` is environment `i` at step `t`.
///
/// Description vectors live in a per-rollout table with one row block per
/// embodiment that appeared; samples point into it.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotSegment {
    pub robot: usize,
    pub num_joints: usize,
    pub num_envs: usize,
    pub steps: usize,
    pub descriptions: Vec<f64>,
    pub embodiment_index: Vec<usize>,
    pub joint_obs: Vec<f64>,
    pub critic_joint_obs: Vec<f64>,
    pub general_obs: Vec<f64>,
    pub critic_general_obs: Vec<f64>,
    pub actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub values: Vec<f64>,
    /// Value estimates of the observations following the last step.
    pub last_values: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RobotSegment {
    pub fn new(robot: usize, num_joints: usize, num_envs: usize) -> Self {
        RobotSegment {
            robot,
            num_joints,
            num_envs,
            steps: 0,
            descriptions: Vec::new(),
            embodiment_index: Vec::new(),
            joint_obs: Vec::new(),
            critic_joint_obs: Vec::new(),
            general_obs: Vec::new(),
            critic_general_obs: Vec::new(),
            actions: Vec::new(),
            log_probs: Vec::new(),
            rewards: Vec::new(),
            dones: Vec::new(),
            values: Vec::new(),
            last_values: Vec::new(),
            advantages: Vec::new(),
            returns: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn num_embodiments(&self) -> usize {
        self.descriptions.len() / (self.num_joints * DESC_DIM)
    }

    /// Appends an embodiment's description block and returns its index.
    pub fn add_embodiment(&mut self, descriptions: &[JointDescription]) -> usize {
        assert_eq!(descriptions.len(), self.num_joints);
        for d in descriptions {
            self.descriptions.extend_from_slice(d);
        }
        self.num_embodiments() - 1
    }

    fn input(&self, samples: &[usize], joint: &[f64], general: &[f64], width: usize) -> PolicyInput {
        let j = self.num_joints;
        let mut jo = Vec::with_capacity(samples.len() * j * width);
        let mut go = Vec::with_capacity(samples.len() * D_GEN);
        for &s in samples {
            jo.extend_from_slice(&joint[s * j * width..(s + 1) * j * width]);
            go.extend_from_slice(&general[s * D_GEN..(s + 1) * D_GEN]);
        }
        PolicyInput {
            num_joints: j,
            descriptions: Tensor::from_vec(self.num_embodiments() * j, DESC_DIM, self.descriptions.clone()),
            embodiment_index: samples.iter().map(|&s| self.embodiment_index[s]).collect(),
            joint_obs: Tensor::from_vec(samples.len() * j, width, jo),
            general_obs: Tensor::from_vec(samples.len(), D_GEN, go),
        }
    }

    pub fn actor_input(&self, samples: &[usize]) -> PolicyInput {
        self.input(samples, &self.joint_obs, &self.general_obs, D_OBS)
    }

    pub fn critic_input(&self, samples: &[usize]) -> PolicyInput {
        self.input(samples, &self.critic_joint_obs, &self.critic_general_obs, D_OBS_CRITIC)
    }

    /// `samples.len() * J x 1` actions.
    pub fn action_tensor(&self, samples: &[usize]) -> Tensor {
        let j = self.num_joints;
        let data = samples.iter().flat_map(|&s| self.actions[s * j..(s + 1) * j].iter().copied()).collect();
        Tensor::from_vec(samples.len() * j, 1, data)
    }

    pub fn column(values: &[f64], samples: &[usize]) -> Tensor {
        Tensor::from_vec(samples.len(), 1, samples.iter().map(|&s| values[s]).collect())
    }

    pub fn compute_gae(&mut self, gamma: f64, lambda: f64) {
        let (adv, ret) = compute_gae(&self.rewards, &self.values, &self.dones, &self.last_values, self.num_envs, gamma, lambda);
        self.advantages = adv;
        self.returns = ret;
    }
}

/// Per-robot segments of one rollout.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RolloutBuffer {
    pub segments: Vec<RobotSegment>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.segments.iter().map(RobotSegment::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn compute_gae(&mut self, gamma: f64, lambda: f64) {
        for s in &mut self.segments {
            s.compute_gae(gamma, lambda);
        }
    }

    /// Shifts and scales the advantages of the whole buffer to zero mean and
    /// unit standard deviation.
    pub fn normalize_advantages(&mut self) {
        let n = self.len() as f64;
        if n == 0.0 {
            return;
        }
        let all = || self.segments.iter().flat_map(|s| s.advantages.iter());
        let mean = all().sum::<f64>() / n;
        let var = all().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
        let std = var.sqrt() + 1e-8;
        for s in &mut self.segments {
            for a in &mut s.advantages {
                *a = (*a - mean) / std;
            }
        }
    }
}

/// Generalized advantage estimation over time-major data with `num_envs`
/// environments per step. A done flag at step `t` stops bootstrapping from
/// step `t + 1`; `last_values` bootstrap the final step.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_values: &[f64],
    num_envs: usize,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    assert!(num_envs > 0 && n % num_envs == 0);
    assert_eq!(values.len(), n);
    assert_eq!(dones.len(), n);
    assert_eq!(last_values.len(), num_envs);
    let steps = n / num_envs;
    let mut adv = vec![0.0; n];
    for i in 0..num_envs {
        let mut next_adv = 0.0;
        let mut next_value = last_values[i];
        for t in (0..steps).rev() {
            let k = t * num_envs + i;
            let live = if dones[k] { 0.0 } else { 1.0 };
            let delta = rewards[k] + gamma * next_value * live - values[k];
            next_adv = delta + gamma * lambda * live * next_adv;
            adv[k] = next_adv;
            next_value = values[k];
        }
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}
