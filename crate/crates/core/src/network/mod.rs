//! Policy networks and the differentiation engine that trains them.
//!
//! [`urma`] holds the embodiment-aware actor-critic; [`baselines`] holds the
//! fixed-size zero-padding and multi-head comparisons. All of them implement
//! [`ActorCritic`] so the trainer treats them uniformly.

pub mod baselines;
pub mod checkpoint;
pub mod graph;
pub mod layers;
pub mod params;
pub mod tensor;
pub mod urma;

pub use graph::{Gradients, Graph, GraphError, Var};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;

use crate::randomization::DESC_DIM;

/// Per-joint actor observation: position, velocity, previous action, track flag.
pub const D_OBS: usize = 4;
/// Per-joint critic observation: the noise-free actor fields plus foot contact.
pub const D_OBS_CRITIC: usize = 5;
/// Trunk linear velocity, angular velocity, gravity, command, curriculum level.
pub const D_GEN: usize = 13;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// Network inputs for a batch of samples from robots with the same joint count.
///
/// Descriptions are stored once per embodiment; `embodiment_index[b]` selects
/// the row block of sample `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyInput {
    pub num_joints: usize,
    /// `num_embodiments * num_joints` rows of width [`DESC_DIM`].
    pub descriptions: Tensor,
    pub embodiment_index: Vec<usize>,
    /// `batch * num_joints` rows of width [`D_OBS`] or [`D_OBS_CRITIC`].
    pub joint_obs: Tensor,
    /// `batch` rows of width [`D_GEN`].
    pub general_obs: Tensor,
}

impl PolicyInput {
    pub fn batch_size(&self) -> usize {
        self.embodiment_index.len()
    }

    pub fn num_embodiments(&self) -> usize {
        self.descriptions.rows() / self.num_joints
    }

    pub fn check_shapes(&self, joint_width: usize) -> Result<(), String> {
        let (b, j) = (self.batch_size(), self.num_joints);
        if j == 0 {
            return Err("at least one joint is required".into());
        }
        if self.descriptions.cols() != DESC_DIM || self.descriptions.rows() % j != 0 {
            return Err(format!("descriptions must be (k*{j}) x {DESC_DIM}, got {:?}", self.descriptions.shape()));
        }
        if self.joint_obs.shape() != (b * j, joint_width) {
            return Err(format!("joint observations must be {}x{joint_width}, got {:?}", b * j, self.joint_obs.shape()));
        }
        if self.general_obs.shape() != (b, D_GEN) {
            return Err(format!("general observations must be {b}x{D_GEN}, got {:?}", self.general_obs.shape()));
        }
        let k = self.num_embodiments();
        if let Some(bad) = self.embodiment_index.iter().find(|&&i| i >= k) {
            return Err(format!("embodiment index {bad} out of range ({k} embodiments)"));
        }
        Ok(())
    }

    /// Description rows of sample `b`.
    pub fn sample_descriptions(&self, b: usize) -> impl Iterator<Item = &[f64]> {
        let base = self.embodiment_index[b] * self.num_joints;
        (base..base + self.num_joints).map(|r| self.descriptions.row(r))
    }
}

/// Per-joint Gaussian over actions, one entry per joint per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDistribution {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// Graph nodes of an actor forward pass; both are `batch * J x 1`.
#[derive(Debug, Clone, Copy)]
pub struct ActorNodes {
    pub mu: Var,
    pub log_std: Var,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchKind {
    Urma = 1,
    ZeroPadding = 2,
    MultiHead = 3,
}

impl ArchKind {
    pub fn name(self) -> &'static str {
        match self {
            ArchKind::Urma => "urma_v2",
            ArchKind::ZeroPadding => "zero_padding",
            ArchKind::MultiHead => "multi_head",
        }
    }
}

/// Shared surface of every trainable policy.
///
/// `robot` is the index of the base morphology in the training roster; only
/// the multi-head baseline uses it.
pub trait ActorCritic: Send + Sync {
    fn kind(&self) -> ArchKind;
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    /// Checks that this network can evaluate `robot` with `num_joints` joints.
    fn supports(&self, robot: usize, num_joints: usize) -> Result<(), String>;
    fn actor_nodes(&self, g: &mut Graph<'_>, robot: usize, input: &PolicyInput) -> ActorNodes;
    /// `batch x 1` value estimates.
    fn critic_node(&self, g: &mut Graph<'_>, robot: usize, input: &PolicyInput) -> Var;
    /// Architecture metadata stored in checkpoints.
    fn metadata(&self) -> Vec<f64>;

    fn act(&self, robot: usize, input: &PolicyInput) -> ActionDistribution {
        let mut g = Graph::new(self.params());
        let out = self.actor_nodes(&mut g, robot, input);
        ActionDistribution {
            mu: g.value(out.mu).data().to_vec(),
            sigma: g.value(out.log_std).data().iter().map(|v| v.exp()).collect(),
        }
    }

    fn value(&self, robot: usize, input: &PolicyInput) -> Vec<f64> {
        let mut g = Graph::new(self.params());
        let v = self.critic_node(&mut g, robot, input);
        g.value(v).data().to_vec()
    }
}
