//! Fixed-size comparison policies.
//!
//! * Zero-padding: one MLP over the concatenation of general observations
//!   and every joint's (description, observation) pair, padded with zeros up
//!   to the largest joint count; the action head has one output per slot and
//!   outputs beyond a robot's joint count are discarded.
//! * Multi-head: a shared WeightNorm core with a separate input and output
//!   head per training robot.

use super::graph::{Graph, Var};
use super::layers::{Layer, Mlp};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use super::urma::check_same_layout;
use super::{ActorCritic, ActorNodes, ArchKind, PolicyInput, D_GEN, D_OBS, D_OBS_CRITIC, LOG_STD_MAX, LOG_STD_MIN};
use crate::randomization::DESC_DIM;
use crate::rng::{Purpose, RandomStream};

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineConfig {
    pub hidden: usize,
    pub layers: usize,
    pub init_log_std: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            hidden: 256,
            layers: 5,
            init_log_std: -1.0,
        }
    }
}

impl BaselineConfig {
    pub fn desk() -> Self {
        BaselineConfig {
            hidden: 64,
            ..Self::default()
        }
    }
}

/// Flattens a batch into `batch x (D_GEN + max_joints * (DESC_DIM + width))`.
pub fn flat_input(input: &PolicyInput, max_joints: usize) -> Tensor {
    let (b, j) = (input.batch_size(), input.num_joints);
    assert!(j <= max_joints, "robot has {j} joints, padding supports {max_joints}");
    let width = input.joint_obs.cols();
    let slot = DESC_DIM + width;
    let mut t = Tensor::zeros(b, D_GEN + max_joints * slot);
    for s in 0..b {
        let row = t.row_mut(s);
        row[..D_GEN].copy_from_slice(input.general_obs.row(s));
        for (k, d) in input.sample_descriptions(s).enumerate() {
            let at = D_GEN + k * slot;
            row[at..at + DESC_DIM].copy_from_slice(d);
            row[at + DESC_DIM..at + slot].copy_from_slice(input.joint_obs.row(s * j + k));
        }
    }
    t
}

/// `1 x n` log-std parameter broadcast to `batch * j x 1`, using the first `j` slots.
fn broadcast_log_std(g: &mut Graph<'_>, id: ParamId, batch: usize, j: usize) -> Var {
    let p = g.param(id);
    let p = g.slice_cols(p, j);
    let p = g.repeat_rows(p, batch);
    let p = g.reshape(p, batch * j, 1);
    g.clamp(p, LOG_STD_MIN, LOG_STD_MAX)
}

#[derive(Debug, Clone)]
pub struct ZeroPaddingPolicy {
    pub config: BaselineConfig,
    pub max_joints: usize,
    actor: Mlp,
    log_std: ParamId,
    critic: Mlp,
    store: ParamStore,
}

impl ZeroPaddingPolicy {
    pub fn new(config: BaselineConfig, max_joints: usize, seed: u64) -> Self {
        let mut rng = RandomStream::new(seed, Purpose::Init as u64);
        let mut store = ParamStore::new();
        let hidden = std::iter::repeat_n(config.hidden, config.layers);
        let mut sizes = vec![D_GEN + max_joints * (DESC_DIM + D_OBS)];
        sizes.extend(hidden.clone());
        sizes.push(max_joints);
        let actor = Mlp::new(&mut store, "actor.mlp", &sizes, true, 0.01, &mut rng);
        let log_std = store.add("actor.log_std", Tensor::filled(1, max_joints, config.init_log_std));
        let mut sizes = vec![D_GEN + max_joints * (DESC_DIM + D_OBS_CRITIC)];
        sizes.extend(hidden);
        sizes.push(1);
        let critic = Mlp::new(&mut store, "critic.mlp", &sizes, true, 1.0, &mut rng);
        ZeroPaddingPolicy {
            config,
            max_joints,
            actor,
            log_std,
            critic,
            store,
        }
    }

    pub fn from_store(config: BaselineConfig, max_joints: usize, store: ParamStore) -> Result<Self, String> {
        let template = ZeroPaddingPolicy::new(config, max_joints, 0);
        check_same_layout(&template.store, &store)?;
        Ok(ZeroPaddingPolicy { store, ..template })
    }
}

impl ActorCritic for ZeroPaddingPolicy {
    fn kind(&self) -> ArchKind {
        ArchKind::ZeroPadding
    }

    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn supports(&self, _robot: usize, num_joints: usize) -> Result<(), String> {
        if num_joints == 0 || num_joints > self.max_joints {
            return Err(format!("zero-padding policy handles 1..={} joints, got {num_joints}", self.max_joints));
        }
        Ok(())
    }

    fn actor_nodes(&self, g: &mut Graph<'_>, _robot: usize, input: &PolicyInput) -> ActorNodes {
        let (b, j) = (input.batch_size(), input.num_joints);
        let x = g.input(flat_input(input, self.max_joints));
        let out = self.actor.forward(g, x);
        // Padded action slots are dropped.
        let out = g.slice_cols(out, j);
        let mu = g.reshape(out, b * j, 1);
        let log_std = broadcast_log_std(g, self.log_std, b, j);
        ActorNodes { mu, log_std }
    }

    fn critic_node(&self, g: &mut Graph<'_>, _robot: usize, input: &PolicyInput) -> Var {
        let x = g.input(flat_input(input, self.max_joints));
        self.critic.forward(g, x)
    }

    fn metadata(&self) -> Vec<f64> {
        vec![
            ArchKind::ZeroPadding as u8 as f64,
            self.config.hidden as f64,
            self.config.layers as f64,
            self.config.init_log_std,
            self.max_joints as f64,
        ]
    }
}

#[derive(Debug, Clone)]
struct Head {
    actor_in: Layer,
    actor_out: Layer,
    log_std: ParamId,
    critic_in: Layer,
}

#[derive(Debug, Clone)]
pub struct MultiHeadPolicy {
    pub config: BaselineConfig,
    pub joints_per_robot: Vec<usize>,
    heads: Vec<Head>,
    actor_core: Mlp,
    critic_core: Mlp,
    value_head: Layer,
    store: ParamStore,
}

impl MultiHeadPolicy {
    pub fn new(config: BaselineConfig, joints_per_robot: Vec<usize>, seed: u64) -> Self {
        assert!(config.layers >= 2, "multi-head core needs at least two layers");
        let mut rng = RandomStream::new(seed, Purpose::Init as u64);
        let mut store = ParamStore::new();
        let h = config.hidden;
        let sqrt2 = std::f64::consts::SQRT_2;
        let core_sizes = vec![h; config.layers];
        let actor_core = Mlp::new(&mut store, "actor.core", &core_sizes, true, sqrt2, &mut rng);
        let critic_core = Mlp::new(&mut store, "critic.core", &core_sizes, true, sqrt2, &mut rng);
        let value_head = Layer::new(&mut store, "critic.value", h, 1, 1.0, false, &mut rng);
        let heads = joints_per_robot
            .iter()
            .enumerate()
            .map(|(r, &j)| {
                let actor_in = Layer::new(&mut store, &format!("actor.in.{r}"), D_GEN + j * (DESC_DIM + D_OBS), h, sqrt2, false, &mut rng);
                let actor_out = Layer::new(&mut store, &format!("actor.out.{r}"), h, j, 0.01, false, &mut rng);
                let log_std = store.add(format!("actor.log_std.{r}"), Tensor::filled(1, j, config.init_log_std));
                let critic_in = Layer::new(&mut store, &format!("critic.in.{r}"), D_GEN + j * (DESC_DIM + D_OBS_CRITIC), h, sqrt2, false, &mut rng);
                Head {
                    actor_in,
                    actor_out,
                    log_std,
                    critic_in,
                }
            })
            .collect();
        MultiHeadPolicy {
            config,
            joints_per_robot,
            heads,
            actor_core,
            critic_core,
            value_head,
            store,
        }
    }

    pub fn from_store(config: BaselineConfig, joints_per_robot: Vec<usize>, store: ParamStore) -> Result<Self, String> {
        let template = MultiHeadPolicy::new(config, joints_per_robot, 0);
        check_same_layout(&template.store, &store)?;
        Ok(MultiHeadPolicy { store, ..template })
    }

    fn trunk(&self, g: &mut Graph<'_>, input_layer: &Layer, core: &Mlp, x: Tensor) -> Var {
        let x = g.input(x);
        let h = input_layer.forward(g, x);
        let h = g.elu(h);
        let h = core.forward(g, h);
        g.elu(h)
    }
}

impl ActorCritic for MultiHeadPolicy {
    fn kind(&self) -> ArchKind {
        ArchKind::MultiHead
    }

    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn supports(&self, robot: usize, num_joints: usize) -> Result<(), String> {
        match self.joints_per_robot.get(robot) {
            None => Err(format!("robot index {robot} out of range: multi-head policy has {} heads", self.heads.len())),
            Some(&j) if j != num_joints => Err(format!("head {robot} expects {j} joints, got {num_joints}")),
            Some(_) => Ok(()),
        }
    }

    fn actor_nodes(&self, g: &mut Graph<'_>, robot: usize, input: &PolicyInput) -> ActorNodes {
        let head = &self.heads[robot];
        let (b, j) = (input.batch_size(), input.num_joints);
        let h = self.trunk(g, &head.actor_in, &self.actor_core, flat_input(input, j));
        let out = head.actor_out.forward(g, h);
        let mu = g.reshape(out, b * j, 1);
        let log_std = broadcast_log_std(g, head.log_std, b, j);
        ActorNodes { mu, log_std }
    }

    fn critic_node(&self, g: &mut Graph<'_>, robot: usize, input: &PolicyInput) -> Var {
        let head = &self.heads[robot];
        let h = self.trunk(g, &head.critic_in, &self.critic_core, flat_input(input, input.num_joints));
        self.value_head.forward(g, h)
    }

    fn metadata(&self) -> Vec<f64> {
        let mut m = vec![
            ArchKind::MultiHead as u8 as f64,
            self.config.hidden as f64,
            self.config.layers as f64,
            self.config.init_log_std,
            self.joints_per_robot.len() as f64,
        ];
        m.extend(self.joints_per_robot.iter().map(|&j| j as f64));
        m
    }
}
