//! Embodiment-aware actor-critic.
//!
//! Each joint's description is encoded into attention logits; a softmax over
//! the latent components (with learnable temperature) weights the encoded
//! joint observation, and the weighted vectors are summed into a fixed-size
//! joint latent. A WeightNorm core maps general observations plus that latent
//! to an action latent, and every joint's mean action is the dot product of
//! the action latent with the joint's own attention weights. Standard
//! deviations come from a linear head on the description encoding, so they
//! never depend on observations.
//!
//! The critic mirrors the actor's encoder and core with its own parameters
//! (including its own temperature) and reads noise-free observations plus
//! foot contacts.

use super::graph::{Graph, Var};
use super::layers::{Layer, Mlp};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use super::{ActorCritic, ActorNodes, ArchKind, PolicyInput, D_GEN, D_OBS, D_OBS_CRITIC, LOG_STD_MAX, LOG_STD_MIN};
use crate::randomization::DESC_DIM;
use crate::rng::RandomStream;

#[derive(Debug, Clone, PartialEq)]
pub struct UrmaConfig {
    /// Hidden width of the description encoder.
    pub desc_hidden: usize,
    /// Latent width `L_d` shared by both encoders and the core output.
    pub latent: usize,
    pub obs_hidden: Vec<usize>,
    pub core_hidden: usize,
    pub core_layers: usize,
    pub init_log_std: f64,
}

impl Default for UrmaConfig {
    fn default() -> Self {
        UrmaConfig {
            desc_hidden: 128,
            latent: 128,
            obs_hidden: vec![256, 256],
            core_hidden: 256,
            core_layers: 5,
            init_log_std: -1.0,
        }
    }
}

impl UrmaConfig {
    /// Narrow variant with the same topology, sized for single-core training runs.
    pub fn desk() -> Self {
        UrmaConfig {
            desc_hidden: 32,
            latent: 16,
            obs_hidden: vec![32, 32],
            core_hidden: 64,
            core_layers: 5,
            init_log_std: -1.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.desc_hidden == 0 || self.latent == 0 || self.core_hidden == 0 || self.core_layers == 0 {
            return Err("network widths and depth must be positive".into());
        }
        if self.obs_hidden.is_empty() || self.obs_hidden.contains(&0) {
            return Err("observation encoder needs at least one positive hidden width".into());
        }
        Ok(())
    }

    fn to_metadata(&self) -> Vec<f64> {
        let mut m = vec![
            ArchKind::Urma as u8 as f64,
            self.desc_hidden as f64,
            self.latent as f64,
            self.core_hidden as f64,
            self.core_layers as f64,
            self.init_log_std,
            self.obs_hidden.len() as f64,
        ];
        m.extend(self.obs_hidden.iter().map(|&w| w as f64));
        m
    }

    pub(crate) fn from_metadata(m: &[f64]) -> Option<Self> {
        if m.len() < 7 || m[0] != ArchKind::Urma as u8 as f64 {
            return None;
        }
        let n = m[6] as usize;
        if m.len() != 7 + n {
            return None;
        }
        Some(UrmaConfig {
            desc_hidden: m[1] as usize,
            latent: m[2] as usize,
            core_hidden: m[3] as usize,
            core_layers: m[4] as usize,
            init_log_std: m[5],
            obs_hidden: m[7..].iter().map(|&w| w as usize).collect(),
        })
    }
}

/// Description encoder, temperature, observation encoder and core.
#[derive(Debug, Clone)]
pub struct JointEncoder {
    pub f_phi: Mlp,
    pub log_tau: ParamId,
    pub f_psi: Mlp,
    pub core: Mlp,
}

/// Intermediate nodes of one encoder pass.
#[derive(Debug, Clone, Copy)]
pub struct EncoderNodes {
    /// Description encoding per embodiment joint, `k*J x L`.
    pub description_latent: Var,
    /// Attention weights per embodiment joint, `k*J x L`.
    pub alpha_table: Var,
    /// Attention weights per sample joint, `B*J x L`.
    pub alphas: Var,
    /// `B x L`.
    pub z_joints: Var,
}

impl JointEncoder {
    fn new(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &UrmaConfig,
        obs_width: usize,
        core_out: usize,
        core_gain: f64,
        rng: &mut RandomStream,
    ) -> Self {
        let f_phi = Mlp::new(store, &format!("{prefix}.f_phi"), &[DESC_DIM, cfg.desc_hidden, cfg.latent], false, 1.0, rng);
        let log_tau = store.add(format!("{prefix}.log_tau"), Tensor::scalar(0.0));
        let mut sizes = vec![obs_width];
        sizes.extend(&cfg.obs_hidden);
        sizes.push(cfg.latent);
        let f_psi = Mlp::new(store, &format!("{prefix}.f_psi"), &sizes, false, 1.0, rng);
        let mut sizes = vec![D_GEN + cfg.latent];
        sizes.extend(std::iter::repeat_n(cfg.core_hidden, cfg.core_layers));
        sizes.push(core_out);
        let core = Mlp::new(store, &format!("{prefix}.h_theta"), &sizes, true, core_gain, rng);
        JointEncoder { f_phi, log_tau, f_psi, core }
    }

    /// Attention-weighted joint aggregation.
    pub fn encode_joints(&self, g: &mut Graph<'_>, input: &PolicyInput) -> EncoderNodes {
        let j = input.num_joints;
        let d = g.input(input.descriptions.clone());
        let description_latent = self.f_phi.forward(g, d);
        let log_tau = g.param(self.log_tau);
        let tau = g.exp(log_tau);
        let logits = g.div_scalar(description_latent, tau);
        let alpha_table = g.softmax_rows(logits);
        let alphas = g.gather(alpha_table, input.embodiment_index.clone(), j);
        let o = g.input(input.joint_obs.clone());
        let values = self.f_psi.forward(g, o);
        let weighted = g.mul(alphas, values);
        let z_joints = g.segment_sum(weighted, j);
        EncoderNodes {
            description_latent,
            alpha_table,
            alphas,
            z_joints,
        }
    }

    pub fn core_forward(&self, g: &mut Graph<'_>, general_obs: &Tensor, z_joints: Var) -> Var {
        let og = g.input(general_obs.clone());
        let x = g.concat_cols(og, z_joints);
        self.core.forward(g, x)
    }
}

#[derive(Debug, Clone)]
pub struct UrmaPolicy {
    pub config: UrmaConfig,
    pub actor: JointEncoder,
    pub sigma: Layer,
    pub critic: JointEncoder,
    store: ParamStore,
}

/// Every intermediate of an actor pass, for inspection and tests.
#[derive(Debug, Clone, Copy)]
pub struct ActorTrace {
    pub encoder: EncoderNodes,
    pub z_action: Var,
    pub mu: Var,
    pub log_std: Var,
}

impl UrmaPolicy {
    pub fn new(config: UrmaConfig, seed: u64) -> Self {
        let mut rng = RandomStream::new(seed, crate::rng::Purpose::Init as u64);
        let mut store = ParamStore::new();
        // Small output gain keeps initial mean actions near zero.
        let actor = JointEncoder::new(&mut store, "actor", &config, D_OBS, config.latent, 0.01, &mut rng);
        let sigma = Layer::new(&mut store, "actor.sigma", config.latent, 1, 0.01, false, &mut rng);
        store.get_mut(sigma.bias()).data_mut()[0] = config.init_log_std;
        let critic = JointEncoder::new(&mut store, "critic", &config, D_OBS_CRITIC, 1, 1.0, &mut rng);
        UrmaPolicy {
            config,
            actor,
            sigma,
            critic,
            store,
        }
    }

    /// Rebuilds the layer handles for `config` around an existing store
    /// (used when loading checkpoints). Fails if any tensor is missing or
    /// has the wrong shape.
    pub fn from_store(config: UrmaConfig, store: ParamStore) -> Result<Self, String> {
        let template = UrmaPolicy::new(config.clone(), 0);
        check_same_layout(&template.store, &store)?;
        Ok(UrmaPolicy { store, ..template })
    }

    /// Actor pass exposing all intermediates.
    pub fn actor_trace(&self, g: &mut Graph<'_>, input: &PolicyInput) -> ActorTrace {
        let j = input.num_joints;
        let encoder = self.actor.encode_joints(g, input);
        let z_action = self.actor.core_forward(g, &input.general_obs, encoder.z_joints);
        // Mean: dot product of the action latent with each joint's attention.
        let repeated = g.repeat_rows(z_action, j);
        let mu = g.row_dot(repeated, encoder.alphas);
        // Std: linear head on the description encoding only.
        let raw = self.sigma.forward(g, encoder.description_latent);
        let clamped = g.clamp(raw, LOG_STD_MIN, LOG_STD_MAX);
        let log_std = g.gather(clamped, input.embodiment_index.clone(), j);
        ActorTrace {
            encoder,
            z_action,
            mu,
            log_std,
        }
    }
}

pub(crate) fn check_same_layout(expected: &ParamStore, got: &ParamStore) -> Result<(), String> {
    if expected.len() != got.len() {
        return Err(format!("expected {} tensors, checkpoint has {}", expected.len(), got.len()));
    }
    for ((en, et), (gn, gt)) in expected.iter().zip(got.iter()) {
        if en != gn {
            return Err(format!("tensor order mismatch: expected `{en}`, found `{gn}`"));
        }
        if et.shape() != gt.shape() {
            return Err(format!("shape mismatch for `{en}`: expected {:?}, found {:?}", et.shape(), gt.shape()));
        }
    }
    Ok(())
}

impl ActorCritic for UrmaPolicy {
    fn kind(&self) -> ArchKind {
        ArchKind::Urma
    }

    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn supports(&self, _robot: usize, num_joints: usize) -> Result<(), String> {
        if num_joints == 0 {
            return Err("at least one joint is required".into());
        }
        Ok(())
    }

    fn actor_nodes(&self, g: &mut Graph<'_>, _robot: usize, input: &PolicyInput) -> ActorNodes {
        let t = self.actor_trace(g, input);
        ActorNodes {
            mu: t.mu,
            log_std: t.log_std,
        }
    }

    fn critic_node(&self, g: &mut Graph<'_>, _robot: usize, input: &PolicyInput) -> Var {
        let enc = self.critic.encode_joints(g, input);
        self.critic.core_forward(g, &input.general_obs, enc.z_joints)
    }

    fn metadata(&self) -> Vec<f64> {
        self.config.to_metadata()
    }
}
