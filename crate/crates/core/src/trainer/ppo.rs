//! Clipped policy-gradient update over a segmented rollout buffer.

use rayon::prelude::*;

use super::adam::Adam;
use super::buffer::{RobotSegment, RolloutBuffer};
use super::TrainConfig;
use crate::network::graph::LOG_SQRT_2PI;
use crate::network::{ActorCritic, Gradients, Graph, GraphError};
use crate::rng::RandomStream;

/// Sums accumulated over the samples of one robot.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SegmentStats {
    pub samples: usize,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub kl: f64,
    pub clipped: usize,
}

impl SegmentStats {
    pub fn add(&mut self, o: &SegmentStats) {
        self.samples += o.samples;
        self.policy_loss += o.policy_loss;
        self.value_loss += o.value_loss;
        self.entropy += o.entropy;
        self.kl += o.kl;
        self.clipped += o.clipped;
    }

    pub fn means(&self) -> UpdateStats {
        let n = self.samples.max(1) as f64;
        UpdateStats {
            policy_loss: self.policy_loss / n,
            value_loss: self.value_loss / n,
            entropy: self.entropy / n,
            kl: self.kl / n,
            clip_frac: self.clipped as f64 / n,
        }
    }
}

/// Per-sample means.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub kl: f64,
    pub clip_frac: f64,
}

/// Gradient of the minibatch loss restricted to `samples` of one segment,
/// with the loss divided by `total` (the minibatch size over all robots).
///
/// The loss is `sum(clipped surrogate) + c_v * sum((V - R)^2) - c_e * sum(entropy)`.
pub fn segment_gradients(
    policy: &dyn ActorCritic,
    seg: &RobotSegment,
    samples: &[usize],
    total: usize,
    cfg: &TrainConfig,
) -> Result<(Gradients, SegmentStats), GraphError> {
    let j = seg.num_joints;
    let b = samples.len();
    let mut g = Graph::new(policy.params());
    let actor = policy.actor_nodes(&mut g, seg.robot, &seg.actor_input(samples));
    let per_joint = g.gaussian_log_prob(actor.mu, actor.log_std, seg.action_tensor(samples));
    let logp = g.segment_sum(per_joint, j);
    let old = RobotSegment::column(&seg.log_probs, samples);
    let adv = RobotSegment::column(&seg.advantages, samples);
    let surrogate = g.clipped_surrogate_sum(logp, old.clone(), adv, cfg.clip_epsilon);
    let value = policy.critic_node(&mut g, seg.robot, &seg.critic_input(samples));
    let returns = RobotSegment::column(&seg.returns, samples);
    let value_loss = g.squared_error_sum(value, returns);
    let log_std_sum = g.sum_all(actor.log_std);
    let inv = 1.0 / total as f64;
    let partial = g.add_scaled(surrogate, value_loss, inv, cfg.value_coef * inv);
    let loss = g.add_scaled(partial, log_std_sum, 1.0, -cfg.entropy_coef * inv);
    g.check_finite()?;
    let grads = g.backward(loss)?;

    let mut stats = SegmentStats {
        samples: b,
        policy_loss: g.value(surrogate).item(),
        value_loss: g.value(value_loss).item(),
        entropy: g.value(log_std_sum).item() + (b * j) as f64 * (0.5 + LOG_SQRT_2PI),
        ..SegmentStats::default()
    };
    for (new, old) in g.value(logp).data().iter().zip(old.data()) {
        let log_ratio = new - old;
        let ratio = log_ratio.exp();
        stats.kl += (ratio - 1.0) - log_ratio;
        if (ratio - 1.0).abs() > cfg.clip_epsilon {
            stats.clipped += 1;
        }
    }
    Ok((grads, stats))
}

/// Scales `grads` so their global norm is at most `max_norm`; returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(max_norm / (norm + 1e-12));
    }
    norm
}

/// Gradient of one minibatch: per-robot chunks evaluated independently
/// (possibly in parallel) and summed in robot order.
pub fn minibatch_gradients(
    policy: &dyn ActorCritic,
    buffer: &RolloutBuffer,
    chunks: &[Vec<usize>],
    cfg: &TrainConfig,
    parallel: bool,
) -> Result<(Gradients, Vec<SegmentStats>), GraphError> {
    let total: usize = chunks.iter().map(Vec::len).sum();
    let work = |(seg, idx): (&RobotSegment, &Vec<usize>)| segment_gradients(policy, seg, idx, total, cfg);
    let parts: Vec<_> = if parallel {
        buffer.segments.par_iter().zip(chunks.par_iter()).map(work).collect()
    } else {
        buffer.segments.iter().zip(chunks.iter()).map(work).collect()
    };
    let mut grads = Gradients::zeros_like(policy.params());
    let mut stats = Vec::with_capacity(parts.len());
    for part in parts {
        let (g, s) = part?;
        grads.accumulate(&g);
        stats.push(s);
    }
    Ok((grads, stats))
}

/// Runs `epochs x minibatches` optimizer steps. Advantages must already be
/// normalized. Returns per-robot statistics averaged over all minibatches.
pub fn update_policy(
    policy: &mut dyn ActorCritic,
    optimizer: &mut Adam,
    buffer: &RolloutBuffer,
    cfg: &TrainConfig,
    shuffle: &mut RandomStream,
    parallel: bool,
) -> Result<Vec<UpdateStats>, GraphError> {
    let mut totals = vec![SegmentStats::default(); buffer.segments.len()];
    for _ in 0..cfg.epochs {
        let perms: Vec<Vec<usize>> = buffer
            .segments
            .iter()
            .map(|s| {
                let mut p: Vec<usize> = (0..s.len()).collect();
                shuffle.shuffle(&mut p);
                p
            })
            .collect();
        for k in 0..cfg.minibatches {
            let chunks: Vec<Vec<usize>> = perms
                .iter()
                .map(|p| {
                    let size = p.len() / cfg.minibatches;
                    p[k * size..(k + 1) * size].to_vec()
                })
                .collect();
            let (mut grads, stats) = minibatch_gradients(policy, buffer, &chunks, cfg, parallel)?;
            clip_grad_norm(&mut grads, cfg.max_grad_norm);
            optimizer.step(policy.params_mut(), &grads);
            for (t, s) in totals.iter_mut().zip(&stats) {
                t.add(s);
            }
        }
    }
    Ok(totals.iter().map(SegmentStats::means).collect())
}
