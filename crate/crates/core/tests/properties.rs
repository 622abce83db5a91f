mod common;

use std::sync::Arc;

use common::{random_input, random_morphology};
use morphrl::curriculum::{CurriculumState, SuccessThresholds};
use morphrl::morphology::{parse_morphology, serialize_morphology};
use morphrl::network::graph::Graph;
use morphrl::network::tensor::Tensor;
use morphrl::network::urma::{UrmaConfig, UrmaPolicy};
use morphrl::network::{ActorCritic, PolicyInput, D_OBS, D_OBS_CRITIC};
use morphrl::randomization::{desc, Randomizer, DESC_DIM};
use morphrl::rng::RandomStream;
use morphrl::templates;
use proptest::prelude::*;

fn tiny() -> UrmaConfig {
    UrmaConfig {
        desc_hidden: 6,
        latent: 5,
        obs_hidden: vec![7, 6],
        core_hidden: 8,
        core_layers: 3,
        init_log_std: -1.0,
    }
}

fn rows(t: &Tensor, from: usize, n: usize) -> Tensor {
    Tensor::from_vec(n, t.cols(), t.data()[from * t.cols()..(from + n) * t.cols()].to_vec())
}

/// Sample `i` of `input` as a batch of one with its own embodiment.
fn single(input: &PolicyInput, i: usize) -> PolicyInput {
    let j = input.num_joints;
    PolicyInput {
        num_joints: j,
        descriptions: rows(&input.descriptions, input.embodiment_index[i] * j, j),
        embodiment_index: vec![0],
        joint_obs: rows(&input.joint_obs, i * j, j),
        general_obs: rows(&input.general_obs, i, 1),
    }
}

fn probe_grads(policy: &UrmaPolicy, actor: &PolicyInput, critic: &PolicyInput) -> morphrl::network::graph::Gradients {
    let mut g = Graph::new(policy.params());
    let out = policy.actor_nodes(&mut g, 0, actor);
    let v = policy.critic_node(&mut g, 0, critic);
    let (a, b, c) = (g.sum_all(out.mu), g.sum_all(out.log_std), g.sum_all(v));
    let ab = g.add(a, b);
    let loss = g.add(ab, c);
    g.backward(loss).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn morphology_text_round_trips(j in 1usize..24, seed in any::<u64>()) {
        let m = random_morphology(j, &mut RandomStream::new(seed, 0));
        let text = serialize_morphology(&m);
        let back = parse_morphology(&text).unwrap();
        prop_assert_eq!(&back, &m);
        prop_assert_eq!(serialize_morphology(&back), text);
    }

    #[test]
    fn beta_stays_in_unit_interval(outcomes in prop::collection::vec(any::<bool>(), 0..400), step in 1e-4f64..0.3) {
        let mut s = CurriculumState::new(step, SuccessThresholds::for_horizon(1000));
        for ok in outcomes {
            s = s.update(ok);
            prop_assert!((0.0..=1.0).contains(&s.beta));
        }
    }

    #[test]
    fn descriptions_are_well_formed(t in 0usize..6, beta in 0.0f64..=1.0, seed in any::<u64>()) {
        let base = Arc::new(templates::load(templates::NAMES[t]).unwrap());
        let e = Randomizer::default().sample_embodiment(&base, beta, &mut RandomStream::new(seed, 1));
        prop_assert_eq!(e.descriptions.len(), base.num_joints());
        for (j, d) in e.descriptions.iter().enumerate() {
            prop_assert_eq!(d.len(), DESC_DIM);
            prop_assert!(d.iter().all(|v| v.is_finite()));
            prop_assert!(d[desc::TRACK_NOMINAL] == 0.0 || d[desc::TRACK_NOMINAL] == 1.0);
            prop_assert!(d[desc::POSITION_LO] < d[desc::POSITION_HI]);
            let norm: f64 = (0..3).map(|k| d[desc::AXIS + k].powi(2)).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() < 1e-12);
            prop_assert!(d[desc::JOINT_INDEX] >= 0.0 && d[desc::JOINT_INDEX] <= 1.0, "joint {} index {}", j, d[desc::JOINT_INDEX]);
        }
    }

    #[test]
    fn zero_beta_is_the_nominal_robot(t in 0usize..6, seed in any::<u64>()) {
        let base = Arc::new(templates::load(templates::NAMES[t]).unwrap());
        let e = Randomizer::default().sample_embodiment(&base, 0.0, &mut RandomStream::new(seed, 2));
        let nominal = morphrl::randomization::Embodiment::nominal(Arc::clone(&base));
        prop_assert_eq!(&e.descriptions, &nominal.descriptions);
        prop_assert_eq!(e.visible_morphology(), (*base).clone());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// Gradients of a sum over samples equal the sum of per-sample gradients,
    /// whatever the mix of embodiments in the batch.
    #[test]
    fn batch_gradient_is_sum_of_sample_gradients(j in 1usize..6, k in 1usize..4, b in 1usize..7, seed in any::<u64>()) {
        let policy = UrmaPolicy::new(tiny(), seed);
        let mut s = RandomStream::new(seed, 3);
        let actor = random_input(j, k, b, D_OBS, &mut s);
        let critic = PolicyInput { joint_obs: random_input(j, k, b, D_OBS_CRITIC, &mut s).joint_obs, ..actor.clone() };
        let whole = probe_grads(&policy, &actor, &critic);
        let mut parts = morphrl::network::graph::Gradients::zeros_like(policy.params());
        for i in 0..b {
            parts.accumulate(&probe_grads(&policy, &single(&actor, i), &single(&critic, i)));
        }
        for id in policy.params().ids() {
            let (w, p) = (whole.get(id).unwrap(), parts.get(id).unwrap());
            let scale = 1.0 + w.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            prop_assert!(w.max_abs_diff(p) <= 1e-10 * scale, "{}", policy.params().name(id));
        }
    }

    /// A small step against the value-loss gradient lowers the loss.
    #[test]
    fn value_step_reduces_value_loss(seed in any::<u64>()) {
        let mut policy = UrmaPolicy::new(tiny(), seed);
        let mut s = RandomStream::new(seed, 4);
        let input = random_input(3, 2, 8, D_OBS_CRITIC, &mut s);
        let targets = Tensor::from_vec(8, 1, (0..8).map(|_| 3.0 * s.symmetric()).collect());
        let loss_of = |p: &UrmaPolicy| {
            let mut g = Graph::new(p.params());
            let v = p.critic_node(&mut g, 0, &input);
            let l = g.squared_error_sum(v, targets.clone());
            (g.value(l).item(), g.backward(l).unwrap())
        };
        let (before, grads) = loss_of(&policy);
        let lr = 1e-3 / grads.global_norm().max(1e-12);
        let ids: Vec<_> = policy.params().ids().collect();
        // Actor parameters receive no gradient from the critic loss.
        for id in ids {
            if let Some(g) = grads.get(id) {
                policy.params_mut().get_mut(id).add_assign(&g.map(|v| -lr * v));
            }
        }
        let (after, _) = loss_of(&policy);
        prop_assert!(after < before, "{} -> {}", before, after);
    }
}
