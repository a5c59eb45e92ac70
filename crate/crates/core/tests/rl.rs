use cnf_core::autodiff::{grad_check, GradCheckConfig, Module, Tape, Tensor};
use cnf_core::envs::{generate_dataset, EnvSpec, Tier};
use cnf_core::flow::{ConditionalFlow, FlowArch};
use cnf_core::io::sha256_hex;
use cnf_core::nn::{Activation, Mlp};
use cnf_core::rl::{
    advantage_weights, advantage_weights_from, critic_loss_on, critic_target, policy_loss_on, train,
    train_latent_direct, Agent, AwacConfig, Batch, IdentityDecoder, LatentPolicy, Squash, TwinCritic, Variant,
};
use cnf_core::rng::{seeded, standard_normal, uniform_box};
use proptest::prelude::*;
use rand::Rng;

fn perturb<M: Module<f64>>(m: &mut M, scale: f64, seed: u64) {
    let mut rng = seeded(seed);
    for p in m.parameters_mut() {
        for v in p.value.data_mut() {
            *v += rng.random_range(-scale..scale);
        }
    }
}

fn policy(ds: usize, squash: Squash, seed: u64) -> LatentPolicy<f64> {
    let mut p = LatentPolicy::new(ds, 2, &[8], Activation::Tanh, squash, &mut seeded(seed));
    perturb(&mut p, 0.3, seed + 1);
    p
}

fn critics(ds: usize, seed: u64) -> TwinCritic<f64> {
    TwinCritic::new(ds, 2, &[8], Activation::Tanh, &mut seeded(seed))
}

fn flow(ds: usize, seed: u64) -> ConditionalFlow<f64> {
    let mut arch = FlowArch::cnf(2, ds, 4, vec![8]);
    arch.activation = Activation::Tanh;
    let mut f = ConditionalFlow::new(arch, seed).unwrap();
    perturb(&mut f, 0.2, seed + 7);
    f
}

fn batch(rows: usize, ds: usize, seed: u64) -> Batch<f64> {
    let mut rng = seeded(seed);
    let terminals: Vec<f64> = (0..rows).map(|i| if i % 3 == 2 { 1.0 } else { 0.0 }).collect();
    Batch {
        states: uniform_box(&mut rng, rows, ds),
        actions: uniform_box(&mut rng, rows, 2).map(|v| 0.9 * v),
        rewards: uniform_box(&mut rng, rows, 1),
        next_states: uniform_box(&mut rng, rows, ds),
        terminals: Tensor::new(&[rows, 1], terminals).unwrap(),
    }
}

fn max_diff(x: &Tensor<f64>, y: &Tensor<f64>) -> f64 {
    x.data().iter().zip(y.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

fn flow_hash(f: &ConditionalFlow<f64>) -> String {
    let bytes: Vec<u8> = f.flat_values().iter().flat_map(|v| v.to_le_bytes()).collect();
    sha256_hex(&bytes)
}

/// Forces log σ² to its lower clamp so samples equal the mean to ~1e-2 σ.
fn collapse_sigma(p: &mut LatentPolicy<f64>) {
    let out = p.net.layers.last_mut().unwrap();
    out.bias.value.data_mut()[2..].fill(-1e3);
}

#[test]
fn zero_mean_collapsed_policy_samples_origin() {
    let mut p = LatentPolicy::<f64>::new(3, 2, &[8], Activation::Relu, Squash::Tanh, &mut seeded(0));
    collapse_sigma(&mut p);
    let s = uniform_box(&mut seeded(1), 5, 3);
    let z = p.sample(&s, &mut seeded(2)).unwrap();
    assert!(z.data().iter().all(|v| v.abs() < 0.03));
    assert!(p.mean(&s).unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn squash_modes_bound_samples() {
    let s = Tensor::zeros(&[100_000, 1]);
    let mut p = LatentPolicy::<f64>::new(1, 2, &[4], Activation::Relu, Squash::Tanh, &mut seeded(0));
    let bias = &mut p.net.layers.last_mut().unwrap().bias.value;
    bias.data_mut().copy_from_slice(&[3.0, -3.0, 2.0, 2.0]);
    let z = p.sample(&s, &mut seeded(1)).unwrap();
    assert!(z.data().iter().all(|v| v.abs() < 1.0));

    p.squash = Squash::Amplitude { a: 2.0 };
    let z = p.sample(&s, &mut seeded(1)).unwrap();
    assert!(z.data().iter().all(|v| v.abs() < 2.0));
    assert!(z.data().iter().any(|v| v.abs() > 1.0));
}

#[test]
fn zero_policy_and_zero_flow_act_at_origin() {
    let f = ConditionalFlow::<f64>::new(FlowArch::cnf(2, 2, 4, vec![8]), 3).unwrap();
    let cfg = AwacConfig {
        hidden: vec![8],
        ..AwacConfig::default()
    };
    let agent = Agent::<f64>::new(Variant::Cnf, 2, 2, 2, cfg);
    let s = uniform_box(&mut seeded(4), 6, 2);
    let a = agent.act(&f, &s, &mut seeded(0), true).unwrap();
    assert!(a.data().iter().all(|v| v.abs() < 1e-15));
    let b = agent.act(&f, &s, &mut seeded(9), true).unwrap();
    assert_eq!(a, b);
}

#[test]
fn critic_target_terminal_and_zero_discount() {
    let (p, q, f) = (policy(2, Squash::Tanh, 0), critics(2, 1), flow(2, 2));
    let b = batch(6, 2, 3);
    let eta = standard_normal(&mut seeded(4), 6, 2);
    let y = critic_target(&b, &f, &p, &q, 0.99, &eta).unwrap();
    for i in 0..6 {
        let r = b.rewards.data()[i];
        if b.terminals.data()[i] == 1.0 {
            assert_eq!(y.data()[i], r);
        } else {
            assert_ne!(y.data()[i], r);
        }
    }
    let y0 = critic_target(&b, &f, &p, &q, 0.0, &eta).unwrap();
    assert_eq!(y0, b.rewards);
}

#[test]
fn critic_target_matches_direct_evaluation() {
    let (p, q, f) = (policy(2, Squash::Tanh, 5), critics(2, 6), flow(2, 7));
    let b = batch(4, 2, 8);
    let eta = standard_normal(&mut seeded(9), 4, 2);
    let y = critic_target(&b, &f, &p, &q, 0.9, &eta).unwrap();
    let tape = Tape::new();
    let s = tape.constant(b.next_states.clone());
    let z = p.sample_on(&tape, s, &eta).unwrap();
    let a = f.inverse(&z.value(), &b.next_states).unwrap();
    let q1 = q.q1.eval(&Tensor::from_f64(4, 4, &concat(&b.next_states, &a)).unwrap()).unwrap();
    let q2 = q.q2.eval(&Tensor::from_f64(4, 4, &concat(&b.next_states, &a)).unwrap()).unwrap();
    for i in 0..4 {
        let expect = b.rewards.data()[i] + 0.9 * (1.0 - b.terminals.data()[i]) * q1.data()[i].min(q2.data()[i]);
        assert!((y.data()[i] - expect).abs() < 1e-14);
    }
}

fn concat(s: &Tensor<f64>, a: &Tensor<f64>) -> Vec<f64> {
    (0..s.rows())
        .flat_map(|i| {
            let mut row = s.data()[i * s.cols()..(i + 1) * s.cols()].to_vec();
            row.extend_from_slice(&a.data()[i * a.cols()..(i + 1) * a.cols()]);
            row
        })
        .collect()
}

/// Critic MLP whose output is a constant `c`.
fn constant_critic(ds: usize, c: f64) -> Mlp<f64> {
    let mut m = Mlp::new("q", &[ds + 2, 4, 1], Activation::Relu, &mut seeded(0));
    m.zero_output();
    m.layers[1].bias.value.data_mut()[0] = c;
    m
}

#[test]
fn critic_loss_examples() {
    let b = batch(5, 2, 0);
    let y = Tensor::full(&[5, 1], 0.7);
    let q = TwinCritic {
        q1: constant_critic(2, 0.7),
        q2: constant_critic(2, 0.7),
    };
    let tape = Tape::new();
    assert_eq!(critic_loss_on(&tape, &q, &b.states, &b.actions, &y).unwrap().item(), 0.0);
    let delta = 0.25;
    let q = TwinCritic {
        q1: constant_critic(2, 0.7 + delta),
        q2: constant_critic(2, 0.7 + delta),
    };
    let loss = critic_loss_on(&tape, &q, &b.states, &b.actions, &y).unwrap().item();
    assert!((loss - 2.0 * delta * delta).abs() < 1e-15);
}

#[test]
fn critic_loss_gradient_check() {
    let mut q = critics(3, 0);
    perturb(&mut q, 0.2, 1);
    let b = batch(3, 3, 2);
    let y = uniform_box(&mut seeded(3), 3, 1);
    let report = grad_check(
        &mut q,
        |m: &TwinCritic<f64>, tape| critic_loss_on(tape, m, &b.states, &b.actions, &y),
        GradCheckConfig::default(),
    );
    assert!(report.passed, "{report:?}");
}

#[test]
fn policy_loss_gradient_check_through_flow_inverse() {
    let f = flow(3, 0);
    let b = batch(3, 3, 1);
    let w = Tensor::from_f64(3, 1, &[0.5, 1.7, 1.0]).unwrap();
    let eta = standard_normal(&mut seeded(2), 3, 2);
    for squash in [Squash::Tanh, Squash::Amplitude { a: 2.0 }, Squash::None] {
        let mut p = policy(3, squash, 4);
        let report = grad_check(
            &mut p,
            |m: &LatentPolicy<f64>, tape| policy_loss_on(tape, m, &f, &b.states, &b.actions, &w, &eta),
            GradCheckConfig::default(),
        );
        assert!(report.passed, "{squash:?}: {report:?}");
    }
}

#[test]
fn advantage_weight_examples() {
    let lambda = 1.0 / 3.0;
    let q = critics(2, 0);
    let b = batch(4, 2, 1);
    let (w, clamped) = advantage_weights_from(&q, &b.states, &b.actions, &b.actions, lambda).unwrap();
    assert!(w.data().iter().all(|&v| v == 1.0));
    assert_eq!(clamped, 0);

    // Q = const + a₁: shifting a₁ by λ raises the advantage by exactly λ.
    let mut lin = Mlp::new("q", &[4, 1], Activation::Relu, &mut seeded(0));
    lin.layers[0].weight.value = Tensor::from_f64(4, 1, &[0.0, 0.0, 1.0, 0.0]).unwrap();
    let q = TwinCritic {
        q1: lin.clone(),
        q2: lin,
    };
    let shifted = b.actions.map(|v| v);
    let mut base = shifted.clone();
    for r in 0..4 {
        base.data_mut()[2 * r] -= lambda;
    }
    let (w, _) = advantage_weights_from(&q, &b.states, &shifted, &base, lambda).unwrap();
    assert!(w.data().iter().all(|v| (v - std::f64::consts::E).abs() < 1e-12));

    let mut far = shifted.clone();
    for r in 0..4 {
        far.data_mut()[2 * r] = base.data()[2 * r] + 100.0;
    }
    let (w, clamped) = advantage_weights_from(&q, &b.states, &far, &base, lambda).unwrap();
    assert_eq!(clamped, 4);
    assert!(w.data().iter().all(|&v| v == 20f64.exp()));
}

/// ReLU critic computing `|a₁| + |a₂|` exactly, ignoring the state.
fn l1_critic(ds: usize) -> Mlp<f64> {
    let mut m = Mlp::new("q", &[ds + 2, 4, 1], Activation::Relu, &mut seeded(0));
    let mut w = vec![0.0; (ds + 2) * 4];
    w[ds * 4] = 1.0;
    w[ds * 4 + 1] = -1.0;
    w[(ds + 1) * 4 + 2] = 1.0;
    w[(ds + 1) * 4 + 3] = -1.0;
    m.layers[0].weight.value = Tensor::from_f64(ds + 2, 4, &w).unwrap();
    m.layers[0].bias.value = Tensor::zeros(&[1, 4]);
    m.layers[1].weight.value = Tensor::full(&[4, 1], 1.0);
    m.layers[1].bias.value = Tensor::zeros(&[1, 1]);
    m
}

#[test]
fn advantage_weights_match_direct_oracle() {
    let lambda = 0.5;
    let q = TwinCritic {
        q1: l1_critic(2),
        q2: l1_critic(2),
    };
    let (p, f) = (policy(2, Squash::Tanh, 3), flow(2, 4));
    let b = batch(3, 2, 5);
    let eta = standard_normal(&mut seeded(6), 3, 2);
    let (w, _) = advantage_weights(&b, &f, &p, &q, lambda, &eta).unwrap();

    let tape = Tape::new();
    let z = p.sample_on(&tape, tape.constant(b.states.clone()), &eta).unwrap().value();
    let a_pi = f.inverse(&z, &b.states).unwrap();
    for i in 0..3 {
        let l1 = |t: &Tensor<f64>| t.data()[2 * i].abs() + t.data()[2 * i + 1].abs();
        let expect = ((l1(&b.actions) - l1(&a_pi)) / lambda).exp();
        assert!((w.data()[i] - expect).abs() < 1e-12 * expect.max(1.0));
    }
}

#[test]
fn policy_loss_vanishes_for_exact_reproduction_and_zero_weights() {
    let f = IdentityDecoder { dim: 2 };
    let mut p = LatentPolicy::<f64>::new(2, 2, &[8], Activation::Relu, Squash::None, &mut seeded(0));
    collapse_sigma(&mut p);
    let s = uniform_box(&mut seeded(1), 4, 2);
    let eta = Tensor::zeros(&[4, 2]);
    let a = Tensor::zeros(&[4, 2]);
    let tape = Tape::new();
    let ones = Tensor::full(&[4, 1], 1.0);
    assert_eq!(policy_loss_on(&tape, &p, &f, &s, &a, &ones, &eta).unwrap().item(), 0.0);

    let mut p = policy(2, Squash::Tanh, 2);
    let b = batch(4, 2, 3);
    let zeros = Tensor::zeros(&[4, 1]);
    let eta = standard_normal(&mut seeded(4), 4, 2);
    let tape = Tape::new();
    let loss = policy_loss_on(&tape, &p, &flow(2, 5), &b.states, &b.actions, &zeros, &eta).unwrap();
    assert_eq!(loss.item(), 0.0);
    let g = tape.backward(loss).unwrap();
    for param in p.parameters_mut() {
        if let Some(grad) = g.get(param.id()) {
            assert!(grad.data().iter().all(|&v| v == 0.0));
        }
    }
}

#[test]
fn no_gradient_leakage_between_actor_and_critics() {
    let (p, q, f) = (policy(2, Squash::Tanh, 0), critics(2, 1), flow(2, 2));
    let b = batch(5, 2, 3);
    let eta = standard_normal(&mut seeded(4), 5, 2);

    let (w, _) = advantage_weights(&b, &f, &p, &q, 1.0 / 3.0, &eta).unwrap();
    let tape = Tape::new();
    let loss = policy_loss_on(&tape, &p, &f, &b.states, &b.actions, &w, &eta).unwrap();
    let g = tape.backward(loss).unwrap();
    assert!(q.param_ids().into_iter().all(|id| g.get(id).is_none()));
    assert!(f.param_ids().into_iter().all(|id| g.get(id).is_none()));
    assert!(p.param_ids().into_iter().any(|id| g.get(id).is_some()));

    let y = critic_target(&b, &f, &p, &q, 0.99, &eta).unwrap();
    let tape = Tape::new();
    let loss = critic_loss_on(&tape, &q, &b.states, &b.actions, &y).unwrap();
    let g = tape.backward(loss).unwrap();
    assert!(p.param_ids().into_iter().all(|id| g.get(id).is_none()));

    // Finite-difference probe: with targets and weights held fixed, moving
    // the other network's parameters leaves each loss unchanged.
    let closs = |q: &TwinCritic<f64>| {
        let t = Tape::new();
        critic_loss_on(&t, q, &b.states, &b.actions, &y).unwrap().item()
    };
    let ploss = |p: &LatentPolicy<f64>| {
        let t = Tape::new();
        policy_loss_on(&t, p, &f, &b.states, &b.actions, &w, &eta).unwrap().item()
    };
    let (c0, p0) = (closs(&q), ploss(&p));
    let mut p2 = p.clone();
    perturb(&mut p2, 1e-3, 9);
    let mut q2 = q.clone();
    perturb(&mut q2, 1e-3, 10);
    assert_eq!(closs(&q), c0);
    assert_eq!(ploss(&p), p0);
    assert_ne!(closs(&q2), c0);
    assert_ne!(ploss(&p2), p0);
}

#[test]
fn swapping_critics_changes_nothing() {
    let (p, q, f) = (policy(2, Squash::Tanh, 0), critics(2, 1), flow(2, 2));
    let sw = q.swapped();
    let b = batch(6, 2, 3);
    let eta = standard_normal(&mut seeded(4), 6, 2);
    assert_eq!(
        critic_target(&b, &f, &p, &q, 0.99, &eta).unwrap(),
        critic_target(&b, &f, &p, &sw, 0.99, &eta).unwrap()
    );
    assert_eq!(
        advantage_weights(&b, &f, &p, &q, 0.3, &eta).unwrap(),
        advantage_weights(&b, &f, &p, &sw, 0.3, &eta).unwrap()
    );
    let y = uniform_box(&mut seeded(5), 6, 1);
    let tape = Tape::new();
    assert_eq!(
        critic_loss_on(&tape, &q, &b.states, &b.actions, &y).unwrap().item(),
        critic_loss_on(&tape, &sw, &b.states, &b.actions, &y).unwrap().item()
    );
}

fn small_config(steps: usize) -> AwacConfig {
    AwacConfig {
        hidden: vec![16, 16],
        batch_size: 32,
        steps,
        eval_interval: 50,
        eval_episodes: 2,
        log_interval: 25,
        seed: 3,
        ..AwacConfig::default()
    }
}

fn nav_batch() -> (EnvSpec, Batch<f64>) {
    let spec = EnvSpec::from_name("point-nav").unwrap();
    let ds = generate_dataset(&spec.build(), &spec.behavior(Tier::Medium), 500, 0).unwrap();
    (spec, Batch::from_dataset(&ds))
}

#[test]
fn zero_steps_returns_initialization_and_flow_stays_frozen() {
    let (spec, data) = nav_batch();
    let f = flow(2, 1);
    let before = flow_hash(&f);
    let out = train(&data, &f, Variant::Cnf, &spec, &small_config(0)).unwrap();
    let fresh = Agent::<f64>::new(Variant::Cnf, 2, 2, 2, small_config(0));
    assert_eq!(out.agent.policy.flat_values(), fresh.policy.flat_values());
    assert_eq!(out.agent.critics.flat_values(), fresh.critics.flat_values());
    assert_eq!(out.agent.steps, 0);

    let out = train(&data, &f, Variant::Cnf, &spec, &small_config(60)).unwrap();
    assert_eq!(flow_hash(&f), before);
    assert_eq!(out.agent.steps, 60);
    assert_ne!(out.agent.policy.flat_values(), fresh.policy.flat_values());

    let direct = train_latent_direct(&data, &f, &spec, &small_config(0)).unwrap();
    let fresh = Agent::<f64>::new(Variant::LatentDirect, 2, 2, 2, small_config(0));
    assert_eq!(direct.agent.policy.flat_values(), fresh.policy.flat_values());
}

#[test]
fn fixed_seed_reproduces_metrics() {
    let (spec, data) = nav_batch();
    let f = flow(2, 1);
    let a = train(&data, &f, Variant::Cnf, &spec, &small_config(60)).unwrap();
    let b = train(&data, &f, Variant::Cnf, &spec, &small_config(60)).unwrap();
    assert_eq!(a.metrics.to_jsonl(), b.metrics.to_jsonl());
    assert_eq!(a.agent.policy.flat_values(), b.agent.policy.flat_values());
    let evals = a.metrics.evals().count();
    assert_eq!(evals, 3);
}

#[test]
fn identity_codec_direct_training_matches_decoder_training() {
    let (spec, data) = nav_batch();
    let id = IdentityDecoder { dim: 2 };
    let a = train(&data, &id, Variant::Cnf, &spec, &small_config(40)).unwrap();
    let b = train_latent_direct(&data, &id, &spec, &small_config(40)).unwrap();
    assert_eq!(a.metrics.to_jsonl(), b.metrics.to_jsonl());
    assert_eq!(a.agent.policy.flat_values(), b.agent.policy.flat_values());
    assert_eq!(a.agent.critics.flat_values(), b.agent.critics.flat_values());
}

#[test]
fn mismatched_dimensions_rejected() {
    let (_, data) = nav_batch();
    let bandit = EnvSpec::from_name("bandit").unwrap();
    assert!(train(&data, &flow(2, 0), Variant::Cnf, &bandit, &small_config(1)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn weights_positive_and_critic_symmetric(seed in 0u64..1000, lambda in 0.05f64..3.0) {
        let (p, q, f) = (policy(2, Squash::Tanh, seed), critics(2, seed + 1), flow(2, seed + 2));
        let b = batch(4, 2, seed + 3);
        let eta = standard_normal(&mut seeded(seed + 4), 4, 2);
        let (w, _) = advantage_weights(&b, &f, &p, &q, lambda, &eta).unwrap();
        prop_assert!(w.data().iter().all(|&v| v > 0.0 && v.is_finite()));
        let (ws, _) = advantage_weights(&b, &f, &p, &q.swapped(), lambda, &eta).unwrap();
        prop_assert_eq!(max_diff(&w, &ws), 0.0);
    }

    #[test]
    fn tanh_policy_acts_inside_flow_image(seed in 0u64..1000) {
        let mut p = policy(2, Squash::Tanh, seed);
        perturb(&mut p, 2.0, seed + 11);
        let s = uniform_box(&mut seeded(seed), 64, 2);
        let z = p.sample(&s, &mut seeded(seed + 1)).unwrap();
        prop_assert!(z.data().iter().all(|v| v.abs() < 1.0));
        let z = policy(2, Squash::Tanh, seed).sample(&s, &mut seeded(seed + 1)).unwrap();
        let f = flow(2, seed);
        let a = f.inverse(&z, &s).unwrap();
        prop_assert!(max_diff(&f.forward(&a, &s).unwrap().0, &z) < 1e-8);
    }
}
