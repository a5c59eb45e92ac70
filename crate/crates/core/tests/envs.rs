use cnf_core::envs::{
    bandit_oracle, behavior_rollouts, episode_returns, generate_dataset, load_dataset, save_dataset,
    support_violation_rate, BanditEnv, Env, EnvSpec, OfflineDataset, SupportSpec, Tier,
};
use cnf_core::rng::seeded;
use proptest::prelude::*;

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn medium_dataset_return_matches_rollout_oracle() {
    let spec = EnvSpec::from_name("point-nav").unwrap();
    let env = spec.build();
    let behavior = spec.behavior(Tier::Medium);
    let oracle = behavior_rollouts(&env, &behavior, 5000, &mut seeded(12345)).mean_return();
    for seed in 0..3 {
        let d = generate_dataset(&env, &behavior, 10_000, seed).unwrap();
        let r = mean(&episode_returns(&d, env.max_steps()));
        assert!(((r - oracle) / oracle).abs() <= 0.02, "seed {seed}: {r} vs {oracle}");
    }
}

#[test]
fn tiers_are_ordered_by_return() {
    let spec = EnvSpec::from_name("point-nav").unwrap();
    let env = spec.build();
    let returns: Vec<f64> = Tier::ALL
        .iter()
        .map(|&t| behavior_rollouts(&env, &spec.behavior(t), 500, &mut seeded(1)).mean_return())
        .collect();
    assert!(returns[0] < returns[1] && returns[1] < returns[2], "{returns:?}");
}

#[test]
fn ring_dataset_never_leaves_its_support() {
    let spec = EnvSpec::from_name("bandit").unwrap();
    let env = spec.build();
    let d = generate_dataset(&env, &spec.behavior(Tier::Medium), 5000, 3).unwrap();
    let actions: Vec<f64> = d.actions.iter().map(|&a| a as f64).collect();
    assert_eq!(support_violation_rate(&actions, 2, &spec.support().unwrap()), 0.0);
    assert!(d.terminals.iter().all(|&t| t));
}

#[test]
fn saved_files_are_byte_identical_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let spec = EnvSpec::from_name("point-nav-umaze").unwrap();
    let env = spec.build();
    let b = spec.behavior(Tier::Expert);
    let paths = [dir.path().join("a.cnfd"), dir.path().join("b.cnfd")];
    for p in &paths {
        save_dataset(&generate_dataset(&env, &b, 777, 42).unwrap(), p).unwrap();
    }
    let (x, y) = (std::fs::read(&paths[0]).unwrap(), std::fs::read(&paths[1]).unwrap());
    assert_eq!(x, y);
    assert_eq!(x.len(), 24 + 777 * 29);
    let back = load_dataset(&paths[0]).unwrap();
    let again = dir.path().join("c.cnfd");
    save_dataset(&back, &again).unwrap();
    assert_eq!(std::fs::read(again).unwrap(), x);
}

#[test]
fn oracle_reward_for_documented_ring_geometry() {
    let best = bandit_oracle(&BanditEnv::new([0.0, 0.0]), &SupportSpec::Ring { r_min: 0.4, r_max: 0.8 }, 401).unwrap();
    assert!((best.reward + 0.4).abs() < 1e-9);
    let r = (best.action[0].powi(2) + best.action[1].powi(2)).sqrt();
    assert!((r - 0.4).abs() < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generation_is_a_pure_function_of_seed(seed in 0u64..1000, n in 1usize..300, env_idx in 0usize..4) {
        let spec = EnvSpec::from_name(EnvSpec::NAMES[env_idx]).unwrap();
        let env = spec.build();
        let b = spec.behavior(Tier::Medium);
        let a = generate_dataset(&env, &b, n, seed).unwrap();
        let c = generate_dataset(&env, &b, n, seed).unwrap();
        prop_assert_eq!(a.to_bytes(), c.to_bytes());
        let (lo, hi) = env.reward_bounds();
        prop_assert!(a.rewards.iter().all(|&r| (r as f64) >= lo - 1e-6 && (r as f64) <= hi));
        prop_assert!(a.actions.iter().all(|x| x.abs() <= 1.0));
    }

    #[test]
    fn corrupted_files_error_or_stay_valid(seed in 0u64..50, pos in 0usize..2000, byte in any::<u8>(), cut in 0usize..2000) {
        let spec = EnvSpec::from_name("point-nav").unwrap();
        let d = generate_dataset(&spec.build(), &spec.behavior(Tier::Random), 60, seed).unwrap();
        let mut bytes = d.to_bytes();
        let p = pos % bytes.len();
        bytes[p] = byte;
        bytes.truncate(bytes.len() - cut % 3);
        if let Ok(back) = OfflineDataset::from_bytes(&bytes) {
            prop_assert!(back.validate().is_ok());
        }
    }
}
