use yrc_core::coord::estimate_policy_stats;
use yrc_core::env::DistName;
use yrc_core::policy::train_policy_gradient;
use yrc_core::{TaskDistribution, TrainBudget};

/// Small sparse rooms: the novice competence gate.
#[test]
fn novice_learns_small_rooms_in_twenty_thousand_episodes() {
    let dist = TaskDistribution {
        name: DistName::Train,
        grid_size_range: (7, 9),
        hazard_density_range: (0.05, 0.1),
    };
    let budget = TrainBudget {
        episodes: 20_000,
        learning_rate: 0.003,
        discount: 0.99,
        entropy_bonus: 0.01,
        seed: 21,
        batch_episodes: 16,
    };
    let out = train_policy_gradient(&dist, &budget, 64, 3, None).unwrap();
    assert_eq!(out.episodes_run, 20_000);
    let stats = estimate_policy_stats((&out.params).into(), &dist, 1000, 3, 99).unwrap();
    assert!(stats.mean_return >= 0.6, "mean return {}", stats.mean_return);
}
