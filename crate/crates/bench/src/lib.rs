//! Shared fixtures for the benchmarks.

use yrc_core::env::{obs_dim, DistName, ACTION_COUNT};
use yrc_core::metric::{alpha_grid, EvalCurve};
use yrc_core::{FeatureBundle, PolicyParams, TaskDistribution};

pub const WINDOW_RADIUS: usize = 3;
pub const HIDDEN_DIM: usize = 64;

pub fn policy(seed: u64) -> PolicyParams {
    PolicyParams::init(obs_dim(WINDOW_RADIUS), HIDDEN_DIM, ACTION_COUNT, seed)
}

/// Alternating sparse binary observation.
pub fn observation() -> Vec<f64> {
    (0..obs_dim(WINDOW_RADIUS))
        .map(|i| f64::from(u8::from(i % 7 == 0)))
        .collect()
}

pub fn bundle(params: &PolicyParams) -> FeatureBundle {
    let obs = observation();
    let out = params.forward(&obs).expect("fixture dimensions match");
    FeatureBundle::new(obs, out)
}

pub fn test_dist() -> TaskDistribution {
    TaskDistribution {
        name: DistName::Test,
        grid_size_range: (13, 15),
        hazard_density_range: (0.25, 0.35),
    }
}

/// `k` levels of `episodes` deterministic pseudo-returns.
pub fn curve(k: usize, episodes: usize) -> EvalCurve {
    let returns = (0..k)
        .map(|i| {
            (0..episodes)
                .map(|j| ((i * 31 + j * 17) % 100) as f64 / 100.0)
                .collect()
        })
        .collect();
    EvalCurve {
        alpha_grid: alpha_grid(k),
        returns,
        expert_steps: vec![vec![0; episodes]; k],
        lengths: vec![vec![1; episodes]; k],
    }
}
