//! Shared fixtures and independent numerical oracles for unit tests.

use rand::Rng as _;

use crate::env::{self, Action, DistName, TaskDistribution};
use crate::policy::{PgSample, PolicyParams};
use crate::seed;

pub fn train_dist() -> TaskDistribution {
    TaskDistribution {
        name: DistName::Train,
        grid_size_range: (7, 9),
        hazard_density_range: (0.05, 0.10),
    }
}

pub fn test_dist() -> TaskDistribution {
    TaskDistribution {
        name: DistName::Test,
        grid_size_range: (13, 15),
        hazard_density_range: (0.15, 0.25),
    }
}

/// Every task is the same hazard-free 5x5 room, start (1,1), goal (3,3).
pub fn tiny_dist() -> TaskDistribution {
    TaskDistribution {
        name: DistName::Train,
        grid_size_range: (5, 5),
        hazard_density_range: (0.0, 0.0),
    }
}

/// Greedily moves right until a wall is adjacent on the right, then down.
pub fn right_then_down_policy() -> PolicyParams {
    let radius = env::DEFAULT_WINDOW_RADIUS;
    let side = 2 * radius + 1;
    let wall_right = radius * side + radius + 1;
    let mut p = PolicyParams::zeros(env::obs_dim(radius), 1, env::ACTION_COUNT);
    p.w1.row_mut(0)[wall_right] = 1.0;
    p.w2.row_mut(Action::Down.index())[0] = 10.0;
    p.b2[Action::Right.index()] = 5.0;
    p
}

/// Small random network plus a batch of binary inputs whose hidden
/// pre-activations stay clear of the rectifier kink.
pub fn frozen_pg_batch() -> (PolicyParams, Vec<PgSample>) {
    let mut rng = seed::rng(2024);
    let params = PolicyParams::init(12, 6, 4, 77);
    let mut batch = Vec::new();
    while batch.len() < 16 {
        let input: Vec<f64> = (0..12)
            .map(|_| if rng.random::<f64>() < 0.4 { 1.0 } else { 0.0 })
            .collect();
        let pre_ok = (0..6).all(|i| {
            let pre: f64 = params.b1[i] + (0..12).map(|j| params.w1.get(i, j) * input[j]).sum::<f64>();
            pre.abs() > 1e-3
        });
        if pre_ok {
            batch.push(PgSample {
                input,
                action: rng.random_range(0..4),
                advantage: rng.random_range(-1.0..1.0),
            });
        }
    }
    (params, batch)
}

/// Central differences, one coordinate at a time.
pub fn finite_difference_gradient(params: &PolicyParams, objective: impl Fn(&PolicyParams) -> f64) -> PolicyParams {
    let h = 1e-6;
    let mut grads = PolicyParams::zeros(params.input_dim(), params.hidden_dim(), params.output_dim());
    let shapes = params.shapes();
    for (t, &len) in shapes.iter().enumerate() {
        for i in 0..len {
            let mut plus = params.clone();
            plus.tensors_mut()[t][i] += h;
            let mut minus = params.clone();
            minus.tensors_mut()[t][i] -= h;
            grads.tensors_mut()[t][i] = (objective(&plus) - objective(&minus)) / (2.0 * h);
        }
    }
    grads
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)` over all tensors jointly.
pub fn relative_error(a: &PolicyParams, b: &PolicyParams) -> f64 {
    let mut diff = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.tensors().iter().zip(b.tensors()) {
        for (u, v) in x.iter().zip(y) {
            diff += (u - v) * (u - v);
            na += u * u;
            nb += v * v;
        }
    }
    diff.sqrt() / f64::max(na, nb).sqrt().max(1e-300)
}
