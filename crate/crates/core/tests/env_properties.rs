use std::collections::VecDeque;

use proptest::prelude::*;
use yrc_core::env::{obs_dim, sample_task, Cell, DistName, Layout, ACTION_COUNT};
use yrc_core::{Action, GridEnv, TaskDistribution};

fn train() -> TaskDistribution {
    TaskDistribution {
        name: DistName::Train,
        grid_size_range: (13, 15),
        hazard_density_range: (0.02, 0.05),
    }
}

fn test() -> TaskDistribution {
    TaskDistribution {
        name: DistName::Test,
        grid_size_range: (13, 15),
        hazard_density_range: (0.25, 0.35),
    }
}

/// Breadth-first search over non-wall, non-hazard cells.
fn reachable(layout: &Layout) -> bool {
    let n = layout.size();
    let mut seen = vec![false; n * n];
    let mut queue = VecDeque::from([layout.start()]);
    seen[layout.start().0 * n + layout.start().1] = true;
    while let Some((r, c)) = queue.pop_front() {
        if (r, c) == layout.goal() {
            return true;
        }
        for (dr, dc) in [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)] {
            let (nr, nc) = (r as isize + dr, c as isize + dc);
            if matches!(layout.cell(nr, nc), Cell::Wall | Cell::Hazard) {
                continue;
            }
            let (nr, nc) = (nr as usize, nc as usize);
            if !seen[nr * n + nc] {
                seen[nr * n + nc] = true;
                queue.push_back((nr, nc));
            }
        }
    }
    false
}

#[test]
fn thousand_tasks_per_distribution_are_solvable() {
    for dist in [train(), test()] {
        for seed in 0..1000 {
            let spec = sample_task(&dist, seed).unwrap();
            let layout = Layout::generate(&spec).unwrap();
            let n = layout.size();
            assert!(reachable(&layout), "{} task {seed} unsolvable", dist.name);
            assert!(layout.shortest_path_len().is_some());
            let (s, g) = (layout.start(), layout.goal());
            assert!(s.0 < n / 2 && s.1 < n / 2, "start {s:?} outside top-left quadrant");
            assert!(g.0 >= n / 2 && g.1 >= n / 2, "goal {g:?} outside bottom-right quadrant");
            assert_eq!(spec.max_steps, 4 * n);
        }
    }
}

#[test]
fn observations_have_fixed_binary_shape() {
    for seed in 0..100 {
        let spec = sample_task(&test(), seed).unwrap();
        let mut env = GridEnv::new(&spec, 3).unwrap();
        let mut obs = env.reset();
        for t in 0..10 {
            assert_eq!(obs.as_slice().len(), obs_dim(3));
            assert_eq!(obs.as_slice().len(), 147);
            assert!(obs.as_slice().iter().all(|&v| v == 0.0 || v == 1.0));
            let res = env.step(Action::from_index(t % ACTION_COUNT).unwrap()).unwrap();
            if res.done {
                break;
            }
            obs = res.observation;
        }
    }
}

#[test]
fn hazard_density_separates_train_from_test() {
    let mean_hazards = |dist: &TaskDistribution| {
        let total: usize = (0..200)
            .map(|seed| {
                let layout = Layout::generate(&sample_task(dist, seed).unwrap()).unwrap();
                let n = layout.size() as isize;
                (0..n)
                    .flat_map(|r| (0..n).map(move |c| (r, c)))
                    .filter(|&(r, c)| layout.cell(r, c) == Cell::Hazard)
                    .count()
            })
            .sum();
        total as f64 / 200.0
    };
    assert!(train().is_disjoint_from(&test()));
    assert!(mean_hazards(&test()) > 3.0 * mean_hazards(&train()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn generation_is_a_function_of_the_seed(seed in any::<u64>()) {
        let a = sample_task(&test(), seed).unwrap();
        let b = sample_task(&test(), seed).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(Layout::generate(&a).unwrap(), Layout::generate(&b).unwrap());
    }
}
