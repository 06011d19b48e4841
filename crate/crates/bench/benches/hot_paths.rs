use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use yrc_bench::{bundle, curve, observation, policy, test_dist, WINDOW_RADIUS};
use yrc_core::coord::estimate_policy_stats;
use yrc_core::metric::{auc_bootstrap, run_episode, CoordSetup};
use yrc_core::{CoordinationPolicy, MeasureKind, Scorer};

fn forward(c: &mut Criterion) {
    let params = policy(1);
    let obs = observation();
    c.bench_function("policy_forward", |b| {
        b.iter(|| params.forward(black_box(&obs)).unwrap())
    });
}

fn scores(c: &mut Criterion) {
    let params = policy(2);
    let bundle = bundle(&params);
    let mut group = c.benchmark_group("score");
    for kind in MeasureKind::ALL.into_iter().filter(|k| *k != MeasureKind::Svdd) {
        let scorer = Scorer::logit(kind).unwrap();
        group.bench_function(kind.name(), |b| b.iter(|| scorer.score(black_box(&bundle))));
    }
    group.finish();
}

fn bootstrap(c: &mut Criterion) {
    let curve = curve(6, 256);
    c.bench_function("auc_bootstrap_1000x128", |b| {
        b.iter(|| auc_bootstrap(black_box(&curve), 1000, 128, 7).unwrap())
    });
}

fn rollout(c: &mut Criterion) {
    let novice = policy(3);
    let expert = policy(4);
    let dist = test_dist();
    let stats = estimate_policy_stats((&expert).into(), &dist, 8, WINDOW_RADIUS, 5).unwrap();
    let setup = CoordSetup {
        novice: (&novice).into(),
        expert: (&expert).into(),
        dist: &dist,
        expert_stats: stats,
        window_radius: WINDOW_RADIUS,
    };
    let policy = CoordinationPolicy::Random { p: 0.5 };
    let mut index = 0u64;
    c.bench_function("coordination_episode", |b| {
        b.iter(|| {
            index += 1;
            run_episode(&policy, &setup, 0, 9, index).unwrap()
        })
    });
}

criterion_group!(benches, forward, scores, bootstrap, rollout);
criterion_main!(benches);
