use proptest::prelude::*;
use yrc_core::proposer::{nearest_rank_percentiles, SourceRole};
use yrc_core::seed;
use yrc_core::{CoordDecision, CoordinationPolicy, FeatureBundle, MeasureKind, PolicyParams, Scorer};

fn bundles(n: usize, seed_: u64) -> Vec<FeatureBundle> {
    use rand::Rng;
    let params = PolicyParams::init(147, 16, 4, seed_);
    let mut rng = seed::rng(seed_);
    (0..n)
        .map(|_| {
            let obs: Vec<f64> = (0..147).map(|_| f64::from(rng.random_bool(0.2) as u8)).collect();
            let out = params.forward(&obs).unwrap();
            FeatureBundle::new(obs, out)
        })
        .collect()
}

fn expert_count(kind: MeasureKind, tau: f64, bundles: &[FeatureBundle]) -> usize {
    let policy = CoordinationPolicy::Threshold {
        scorer: Scorer::logit(kind).unwrap(),
        tau,
        source: SourceRole::Weakened,
    };
    let mut rng = seed::rng(0);
    bundles
        .iter()
        .filter(|b| policy.decide(b, 0, &mut rng) == CoordDecision::Expert)
        .count()
}

#[test]
fn intervention_grows_with_the_threshold() {
    let pool = bundles(400, 9);
    for kind in [
        MeasureKind::MaxLogit,
        MeasureKind::MaxProb,
        MeasureKind::Margin,
        MeasureKind::NegEntropy,
        MeasureKind::NegEnergy,
    ] {
        let scorer = Scorer::logit(kind).unwrap();
        let scores: Vec<f64> = pool.iter().map(|b| scorer.score(b)).collect();
        let taus = nearest_rank_percentiles(&scores).unwrap();
        let counts: Vec<usize> = taus.iter().map(|&t| expert_count(kind, t, &pool)).collect();
        assert!(counts.windows(2).all(|w| w[0] <= w[1]), "{kind}: {counts:?}");
        // Strict comparison: the minimum never yields.
        assert_eq!(counts[0], 0, "{kind}");
        assert!(counts[10] >= pool.len() - scores.iter().filter(|&&s| s == taus[10]).count());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn yielded_sets_are_nested(a in -3.0f64..3.0, b in -3.0f64..3.0, s in 0u64..1000) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let pool = bundles(50, s);
        let policy = |tau| CoordinationPolicy::Threshold {
            scorer: Scorer::logit(MeasureKind::MaxLogit).unwrap(),
            tau,
            source: SourceRole::Full,
        };
        let mut rng = seed::rng(0);
        for bundle in &pool {
            if policy(lo).decide(bundle, 0, &mut rng) == CoordDecision::Expert {
                prop_assert_eq!(policy(hi).decide(bundle, 0, &mut rng), CoordDecision::Expert);
            }
        }
    }
}
