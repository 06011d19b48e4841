//! Candidate coordination policies.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coord::{episode_action_seed, episode_task, CoordDecision, CoordEnv, PenaltyConfig};
use crate::env::TaskDistribution;
use crate::error::{Error, Result};
use crate::oracle::OraclePolicy;
use crate::policy::{argmax, Actor, PolicyParams};
use crate::seed::Rng;
use crate::uncertainty::{train_svdd, FeatureBundle, FeatureSelector, MeasureKind, Scorer, SvddConfig};

/// Which novice's outputs feed a threshold policy's score.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceRole {
    Weakened,
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoordinationPolicy {
    /// Yield to the expert iff `score < tau`.
    Threshold {
        scorer: Scorer,
        tau: f64,
        source: SourceRole,
    },
    /// Yield with fixed probability `p`.
    Random {
        p: f64,
    },
    AlwaysNovice,
    AlwaysExpert,
    /// One RL-trained network per penalty level of the evaluation grid.
    Learned {
        selector: FeatureSelector,
        per_alpha: Vec<OraclePolicy>,
    },
}

impl CoordinationPolicy {
    /// `alpha_index` selects the network for learned policies; every other
    /// kind ignores it.
    pub fn decide(&self, bundle: &FeatureBundle, alpha_index: usize, rng: &mut Rng) -> CoordDecision {
        let expert = match self {
            CoordinationPolicy::Threshold { scorer, tau, .. } => scorer.score(bundle) < *tau,
            CoordinationPolicy::Random { p } => rng.random::<f64>() < *p,
            CoordinationPolicy::AlwaysNovice => false,
            CoordinationPolicy::AlwaysExpert => true,
            CoordinationPolicy::Learned { per_alpha, .. } => {
                let oracle = &per_alpha[alpha_index.min(per_alpha.len() - 1)];
                oracle.decide(bundle) == CoordDecision::Expert
            }
        };
        if expert {
            CoordDecision::Expert
        } else {
            CoordDecision::Novice
        }
    }

    /// Decisions do not depend on the penalty level.
    pub fn is_alpha_invariant(&self) -> bool {
        !matches!(self, CoordinationPolicy::Learned { .. })
    }

    /// Threshold or probability, when the policy has one.
    pub fn parameter(&self) -> Option<f64> {
        match self {
            CoordinationPolicy::Threshold { tau, .. } => Some(*tau),
            CoordinationPolicy::Random { p } => Some(*p),
            _ => None,
        }
    }

    pub fn label(&self) -> String {
        match self {
            CoordinationPolicy::Threshold { scorer, tau, .. } => format!("{}<{tau}", scorer.kind()),
            CoordinationPolicy::Random { p } => format!("random({p})"),
            CoordinationPolicy::AlwaysNovice => "always_novice".into(),
            CoordinationPolicy::AlwaysExpert => "always_expert".into(),
            CoordinationPolicy::Learned { selector, .. } => format!("rl_oracle[{selector}]"),
        }
    }

    /// Same rule, scored on a different novice's outputs.
    pub fn with_source(mut self, role: SourceRole) -> Self {
        if let CoordinationPolicy::Threshold { source, .. } = &mut self {
            *source = role;
        }
        self
    }
}

/// Summary of the score pool a threshold grid was cut from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolSummary {
    pub size: usize,
    pub min: f64,
    pub max: f64,
    pub percentiles: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub policies: Vec<CoordinationPolicy>,
    pub provenance: String,
    pub pool: Option<PoolSummary>,
}

pub const PERCENTILE_LEVELS: [usize; 11] = [0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100];

/// Nearest-rank percentiles at 0, 10, ..., 100: the value at sorted rank
/// `max(1, ceil(k/100 · n))`.
pub fn nearest_rank_percentiles(pool: &[f64]) -> Result<Vec<f64>> {
    if pool.is_empty() {
        return Err(Error::EmptyScorePool);
    }
    let mut sorted = pool.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Ok(PERCENTILE_LEVELS
        .iter()
        .map(|&k| {
            let rank = (k * n).div_ceil(100).max(1);
            sorted[rank - 1]
        })
        .collect())
}

/// Rolls out `actor` alone for `n_episodes` tasks and records its feature
/// bundle in every visited state.
pub fn collect_bundles(
    actor: Actor<'_>,
    dist: &TaskDistribution,
    n_episodes: usize,
    window_radius: usize,
    seed: u64,
) -> Result<Vec<FeatureBundle>> {
    // Solo rollout expressed as an always-novice coordination episode.
    let penalty = PenaltyConfig {
        alpha: 0.0,
        expert_mean_return: 0.0,
        expert_mean_length: 1.0,
    };
    let per_episode: Vec<Vec<FeatureBundle>> = (0..n_episodes as u64)
        .into_par_iter()
        .map(|j| {
            let task = episode_task(dist, seed, j)?;
            let mut env = CoordEnv::new(&task, actor, actor, window_radius, episode_action_seed(seed, j))?;
            let mut bundles = vec![env.reset()?];
            loop {
                let res = env.step(CoordDecision::Novice, &penalty)?;
                if res.done {
                    break;
                }
                bundles.push(res.bundle);
            }
            Ok(bundles)
        })
        .collect::<Result<_>>()?;
    Ok(per_episode.into_iter().flatten().collect())
}

/// Wraps each percentile of `scorer` over `bundles` as a threshold policy,
/// ascending in `tau`.
pub fn threshold_candidates(scorer: &Scorer, bundles: &[FeatureBundle], source: SourceRole) -> Result<CandidateSet> {
    let pool: Vec<f64> = bundles.iter().map(|b| scorer.score(b)).collect();
    let percentiles = nearest_rank_percentiles(&pool)?;
    let policies = percentiles
        .iter()
        .map(|&tau| CoordinationPolicy::Threshold {
            scorer: scorer.clone(),
            tau,
            source,
        })
        .collect();
    Ok(CandidateSet {
        policies,
        provenance: format!(
            "{} thresholds at nearest-rank percentiles 0..=100 step 10 over {} states",
            scorer.kind(),
            pool.len()
        ),
        pool: Some(PoolSummary {
            size: pool.len(),
            min: percentiles[0],
            max: percentiles[10],
            percentiles,
        }),
    })
}

/// Full threshold proposal for one measure: roll out the weakened novice on
/// training tasks, fit the detector first when the measure needs one, and
/// cut the percentile grid from the resulting score pool.
pub fn gen_threshold_candidates(
    measure: MeasureKind,
    weakened_novice: &PolicyParams,
    train_dist: &TaskDistribution,
    n_episodes: usize,
    window_radius: usize,
    svdd: &SvddSettings,
    seed: u64,
) -> Result<CandidateSet> {
    let bundles = collect_bundles(weakened_novice.into(), train_dist, n_episodes, window_radius, seed)?;
    if bundles.is_empty() {
        return Err(Error::EmptyScorePool);
    }
    let scorer = match measure {
        MeasureKind::Svdd => Scorer::Svdd {
            model: Box::new(train_svdd(&bundles, svdd.selector, &svdd.config, seed)?),
        },
        kind => Scorer::logit(kind)?,
    };
    threshold_candidates(&scorer, &bundles, SourceRole::Weakened)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvddSettings {
    pub selector: FeatureSelector,
    pub config: SvddConfig,
}

impl Default for SvddSettings {
    fn default() -> Self {
        SvddSettings {
            selector: FeatureSelector::HIDDEN,
            config: SvddConfig::default(),
        }
    }
}

/// `Random(p)` for `p = 0.0, 0.1, ..., 1.0`.
pub fn gen_random_candidates() -> CandidateSet {
    CandidateSet {
        policies: (0..=10)
            .map(|i| CoordinationPolicy::Random { p: i as f64 / 10.0 })
            .collect(),
        provenance: "random yield probability 0.0..=1.0 step 0.1".into(),
        pool: None,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    AlwaysNovice,
    AlwaysExpert,
    AlwaysRandomHalf,
}

pub fn make_baseline(kind: BaselineKind) -> CoordinationPolicy {
    match kind {
        BaselineKind::AlwaysNovice => CoordinationPolicy::AlwaysNovice,
        BaselineKind::AlwaysExpert => CoordinationPolicy::AlwaysExpert,
        BaselineKind::AlwaysRandomHalf => CoordinationPolicy::Random { p: 0.5 },
    }
}

impl OraclePolicy {
    /// Greedy decision of the two-logit network.
    pub fn decide(&self, bundle: &FeatureBundle) -> CoordDecision {
        let input = self.selector.extract(bundle);
        let hidden = self.params.hidden(&input);
        let logits = self.params.output_layer(&hidden);
        if argmax(&logits) == 1 {
            CoordDecision::Expert
        } else {
            CoordDecision::Novice
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use crate::testutil;

    fn dummy_bundle() -> FeatureBundle {
        FeatureBundle {
            obs: vec![0.0],
            hidden: vec![0.0],
            dist: vec![0.25; 4],
            logits: vec![0.0; 4],
        }
    }

    #[test]
    fn percentiles_of_one_to_hundred() {
        let mut pool: Vec<f64> = (1..=100).map(f64::from).collect();
        pool.reverse();
        let got = nearest_rank_percentiles(&pool).unwrap();
        // Sort-and-index oracle.
        let mut sorted = pool.clone();
        sorted.sort_by(f64::total_cmp);
        let expected: Vec<f64> = PERCENTILE_LEVELS
            .iter()
            .map(|&k| {
                let r = ((k as f64 / 100.0) * 100.0).ceil() as usize;
                sorted[r.max(1) - 1]
            })
            .collect();
        assert_eq!(got, expected);
        assert_eq!(
            got,
            vec![1.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0, 100.0]
        );
    }

    #[test]
    fn constant_pool() {
        assert_eq!(nearest_rank_percentiles(&[5.0; 3]).unwrap(), vec![5.0; 11]);
        assert!(matches!(nearest_rank_percentiles(&[]), Err(Error::EmptyScorePool)));
    }

    #[test]
    fn random_endpoints_match_constant_baselines() {
        let set = gen_random_candidates();
        assert_eq!(set.policies.len(), 11);
        let b = dummy_bundle();
        let mut r1 = seed::rng(1);
        let mut r2 = seed::rng(1);
        for _ in 0..1000 {
            assert_eq!(set.policies[0].decide(&b, 0, &mut r1), CoordDecision::Novice);
            assert_eq!(set.policies[10].decide(&b, 0, &mut r2), CoordDecision::Expert);
        }
    }

    #[test]
    fn random_half_frequency() {
        let b = dummy_bundle();
        for policy in [
            gen_random_candidates().policies[5].clone(),
            make_baseline(BaselineKind::AlwaysRandomHalf),
        ] {
            let mut rng = seed::rng(99);
            let n = 100_000;
            let experts = (0..n)
                .filter(|_| policy.decide(&b, 0, &mut rng) == CoordDecision::Expert)
                .count();
            assert!((experts as f64 / n as f64 - 0.5).abs() < 0.01);
        }
    }

    #[test]
    fn constant_baselines() {
        let b = dummy_bundle();
        let mut rng = seed::rng(0);
        assert_eq!(
            make_baseline(BaselineKind::AlwaysNovice).decide(&b, 0, &mut rng),
            CoordDecision::Novice
        );
        assert_eq!(
            make_baseline(BaselineKind::AlwaysExpert).decide(&b, 3, &mut rng),
            CoordDecision::Expert
        );
    }

    #[test]
    fn threshold_yields_below_tau() {
        let policy = CoordinationPolicy::Threshold {
            scorer: Scorer::logit(MeasureKind::MaxProb).unwrap(),
            tau: 0.3,
            source: SourceRole::Full,
        };
        let mut rng = seed::rng(0);
        let uniform = dummy_bundle();
        assert_eq!(policy.decide(&uniform, 0, &mut rng), CoordDecision::Expert);
        let peaked = FeatureBundle {
            dist: vec![0.7, 0.1, 0.1, 0.1],
            ..uniform
        };
        assert_eq!(policy.decide(&peaked, 0, &mut rng), CoordDecision::Novice);
    }

    #[test]
    fn threshold_generation_is_deterministic_and_monotone() {
        let novice = PolicyParams::init(147, 16, 4, 3);
        let dist = testutil::train_dist();
        let svdd = SvddSettings::default();
        let a = gen_threshold_candidates(MeasureKind::NegEntropy, &novice, &dist, 8, 3, &svdd, 1).unwrap();
        let b = gen_threshold_candidates(MeasureKind::NegEntropy, &novice, &dist, 8, 3, &svdd, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.policies.len(), 11);
        let taus: Vec<f64> = a.policies.iter().map(|p| p.parameter().unwrap()).collect();
        assert!(taus.windows(2).all(|w| w[0] <= w[1]));
        let pool = a.pool.unwrap();
        assert_eq!(taus[0], pool.min);
        assert_eq!(taus[10], pool.max);
    }
}
