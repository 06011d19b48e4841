//! RL-trained coordination policies and the proposer/validator swap
//! diagnostic.
//!
//! An oracle policy is trained directly on the test-time coordination MDP,
//! with access to the expert and the test distribution. It is therefore not a
//! deployable method but an attainable skyline: comparing a method against
//! (a) the same candidates re-ranked under true test conditions and (b) the
//! oracle policy shows whether the validator or the proposer is the
//! bottleneck.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coord::{episode_action_seed, episode_task, CoordDecision, CoordEnv, PenaltyConfig};
use crate::error::{Error, Result};
use crate::metric::{self, alpha_grid, AucReport, CoordSetup, EvalConfig};
use crate::policy::{train_reinforce, EpisodeEnv, PolicyParams, TrainBudget, Transition};
use crate::proposer::{CandidateSet, CoordinationPolicy};
use crate::seed;
use crate::validator::{select_best, RankingRow, ValidatorSpec};

use crate::uncertainty::FeatureBundle;
pub use crate::uncertainty::FeatureSelector;

/// Canonical-order concatenation of the selected novice features.
pub fn concat_features(bundle: &FeatureBundle, selector: FeatureSelector) -> Vec<f64> {
    selector.extract(bundle)
}

/// Two-logit network over selected features; logit 0 keeps the novice in
/// control, logit 1 yields to the expert.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OraclePolicy {
    pub params: PolicyParams,
    pub selector: FeatureSelector,
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleTrainConfig {
    pub episodes: usize,
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub discount: f64,
    pub entropy_bonus: f64,
    pub batch_episodes: usize,
}

impl Default for OracleTrainConfig {
    fn default() -> Self {
        OracleTrainConfig {
            episodes: 3000,
            hidden_dim: 32,
            learning_rate: 3e-3,
            discount: 1.0,
            entropy_bonus: 0.01,
            batch_episodes: 16,
        }
    }
}

/// Coordination MDP exposed to the trainer: actions are decisions, inputs
/// are the selected novice features, rewards are penalised.
struct CoordTrainEnv<'a> {
    setup: CoordSetup<'a>,
    selector: FeatureSelector,
    penalty: PenaltyConfig,
    seed: u64,
    env: Option<CoordEnv<'a>>,
}

impl EpisodeEnv for CoordTrainEnv<'_> {
    fn input_dim(&self) -> usize {
        let p = self.setup.novice.params;
        self.selector.dim(p.input_dim(), p.hidden_dim(), p.output_dim())
    }

    fn reset(&mut self, episode: usize) -> Result<Vec<f64>> {
        let task = episode_task(self.setup.dist, self.seed, episode as u64)?;
        let mut env = CoordEnv::new(
            &task,
            self.setup.novice,
            self.setup.expert,
            self.setup.window_radius,
            episode_action_seed(self.seed, episode as u64),
        )?;
        let bundle = env.reset()?;
        self.env = Some(env);
        Ok(concat_features(&bundle, self.selector))
    }

    fn step(&mut self, action: usize) -> Result<Transition> {
        let env = self.env.as_mut().ok_or(Error::EpisodeDone)?;
        let decision = match action {
            0 => CoordDecision::Novice,
            1 => CoordDecision::Expert,
            other => {
                return Err(Error::Dimension {
                    expected: 2,
                    actual: other,
                })
            }
        };
        let res = env.step(decision, &self.penalty)?;
        Ok(Transition {
            features: concat_features(&res.bundle, self.selector),
            reward: res.reward,
            done: res.done,
        })
    }
}

/// Trains one oracle for penalty level `alpha` on the coordination MDP of
/// `setup` (which must hold the test-time novice, expert and distribution).
pub fn train_rl_oracle(
    selector: FeatureSelector,
    alpha: f64,
    setup: &CoordSetup<'_>,
    cfg: &OracleTrainConfig,
    seed: u64,
) -> Result<OraclePolicy> {
    let penalty = PenaltyConfig::new(alpha, &setup.expert_stats)?;
    let mut env = CoordTrainEnv {
        setup: *setup,
        selector,
        penalty,
        seed,
        env: None,
    };
    let budget = TrainBudget {
        episodes: cfg.episodes,
        learning_rate: cfg.learning_rate,
        discount: cfg.discount,
        entropy_bonus: cfg.entropy_bonus,
        seed,
        batch_episodes: cfg.batch_episodes,
    };
    let init = PolicyParams::init(env.input_dim(), cfg.hidden_dim, 2, seed);
    let out = train_reinforce(&mut env, init, &budget, None)?;
    Ok(OraclePolicy {
        params: out.params,
        selector,
        alpha,
    })
}

/// One oracle per level of the `k`-point penalty grid, trained in parallel.
pub fn train_oracle_set(
    selector: FeatureSelector,
    k: usize,
    setup: &CoordSetup<'_>,
    cfg: &OracleTrainConfig,
    seed: u64,
) -> Result<CoordinationPolicy> {
    let per_alpha = alpha_grid(k)
        .into_par_iter()
        .enumerate()
        .map(|(i, alpha)| {
            train_rl_oracle(
                selector,
                alpha,
                setup,
                cfg,
                seed::derive(seed, &format!("oracle-{selector}"), i as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CoordinationPolicy::Learned { selector, per_alpha })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OracleResult {
    pub selector: FeatureSelector,
    pub report: AucReport,
    pub expert_fraction: f64,
}

/// Trains and evaluates the oracle for every selector; returns results in
/// selector order together with the index of the best.
pub fn train_and_rank_oracles(
    selectors: &[FeatureSelector],
    setup: &CoordSetup<'_>,
    train_cfg: &OracleTrainConfig,
    eval_cfg: &EvalConfig,
    train_seed: u64,
    eval_seed: u64,
) -> Result<(Vec<(CoordinationPolicy, OracleResult)>, usize)> {
    if selectors.is_empty() {
        return Err(Error::NoCandidates);
    }
    let results: Vec<(CoordinationPolicy, OracleResult)> = selectors
        .par_iter()
        .map(|&selector| {
            let policy = train_oracle_set(selector, eval_cfg.k, setup, train_cfg, train_seed)?;
            let (curve, report) = metric::evaluate(&policy, setup, eval_cfg, eval_seed)?;
            Ok((
                policy,
                OracleResult {
                    selector,
                    report,
                    expert_fraction: curve.expert_fraction(),
                },
            ))
        })
        .collect::<Result<_>>()?;
    let best = (0..results.len())
        .reduce(|b, i| {
            if results[i].1.report.mean > results[b].1.report.mean {
                i
            } else {
                b
            }
        })
        .unwrap_or(0);
    Ok((results, best))
}

/// Test-condition AUCs of one method under its own simulated choice, the
/// oracle-validator choice over the same candidates, and the oracle proposer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnosis {
    pub method: String,
    pub simulated_auc: f64,
    pub oracle_validator_auc: f64,
    pub oracle_proposer_auc: f64,
    /// Best oracle-proposer AUC; figures divide by this.
    pub normalizer: f64,
    pub simulated_choice: usize,
    pub oracle_choice: usize,
    /// Every candidate evaluated under true test conditions.
    pub oracle_ranking: Vec<RankingRow>,
}

impl Diagnosis {
    pub fn normalized(&self) -> [f64; 3] {
        [
            self.simulated_auc / self.normalizer,
            self.oracle_validator_auc / self.normalizer,
            self.oracle_proposer_auc / self.normalizer,
        ]
    }
}

/// Re-ranks `candidates` under `oracle_spec` and compares the method's
/// simulated choice, the oracle-validator choice and the oracle proposer.
/// Both candidate AUCs are read from the same frozen ranking table.
pub fn diagnose_components(
    method: &str,
    candidates: &CandidateSet,
    simulated_choice: usize,
    oracle_spec: &ValidatorSpec<'_>,
    oracle_proposer: &OracleResult,
    eval_cfg: &EvalConfig,
    eval_seed: u64,
) -> Result<Diagnosis> {
    if simulated_choice >= candidates.policies.len() {
        return Err(Error::NoCandidates);
    }
    let oracle_sel = select_best(candidates, oracle_spec, eval_cfg, eval_seed)?;
    Ok(Diagnosis {
        method: method.to_string(),
        simulated_auc: oracle_sel.ranking[simulated_choice].auc_mean,
        oracle_validator_auc: oracle_sel.ranking[oracle_sel.best].auc_mean,
        oracle_proposer_auc: oracle_proposer.report.mean,
        normalizer: oracle_proposer.report.mean,
        simulated_choice,
        oracle_choice: oracle_sel.best,
        oracle_ranking: oracle_sel.ranking,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coord::estimate_policy_stats;
    use crate::testutil;

    fn bundle() -> FeatureBundle {
        FeatureBundle {
            obs: vec![1.0; 147],
            hidden: vec![2.0; 64],
            dist: vec![0.25; 4],
            logits: vec![0.0; 4],
        }
    }

    #[test]
    fn concat_lengths_and_order() {
        let b = bundle();
        let dist_only = FeatureSelector::new(false, false, true).unwrap();
        assert_eq!(concat_features(&b, dist_only).len(), 4);
        let all = FeatureSelector::new(true, true, true).unwrap();
        let v = concat_features(&b, all);
        assert_eq!(v.len(), 147 + 64 + 4);
        assert_eq!(v[146], 1.0);
        assert_eq!(v[147], 2.0);
        assert_eq!(v[211], 0.25);
        let mut other = b.clone();
        other.obs[0] = 0.0;
        assert_eq!(concat_features(&b, dist_only), concat_features(&other, dist_only));
    }

    #[test]
    fn oracle_training_is_deterministic() {
        let novice = PolicyParams::init(147, 16, 4, 1);
        let expert = PolicyParams::init(147, 16, 4, 2);
        let dist = testutil::train_dist();
        let stats = estimate_policy_stats((&expert).into(), &dist, 20, 3, 0).unwrap();
        let setup = CoordSetup {
            novice: (&novice).into(),
            expert: (&expert).into(),
            dist: &dist,
            expert_stats: stats,
            window_radius: 3,
        };
        let cfg = OracleTrainConfig {
            episodes: 40,
            hidden_dim: 8,
            ..OracleTrainConfig::default()
        };
        let sel = FeatureSelector::new(false, true, true).unwrap();
        let a = train_rl_oracle(sel, 0.5, &setup, &cfg, 3).unwrap();
        let b = train_rl_oracle(sel, 0.5, &setup, &cfg, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.params.input_dim(), 16 + 4);
        assert_eq!(a.params.output_dim(), 2);
    }
}
