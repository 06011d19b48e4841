//! Policy validation: the simulated validator built only from training-time
//! ingredients, the oracle validator over true test conditions, and
//! selection over a candidate set.

use std::cmp::Ordering;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coord::{estimate_policy_stats, PolicyStats};
use crate::env::TaskDistribution;
use crate::error::{Error, Result};
use crate::metric::{self, AucReport, CoordSetup, EvalConfig, EvalCurve};
use crate::policy::{Actor, PolicyParams};
use crate::proposer::{CandidateSet, CoordinationPolicy, SourceRole};

/// Faithfulness ratios above this are flagged.
pub const FAITHFULNESS_LIMIT: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValidatorKind {
    Simulated,
    Oracle,
}

/// Casting of roles for an evaluation.
#[derive(Clone, Debug)]
pub struct ValidatorSpec<'a> {
    pub kind: ValidatorKind,
    pub novice: &'a PolicyParams,
    pub expert: &'a PolicyParams,
    pub dist: TaskDistribution,
    /// Statistics of `expert` on `dist`.
    pub expert_stats: PolicyStats,
    pub feature_source: SourceRole,
    pub window_radius: usize,
}

impl<'a> ValidatorSpec<'a> {
    /// Weakened novice as the novice, novice as the expert, training tasks.
    /// Needs nothing from test time.
    pub fn simulated(
        weakened: &'a PolicyParams,
        novice: &'a PolicyParams,
        train_dist: &TaskDistribution,
        stats_episodes: usize,
        window_radius: usize,
        seed: u64,
    ) -> Result<Self> {
        let expert_stats = estimate_policy_stats(novice.into(), train_dist, stats_episodes, window_radius, seed)?;
        Ok(ValidatorSpec {
            kind: ValidatorKind::Simulated,
            novice: weakened,
            expert: novice,
            dist: train_dist.clone(),
            expert_stats,
            feature_source: SourceRole::Weakened,
            window_radius,
        })
    }

    /// True test conditions; `expert_stats` are the expert's on `test_dist`.
    pub fn oracle(
        novice: &'a PolicyParams,
        expert: &'a PolicyParams,
        test_dist: &TaskDistribution,
        expert_stats: PolicyStats,
        window_radius: usize,
    ) -> Self {
        ValidatorSpec {
            kind: ValidatorKind::Oracle,
            novice,
            expert,
            dist: test_dist.clone(),
            expert_stats,
            feature_source: SourceRole::Full,
            window_radius,
        }
    }

    pub fn setup(&self) -> CoordSetup<'_> {
        CoordSetup {
            novice: Actor::from(self.novice),
            expert: Actor::from(self.expert),
            dist: &self.dist,
            expert_stats: self.expert_stats,
            window_radius: self.window_radius,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Validation {
    pub curve: EvalCurve,
    pub report: AucReport,
}

pub fn validate(
    spec: &ValidatorSpec<'_>,
    policy: &CoordinationPolicy,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<Validation> {
    let policy = policy.clone().with_source(spec.feature_source);
    let (curve, report) = metric::evaluate(&policy, &spec.setup(), cfg, seed)?;
    Ok(Validation { curve, report })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingRow {
    pub candidate_id: usize,
    pub label: String,
    /// Threshold or probability; empty for parameterless policies.
    pub parameter: Option<f64>,
    pub auc_mean: f64,
    pub auc_std: f64,
    pub expert_fraction: f64,
}

#[derive(Clone, Debug)]
pub struct Selection {
    pub best: usize,
    pub policy: CoordinationPolicy,
    /// One row per candidate, in candidate order.
    pub ranking: Vec<RankingRow>,
}

/// Highest mean AUC wins; ties go to the smaller expert fraction, then to
/// the earlier (lower-threshold) candidate.
pub fn argmax_row(rows: &[RankingRow]) -> Option<usize> {
    (0..rows.len()).reduce(|best, i| {
        let (a, b) = (&rows[i], &rows[best]);
        let better = match a.auc_mean.total_cmp(&b.auc_mean) {
            Ordering::Greater => true,
            Ordering::Less => false,
            Ordering::Equal => a.expert_fraction < b.expert_fraction,
        };
        if better {
            i
        } else {
            best
        }
    })
}

/// Evaluates every candidate under `spec` on the same seeded episode stream
/// and returns the best one together with the full ranking.
pub fn select_best(
    candidates: &CandidateSet,
    spec: &ValidatorSpec<'_>,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<Selection> {
    if candidates.policies.is_empty() {
        return Err(Error::NoCandidates);
    }
    let ranking: Vec<RankingRow> = candidates
        .policies
        .par_iter()
        .enumerate()
        .map(|(i, policy)| {
            let v = validate(spec, policy, cfg, seed)?;
            Ok(RankingRow {
                candidate_id: i,
                label: policy.label(),
                parameter: policy.parameter(),
                auc_mean: v.report.mean,
                auc_std: v.report.std,
                expert_fraction: v.curve.expert_fraction(),
            })
        })
        .collect::<Result<_>>()?;
    let best = argmax_row(&ranking).ok_or(Error::NoCandidates)?;
    Ok(Selection {
        best,
        policy: candidates.policies[best].clone(),
        ranking,
    })
}

pub fn write_ranking_csv<W: Write>(rows: &[RankingRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "candidate_id",
        "label",
        "parameter",
        "auc_mean",
        "auc_std",
        "expert_fraction",
    ])?;
    for r in rows {
        w.write_record([
            r.candidate_id.to_string(),
            r.label.clone(),
            r.parameter.map(|p| p.to_string()).unwrap_or_default(),
            r.auc_mean.to_string(),
            r.auc_std.to_string(),
            r.expert_fraction.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_ranking_csv<R: std::io::Read>(reader: R) -> Result<Vec<RankingRow>> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Faithfulness {
    pub ratio: f64,
    /// Weakened novice on the training distribution.
    pub simulated_expert_return: f64,
    /// Novice on the test distribution.
    pub novice_test_return: f64,
    pub flagged: bool,
}

/// `numerator / denominator`, warning above [`FAITHFULNESS_LIMIT`] or at zero.
pub fn ratio_from_means(numerator: f64, denominator: f64) -> Result<Faithfulness> {
    if !(denominator > 0.0) {
        return Err(Error::RatioUndefined(denominator));
    }
    let ratio = numerator / denominator;
    let flagged = ratio > FAITHFULNESS_LIMIT || ratio <= 0.0;
    if ratio > FAITHFULNESS_LIMIT {
        log::warn!("faithfulness ratio {ratio:.3} exceeds {FAITHFULNESS_LIMIT}");
    } else if ratio <= 0.0 {
        log::warn!("faithfulness ratio is {ratio}: the weakened novice earns nothing on training tasks");
    }
    Ok(Faithfulness {
        ratio,
        simulated_expert_return: numerator,
        novice_test_return: denominator,
        flagged,
    })
}

/// `Ḡ(weakened, train) / Ḡ(novice, test)`.
pub fn faithfulness_ratio(
    weakened: &PolicyParams,
    novice: &PolicyParams,
    train_dist: &TaskDistribution,
    test_dist: &TaskDistribution,
    n_episodes: usize,
    window_radius: usize,
    seed: u64,
) -> Result<Faithfulness> {
    let num = estimate_policy_stats(weakened.into(), train_dist, n_episodes, window_radius, seed)?;
    let den = estimate_policy_stats(novice.into(), test_dist, n_episodes, window_radius, seed)?;
    ratio_from_means(num.mean_return, den.mean_return)
}
