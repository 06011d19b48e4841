//! Penalty-sweep rollouts and the bootstrap area-under-curve metric.

use std::io::{Read, Write};

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coord::{episode_action_seed, episode_task, CoordDecision, CoordEnv, PenaltyConfig, PolicyStats};
use crate::env::TaskDistribution;
use crate::error::{Error, Result};
use crate::policy::Actor;
use crate::proposer::CoordinationPolicy;
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Number of penalty levels; `α_i = i / K`.
    pub k: usize,
    /// Episodes per penalty level.
    pub episodes: usize,
    /// Bootstrap subsample size.
    pub subsample: usize,
    pub n_bootstrap: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k: 6,
            episodes: 256,
            subsample: 128,
            n_bootstrap: 1000,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::TooFewPoints(self.k));
        }
        if self.episodes == 0 || self.n_bootstrap == 0 || self.subsample == 0 {
            return Err(Error::Config("episodes, subsample and n_bootstrap must be > 0".into()));
        }
        if self.subsample > self.episodes {
            return Err(Error::Subsample {
                m: self.subsample,
                episodes: self.episodes,
            });
        }
        Ok(())
    }
}

/// `[1/K, 2/K, ..., 1]`.
pub fn alpha_grid(k: usize) -> Vec<f64> {
    (1..=k).map(|i| i as f64 / k as f64).collect()
}

/// Everything a coordination rollout needs besides the coordination policy.
#[derive(Clone, Copy, Debug)]
pub struct CoordSetup<'a> {
    pub novice: Actor<'a>,
    pub expert: Actor<'a>,
    pub dist: &'a TaskDistribution,
    /// Statistics of `expert` on `dist`, the basis of the penalty.
    pub expert_stats: PolicyStats,
    pub window_radius: usize,
}

/// Per-step record of one coordination episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeTrace {
    pub base_rewards: Vec<f64>,
    pub expert_flags: Vec<bool>,
}

impl EpisodeTrace {
    pub fn len(&self) -> usize {
        self.base_rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base_rewards.is_empty()
    }

    pub fn expert_steps(&self) -> usize {
        self.expert_flags.iter().filter(|&&e| e).count()
    }

    /// Sum of penalised rewards, accumulated in step order exactly as the
    /// coordination environment would emit them.
    pub fn penalized_return(&self, penalty: &PenaltyConfig) -> f64 {
        self.base_rewards
            .iter()
            .zip(&self.expert_flags)
            .map(|(&r, &e)| {
                penalty.penalize(
                    r,
                    if e {
                        CoordDecision::Expert
                    } else {
                        CoordDecision::Novice
                    },
                )
            })
            .sum()
    }
}

/// Runs episode `index` of the evaluation stream `stream_seed`. Task and
/// action seeds depend only on `(stream_seed, index)`, so every policy and
/// every penalty level sees the same task sequence.
pub fn run_episode(
    policy: &CoordinationPolicy,
    setup: &CoordSetup<'_>,
    alpha_index: usize,
    stream_seed: u64,
    index: u64,
) -> Result<EpisodeTrace> {
    let task = episode_task(setup.dist, stream_seed, index)?;
    let mut env = CoordEnv::new(
        &task,
        setup.novice,
        setup.expert,
        setup.window_radius,
        episode_action_seed(stream_seed, index),
    )?;
    let mut decide_rng = seed::derived_rng(stream_seed, "decide", index);
    // Penalty does not influence dynamics; the trace stores base rewards.
    let neutral = PenaltyConfig {
        alpha: 0.0,
        expert_mean_return: 0.0,
        expert_mean_length: 1.0,
    };
    let mut bundle = env.reset()?;
    let mut trace = EpisodeTrace {
        base_rewards: Vec::new(),
        expert_flags: Vec::new(),
    };
    loop {
        let decision = policy.decide(&bundle, alpha_index, &mut decide_rng);
        let res = env.step(decision, &neutral)?;
        trace.base_rewards.push(res.base_reward);
        trace.expert_flags.push(decision == CoordDecision::Expert);
        if res.done {
            return Ok(trace);
        }
        bundle = res.bundle;
    }
}

/// Returns per penalty level and episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalCurve {
    pub alpha_grid: Vec<f64>,
    pub returns: Vec<Vec<f64>>,
    pub expert_steps: Vec<Vec<usize>>,
    pub lengths: Vec<Vec<usize>>,
}

impl EvalCurve {
    pub fn k(&self) -> usize {
        self.alpha_grid.len()
    }

    pub fn episodes(&self) -> usize {
        self.returns.first().map_or(0, Vec::len)
    }

    pub fn mean_returns(&self) -> Vec<f64> {
        self.returns
            .iter()
            .map(|row| row.iter().sum::<f64>() / row.len() as f64)
            .collect()
    }

    /// Expert-controlled steps over all steps, pooled across the curve.
    pub fn expert_fraction(&self) -> f64 {
        let e: usize = self.expert_steps.iter().flatten().sum();
        let t: usize = self.lengths.iter().flatten().sum();
        if t == 0 {
            0.0
        } else {
            e as f64 / t as f64
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.episodes();
        let rows_ok = self.returns.len() == self.k()
            && self.expert_steps.len() == self.k()
            && self.lengths.len() == self.k()
            && self.returns.iter().all(|r| r.len() == m)
            && self.expert_steps.iter().all(|r| r.len() == m)
            && self.lengths.iter().all(|r| r.len() == m);
        if !rows_ok {
            return Err(Error::Config("ragged evaluation curve".into()));
        }
        if !self.alpha_grid.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config("alpha grid must be strictly increasing".into()));
        }
        Ok(())
    }

    /// Columns `alpha,episode,return,expert_steps,length`, one row per
    /// `(alpha, episode)` slot.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["alpha", "episode", "return", "expert_steps", "length"])?;
        for (i, &alpha) in self.alpha_grid.iter().enumerate() {
            for j in 0..self.episodes() {
                w.write_record([
                    alpha.to_string(),
                    j.to_string(),
                    self.returns[i][j].to_string(),
                    self.expert_steps[i][j].to_string(),
                    self.lengths[i][j].to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<EvalCurve> {
        #[derive(Deserialize)]
        struct Row {
            alpha: f64,
            episode: usize,
            #[serde(rename = "return")]
            ret: f64,
            expert_steps: usize,
            length: usize,
        }
        let mut curve = EvalCurve {
            alpha_grid: Vec::new(),
            returns: Vec::new(),
            expert_steps: Vec::new(),
            lengths: Vec::new(),
        };
        for row in csv::Reader::from_reader(reader).deserialize::<Row>() {
            let row = row?;
            if curve.alpha_grid.last() != Some(&row.alpha) {
                curve.alpha_grid.push(row.alpha);
                curve.returns.push(Vec::new());
                curve.expert_steps.push(Vec::new());
                curve.lengths.push(Vec::new());
            }
            let i = curve.alpha_grid.len() - 1;
            if row.episode != curve.returns[i].len() {
                return Err(Error::Config(format!("episode {} out of order", row.episode)));
            }
            curve.returns[i].push(row.ret);
            curve.expert_steps[i].push(row.expert_steps);
            curve.lengths[i].push(row.length);
        }
        curve.validate()?;
        Ok(curve)
    }
}

/// Evaluates `policy` at every penalty level of `cfg` over `cfg.episodes`
/// paired episodes. Episodes run in parallel; results do not depend on the
/// schedule.
pub fn rollout_curve(
    policy: &CoordinationPolicy,
    setup: &CoordSetup<'_>,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<EvalCurve> {
    let alphas = alpha_grid(cfg.k);
    let penalties: Vec<PenaltyConfig> = alphas
        .iter()
        .map(|&a| PenaltyConfig::new(a, &setup.expert_stats))
        .collect::<Result<_>>()?;

    // traces[i][j]: level i, episode j. Level-invariant policies act
    // identically at every level, so one rollout serves all rows.
    let traces: Vec<Vec<EpisodeTrace>> = if policy.is_alpha_invariant() {
        let row: Vec<EpisodeTrace> = (0..cfg.episodes as u64)
            .into_par_iter()
            .map(|j| run_episode(policy, setup, 0, seed, j))
            .collect::<Result<_>>()?;
        vec![row; cfg.k]
    } else {
        (0..cfg.k)
            .map(|i| {
                (0..cfg.episodes as u64)
                    .into_par_iter()
                    .map(|j| run_episode(policy, setup, i, seed, j))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?
    };

    Ok(EvalCurve {
        returns: traces
            .iter()
            .zip(&penalties)
            .map(|(row, pen)| row.iter().map(|t| t.penalized_return(pen)).collect())
            .collect(),
        expert_steps: traces
            .iter()
            .map(|row| row.iter().map(EpisodeTrace::expert_steps).collect())
            .collect(),
        lengths: traces
            .iter()
            .map(|row| row.iter().map(EpisodeTrace::len).collect())
            .collect(),
        alpha_grid: alphas,
    })
}

/// Trapezoidal area over `[α_1, α_K]`.
pub fn area_under_curve(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::TooFewPoints(points.len()));
    }
    if !points.windows(2).all(|w| w[0].0 < w[1].0) {
        return Err(Error::Config("curve abscissae must be strictly increasing".into()));
    }
    Ok(points
        .windows(2)
        .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1))
        .sum())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AucReport {
    pub mean: f64,
    pub std: f64,
    pub n_bootstrap: usize,
    pub subsample: usize,
    /// Full-sample mean return at each penalty level.
    pub per_alpha_means: Vec<f64>,
    pub seed: u64,
}

/// Repeats `n` times: draw `m` returns with replacement from each level,
/// average them and integrate the resulting curve. Reports the mean and
/// population standard deviation of the `n` areas.
pub fn auc_bootstrap(curve: &EvalCurve, n: usize, m: usize, seed: u64) -> Result<AucReport> {
    curve.validate()?;
    let episodes = curve.episodes();
    if m > episodes {
        return Err(Error::Subsample { m, episodes });
    }
    if m == 0 || n == 0 {
        return Err(Error::Config("bootstrap needs n > 0 and m > 0".into()));
    }
    let mut rng = seed::derived_rng(seed, "bootstrap", 0);
    let mut areas = Vec::with_capacity(n);
    let mut points = vec![(0.0, 0.0); curve.k()];
    for _ in 0..n {
        for (i, row) in curve.returns.iter().enumerate() {
            let sum: f64 = (0..m).map(|_| row[rng.random_range(0..episodes)]).sum();
            points[i] = (curve.alpha_grid[i], sum / m as f64);
        }
        areas.push(area_under_curve(&points)?);
    }
    let mean = areas.iter().sum::<f64>() / n as f64;
    let var = areas.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n as f64;
    Ok(AucReport {
        mean,
        std: var.sqrt(),
        n_bootstrap: n,
        subsample: m,
        per_alpha_means: curve.mean_returns(),
        seed,
    })
}

/// Rollout followed by bootstrap, both seeded from `seed`.
pub fn evaluate(
    policy: &CoordinationPolicy,
    setup: &CoordSetup<'_>,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<(EvalCurve, AucReport)> {
    cfg.validate()?;
    let curve = rollout_curve(policy, setup, cfg, seed)?;
    let report = auc_bootstrap(&curve, cfg.n_bootstrap, cfg.subsample, seed)?;
    Ok((curve, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coord::{estimate_policy_stats, solo_episode};
    use crate::policy::PolicyParams;
    use crate::testutil;

    fn constant_curve(g: f64, k: usize, m: usize) -> EvalCurve {
        EvalCurve {
            alpha_grid: alpha_grid(k),
            returns: vec![vec![g; m]; k],
            expert_steps: vec![vec![0; m]; k],
            lengths: vec![vec![1; m]; k],
        }
    }

    #[test]
    fn trapezoid_closed_forms() {
        let alphas = alpha_grid(6);
        let constant: Vec<(f64, f64)> = alphas.iter().map(|&a| (a, 0.6)).collect();
        assert!((area_under_curve(&constant).unwrap() - 0.6 * 5.0 / 6.0).abs() < 1e-12);
        let zero: Vec<(f64, f64)> = alphas.iter().map(|&a| (a, 0.0)).collect();
        assert_eq!(area_under_curve(&zero).unwrap(), 0.0);
        let ge = 0.8;
        let linear: Vec<(f64, f64)> = alphas.iter().map(|&a| (a, (1.0 - a) * ge)).collect();
        assert!((area_under_curve(&linear).unwrap() - ge * 25.0 / 72.0).abs() < 1e-12);
        assert!(matches!(area_under_curve(&[(0.5, 1.0)]), Err(Error::TooFewPoints(1))));
    }

    #[test]
    fn bootstrap_of_constant_curve() {
        let curve = constant_curve(0.7, 6, 40);
        let r = auc_bootstrap(&curve, 200, 20, 3).unwrap();
        assert!((r.mean - 0.7 * 5.0 / 6.0).abs() < 1e-12);
        assert!(r.std < 1e-12);
        assert_eq!(r, auc_bootstrap(&curve, 200, 20, 3).unwrap());
        assert!(matches!(
            auc_bootstrap(&curve, 10, 41, 0),
            Err(Error::Subsample { m: 41, episodes: 40 })
        ));
    }

    #[test]
    fn full_size_resampling_still_varies() {
        let mut curve = constant_curve(0.0, 6, 10);
        for row in &mut curve.returns {
            for (j, v) in row.iter_mut().enumerate() {
                *v = if j % 2 == 0 { 1.0 } else { 0.0 };
            }
        }
        let before = curve.clone();
        let r = auc_bootstrap(&curve, 500, 10, 1).unwrap();
        assert!(r.std > 0.0);
        assert_eq!(curve, before);
    }

    #[test]
    fn csv_roundtrip() {
        let mut curve = constant_curve(0.25, 3, 4);
        curve.returns[1][2] = -0.125;
        curve.expert_steps[2][3] = 7;
        let mut buf = Vec::new();
        curve.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("alpha,episode,return,expert_steps,length\n"));
        assert_eq!(EvalCurve::read_csv(buf.as_slice()).unwrap(), curve);
    }

    fn setup_fixture() -> (PolicyParams, PolicyParams, crate::env::TaskDistribution) {
        (
            PolicyParams::init(147, 16, 4, 1),
            PolicyParams::init(147, 16, 4, 2),
            testutil::train_dist(),
        )
    }

    #[test]
    fn always_novice_rows_are_identical_and_replay_solo() {
        let (novice, expert, dist) = setup_fixture();
        let stats = estimate_policy_stats((&expert).into(), &dist, 20, 3, 5).unwrap();
        let setup = CoordSetup {
            novice: (&novice).into(),
            expert: (&expert).into(),
            dist: &dist,
            expert_stats: stats,
            window_radius: 3,
        };
        let cfg = EvalConfig {
            k: 6,
            episodes: 24,
            subsample: 12,
            n_bootstrap: 50,
        };
        let curve = rollout_curve(&CoordinationPolicy::AlwaysNovice, &setup, &cfg, 77).unwrap();
        for row in &curve.returns {
            assert_eq!(row, &curve.returns[0]);
        }
        for j in 0..24 {
            let solo = solo_episode((&novice).into(), &dist, 3, 77, j as u64).unwrap();
            assert_eq!(solo.total_return, curve.returns[0][j]);
            assert_eq!(solo.length, curve.lengths[0][j]);
        }
        assert_eq!(
            curve,
            rollout_curve(&CoordinationPolicy::AlwaysNovice, &setup, &cfg, 77).unwrap()
        );
    }

    #[test]
    fn always_expert_rows_follow_penalty_linearity() {
        let (novice, expert, dist) = setup_fixture();
        let stats = estimate_policy_stats((&expert).into(), &dist, 20, 3, 5).unwrap();
        let setup = CoordSetup {
            novice: (&novice).into(),
            expert: (&expert).into(),
            dist: &dist,
            expert_stats: stats,
            window_radius: 3,
        };
        let cfg = EvalConfig {
            k: 6,
            episodes: 16,
            subsample: 8,
            n_bootstrap: 10,
        };
        let curve = rollout_curve(&CoordinationPolicy::AlwaysExpert, &setup, &cfg, 4).unwrap();
        let unit = stats.mean_return / stats.mean_length;
        for j in 0..16 {
            let base = solo_episode((&expert).into(), &dist, 3, 4, j as u64).unwrap();
            assert_eq!(curve.lengths[0][j], base.length);
            for (i, &a) in curve.alpha_grid.iter().enumerate() {
                assert_eq!(curve.expert_steps[i][j], base.length);
                let expected = base.total_return - a * unit * base.length as f64;
                assert!((curve.returns[i][j] - expected).abs() < 1e-12);
            }
        }
    }
}
