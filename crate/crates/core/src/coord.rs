//! Coordination environment: each step the coordination policy chooses
//! whether the novice or the expert acts, and expert steps are charged a
//! fraction of the expert's average per-step return.

use serde::{Deserialize, Serialize};

use crate::env::{self, sample_task, Action, GridEnv, TaskDistribution, TaskSpec};
use crate::error::{Error, Result};
use crate::policy::Actor;
use crate::seed::{self, Rng};
use crate::uncertainty::FeatureBundle;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoordDecision {
    Novice,
    Expert,
}

/// Mean return and episode length of a policy on a distribution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyStats {
    pub mean_return: f64,
    pub mean_length: f64,
    pub episodes: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub alpha: f64,
    pub expert_mean_return: f64,
    pub expert_mean_length: f64,
}

impl PenaltyConfig {
    pub fn new(alpha: f64, expert: &PolicyStats) -> Result<Self> {
        let cfg = PenaltyConfig {
            alpha,
            expert_mean_return: expert.mean_return,
            expert_mean_length: expert.mean_length,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if !(self.expert_mean_return >= 0.0 && self.expert_mean_return.is_finite()) {
            return Err(Error::Config(format!(
                "expert mean return {} must be finite and >= 0",
                self.expert_mean_return
            )));
        }
        if !(self.expert_mean_length > 0.0 && self.expert_mean_length.is_finite()) {
            return Err(Error::Config(format!(
                "expert mean length {} must be finite and > 0",
                self.expert_mean_length
            )));
        }
        Ok(())
    }

    /// `α · Ḡ_e / T̄_e`.
    pub fn per_step_penalty(&self) -> f64 {
        self.alpha * self.expert_mean_return / self.expert_mean_length
    }

    pub fn penalize(&self, base_reward: f64, acted: CoordDecision) -> f64 {
        base_reward
            - match acted {
                CoordDecision::Expert => self.per_step_penalty(),
                CoordDecision::Novice => 0.0,
            }
    }
}

#[derive(Clone, Debug)]
pub struct CoordStepResult {
    /// Novice features for the next state.
    pub bundle: FeatureBundle,
    pub reward: f64,
    pub base_reward: f64,
    pub done: bool,
    pub acted: CoordDecision,
    pub env_action: Action,
}

/// Wraps a gridworld task with a novice and an expert. The feature bundle
/// handed out is always the novice's view of the current state.
pub struct CoordEnv<'a> {
    env: GridEnv,
    novice: Actor<'a>,
    expert: Actor<'a>,
    rng: Rng,
    bundle: Option<FeatureBundle>,
}

impl<'a> CoordEnv<'a> {
    /// `action_seed` drives both policies' action sampling.
    pub fn new(
        task: &TaskSpec,
        novice: Actor<'a>,
        expert: Actor<'a>,
        window_radius: usize,
        action_seed: u64,
    ) -> Result<Self> {
        let obs_dim = env::obs_dim(window_radius);
        for actor in [&novice, &expert] {
            if actor.params.input_dim() != obs_dim {
                return Err(Error::Dimension {
                    expected: obs_dim,
                    actual: actor.params.input_dim(),
                });
            }
        }
        Ok(CoordEnv {
            env: GridEnv::new(task, window_radius)?,
            novice,
            expert,
            rng: seed::rng(action_seed),
            bundle: None,
        })
    }

    pub fn reset(&mut self) -> Result<FeatureBundle> {
        let obs = self.env.reset();
        let bundle = self.novice_view(obs.into_vec())?;
        self.bundle = Some(bundle.clone());
        Ok(bundle)
    }

    pub fn step(&mut self, decision: CoordDecision, penalty: &PenaltyConfig) -> Result<CoordStepResult> {
        let current = self.bundle.as_ref().ok_or(Error::EpisodeDone)?;
        if self.env.is_done() {
            return Err(Error::EpisodeDone);
        }
        let action_index = match decision {
            CoordDecision::Novice => self.novice.act(&current.policy_output(), &mut self.rng),
            CoordDecision::Expert => {
                let out = self.expert.params.forward(&current.obs)?;
                self.expert.act(&out, &mut self.rng)
            }
        };
        let env_action = Action::from_index(action_index).ok_or(Error::Dimension {
            expected: env::ACTION_COUNT,
            actual: action_index,
        })?;
        let res = self.env.step(env_action)?;
        let bundle = self.novice_view(res.observation.into_vec())?;
        self.bundle = Some(bundle.clone());
        Ok(CoordStepResult {
            bundle,
            reward: penalty.penalize(res.reward, decision),
            base_reward: res.reward,
            done: res.done,
            acted: decision,
            env_action,
        })
    }

    fn novice_view(&self, obs: Vec<f64>) -> Result<FeatureBundle> {
        let out = self.novice.params.forward(&obs)?;
        Ok(FeatureBundle::new(obs, out))
    }
}

/// Return and length of one solo episode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeSummary {
    pub total_return: f64,
    pub length: usize,
}

/// Task seed for episode `index` of an evaluation stream.
pub fn episode_task(dist: &TaskDistribution, stream_seed: u64, index: u64) -> Result<TaskSpec> {
    sample_task(dist, seed::derive(stream_seed, "task", index))
}

/// Action-sampling seed for episode `index` of an evaluation stream.
pub fn episode_action_seed(stream_seed: u64, index: u64) -> u64 {
    seed::derive(stream_seed, "act", index)
}

/// Runs `actor` alone for episode `index` of the stream. Uses the same task
/// and action seeds as the coordination rollouts, so an always-novice
/// coordination episode replays this trajectory exactly.
pub fn solo_episode(
    actor: Actor<'_>,
    dist: &TaskDistribution,
    window_radius: usize,
    stream_seed: u64,
    index: u64,
) -> Result<EpisodeSummary> {
    let task = episode_task(dist, stream_seed, index)?;
    let mut grid = GridEnv::new(&task, window_radius)?;
    let mut rng = seed::rng(episode_action_seed(stream_seed, index));
    let mut obs = grid.reset();
    let mut total = 0.0;
    loop {
        let out = actor.params.forward(obs.as_slice())?;
        let a = actor.act(&out, &mut rng);
        let res = grid.step(Action::from_index(a).ok_or(Error::Dimension {
            expected: env::ACTION_COUNT,
            actual: a,
        })?)?;
        total += res.reward;
        if res.done {
            return Ok(EpisodeSummary {
                total_return: total,
                length: res.steps,
            });
        }
        obs = res.observation;
    }
}

/// Empirical `(Ḡ, T̄)` over `n_episodes` seeded solo rollouts.
pub fn estimate_policy_stats(
    actor: Actor<'_>,
    dist: &TaskDistribution,
    n_episodes: usize,
    window_radius: usize,
    seed: u64,
) -> Result<PolicyStats> {
    use rayon::prelude::*;
    if n_episodes == 0 {
        return Err(Error::Config("n_episodes must be >= 1".into()));
    }
    let episodes: Vec<EpisodeSummary> = (0..n_episodes as u64)
        .into_par_iter()
        .map(|j| solo_episode(actor, dist, window_radius, seed, j))
        .collect::<Result<_>>()?;
    Ok(stats_from_episodes(&episodes))
}

pub fn stats_from_episodes(episodes: &[EpisodeSummary]) -> PolicyStats {
    let n = episodes.len() as f64;
    PolicyStats {
        mean_return: episodes.iter().map(|e| e.total_return).sum::<f64>() / n,
        mean_length: episodes.iter().map(|e| e.length as f64).sum::<f64>() / n,
        episodes: episodes.len(),
    }
}
