//! Experiment configuration: TOML schema, validation and derived settings.
//!
//! Every key is required except `expert.convergence`; unknown keys are
//! rejected. See `configs/default.toml` for the annotated default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use yrc_core::env::{DistName, TaskDistribution};
use yrc_core::metric::EvalConfig;
use yrc_core::oracle::OracleTrainConfig;
use yrc_core::policy::{ConvergenceRule, RecipeConfig, TrainBudget};
use yrc_core::proposer::SvddSettings;
use yrc_core::seed;
use yrc_core::uncertainty::{FeatureSelector, MeasureKind, SvddConfig};

use crate::error::CliError;

/// The default configuration, compiled in so `--config` is optional.
pub const DEFAULT_CONFIG: &str = include_str!("../configs/default.toml");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Location rather than content: left out of the serialized form and
    /// therefore out of the hash.
    #[serde(skip_serializing)]
    pub out_dir: PathBuf,
    pub env: EnvConfig,
    pub policy: PolicyConfig,
    pub novice: NoviceConfig,
    pub expert: ExpertConfig,
    pub stats: StatsConfig,
    pub proposer: ProposerConfig,
    pub evaluation: EvaluationConfig,
    pub oracle: OracleConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub window_radius: usize,
    pub train: DistConfig,
    pub test: DistConfig,
}

/// Inclusive ranges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistConfig {
    pub grid_size: [usize; 2],
    pub hazard_density: [f64; 2],
}

impl DistConfig {
    fn to_dist(&self, name: DistName) -> TaskDistribution {
        TaskDistribution {
            name,
            grid_size_range: (self.grid_size[0], self.grid_size[1]),
            hazard_density_range: (self.hazard_density[0], self.hazard_density[1]),
        }
    }
}

/// Shared by novice, weakened novice and expert.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub hidden_dim: usize,
    pub discount: f64,
    pub entropy_bonus: f64,
    pub batch_episodes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoviceConfig {
    pub episodes: usize,
    pub learning_rate: f64,
    pub weakened_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpertConfig {
    pub episodes: usize,
    pub learning_rate: f64,
    /// Start from the trained novice instead of a fresh initialisation.
    pub warm_start: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convergence: Option<ConvergenceRule>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsConfig {
    /// Rollouts behind every mean return / length estimate.
    pub episodes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposerConfig {
    pub measures: Vec<MeasureKind>,
    /// Weakened-novice episodes whose states form the score pool.
    pub rollout_episodes: usize,
    pub svdd: SvddSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvddSection {
    pub features: FeatureSelector,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Penalty levels; the grid is `i / k` for `i = 1..=k`.
    pub k: usize,
    /// Test episodes per penalty level.
    pub episodes: usize,
    /// Episodes per penalty level inside the simulated validator.
    pub validation_episodes: usize,
    /// Bootstrap subsample size.
    pub subsample: usize,
    pub n_bootstrap: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    pub episodes: usize,
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub discount: f64,
    pub entropy_bonus: f64,
    pub batch_episodes: usize,
    pub selectors: Vec<FeatureSelector>,
}

/// Seeds of every pipeline stage, all derived from the master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSeeds {
    pub master: u64,
    pub training: u64,
    pub stats: u64,
    pub proposer: u64,
    pub validation: u64,
    pub test: u64,
    pub oracle: u64,
}

impl StageSeeds {
    pub fn from_master(master: u64) -> Self {
        StageSeeds {
            master,
            training: seed::derive(master, "training", 0),
            stats: seed::derive(master, "stats", 0),
            proposer: seed::derive(master, "proposer", 0),
            validation: seed::derive(master, "validation", 0),
            test: seed::derive(master, "test", 0),
            oracle: seed::derive(master, "oracle", 0),
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML; errors name the offending key and line.
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let de = toml::Deserializer::parse(text).map_err(|e| toml_error(text, "", &e))?;
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            toml_error(text, &path, e.inner())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn default_config() -> Self {
        Self::from_toml(DEFAULT_CONFIG).expect("shipped default config is valid")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let invalid = |key: &str, message: String| CliError::Config {
            key: key.to_string(),
            message,
            line: None,
        };
        let f = self.novice.weakened_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(invalid("novice.weakened_fraction", format!("{f} is outside (0, 1)")));
        }
        let train = self.train_dist();
        let test = self.test_dist();
        train.validate().map_err(|e| invalid("env.train", e.to_string()))?;
        test.validate().map_err(|e| invalid("env.test", e.to_string()))?;
        if !train.is_disjoint_from(&test) {
            return Err(invalid(
                "env",
                "train and test ranges overlap in both grid size and hazard density".into(),
            ));
        }
        for (key, cfg) in [
            ("evaluation.episodes", self.test_eval()),
            ("evaluation.validation_episodes", self.validation_eval()),
        ] {
            cfg.validate().map_err(|e| invalid(key, e.to_string()))?;
        }
        self.recipe(0)
            .budget
            .validate()
            .map_err(|e| invalid("novice", e.to_string()))?;
        if self.expert.episodes == 0 || !(self.expert.learning_rate > 0.0) {
            return Err(invalid("expert", "episodes and learning_rate must be > 0".into()));
        }
        if self.stats.episodes == 0 {
            return Err(invalid("stats.episodes", "must be > 0".into()));
        }
        if self.proposer.measures.is_empty() {
            return Err(invalid("proposer.measures", "at least one measure is required".into()));
        }
        if self.proposer.rollout_episodes == 0 {
            return Err(invalid("proposer.rollout_episodes", "must be > 0".into()));
        }
        if self.oracle.selectors.is_empty() {
            return Err(invalid("oracle.selectors", "at least one selector is required".into()));
        }
        if self.env.window_radius == 0 || self.policy.hidden_dim == 0 || self.oracle.hidden_dim == 0 {
            return Err(invalid(
                "policy.hidden_dim",
                "window radius and hidden sizes must be > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn seeds(&self) -> StageSeeds {
        StageSeeds::from_master(self.seed)
    }

    pub fn train_dist(&self) -> TaskDistribution {
        self.env.train.to_dist(DistName::Train)
    }

    pub fn test_dist(&self) -> TaskDistribution {
        self.env.test.to_dist(DistName::Test)
    }

    pub fn recipe(&self, training_seed: u64) -> RecipeConfig {
        RecipeConfig {
            train_dist: self.train_dist(),
            test_dist: self.test_dist(),
            window_radius: self.env.window_radius,
            hidden_dim: self.policy.hidden_dim,
            budget: TrainBudget {
                episodes: self.novice.episodes,
                learning_rate: self.novice.learning_rate,
                discount: self.policy.discount,
                entropy_bonus: self.policy.entropy_bonus,
                seed: training_seed,
                batch_episodes: self.policy.batch_episodes,
            },
            weakened_fraction: self.novice.weakened_fraction,
            expert_episodes: self.expert.episodes,
            expert_learning_rate: self.expert.learning_rate,
            expert_convergence: self.expert.convergence,
        }
    }

    pub fn test_eval(&self) -> EvalConfig {
        EvalConfig {
            k: self.evaluation.k,
            episodes: self.evaluation.episodes,
            subsample: self.evaluation.subsample,
            n_bootstrap: self.evaluation.n_bootstrap,
        }
    }

    pub fn validation_eval(&self) -> EvalConfig {
        EvalConfig {
            episodes: self.evaluation.validation_episodes,
            ..self.test_eval()
        }
    }

    pub fn svdd(&self) -> SvddSettings {
        let s = &self.proposer.svdd;
        SvddSettings {
            selector: s.features,
            config: SvddConfig {
                hidden_dim: s.hidden_dim,
                embed_dim: s.embed_dim,
                epochs: s.epochs,
                batch_size: s.batch_size,
                learning_rate: s.learning_rate,
            },
        }
    }

    pub fn oracle_train(&self) -> OracleTrainConfig {
        let o = &self.oracle;
        OracleTrainConfig {
            episodes: o.episodes,
            hidden_dim: o.hidden_dim,
            learning_rate: o.learning_rate,
            discount: o.discount,
            entropy_bonus: o.entropy_bonus,
            batch_episodes: o.batch_episodes,
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

fn toml_error(text: &str, path: &str, e: &toml::de::Error) -> CliError {
    let message = e.message().trim().to_string();
    let mut key = if path == "." { String::new() } else { path.to_string() };
    if let Some(field) = backticked_after(&message, "missing field") {
        if !key.is_empty() {
            key.push('.');
        }
        key.push_str(field);
    } else if let Some(field) = backticked_after(&message, "unknown field") {
        if !key.is_empty() && !key.ends_with(field) {
            key.push('.');
            key.push_str(field);
        } else if key.is_empty() {
            key.push_str(field);
        }
    }
    let line = e
        .span()
        .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
    CliError::Config { key, message, line }
}

fn backticked_after<'a>(message: &'a str, prefix: &str) -> Option<&'a str> {
    let rest = message.strip_prefix(prefix)?.trim_start();
    let rest = rest.strip_prefix('`')?;
    rest.split('`').next()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_parses_and_validates() {
        let cfg = ExperimentConfig::default_config();
        assert_eq!(cfg.novice.weakened_fraction, 0.5);
        assert_eq!(cfg.proposer.measures.len(), 6);
        assert_eq!(cfg.oracle.selectors.len(), 7);
        assert!(cfg.train_dist().is_disjoint_from(&cfg.test_dist()));
        assert_eq!(cfg.recipe(1).weakened_episodes() * 2, cfg.novice.episodes);
    }

    #[test]
    fn missing_key_is_named() {
        let text = DEFAULT_CONFIG.replacen("learning_rate = 0.003\n", "", 1);
        match ExperimentConfig::from_toml(&text) {
            Err(CliError::Config { key, .. }) => assert_eq!(key, "novice.learning_rate"),
            other => panic!("unexpected {other:?}"),
        }
        let text = DEFAULT_CONFIG.replace("seed = 0\n", "");
        match ExperimentConfig::from_toml(&text) {
            Err(CliError::Config { key, .. }) => assert_eq!(key, "seed"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_key_is_rejected() {
        let text = DEFAULT_CONFIG.replace("[novice]\n", "[novice]\nepisodez = 3\n");
        match ExperimentConfig::from_toml(&text) {
            Err(CliError::Config { key, line, .. }) => {
                assert_eq!(key, "novice.episodez");
                assert!(line.is_some());
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invariants_are_checked() {
        let text = DEFAULT_CONFIG.replace("weakened_fraction = 0.5", "weakened_fraction = 1.0");
        assert!(matches!(
            ExperimentConfig::from_toml(&text),
            Err(CliError::Config { key, .. }) if key == "novice.weakened_fraction"
        ));
        let mut cfg = ExperimentConfig::default_config();
        cfg.env.test = cfg.env.train.clone();
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default_config();
        cfg.evaluation.subsample = cfg.evaluation.validation_episodes + 1;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default_config();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.out_dir = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.seed += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn stage_seeds_differ() {
        let s = StageSeeds::from_master(0);
        let all = [s.training, s.stats, s.proposer, s.validation, s.test, s.oracle];
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                assert_ne!(all[i], all[j]);
            }
        }
    }
}
