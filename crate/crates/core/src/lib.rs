//! Yield-or-request-control (YRC) building blocks.
//!
//! A novice policy trained on one task distribution is deployed on a shifted
//! one, where it may hand control to an expert at a per-step cost. This crate
//! provides every piece needed to learn and evaluate *when* to hand over
//! control without ever touching the expert or the test distribution during
//! training:
//!
//! - [`env`]: a procedurally generated gridworld family with a configurable
//!   train/test shift.
//! - [`policy`]: a two-layer softmax policy, its policy-gradient trainer and
//!   the novice / weakened novice / expert recipes.
//! - [`coord`]: the coordination environment whose actions are
//!   `{novice, expert}` and whose reward is penalised per expert step.
//! - [`uncertainty`]: logit-based confidence measures and a shallow
//!   one-class hypersphere detector.
//! - [`proposer`]: candidate coordination policies (percentile thresholds,
//!   random, constant baselines).
//! - [`metric`]: per-penalty rollouts and the bootstrap area-under-curve.
//! - [`validator`]: simulated and oracle validators and candidate selection.
//! - [`oracle`]: RL-trained coordination policies used as a skyline and the
//!   proposer/validator swap diagnostic.

pub mod coord;
pub mod env;
pub mod error;
pub mod metric;
pub mod nn;
pub mod oracle;
pub mod policy;
pub mod proposer;
pub mod seed;
pub mod uncertainty;
pub mod validator;

#[cfg(test)]
pub(crate) mod testutil;

pub use coord::{CoordDecision, CoordEnv, CoordStepResult, PenaltyConfig, PolicyStats};
pub use env::{Action, GridEnv, Observation, StepResult, TaskDistribution, TaskSpec};
pub use error::{Error, Result};
pub use metric::{AucReport, EvalConfig, EvalCurve};
pub use oracle::{FeatureSelector, OraclePolicy};
pub use policy::{ActionMode, Actor, PolicyOutput, PolicyParams, TrainBudget};
pub use proposer::{CandidateSet, CoordinationPolicy};
pub use uncertainty::{FeatureBundle, MeasureKind, Scorer, SvddModel};
pub use validator::{RankingRow, ValidatorSpec};
