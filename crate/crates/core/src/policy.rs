//! Two-layer softmax policies and their policy-gradient trainer.

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::env::{self, sample_task, GridEnv, TaskDistribution, ACTION_COUNT};
use crate::error::{Error, Result};
use crate::nn::{self, Adam, Matrix};
use crate::seed::{self, Rng};

pub const DEFAULT_HIDDEN_DIM: usize = 64;
pub const FORMAT_VERSION: u32 = 1;

/// `hidden = relu(W1·x + b1)`, `logits = W2·hidden + b2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    #[serde(rename = "W1")]
    pub w1: Matrix,
    pub b1: Vec<f64>,
    #[serde(rename = "W2")]
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyOutput {
    pub logits: Vec<f64>,
    pub dist: Vec<f64>,
    pub hidden: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize, output_dim: usize) -> Self {
        PolicyParams {
            w1: Matrix::zeros(hidden_dim, input_dim),
            b1: vec![0.0; hidden_dim],
            w2: Matrix::zeros(output_dim, hidden_dim),
            b2: vec![0.0; output_dim],
        }
    }

    /// Glorot-uniform first layer; output layer scaled down so the initial
    /// policy is close to uniform.
    pub fn init(input_dim: usize, hidden_dim: usize, output_dim: usize, seed: u64) -> Self {
        let mut rng = seed::derived_rng(seed, "init", 0);
        let a1 = (6.0 / (input_dim + hidden_dim) as f64).sqrt();
        let a2 = 0.1 * (6.0 / (hidden_dim + output_dim) as f64).sqrt();
        let w1 = Matrix::from_fn(hidden_dim, input_dim, |_, _| rng.random_range(-a1..a1));
        let w2 = Matrix::from_fn(output_dim, hidden_dim, |_, _| rng.random_range(-a2..a2));
        PolicyParams {
            w1,
            b1: vec![0.0; hidden_dim],
            w2,
            b2: vec![0.0; output_dim],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.rows()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn tensors(&self) -> [&[f64]; 4] {
        [self.w1.as_slice(), &self.b1, self.w2.as_slice(), &self.b2]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w1.as_mut_slice(),
            &mut self.b1,
            self.w2.as_mut_slice(),
            &mut self.b2,
        ]
    }

    pub fn shapes(&self) -> [usize; 4] {
        self.tensors().map(<[f64]>::len)
    }

    pub fn forward(&self, input: &[f64]) -> Result<PolicyOutput> {
        if input.len() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                actual: input.len(),
            });
        }
        let hidden = self.hidden(input);
        let logits = self.output_layer(&hidden);
        let dist = nn::softmax(&logits);
        Ok(PolicyOutput { logits, dist, hidden })
    }

    /// Rectified first layer. Observations are sparse binary windows, so
    /// zero inputs are skipped.
    pub(crate) fn hidden(&self, input: &[f64]) -> Vec<f64> {
        let active: Vec<usize> = (0..input.len()).filter(|&j| input[j] != 0.0).collect();
        (0..self.hidden_dim())
            .map(|i| {
                let row = self.w1.row(i);
                let pre = self.b1[i] + active.iter().map(|&j| row[j] * input[j]).sum::<f64>();
                pre.max(0.0)
            })
            .collect()
    }

    pub(crate) fn output_layer(&self, hidden: &[f64]) -> Vec<f64> {
        (0..self.output_dim())
            .map(|k| {
                let row = self.w2.row(k);
                self.b2[k] + row.iter().zip(hidden).map(|(w, h)| w * h).sum::<f64>()
            })
            .collect()
    }

    /// Accumulates into `grads` the gradient of a scalar whose derivative
    /// with respect to the logits is `dlogits`.
    pub(crate) fn backward(&self, input: &[f64], hidden: &[f64], dlogits: &[f64], grads: &mut PolicyParams) {
        let mut dhidden = vec![0.0; self.hidden_dim()];
        for (k, &dz) in dlogits.iter().enumerate() {
            if dz == 0.0 {
                continue;
            }
            grads.b2[k] += dz;
            let grow = grads.w2.row_mut(k);
            let wrow = self.w2.row(k);
            for i in 0..hidden.len() {
                grow[i] += dz * hidden[i];
                dhidden[i] += dz * wrow[i];
            }
        }
        let active: Vec<usize> = (0..input.len()).filter(|&j| input[j] != 0.0).collect();
        for i in 0..hidden.len() {
            if hidden[i] <= 0.0 {
                continue;
            }
            let dh = dhidden[i];
            grads.b1[i] += dh;
            let grow = grads.w1.row_mut(i);
            for &j in &active {
                grow[j] += dh * input[j];
            }
        }
    }

    pub fn to_json(&self, meta: Option<&TrainingMeta>) -> Result<String> {
        let doc = PolicyDocument {
            version: FORMAT_VERSION,
            obs_dim: self.input_dim(),
            hidden_dim: self.hidden_dim(),
            action_count: self.output_dim(),
            weights: self.clone(),
            training_meta: meta.cloned(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<(PolicyParams, Option<TrainingMeta>)> {
        let doc: PolicyDocument = serde_json::from_str(text)?;
        doc.check()?;
        Ok((doc.weights, doc.training_meta))
    }

    pub fn save(&self, path: &Path, meta: Option<&TrainingMeta>) -> Result<()> {
        std::fs::write(path, self.to_json(meta)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(PolicyParams, Option<TrainingMeta>)> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// On-disk policy format.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PolicyDocument {
    pub version: u32,
    pub obs_dim: usize,
    pub hidden_dim: usize,
    pub action_count: usize,
    #[serde(flatten)]
    pub weights: PolicyParams,
    pub training_meta: Option<TrainingMeta>,
}

impl PolicyDocument {
    fn check(&self) -> Result<()> {
        if self.version != FORMAT_VERSION {
            return Err(Error::Version(self.version));
        }
        let w = &self.weights;
        let dims = [
            (self.obs_dim, w.input_dim()),
            (self.hidden_dim, w.hidden_dim()),
            (self.hidden_dim, w.b1.len()),
            (self.hidden_dim, w.w2.cols()),
            (self.action_count, w.output_dim()),
            (self.action_count, w.b2.len()),
        ];
        for (expected, actual) in dims {
            if expected != actual {
                return Err(Error::Dimension { expected, actual });
            }
        }
        if !w.is_finite() {
            return Err(Error::Config("non-finite weights".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionMode {
    #[default]
    Sample,
    Greedy,
}

/// A policy together with how it turns distributions into actions.
#[derive(Clone, Copy, Debug)]
pub struct Actor<'a> {
    pub params: &'a PolicyParams,
    pub mode: ActionMode,
}

impl<'a> Actor<'a> {
    pub fn greedy(params: &'a PolicyParams) -> Self {
        Actor {
            params,
            mode: ActionMode::Greedy,
        }
    }

    pub fn act(&self, output: &PolicyOutput, rng: &mut Rng) -> usize {
        match self.mode {
            ActionMode::Sample => sample_action(output, rng),
            ActionMode::Greedy => argmax(&output.dist),
        }
    }
}

impl<'a> From<&'a PolicyParams> for Actor<'a> {
    fn from(params: &'a PolicyParams) -> Self {
        Actor {
            params,
            mode: ActionMode::Sample,
        }
    }
}

/// First index of the maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw from `output.dist`; consumes exactly one uniform.
pub fn sample_action(output: &PolicyOutput, rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in output.dist.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left `acc` just under 1: take the last action with mass.
    output.dist.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainBudget {
    pub episodes: usize,
    pub learning_rate: f64,
    pub discount: f64,
    pub entropy_bonus: f64,
    pub seed: u64,
    /// Episodes per gradient update.
    #[serde(default = "default_batch_episodes")]
    pub batch_episodes: usize,
}

fn default_batch_episodes() -> usize {
    16
}

impl TrainBudget {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::Config("budget.episodes must be > 0".into()));
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(Error::Config(format!("discount {} outside (0, 1]", self.discount)));
        }
        if !(self.entropy_bonus >= 0.0) || !(self.learning_rate > 0.0) || self.batch_episodes == 0 {
            return Err(Error::Config(
                "entropy_bonus must be >= 0, learning_rate > 0, batch_episodes > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Early-stopping rule: stop once the mean return over each block of
/// `window` episodes has improved by less than `min_relative_gain` for
/// `patience` consecutive blocks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRule {
    pub window: usize,
    pub min_relative_gain: f64,
    pub patience: usize,
}

impl Default for ConvergenceRule {
    fn default() -> Self {
        ConvergenceRule {
            window: 1000,
            min_relative_gain: 0.01,
            patience: 2,
        }
    }
}

/// Environment interface consumed by the trainer: real-valued features in,
/// discrete action index out.
pub trait EpisodeEnv {
    fn input_dim(&self) -> usize;
    fn reset(&mut self, episode: usize) -> Result<Vec<f64>>;
    fn step(&mut self, action: usize) -> Result<Transition>;
}

#[derive(Clone, Debug)]
pub struct Transition {
    pub features: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// Gridworld episodes on freshly sampled tasks.
pub struct TaskEnv {
    dist: TaskDistribution,
    seed: u64,
    radius: usize,
    env: Option<GridEnv>,
}

impl TaskEnv {
    pub fn new(dist: TaskDistribution, seed: u64, window_radius: usize) -> Self {
        TaskEnv {
            dist,
            seed,
            radius: window_radius,
            env: None,
        }
    }
}

impl EpisodeEnv for TaskEnv {
    fn input_dim(&self) -> usize {
        env::obs_dim(self.radius)
    }

    fn reset(&mut self, episode: usize) -> Result<Vec<f64>> {
        let task = sample_task(&self.dist, seed::derive(self.seed, "task", episode as u64))?;
        let mut grid = GridEnv::new(&task, self.radius)?;
        let obs = grid.reset();
        self.env = Some(grid);
        Ok(obs.into_vec())
    }

    fn step(&mut self, action: usize) -> Result<Transition> {
        let grid = self.env.as_mut().ok_or(Error::EpisodeDone)?;
        let action = env::Action::from_index(action).ok_or(Error::Dimension {
            expected: ACTION_COUNT,
            actual: action,
        })?;
        let res = grid.step(action)?;
        Ok(Transition {
            features: res.observation.into_vec(),
            reward: res.reward,
            done: res.done,
        })
    }
}

/// One `(input, action, advantage)` term of the surrogate objective.
#[derive(Clone, Debug)]
pub struct PgSample {
    pub input: Vec<f64>,
    pub action: usize,
    pub advantage: f64,
}

fn entropy(dist: &[f64]) -> f64 {
    -dist.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

/// `J(θ) = mean_i [A_i · ln π(a_i | x_i) + β · H(π(· | x_i))]`.
pub fn surrogate_objective(params: &PolicyParams, batch: &[PgSample], entropy_bonus: f64) -> f64 {
    let total: f64 = batch
        .iter()
        .map(|s| {
            let hidden = params.hidden(&s.input);
            let logits = params.output_layer(&hidden);
            let log_p = logits[s.action] - nn::log_sum_exp(&logits);
            s.advantage * log_p + entropy_bonus * entropy(&nn::softmax(&logits))
        })
        .sum();
    total / batch.len() as f64
}

/// Analytic gradient of [`surrogate_objective`].
pub fn surrogate_gradient(params: &PolicyParams, batch: &[PgSample], entropy_bonus: f64) -> PolicyParams {
    let mut grads = PolicyParams::zeros(params.input_dim(), params.hidden_dim(), params.output_dim());
    let scale = 1.0 / batch.len() as f64;
    for s in batch {
        let hidden = params.hidden(&s.input);
        let logits = params.output_layer(&hidden);
        let p = nn::softmax(&logits);
        let h = entropy(&p);
        let dlogits: Vec<f64> = p
            .iter()
            .enumerate()
            .map(|(j, &pj)| {
                let onehot = if j == s.action { 1.0 } else { 0.0 };
                let d_logp = onehot - pj;
                // dH/dz_j = -p_j (ln p_j + H)
                let d_ent = if pj > 0.0 { -pj * (pj.ln() + h) } else { 0.0 };
                scale * (s.advantage * d_logp + entropy_bonus * d_ent)
            })
            .collect();
        params.backward(&s.input, &hidden, &dlogits, &mut grads);
    }
    grads
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    /// Mean return per block of 100 episodes.
    pub curve: Vec<f64>,
    pub episodes_run: usize,
    pub converged: bool,
}

const CURVE_BLOCK: usize = 100;
const MAX_GRAD_NORM: f64 = 5.0;
const BASELINE_RATE: f64 = 0.05;

/// Episodic REINFORCE with discounted return-to-go, a running mean-return
/// baseline and an entropy bonus, optimised with Adam.
pub fn train_reinforce<E: EpisodeEnv>(
    env: &mut E,
    init: PolicyParams,
    budget: &TrainBudget,
    convergence: Option<ConvergenceRule>,
) -> Result<TrainOutcome> {
    budget.validate()?;
    if init.input_dim() != env.input_dim() {
        return Err(Error::Dimension {
            expected: init.input_dim(),
            actual: env.input_dim(),
        });
    }
    let mut params = init;
    let mut opt = Adam::new(budget.learning_rate, &params.shapes());
    let mut rng = seed::derived_rng(budget.seed, "actions", 0);
    let mut baseline: Option<f64> = None;

    let mut returns = Vec::with_capacity(budget.episodes);
    let mut batch: Vec<(Vec<f64>, usize, f64)> = Vec::new();
    let mut batch_episodes = 0;
    let mut block_means: Vec<f64> = Vec::new();
    let mut stalled = 0;
    let mut converged = false;

    for episode in 0..budget.episodes {
        let mut input = env.reset(episode)?;
        let mut steps = Vec::new();
        let mut rewards = Vec::new();
        loop {
            let out = params.forward(&input)?;
            let action = sample_action(&out, &mut rng);
            let tr = env.step(action)?;
            steps.push((std::mem::replace(&mut input, tr.features), action));
            rewards.push(tr.reward);
            if tr.done {
                break;
            }
        }
        returns.push(rewards.iter().sum::<f64>());

        let mut to_go = 0.0;
        let mut tail = vec![0.0; rewards.len()];
        for t in (0..rewards.len()).rev() {
            to_go = rewards[t] + budget.discount * to_go;
            tail[t] = to_go;
        }
        batch.extend(steps.into_iter().zip(tail).map(|((x, a), g)| (x, a, g)));
        batch_episodes += 1;

        if batch_episodes == budget.batch_episodes || episode + 1 == budget.episodes {
            let batch_mean = batch.iter().map(|s| s.2).sum::<f64>() / batch.len() as f64;
            let b = *baseline.get_or_insert(batch_mean);
            let samples: Vec<PgSample> = batch
                .drain(..)
                .map(|(input, action, g)| PgSample {
                    input,
                    action,
                    advantage: g - b,
                })
                .collect();
            let mut grads = surrogate_gradient(&params, &samples, budget.entropy_bonus);
            let mut gslices = grads.tensors_mut();
            nn::clip_global_norm(&mut gslices, MAX_GRAD_NORM);
            // Adam descends; the surrogate is maximised.
            for g in gslices.iter_mut() {
                for v in g.iter_mut() {
                    *v = -*v;
                }
            }
            let gview = grads.tensors();
            opt.step(&mut params.tensors_mut(), &gview);
            if !params.is_finite() {
                return Err(Error::Divergence { episodes: episode + 1 });
            }
            baseline = Some(b + BASELINE_RATE * (batch_mean - b));
            batch_episodes = 0;
        }

        if let Some(rule) = convergence {
            if (episode + 1) % rule.window == 0 {
                let block = &returns[episode + 1 - rule.window..];
                let mean = block.iter().sum::<f64>() / block.len() as f64;
                if let Some(&prev) = block_means.last() {
                    // Relative gain is undefined from a non-positive level.
                    if prev > 0.0 && (mean - prev) / prev < rule.min_relative_gain {
                        stalled += 1;
                    } else {
                        stalled = 0;
                    }
                }
                block_means.push(mean);
                if stalled >= rule.patience {
                    converged = true;
                    break;
                }
            }
        }
    }

    let curve = returns
        .chunks(CURVE_BLOCK)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect();
    Ok(TrainOutcome {
        params,
        curve,
        episodes_run: returns.len(),
        converged,
    })
}

/// Trains a fresh gridworld policy on `dist`.
pub fn train_policy_gradient(
    dist: &TaskDistribution,
    budget: &TrainBudget,
    hidden_dim: usize,
    window_radius: usize,
    convergence: Option<ConvergenceRule>,
) -> Result<TrainOutcome> {
    let mut task_env = TaskEnv::new(dist.clone(), budget.seed, window_radius);
    let init = PolicyParams::init(task_env.input_dim(), hidden_dim, ACTION_COUNT, budget.seed);
    train_reinforce(&mut task_env, init, budget, convergence)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyRole {
    Novice,
    WeakenedNovice,
    Expert,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub role: PolicyRole,
    pub distribution: TaskDistribution,
    pub budget: TrainBudget,
    pub episodes_run: usize,
    pub converged: bool,
    pub curve: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainedPolicy {
    pub params: PolicyParams,
    pub meta: TrainingMeta,
}

/// Settings shared by the three training recipes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecipeConfig {
    pub train_dist: TaskDistribution,
    pub test_dist: TaskDistribution,
    pub window_radius: usize,
    pub hidden_dim: usize,
    /// Novice budget; the expert reuses it with its own episode count.
    pub budget: TrainBudget,
    pub weakened_fraction: f64,
    pub expert_episodes: usize,
    pub expert_learning_rate: f64,
    pub expert_convergence: Option<ConvergenceRule>,
}

impl RecipeConfig {
    pub fn weakened_episodes(&self) -> usize {
        ((self.budget.episodes as f64 * self.weakened_fraction).round() as usize).max(1)
    }

    fn run(
        &self,
        role: PolicyRole,
        dist: &TaskDistribution,
        budget: TrainBudget,
        convergence: Option<ConvergenceRule>,
        init: Option<&PolicyParams>,
    ) -> Result<TrainedPolicy> {
        let mut task_env = TaskEnv::new(dist.clone(), budget.seed, self.window_radius);
        let init = match init {
            Some(p) => p.clone(),
            None => PolicyParams::init(task_env.input_dim(), self.hidden_dim, ACTION_COUNT, budget.seed),
        };
        let out = train_reinforce(&mut task_env, init, &budget, convergence)?;
        Ok(TrainedPolicy {
            params: out.params,
            meta: TrainingMeta {
                role,
                distribution: dist.clone(),
                budget,
                episodes_run: out.episodes_run,
                converged: out.converged,
                curve: out.curve,
            },
        })
    }
}

pub fn make_novice(cfg: &RecipeConfig) -> Result<TrainedPolicy> {
    cfg.run(PolicyRole::Novice, &cfg.train_dist, cfg.budget.clone(), None, None)
}

/// Same algorithm, seed and distribution as the novice; only the episode
/// count is reduced.
pub fn make_weakened_novice(cfg: &RecipeConfig) -> Result<TrainedPolicy> {
    let budget = TrainBudget {
        episodes: cfg.weakened_episodes(),
        ..cfg.budget.clone()
    };
    cfg.run(PolicyRole::WeakenedNovice, &cfg.train_dist, budget, None, None)
}

/// Trains on the test distribution, optionally starting from `warm_start`
/// (typically the novice) instead of a fresh initialisation. Sparse goal
/// reward on large hazardous grids gives a cold start almost no signal.
pub fn make_expert(cfg: &RecipeConfig, warm_start: Option<&PolicyParams>) -> Result<TrainedPolicy> {
    let budget = TrainBudget {
        episodes: cfg.expert_episodes,
        learning_rate: cfg.expert_learning_rate,
        seed: seed::derive(cfg.budget.seed, "expert", 0),
        ..cfg.budget.clone()
    };
    cfg.run(
        PolicyRole::Expert,
        &cfg.test_dist,
        budget,
        cfg.expert_convergence,
        warm_start,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil;
    use proptest::prelude::*;

    #[test]
    fn zero_params_give_uniform_dist() {
        let p = PolicyParams::zeros(147, 64, 4);
        let out = p.forward(&vec![1.0; 147]).unwrap();
        for &q in &out.dist {
            assert_eq!(q, 0.25);
        }
    }

    #[test]
    fn forward_rejects_wrong_length() {
        let p = PolicyParams::zeros(10, 4, 4);
        assert!(matches!(
            p.forward(&[0.0; 9]),
            Err(Error::Dimension {
                expected: 10,
                actual: 9
            })
        ));
    }

    #[test]
    fn forward_matches_dense_reference() {
        let p = PolicyParams::init(6, 5, 4, 3);
        let x = [0.0, 1.0, 0.5, 0.0, -2.0, 1.0];
        let out = p.forward(&x).unwrap();
        for i in 0..5 {
            let pre: f64 = p.b1[i] + (0..6).map(|j| p.w1.get(i, j) * x[j]).sum::<f64>();
            assert!((out.hidden[i] - pre.max(0.0)).abs() < 1e-12);
        }
        assert_eq!(out.dist, nn::softmax(&out.logits));
    }

    #[test]
    fn one_hot_dist_always_samples_its_action() {
        let out = PolicyOutput {
            logits: vec![0.0; 4],
            dist: vec![1.0, 0.0, 0.0, 0.0],
            hidden: vec![],
        };
        let mut rng = seed::rng(1);
        assert!((0..1000).all(|_| sample_action(&out, &mut rng) == 0));
    }

    #[test]
    fn uniform_sampling_frequencies() {
        let out = PolicyOutput {
            logits: vec![0.0; 4],
            dist: vec![0.25; 4],
            hidden: vec![],
        };
        let mut rng = seed::rng(11);
        let mut counts = [0usize; 4];
        let n = 100_000;
        for _ in 0..n {
            counts[sample_action(&out, &mut rng)] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 0.25).abs() < 0.01);
        }
        let replay = |s| {
            let mut r = seed::rng(s);
            (0..50).map(|_| sample_action(&out, &mut r)).collect::<Vec<_>>()
        };
        assert_eq!(replay(5), replay(5));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (params, batch) = testutil::frozen_pg_batch();
        let beta = 0.01;
        let analytic = surrogate_gradient(&params, &batch, beta);
        let numeric = testutil::finite_difference_gradient(&params, |p| surrogate_objective(p, &batch, beta));
        let rel = testutil::relative_error(&analytic, &numeric);
        assert!(rel <= 1e-4, "relative error {rel}");
    }

    #[test]
    fn single_episode_budget_applies_one_update() {
        let dist = testutil::train_dist();
        let budget = TrainBudget {
            episodes: 1,
            learning_rate: 0.01,
            discount: 0.99,
            entropy_bonus: 0.01,
            seed: 4,
            batch_episodes: 16,
        };
        let out = train_policy_gradient(&dist, &budget, 16, 3, None).unwrap();
        let init = PolicyParams::init(147, 16, 4, 4);
        assert_eq!(out.episodes_run, 1);
        assert_ne!(out.params, init);
        // Adam's first step moves every coordinate by at most lr.
        for (a, b) in out.params.tensors().iter().zip(init.tensors()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() <= 0.01 + 1e-12);
            }
        }
    }

    #[test]
    fn training_is_seed_deterministic() {
        let dist = testutil::train_dist();
        let budget = TrainBudget {
            episodes: 64,
            learning_rate: 0.003,
            discount: 0.99,
            entropy_bonus: 0.01,
            seed: 9,
            batch_episodes: 8,
        };
        let a = train_policy_gradient(&dist, &budget, 16, 3, None).unwrap();
        let b = train_policy_gradient(&dist, &budget, 16, 3, None).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.curve, b.curve);
    }

    #[test]
    fn zero_episode_budget_is_rejected() {
        let budget = TrainBudget {
            episodes: 0,
            learning_rate: 0.01,
            discount: 0.99,
            entropy_bonus: 0.0,
            seed: 0,
            batch_episodes: 1,
        };
        assert!(budget.validate().is_err());
    }

    #[test]
    fn json_roundtrip_is_bit_exact() {
        let p = PolicyParams::init(147, 8, 4, 21);
        let text = p.to_json(None).unwrap();
        let (back, meta) = PolicyParams::from_json(&text).unwrap();
        assert!(meta.is_none());
        for (a, b) in p.tensors().iter().zip(back.tensors()) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        assert_eq!(text, back.to_json(None).unwrap());
    }

    #[test]
    fn json_rejects_mismatched_header() {
        let p = PolicyParams::zeros(3, 2, 4);
        let text = p.to_json(None).unwrap().replace("\"obs_dim\": 3", "\"obs_dim\": 4");
        assert!(PolicyParams::from_json(&text).is_err());
    }

    proptest! {
        #[test]
        fn softmax_shift_invariance(z in proptest::collection::vec(-20.0f64..20.0, 4), c in -50.0f64..50.0) {
            let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
            let (p, q) = (nn::softmax(&z), nn::softmax(&shifted));
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }

        #[test]
        fn forward_is_normalised(seed in any::<u64>(), bits in proptest::collection::vec(any::<bool>(), 12)) {
            let params = PolicyParams::init(12, 6, 4, seed);
            let x: Vec<f64> = bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
            let a = params.forward(&x).unwrap();
            let b = params.forward(&x).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert!((a.dist.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            prop_assert!(a.dist.iter().all(|&p| p >= 0.0));
        }
    }
}
