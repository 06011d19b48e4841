//! The batch commands. Each reads its inputs from the run directory, writes
//! its artifacts there and finishes with a manifest.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use yrc_core::coord::{estimate_policy_stats, PolicyStats};
use yrc_core::metric::AucReport;
use yrc_core::oracle::{diagnose_components, train_and_rank_oracles, Diagnosis, OracleResult};
use yrc_core::policy::{make_expert, make_novice, make_weakened_novice, PolicyParams, TrainedPolicy};
use yrc_core::proposer::{
    gen_random_candidates, gen_threshold_candidates, make_baseline, BaselineKind, CandidateSet, CoordinationPolicy,
    SourceRole,
};
use yrc_core::uncertainty::{MeasureKind, Scorer};
use yrc_core::validator::{
    ratio_from_means, select_best, validate, write_ranking_csv, Faithfulness, RankingRow, ValidatorKind, ValidatorSpec,
};

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::manifest::{read_json, write_bytes, write_json, Clock, RunLayout, RunManifest};

pub const NOVICE: &str = "novice";
pub const WEAKENED: &str = "weakened_novice";
pub const EXPERT: &str = "expert";

/// A coordination method as named on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Threshold(MeasureKind),
    Random,
    Baseline(BaselineKind),
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Threshold(m) => m.name(),
            Method::Random => "random",
            Method::Baseline(BaselineKind::AlwaysNovice) => "always_novice",
            Method::Baseline(BaselineKind::AlwaysExpert) => "always_expert",
            Method::Baseline(BaselineKind::AlwaysRandomHalf) => "always_random_half",
        }
    }

    /// Methods that propose candidates and go through validation.
    pub fn is_validated(self) -> bool {
        !matches!(self, Method::Baseline(_))
    }

    /// Threshold methods from the config, then random, then the fixed
    /// baselines.
    pub fn all(cfg: &ExperimentConfig) -> Vec<Method> {
        cfg.proposer
            .measures
            .iter()
            .map(|&m| Method::Threshold(m))
            .chain([
                Method::Random,
                Method::Baseline(BaselineKind::AlwaysNovice),
                Method::Baseline(BaselineKind::AlwaysExpert),
            ])
            .collect()
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        let norm = s.to_ascii_lowercase().replace(['-', '_'], "");
        let fixed = [
            Method::Random,
            Method::Baseline(BaselineKind::AlwaysNovice),
            Method::Baseline(BaselineKind::AlwaysExpert),
            Method::Baseline(BaselineKind::AlwaysRandomHalf),
        ];
        if let Some(m) = fixed.into_iter().find(|m| m.name().replace('_', "") == norm) {
            return Ok(m);
        }
        MeasureKind::from_str(s)
            .map(Method::Threshold)
            .map_err(|_| CliError::UnknownMethod(s.to_string()))
    }
}

// ---------------------------------------------------------------- train

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsDoc {
    /// Penalty basis under true test conditions.
    pub expert_test: PolicyStats,
    /// Penalty basis inside the simulated validator, where the novice plays
    /// the expert.
    pub novice_train: PolicyStats,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub policy: String,
    pub train_return: f64,
    pub train_length: f64,
    pub test_return: f64,
    pub test_length: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub episodes_per_estimate: usize,
    pub novice_episodes: usize,
    pub weakened_episodes: usize,
    pub expert_episodes_run: usize,
    pub expert_converged: bool,
    pub generalization: Vec<GapRow>,
    pub faithfulness: Faithfulness,
}

impl TrainSummary {
    pub fn row(&self, policy: &str) -> Option<&GapRow> {
        self.generalization.iter().find(|r| r.policy == policy)
    }
}

impl fmt::Display for TrainSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<16} {:>12} {:>12} {:>12} {:>12}",
            "policy", "train_return", "test_return", "train_len", "test_len"
        )?;
        for r in &self.generalization {
            writeln!(
                f,
                "{:<16} {:>12.4} {:>12.4} {:>12.2} {:>12.2}",
                r.policy, r.train_return, r.test_return, r.train_length, r.test_length
            )?;
        }
        write!(
            f,
            "faithfulness {:.4} (weakened on train {:.4} / novice on test {:.4}){}",
            self.faithfulness.ratio,
            self.faithfulness.simulated_expert_return,
            self.faithfulness.novice_test_return,
            if self.faithfulness.flagged { " FLAGGED" } else { "" }
        )
    }
}

fn write_training_curve(path: &Path, trained: &TrainedPolicy) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Core(e.into());
    w.write_record(["block", "episodes", "mean_return"]).map_err(io)?;
    for (i, m) in trained.meta.curve.iter().enumerate() {
        let end = ((i + 1) * 100).min(trained.meta.episodes_run);
        w.write_record([i.to_string(), end.to_string(), m.to_string()])
            .map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::io(path, e.into_error()))?;
    write_bytes(path, &bytes)
}

fn save_policy(path: &Path, trained: &TrainedPolicy) -> Result<(), CliError> {
    let mut text = trained.params.to_json(Some(&trained.meta))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

fn load_policy(layout: &RunLayout, role: &str) -> Result<PolicyParams, CliError> {
    let path = layout.require(layout.policy(role), "train")?;
    Ok(PolicyParams::load(&path)?.0)
}

fn write_config(layout: &RunLayout, cfg: &ExperimentConfig) -> Result<(), CliError> {
    write_json(&layout.config(), cfg)
}

/// Trains the novice, the weakened novice and the expert, then measures
/// every policy on both distributions.
pub fn cmd_train(cfg: &ExperimentConfig, clock: Clock) -> Result<TrainSummary, CliError> {
    let started = clock.now();
    let layout = RunLayout::new(&cfg.out_dir);
    let seeds = cfg.seeds();
    let recipe = cfg.recipe(seeds.training);
    write_config(&layout, cfg)?;

    let (novice_expert, weakened) = rayon::join(
        || -> Result<_, CliError> {
            let novice = make_novice(&recipe)?;
            let warm = cfg.expert.warm_start.then_some(&novice.params);
            let expert = make_expert(&recipe, warm)?;
            Ok((novice, expert))
        },
        || make_weakened_novice(&recipe),
    );
    let (novice, expert) = novice_expert?;
    let weakened = weakened?;
    log::info!(
        "trained novice ({} episodes), weakened ({}), expert ({}, converged: {})",
        novice.meta.episodes_run,
        weakened.meta.episodes_run,
        expert.meta.episodes_run,
        expert.meta.converged
    );

    let mut artifacts = vec![layout.config()];
    for (role, trained) in [(NOVICE, &novice), (WEAKENED, &weakened), (EXPERT, &expert)] {
        save_policy(&layout.policy(role), trained)?;
        write_training_curve(&layout.training_curve(role), trained)?;
        artifacts.push(layout.policy(role));
        artifacts.push(layout.training_curve(role));
    }

    let train = cfg.train_dist();
    let test = cfg.test_dist();
    let n = cfg.stats.episodes;
    let radius = cfg.env.window_radius;
    let roles = [
        (NOVICE, &novice.params),
        (WEAKENED, &weakened.params),
        (EXPERT, &expert.params),
    ];
    let stats: Vec<(PolicyStats, PolicyStats)> = roles
        .par_iter()
        .map(|(_, p)| -> Result<_, CliError> {
            let on_train = estimate_policy_stats((*p).into(), &train, n, radius, seeds.stats)?;
            let on_test = estimate_policy_stats((*p).into(), &test, n, radius, seeds.stats)?;
            Ok((on_train, on_test))
        })
        .collect::<Result<_, _>>()?;
    let generalization: Vec<GapRow> = roles
        .iter()
        .zip(&stats)
        .map(|((role, _), (tr, te))| GapRow {
            policy: role.to_string(),
            train_return: tr.mean_return,
            train_length: tr.mean_length,
            test_return: te.mean_return,
            test_length: te.mean_length,
        })
        .collect();
    let faithfulness = ratio_from_means(stats[1].0.mean_return, stats[0].1.mean_return)?;

    let stats_doc = StatsDoc {
        expert_test: stats[2].1,
        novice_train: stats[0].0,
        seed: seeds.stats,
    };
    write_json(&layout.stats(), &stats_doc)?;
    let summary = TrainSummary {
        episodes_per_estimate: n,
        novice_episodes: novice.meta.episodes_run,
        weakened_episodes: weakened.meta.episodes_run,
        expert_episodes_run: expert.meta.episodes_run,
        expert_converged: expert.meta.converged,
        generalization,
        faithfulness,
    };
    write_json(&layout.train_summary(), &summary)?;
    artifacts.push(layout.stats());
    artifacts.push(layout.train_summary());
    RunManifest::write(&layout, "train", cfg, &artifacts, started, clock)?;
    Ok(summary)
}

// ----------------------------------------------------------- coordinate

/// Why a method's policy was chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionDoc {
    pub method: String,
    pub validated: bool,
    pub candidates: usize,
    /// Index into the candidate list; absent for baselines.
    pub best: Option<usize>,
    pub label: String,
    pub parameter: Option<f64>,
    pub validator_auc_mean: Option<f64>,
    pub validator_auc_std: Option<f64>,
    pub validator_seed: Option<u64>,
}

#[derive(Clone, Debug)]
pub struct CoordinateOutput {
    pub selection: SelectionDoc,
    pub policy: CoordinationPolicy,
    pub candidates: Option<CandidateSet>,
    pub ranking: Option<Vec<RankingRow>>,
}

/// The simulated validator: weakened novice as novice, novice as expert,
/// training tasks. Nothing from test time is read.
fn simulated_spec<'a>(
    cfg: &ExperimentConfig,
    weakened: &'a PolicyParams,
    novice: &'a PolicyParams,
    novice_train: PolicyStats,
) -> ValidatorSpec<'a> {
    ValidatorSpec {
        kind: ValidatorKind::Simulated,
        novice: weakened,
        expert: novice,
        dist: cfg.train_dist(),
        expert_stats: novice_train,
        feature_source: SourceRole::Weakened,
        window_radius: cfg.env.window_radius,
    }
}

pub fn cmd_coordinate(cfg: &ExperimentConfig, method: Method, clock: Clock) -> Result<CoordinateOutput, CliError> {
    let started = clock.now();
    let layout = RunLayout::new(&cfg.out_dir);
    let seeds = cfg.seeds();
    write_config(&layout, cfg)?;
    let dir = layout.method_dir(method.name());
    let mut artifacts = vec![layout.config()];

    let output = if let Method::Baseline(kind) = method {
        let policy = make_baseline(kind);
        CoordinateOutput {
            selection: SelectionDoc {
                method: method.name().into(),
                validated: false,
                candidates: 1,
                best: None,
                label: policy.label(),
                parameter: policy.parameter(),
                validator_auc_mean: None,
                validator_auc_std: None,
                validator_seed: None,
            },
            policy,
            candidates: None,
            ranking: None,
        }
    } else {
        let novice = load_policy(&layout, NOVICE)?;
        let weakened = load_policy(&layout, WEAKENED)?;
        let stats: StatsDoc = read_json(&layout.require(layout.stats(), "train")?)?;
        let spec = simulated_spec(cfg, &weakened, &novice, stats.novice_train);
        let candidates = match method {
            Method::Threshold(measure) => gen_threshold_candidates(
                measure,
                &weakened,
                &cfg.train_dist(),
                cfg.proposer.rollout_episodes,
                cfg.env.window_radius,
                &cfg.svdd(),
                seeds.proposer,
            )?,
            _ => gen_random_candidates(),
        };
        let sel = select_best(&candidates, &spec, &cfg.validation_eval(), seeds.validation)?;
        let row = &sel.ranking[sel.best];

        let ranking_path = dir.join("ranking.csv");
        let mut buf = Vec::new();
        write_ranking_csv(&sel.ranking, &mut buf)?;
        write_bytes(&ranking_path, &buf)?;
        write_json(&dir.join("candidates.json"), &candidates)?;
        artifacts.push(ranking_path);
        artifacts.push(dir.join("candidates.json"));
        if let CoordinationPolicy::Threshold {
            scorer: Scorer::Svdd { model },
            ..
        } = &sel.policy
        {
            let path = dir.join("svdd.json");
            model.save(&path)?;
            artifacts.push(path);
        }
        CoordinateOutput {
            selection: SelectionDoc {
                method: method.name().into(),
                validated: true,
                candidates: candidates.policies.len(),
                best: Some(sel.best),
                label: row.label.clone(),
                parameter: row.parameter,
                validator_auc_mean: Some(row.auc_mean),
                validator_auc_std: Some(row.auc_std),
                validator_seed: Some(seeds.validation),
            },
            policy: sel.policy,
            candidates: Some(candidates),
            ranking: Some(sel.ranking),
        }
    };

    write_json(&dir.join("selected.json"), &output.policy)?;
    write_json(&dir.join("selection.json"), &output.selection)?;
    artifacts.push(dir.join("selected.json"));
    artifacts.push(dir.join("selection.json"));
    RunManifest::write(
        &layout,
        &format!("coordinate-{}", method.name()),
        cfg,
        &artifacts,
        started,
        clock,
    )?;
    Ok(output)
}

// ------------------------------------------------------------- evaluate

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReportDoc {
    pub name: String,
    pub policy_label: String,
    /// SHA-256 of the evaluated policy file.
    pub policy_sha256: String,
    pub expert_fraction: f64,
    #[serde(flatten)]
    pub auc: AucReport,
}

fn oracle_spec<'a>(
    cfg: &ExperimentConfig,
    novice: &'a PolicyParams,
    expert: &'a PolicyParams,
    expert_test: PolicyStats,
) -> ValidatorSpec<'a> {
    ValidatorSpec::oracle(novice, expert, &cfg.test_dist(), expert_test, cfg.env.window_radius)
}

/// Default artifact name: the method directory for `selected.json`, the
/// file stem otherwise.
pub fn eval_name(policy_path: &Path) -> String {
    let stem = policy_path.file_stem().map(|s| s.to_string_lossy().into_owned());
    match (stem.as_deref(), policy_path.parent().and_then(Path::file_name)) {
        (Some("selected"), Some(dir)) => dir.to_string_lossy().into_owned(),
        (Some(s), _) => s.to_string(),
        _ => "policy".into(),
    }
}

/// Evaluates a persisted coordination policy under true test conditions.
pub fn cmd_evaluate(
    cfg: &ExperimentConfig,
    policy_path: &Path,
    name: Option<&str>,
    clock: Clock,
) -> Result<EvalReportDoc, CliError> {
    let started = clock.now();
    let layout = RunLayout::new(&cfg.out_dir);
    write_config(&layout, cfg)?;
    let bytes = std::fs::read(policy_path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::MissingArtifact {
            path: policy_path.to_path_buf(),
            producer: "coordinate",
        },
        _ => CliError::io(policy_path, e),
    })?;
    let policy: CoordinationPolicy = serde_json::from_slice(&bytes).map_err(|source| CliError::Json {
        path: policy_path.to_path_buf(),
        source,
    })?;
    let novice = load_policy(&layout, NOVICE)?;
    let expert = load_policy(&layout, EXPERT)?;
    let stats: StatsDoc = read_json(&layout.require(layout.stats(), "train")?)?;
    let spec = oracle_spec(cfg, &novice, &expert, stats.expert_test);
    let v = validate(&spec, &policy, &cfg.test_eval(), cfg.seeds().test)?;

    let name = name.map_or_else(|| eval_name(policy_path), str::to_string);
    let dir = layout.eval_dir(&name);
    let mut buf = Vec::new();
    v.curve.write_csv(&mut buf)?;
    write_bytes(&dir.join("curve.csv"), &buf)?;
    let doc = EvalReportDoc {
        name: name.clone(),
        policy_label: policy.label(),
        policy_sha256: hex::encode(Sha256::digest(&bytes)),
        expert_fraction: v.curve.expert_fraction(),
        auc: v.report,
    };
    write_json(&dir.join("report.json"), &doc)?;
    let artifacts = [layout.config(), dir.join("curve.csv"), dir.join("report.json")];
    RunManifest::write(&layout, &format!("evaluate-{name}"), cfg, &artifacts, started, clock)?;
    Ok(doc)
}

// ------------------------------------------------------------- diagnose

/// Per-method comparison persisted for plotting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseEntry {
    pub method: String,
    pub simulated_auc: f64,
    pub oracle_validator_auc: f64,
    pub oracle_proposer_auc: f64,
    pub normalizer: f64,
}

impl From<&Diagnosis> for DiagnoseEntry {
    fn from(d: &Diagnosis) -> Self {
        DiagnoseEntry {
            method: d.method.clone(),
            simulated_auc: d.simulated_auc,
            oracle_validator_auc: d.oracle_validator_auc,
            oracle_proposer_auc: d.oracle_proposer_auc,
            normalizer: d.normalizer,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub selector: String,
    pub auc_mean: f64,
    pub auc_std: f64,
    pub expert_fraction: f64,
}

/// Which method reached the highest test AUC, counted over runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WinsTable {
    pub runs: usize,
    pub counts: BTreeMap<String, usize>,
}

#[derive(Clone, Debug)]
pub struct DiagnoseOutput {
    pub diagnoses: Vec<Diagnosis>,
    pub oracles: Vec<OracleResult>,
    pub best_oracle: usize,
    /// Test AUC of every method's chosen policy, in [`Method::all`] order.
    pub method_aucs: Vec<(String, f64)>,
    pub wins: WinsTable,
}

pub fn cmd_diagnose(cfg: &ExperimentConfig, clock: Clock) -> Result<DiagnoseOutput, CliError> {
    let started = clock.now();
    let layout = RunLayout::new(&cfg.out_dir);
    let seeds = cfg.seeds();
    write_config(&layout, cfg)?;
    let methods = Method::all(cfg);

    // Inputs first, so a missing artifact fails before any training.
    let mut inputs = Vec::new();
    for &m in methods.iter().filter(|m| m.is_validated()) {
        let dir = layout.method_dir(m.name());
        let candidates: CandidateSet = read_json(&layout.require(dir.join("candidates.json"), "coordinate")?)?;
        let selection: SelectionDoc = read_json(&layout.require(dir.join("selection.json"), "coordinate")?)?;
        let best = selection.best.ok_or(CliError::Core(yrc_core::Error::NoCandidates))?;
        inputs.push((m, candidates, best));
    }
    let novice = load_policy(&layout, NOVICE)?;
    let expert = load_policy(&layout, EXPERT)?;
    let stats: StatsDoc = read_json(&layout.require(layout.stats(), "train")?)?;
    let spec = oracle_spec(cfg, &novice, &expert, stats.expert_test);
    let setup = spec.setup();
    let eval = cfg.test_eval();

    let (trained, best_oracle) = train_and_rank_oracles(
        &cfg.oracle.selectors,
        &setup,
        &cfg.oracle_train(),
        &eval,
        seeds.oracle,
        seeds.test,
    )?;
    let oracle_dir = layout.oracle_dir();
    let mut artifacts = vec![layout.config()];
    for (policy, result) in &trained {
        let path = oracle_dir.join(format!("{}.json", result.selector));
        write_json(&path, policy)?;
        artifacts.push(path);
    }
    let oracle_rows: Vec<OracleRow> = trained
        .iter()
        .map(|(_, r)| OracleRow {
            selector: r.selector.to_string(),
            auc_mean: r.report.mean,
            auc_std: r.report.std,
            expert_fraction: r.expert_fraction,
        })
        .collect();
    write_json(&oracle_dir.join("results.json"), &oracle_rows)?;
    artifacts.push(oracle_dir.join("results.json"));
    let oracles: Vec<OracleResult> = trained.into_iter().map(|(_, r)| r).collect();
    let best = &oracles[best_oracle];

    let diagnoses: Vec<Diagnosis> = inputs
        .par_iter()
        .map(|(m, candidates, choice)| {
            diagnose_components(m.name(), candidates, *choice, &spec, best, &eval, seeds.test)
        })
        .collect::<Result<_, _>>()?;

    let diag_dir = layout.diagnose_dir();
    for d in &diagnoses {
        let path = diag_dir.join("rankings").join(format!("{}.csv", d.method));
        let mut buf = Vec::new();
        write_ranking_csv(&d.oracle_ranking, &mut buf)?;
        write_bytes(&path, &buf)?;
        artifacts.push(path);
    }

    let mut method_aucs = Vec::new();
    for &m in &methods {
        let auc = match m {
            Method::Baseline(kind) => validate(&spec, &make_baseline(kind), &eval, seeds.test)?.report.mean,
            _ => diagnoses
                .iter()
                .find(|d| d.method == m.name())
                .map(|d| d.simulated_auc)
                .ok_or(CliError::Core(yrc_core::Error::NoCandidates))?,
        };
        method_aucs.push((m.name().to_string(), auc));
    }
    let wins = wins_table(&method_aucs);

    let entries: Vec<DiagnoseEntry> = diagnoses.iter().map(DiagnoseEntry::from).collect();
    write_json(&diag_dir.join("diagnose.json"), &entries)?;
    write_bytes(
        &diag_dir.join("normalized.csv"),
        &csv_bytes(&NORMALIZED_HEADER, &normalized_records(&entries, None))?,
    )?;
    write_json(&diag_dir.join("method_aucs.json"), &method_aucs)?;
    write_json(&diag_dir.join("wins.json"), &wins)?;
    for f in ["diagnose.json", "normalized.csv", "method_aucs.json", "wins.json"] {
        artifacts.push(diag_dir.join(f));
    }
    RunManifest::write(&layout, "diagnose", cfg, &artifacts, started, clock)?;
    Ok(DiagnoseOutput {
        diagnoses,
        oracles,
        best_oracle,
        method_aucs,
        wins,
    })
}

/// One win for the highest AUC; the earlier method wins ties.
pub fn wins_table(method_aucs: &[(String, f64)]) -> WinsTable {
    let mut counts: BTreeMap<String, usize> = method_aucs.iter().map(|(m, _)| (m.clone(), 0)).collect();
    let winner = (0..method_aucs.len()).reduce(|b, i| if method_aucs[i].1 > method_aucs[b].1 { i } else { b });
    if let Some(w) = winner {
        *counts.get_mut(&method_aucs[w].0).expect("winner is counted") += 1;
    }
    WinsTable {
        runs: usize::from(winner.is_some()),
        counts,
    }
}

fn normalized_records(entries: &[DiagnoseEntry], run: Option<&str>) -> Vec<Vec<String>> {
    entries
        .iter()
        .map(|e| {
            run.map(str::to_string)
                .into_iter()
                .chain([
                    e.method.clone(),
                    (e.simulated_auc / e.normalizer).to_string(),
                    (e.oracle_validator_auc / e.normalizer).to_string(),
                    (e.oracle_proposer_auc / e.normalizer).to_string(),
                ])
                .collect()
        })
        .collect()
}

fn csv_bytes(header: &[&str], records: &[Vec<String>]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Core(e.into());
    w.write_record(header).map_err(err)?;
    for r in records {
        w.write_record(r).map_err(err)?;
    }
    w.into_inner()
        .map_err(|e| CliError::Core(yrc_core::Error::Io(e.into_error())))
}

const NORMALIZED_HEADER: [&str; 4] = ["method", "simulated", "oracle_validator", "oracle_proposer"];

// --------------------------------------------------------------- report

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub runs: usize,
    pub mean_simulated: f64,
    pub mean_oracle_validator: f64,
    pub mean_oracle_proposer: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportDoc {
    pub runs: Vec<String>,
    /// Normalized means over runs.
    pub methods: Vec<MethodSummary>,
    pub wins: WinsTable,
}

/// Aggregates diagnosed runs into normalized tables under `out`.
pub fn cmd_report(run_dirs: &[PathBuf], out: &Path) -> Result<ReportDoc, CliError> {
    let mut rows = Vec::new();
    let mut per_run = Vec::new();
    let mut totals = WinsTable {
        runs: 0,
        counts: BTreeMap::new(),
    };
    let mut names = Vec::new();
    for dir in run_dirs {
        let layout = RunLayout::new(dir);
        let diag = layout.diagnose_dir();
        let entries: Vec<DiagnoseEntry> = read_json(&layout.require(diag.join("diagnose.json"), "diagnose")?)?;
        let wins: WinsTable = read_json(&layout.require(diag.join("wins.json"), "diagnose")?)?;
        let name = dir.display().to_string();
        per_run.extend(normalized_records(&entries, Some(&name)));
        totals.runs += wins.runs;
        for (m, c) in wins.counts {
            *totals.counts.entry(m).or_default() += c;
        }
        rows.extend(entries);
        names.push(name);
    }
    let mut methods: Vec<MethodSummary> = Vec::new();
    for e in &rows {
        let n = [
            e.simulated_auc / e.normalizer,
            e.oracle_validator_auc / e.normalizer,
            e.oracle_proposer_auc / e.normalizer,
        ];
        match methods.iter_mut().find(|m| m.method == e.method) {
            Some(m) => {
                m.runs += 1;
                m.mean_simulated += n[0];
                m.mean_oracle_validator += n[1];
                m.mean_oracle_proposer += n[2];
            }
            None => methods.push(MethodSummary {
                method: e.method.clone(),
                runs: 1,
                mean_simulated: n[0],
                mean_oracle_validator: n[1],
                mean_oracle_proposer: n[2],
            }),
        }
    }
    for m in &mut methods {
        let r = m.runs as f64;
        m.mean_simulated /= r;
        m.mean_oracle_validator /= r;
        m.mean_oracle_proposer /= r;
    }
    let doc = ReportDoc {
        runs: names,
        methods,
        wins: totals,
    };
    write_json(&out.join("report.json"), &doc)?;
    let header: Vec<&str> = std::iter::once("run").chain(NORMALIZED_HEADER).collect();
    write_bytes(&out.join("normalized.csv"), &csv_bytes(&header, &per_run)?)?;
    Ok(doc)
}

// ------------------------------------------------------------------ run

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub train: TrainSummary,
    pub coordinate: Vec<(Method, CoordinateOutput)>,
    pub evaluate: Vec<EvalReportDoc>,
    pub diagnose: Option<DiagnoseOutput>,
}

/// `train`, `coordinate` for every method, `evaluate` of every selection
/// and, when `diagnose` is set, `diagnose`.
pub fn run_all(
    cfg: &ExperimentConfig,
    methods: &[Method],
    diagnose: bool,
    clock: Clock,
) -> Result<RunOutput, CliError> {
    let train = cmd_train(cfg, clock)?;
    let coordinate: Vec<(Method, CoordinateOutput)> = methods
        .par_iter()
        .map(|&m| Ok((m, cmd_coordinate(cfg, m, clock)?)))
        .collect::<Result<_, CliError>>()?;
    let layout = RunLayout::new(&cfg.out_dir);
    let evaluate = methods
        .par_iter()
        .map(|m| cmd_evaluate(cfg, &layout.method_dir(m.name()).join("selected.json"), None, clock))
        .collect::<Result<_, _>>()?;
    let diagnose = if diagnose {
        Some(cmd_diagnose(cfg, clock)?)
    } else {
        None
    };
    Ok(RunOutput {
        train,
        coordinate,
        evaluate,
        diagnose,
    })
}
