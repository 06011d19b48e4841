use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use yrc_cli::pipeline::{self, Method};
use yrc_cli::{CliError, Clock, ExperimentConfig};

/// Yield-or-request-control experiments on shifted gridworlds.
#[derive(Parser, Debug)]
#[command(name = "yrc", version)]
struct Cli {
    /// TOML experiment config; the built-in default when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; all cores when omitted.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train novice, weakened novice and expert; print the generalization gap.
    Train,
    /// Propose candidates for a method and select one with the simulated validator.
    Coordinate {
        #[arg(long)]
        method: String,
    },
    /// Evaluate a persisted coordination policy under test conditions.
    Evaluate {
        #[arg(long)]
        policy: PathBuf,
        /// Artifact name under `evaluate/`; derived from the path by default.
        #[arg(long)]
        name: Option<String>,
    },
    /// Train oracle coordination policies and compare every method against them.
    Diagnose,
    /// Aggregate diagnosed runs into normalized tables under `--out`.
    Report { runs: Vec<PathBuf> },
    /// `train`, `coordinate` for all methods, `evaluate`, then `diagnose`.
    Run {
        #[arg(long)]
        skip_diagnose: bool,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default_config(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let clock = Clock::from_env();
    if let Command::Report { runs } = &cli.command {
        let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("report"));
        let doc = pipeline::cmd_report(runs, &out)?;
        println!(
            "{:<20} {:>10} {:>17} {:>16} {:>5}",
            "method", "simulated", "oracle_validator", "oracle_proposer", "wins"
        );
        for m in &doc.methods {
            let wins = doc.wins.counts.get(&m.method).copied().unwrap_or(0);
            println!(
                "{:<20} {:>10.4} {:>17.4} {:>16.4} {:>5}",
                m.method, m.mean_simulated, m.mean_oracle_validator, m.mean_oracle_proposer, wins
            );
        }
        for (m, c) in doc
            .wins
            .counts
            .iter()
            .filter(|(m, _)| !doc.methods.iter().any(|s| &s.method == *m))
        {
            println!("{m:<20} {:>10} {:>17} {:>16} {c:>5}", "", "", "");
        }
        return Ok(());
    }
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Train => {
            println!("{}", pipeline::cmd_train(&cfg, clock)?);
        }
        Command::Coordinate { method } => {
            let out = pipeline::cmd_coordinate(&cfg, method.parse()?, clock)?;
            let s = &out.selection;
            match s.validator_auc_mean {
                Some(auc) => println!("{}: selected {} (validator AUC {auc:.4})", s.method, s.label),
                None => println!("{}: {} (no validation)", s.method, s.label),
            }
        }
        Command::Evaluate { policy, name } => {
            let r = pipeline::cmd_evaluate(&cfg, policy, name.as_deref(), clock)?;
            println!(
                "{}: test AUC {:.4} ± {:.4}, expert fraction {:.3}",
                r.name, r.auc.mean, r.auc.std, r.expert_fraction
            );
        }
        Command::Diagnose => {
            let d = pipeline::cmd_diagnose(&cfg, clock)?;
            print_diagnosis(&d);
        }
        Command::Run { skip_diagnose } => {
            let methods = Method::all(&cfg);
            let out = pipeline::run_all(&cfg, &methods, !skip_diagnose, clock)?;
            println!("{}", out.train);
            for r in &out.evaluate {
                println!("{:<20} test AUC {:.4} ± {:.4}", r.name, r.auc.mean, r.auc.std);
            }
            if let Some(d) = &out.diagnose {
                print_diagnosis(d);
            }
        }
        Command::Report { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn print_diagnosis(d: &pipeline::DiagnoseOutput) {
    let best = &d.oracles[d.best_oracle];
    println!("best oracle selector {} AUC {:.4}", best.selector, best.report.mean);
    println!(
        "{:<14} {:>10} {:>17} {:>16}",
        "method", "simulated", "oracle_validator", "oracle_proposer"
    );
    for diag in &d.diagnoses {
        let [s, v, p] = diag.normalized();
        println!("{:<14} {s:>10.4} {v:>17.4} {p:>16.4}", diag.method);
    }
    for (m, c) in d.wins.counts.iter().filter(|(_, &c)| c > 0) {
        println!("winner: {m} ({c})");
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("{}", serde_json::json!({ "error": "jobs", "message": e.to_string() }));
            return ExitCode::from(2);
        }
    }
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.machine_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
