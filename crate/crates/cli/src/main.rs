//! Experiment runner for growing-batch gradient methods.
//!
//! Exit codes: 0 success, 1 a verification suite failed, 2 configuration or
//! data error.

mod config;
mod error;
mod experiment;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use incgrad::data_io::{dataset_stats, parse_libsvm, ParseOptions};
use incgrad::verify::{run_suite, Suite};

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::experiment::{
    build_problem, load_dataset, rank, run_jobs, run_plan, sweep_plan, write_ranking, write_summary,
};

#[derive(Parser, Debug)]
#[command(
    name = "incgrad",
    version,
    about = "Run and verify growing-batch gradient methods"
)]
struct Cli {
    /// Worker threads for parallel runs (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run every configured method and seed; writes one CSV per run plus summary.csv.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides run.out).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Single seed replacing run.seeds.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the theorem-verification suites and report worst margins.
    VerifyRates {
        #[arg(value_enum, default_value_t = SuiteArg::All)]
        suite: SuiteArg,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Run the stochastic methods over the step grid 1, 0.1, ..., 1e-6 and rank the steps.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Summarize a LIBSVM file, or the dataset of a config.
    Stats {
        /// LIBSVM file to inspect.
        data: Option<PathBuf>,
        #[arg(long, conflicts_with = "data")]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = LabelArg::Binary)]
        labels: LabelArg,
        #[arg(long)]
        n_features: Option<usize>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SuiteArg {
    All,
    Lemma,
    Weak,
    Strong,
    StrongExpected,
    Sublinear,
    Sampling,
}

impl SuiteArg {
    fn suites(self) -> Vec<Suite> {
        match self {
            SuiteArg::All => Suite::ALL.to_vec(),
            SuiteArg::Lemma => vec![Suite::Lemma],
            SuiteArg::Weak => vec![Suite::Weak],
            SuiteArg::Strong => vec![Suite::Strong],
            SuiteArg::StrongExpected => vec![Suite::StrongExpected],
            SuiteArg::Sublinear => vec![Suite::Sublinear],
            SuiteArg::Sampling => vec![Suite::Sampling],
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LabelArg {
    Binary,
    Multiclass,
    Real,
}

enum Outcome {
    Ok,
    VerificationFailed,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match dispatch(cli.command) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::VerificationFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cmd: Command) -> Result<Outcome, CliError> {
    match cmd {
        Command::Run { config, out, seed } => {
            let cfg = load_config(&config, out, seed)?;
            let p = build_problem(&cfg.problem)?;
            let jobs = run_plan(&cfg);
            let outcomes = run_jobs(p.as_ref(), &cfg, &jobs, &cfg.out)?;
            write_summary(&cfg.out.join("summary.csv"), &jobs, &outcomes)?;
            for (job, o) in jobs.iter().zip(&outcomes) {
                let last = o.trace.last();
                println!(
                    "{} seed={}{} stop={:?} passes={:.3} gap={}",
                    job.method.label,
                    job.seed,
                    job.step.map_or(String::new(), |a| format!(" step={a:e}")),
                    o.trace.stop,
                    last.eff_passes,
                    o.trace
                        .final_gap()
                        .map_or("n/a".to_string(), |g| format!("{g:.6e}")),
                );
            }
            println!(
                "wrote {} traces and summary.csv to {}",
                outcomes.len(),
                cfg.out.display()
            );
            Ok(Outcome::Ok)
        }
        Command::Sweep { config, out, seed } => {
            let cfg = load_config(&config, out, seed)?;
            let p = build_problem(&cfg.problem)?;
            let jobs = sweep_plan(&cfg)?;
            let outcomes = run_jobs(p.as_ref(), &cfg, &jobs, &cfg.out)?;
            write_summary(&cfg.out.join("summary.csv"), &jobs, &outcomes)?;
            let ranked = rank(&jobs, &outcomes);
            write_ranking(&cfg.out.join("ranking.csv"), &ranked)?;
            for method in cfg.methods.iter().filter(|m| m.is_stochastic()) {
                let best: Vec<String> = ranked
                    .iter()
                    .filter(|r| r.method == method.label)
                    .take(3)
                    .map(|r| format!("{:e} ({:.6e})", r.step, r.score))
                    .collect();
                println!("{}: best steps {}", method.label, best.join(", "));
            }
            println!(
                "wrote {} traces, summary.csv and ranking.csv to {}",
                outcomes.len(),
                cfg.out.display()
            );
            Ok(Outcome::Ok)
        }
        Command::VerifyRates { suite, seed } => {
            let mut all_passed = true;
            for s in suite.suites() {
                let report = run_suite(s, seed)?;
                for c in &report.checks {
                    println!(
                        "{} {} {}: margin={:.6e} at={} {}",
                        report.suite,
                        if c.passed { "PASS" } else { "FAIL" },
                        c.name,
                        c.margin,
                        c.at,
                        c.detail
                    );
                }
                all_passed &= report.passed();
            }
            Ok(if all_passed {
                Outcome::Ok
            } else {
                Outcome::VerificationFailed
            })
        }
        Command::Stats {
            data,
            config,
            labels,
            n_features,
        } => {
            let d = match (data, config) {
                (Some(path), None) => {
                    let file = std::fs::File::open(&path)
                        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
                    let labels = match labels {
                        LabelArg::Binary => incgrad::data_io::LabelKind::Binary,
                        LabelArg::Multiclass => incgrad::data_io::LabelKind::Multiclass,
                        LabelArg::Real => incgrad::data_io::LabelKind::Real,
                    };
                    parse_libsvm(
                        std::io::BufReader::new(file),
                        ParseOptions { n_features, labels },
                    )
                    .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
                }
                (None, Some(path)) => {
                    let cfg = ExperimentConfig::load(&path)?;
                    if cfg.problem.model == config::Model::Quadratic {
                        return Err(CliError::Config {
                            key: "problem.model".into(),
                            message: "stats needs a data-driven model".into(),
                        });
                    }
                    load_dataset(&cfg.problem)?
                }
                _ => {
                    return Err(CliError::Data("stats needs a data file or --config".into()));
                }
            };
            let s = dataset_stats(&d);
            println!("examples: {}", s.m);
            println!("features: {}", s.n);
            println!("nonzeros: {}", s.nnz);
            println!(
                "density: {:.6}",
                s.nnz as f64 / (s.m.max(1) * s.n.max(1)) as f64
            );
            println!("max |value|: {}", s.max_abs);
            for (label, count) in &s.label_counts {
                println!("label {label}: {count}");
            }
            Ok(Outcome::Ok)
        }
    }
}

fn load_config(
    path: &Path,
    out: Option<PathBuf>,
    seed: Option<u64>,
) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(out) = out {
        cfg.out = out;
    }
    if let Some(seed) = seed {
        cfg.seeds = vec![seed];
    }
    Ok(cfg)
}
