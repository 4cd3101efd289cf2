//! Problem construction, run fan-out and trace output.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use incgrad::data_io::{
    generate_synthetic_logistic, generate_synthetic_multinomial, parse_libsvm, Dataset, LabelKind,
    ParseOptions, SyntheticSpec,
};
use incgrad::optimizers::{
    run, run_deterministic_qn, Budget, DeterministicConfig, RunConfig, Trace, TracePolicy,
};
use incgrad::problems::{full_value, log_spaced, ProblemConstants, SumProblem, SyntheticQuadratic};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, MethodConfig, Model, Optimum, ProblemConfig, Source};
use crate::error::CliError;

type Result<T> = std::result::Result<T, CliError>;

pub type DynProblem = Box<dyn SumProblem<f64>>;

/// Step sizes tried by `sweep`: `10⁰, 10⁻¹, …, 10⁻⁶`.
pub const SWEEP_GRID: [f64; 7] = [1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6];

pub fn label_kind(model: Model) -> LabelKind {
    match model {
        Model::BinaryLogistic | Model::Quadratic => LabelKind::Binary,
        Model::Multinomial => LabelKind::Multiclass,
        Model::LeastSquares => LabelKind::Real,
    }
}

/// Loads or generates the dataset behind a data-driven model.
pub fn load_dataset(cfg: &ProblemConfig) -> Result<Dataset> {
    match &cfg.source {
        Source::File { path, n_features } => {
            let file =
                File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            let opts = ParseOptions {
                n_features: *n_features,
                labels: label_kind(cfg.model),
            };
            parse_libsvm(BufReader::new(file), opts)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
        }
        Source::Synthetic(p) => {
            let spec = SyntheticSpec {
                m: p.m,
                n: p.n,
                sparsity: p.sparsity,
                seed: p.seed,
                separation: p.separation,
            };
            let (mut d, _) = match cfg.model {
                Model::Multinomial => {
                    generate_synthetic_multinomial(&spec, cfg.classes.unwrap_or(3))?
                }
                _ => generate_synthetic_logistic(&spec)?,
            };
            if p.scale_first != 1.0 || p.scale_last != 1.0 {
                d.scale_columns(&column_scales(p.n, p.scale_first, p.scale_last)?)?;
            }
            Ok(d)
        }
    }
}

/// Log-spaced factors from `first` to `last`, either direction.
fn column_scales(n: usize, first: f64, last: f64) -> Result<Vec<f64>> {
    if n == 1 {
        return Ok(vec![first]);
    }
    let mut s = log_spaced(n, first.min(last), first.max(last))?;
    if first > last {
        s.reverse();
    }
    Ok(s)
}

/// Best value of a long full-batch run from the origin.
fn reference_value(p: &dyn SumProblem<f64>, iterations: usize) -> Result<f64> {
    let mut cfg = DeterministicConfig::new(Budget::iterations(iterations));
    cfg.trace = TracePolicy::Never;
    let trace = run_deterministic_qn(p, &vec![0.0; p.dim()], &cfg)?;
    Ok(full_value(p, &trace.final_x)?)
}

fn f_star(p: &dyn SumProblem<f64>, optimum: Optimum) -> Result<Option<f64>> {
    match optimum {
        Optimum::Reference { iterations } => reference_value(p, iterations).map(Some),
        Optimum::Value(v) => Ok(Some(v)),
        Optimum::Unknown => Ok(None),
    }
}

fn with_f_star(mut c: ProblemConstants<f64>, f: Option<f64>) -> ProblemConstants<f64> {
    c.f_star = f;
    c
}

/// Builds the configured objective with its Lipschitz bound and, when
/// requested, `f*`.
pub fn build_problem(cfg: &ProblemConfig) -> Result<DynProblem> {
    if cfg.model == Model::Quadratic {
        let Source::Synthetic(p) = &cfg.source else {
            return Err(CliError::Config {
                key: "problem.model".into(),
                message: "quadratic requires source = synthetic".into(),
            });
        };
        let q = SyntheticQuadratic::random(p.n, p.m, p.mu, p.lipschitz, p.spread, p.seed)?;
        if cfg.lambda != 0.0 {
            let centers = q.centers().to_vec();
            return Ok(Box::new(SyntheticQuadratic::new(
                q.curvature().to_vec(),
                centers,
                cfg.lambda,
            )?));
        }
        return Ok(Box::new(q));
    }
    let d = load_dataset(cfg)?;
    Ok(match cfg.model {
        Model::BinaryLogistic => {
            let p = d.binary_logistic(cfg.lambda)?.with_lipschitz_bound()?;
            let f = f_star(&p, cfg.optimum)?;
            let c = with_f_star(p.constants(), f);
            Box::new(p.with_constants(c))
        }
        Model::Multinomial => {
            let classes = cfg.classes.unwrap_or(d.num_classes()?.max(2));
            let p = d
                .multinomial_logistic(classes, cfg.lambda)?
                .with_lipschitz_bound()?;
            let f = f_star(&p, cfg.optimum)?;
            let c = with_f_star(p.constants(), f);
            Box::new(p.with_constants(c))
        }
        Model::LeastSquares => {
            let p = d.least_squares(cfg.lambda)?.with_lipschitz_bound()?;
            let f = f_star(&p, cfg.optimum)?;
            let c = with_f_star(p.constants(), f);
            Box::new(p.with_constants(c))
        }
        Model::Quadratic => unreachable!("handled above"),
    })
}

/// One `(method, seed, step)` combination.
#[derive(Debug, Clone)]
pub struct Job<'a> {
    pub method: &'a MethodConfig,
    pub seed: u64,
    pub step: Option<f64>,
}

impl Job<'_> {
    pub fn file_name(&self) -> String {
        match self.step {
            Some(a) => format!("{}_seed{}_step{a:e}.csv", self.method.label, self.seed),
            None => format!("{}_seed{}.csv", self.method.label, self.seed),
        }
    }
}

pub struct Outcome {
    pub file: PathBuf,
    pub trace: Trace<f64>,
}

/// Runs every job in parallel; each writes its own trace file.
pub fn run_jobs(
    p: &dyn SumProblem<f64>,
    cfg: &ExperimentConfig,
    jobs: &[Job<'_>],
    out: &Path,
) -> Result<Vec<Outcome>> {
    fs::create_dir_all(out)?;
    let constants = p.constants();
    let x0 = vec![0.0; p.dim()];
    jobs.par_iter()
        .map(|job| {
            let rc = RunConfig {
                method: job.method.method(job.step, &constants)?,
                budget: cfg.budget,
                seed: job.seed,
                trace: cfg.trace,
            };
            let trace = run(p, &x0, &rc)?;
            let file = out.join(job.file_name());
            let mut w = BufWriter::new(File::create(&file)?);
            trace.write_csv(&mut w)?;
            w.flush()?;
            Ok(Outcome { file, trace })
        })
        .collect()
}

fn real(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| format!("{v:.16e}"))
}

/// Summary CSV: one row per job.
pub fn write_summary(path: &Path, jobs: &[Job<'_>], outcomes: &[Outcome]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        "method,kind,seed,step,stop,iterations,cum_evals,eff_passes,final_f,final_gap,trace"
    )?;
    for (job, o) in jobs.iter().zip(outcomes) {
        let last = o.trace.last();
        let final_f = o.trace.records.iter().rev().find_map(|r| r.f_true);
        writeln!(
            w,
            "{},{},{},{},{:?},{},{},{},{},{},{}",
            job.method.label,
            job.method.kind_name(),
            job.seed,
            real(job.step),
            o.trace.stop,
            last.k,
            last.cum_evals,
            real(Some(last.eff_passes)),
            real(final_f),
            real(o.trace.final_gap()),
            o.file
                .file_name()
                .and_then(|f| f.to_str())
                .unwrap_or_default(),
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Jobs for `run`: every method × seed × configured step.
pub fn run_plan<'a>(cfg: &'a ExperimentConfig) -> Vec<Job<'a>> {
    let mut jobs = Vec::new();
    for method in &cfg.methods {
        for &seed in &cfg.seeds {
            for &step in &method.steps {
                jobs.push(Job { method, seed, step });
            }
        }
    }
    jobs
}

/// Jobs for `sweep`: every stochastic method × seed × grid step.
pub fn sweep_plan<'a>(cfg: &'a ExperimentConfig) -> Result<Vec<Job<'a>>> {
    let mut jobs = Vec::new();
    for method in cfg.methods.iter().filter(|m| m.is_stochastic()) {
        for &seed in &cfg.seeds {
            for step in SWEEP_GRID {
                jobs.push(Job {
                    method,
                    seed,
                    step: Some(step),
                });
            }
        }
    }
    if jobs.is_empty() {
        return Err(CliError::Config {
            key: "method".into(),
            message: "sweep needs a method with kind = stochastic-gd".into(),
        });
    }
    Ok(jobs)
}

/// Ranking entry: mean final gap (or final objective when `f*` is unknown)
/// over seeds; non-finite results rank last.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranked {
    pub method: String,
    pub step: f64,
    pub score: f64,
}

pub fn rank(jobs: &[Job<'_>], outcomes: &[Outcome]) -> Vec<Ranked> {
    let mut groups: Vec<(String, f64, Vec<f64>)> = Vec::new();
    for (job, o) in jobs.iter().zip(outcomes) {
        let score = o
            .trace
            .final_gap()
            .or_else(|| o.trace.records.iter().rev().find_map(|r| r.f_true))
            .unwrap_or(f64::NAN);
        let step = job.step.unwrap_or(f64::NAN);
        match groups
            .iter_mut()
            .find(|g| g.0 == job.method.label && g.1 == step)
        {
            Some(g) => g.2.push(score),
            None => groups.push((job.method.label.clone(), step, vec![score])),
        }
    }
    let mut ranked: Vec<Ranked> = groups
        .into_iter()
        .map(|(method, step, scores)| {
            let mean = scores.iter().sum::<f64>() / scores.len() as f64;
            Ranked {
                method,
                step,
                score: if mean.is_finite() {
                    mean
                } else {
                    f64::INFINITY
                },
            }
        })
        .collect();
    ranked.sort_by(|a, b| a.method.cmp(&b.method).then(a.score.total_cmp(&b.score)));
    ranked
}

pub fn write_ranking(path: &Path, ranked: &[Ranked]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "method,rank,step,score")?;
    let mut rank = 0;
    for (i, r) in ranked.iter().enumerate() {
        rank = if i > 0 && ranked[i - 1].method == r.method {
            rank + 1
        } else {
            1
        };
        writeln!(w, "{},{rank},{:e},{:.16e}", r.method, r.step, r.score)?;
    }
    w.flush()?;
    Ok(())
}
