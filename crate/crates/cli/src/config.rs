//! Experiment configuration: flat `key = value` lines grouped under
//! `[section]` headers. Every error names the offending `section.key`.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use incgrad::optimizers::{Budget, ErrorSource, LineSearchKind, Method, StepPolicy, TracePolicy};
use incgrad::problems::ProblemConstants;
use incgrad::quasinewton::{ARMIJO_ETA, DEFAULT_MEMORY, WOLFE_C1, WOLFE_C2};
use incgrad::sampling::{SampleMode, Schedule, StrongRateParams};
use incgrad::theory::{NoiseBoundSequence, NoiseMode, PiSource};

use crate::error::CliError;

type Result<T> = std::result::Result<T, CliError>;

fn config_error(key: impl Into<String>, message: impl Into<String>) -> CliError {
    CliError::Config {
        key: key.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    value: String,
    line: usize,
}

/// Raw sections in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    sections: Vec<(String, BTreeMap<String, Entry>)>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RawConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with(';') {
                continue;
            }
            if let Some(rest) = trimmed.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .map(str::trim)
                    .filter(|n| !n.is_empty())
                    .ok_or_else(|| {
                        config_error(
                            format!("line {line}"),
                            format!("malformed section header \"{trimmed}\""),
                        )
                    })?;
                if cfg.sections.iter().any(|(n, _)| n == name) {
                    return Err(config_error(
                        name,
                        format!("section repeated at line {line}"),
                    ));
                }
                cfg.sections.push((name.to_string(), BTreeMap::new()));
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or_else(|| {
                config_error(
                    format!("line {line}"),
                    format!("expected key = value, got \"{trimmed}\""),
                )
            })?;
            let key = key.trim();
            let Some((section, entries)) = cfg.sections.last_mut() else {
                return Err(config_error(
                    key,
                    format!("key outside any section at line {line}"),
                ));
            };
            if key.is_empty() {
                return Err(config_error(
                    section.as_str(),
                    format!("empty key at line {line}"),
                ));
            }
            let entry = Entry {
                value: value.trim().to_string(),
                line,
            };
            if entries.insert(key.to_string(), entry).is_some() {
                return Err(config_error(
                    format!("{section}.{key}"),
                    format!("key repeated at line {line}"),
                ));
            }
        }
        Ok(cfg)
    }

    fn section(&self, name: &str) -> Option<Section<'_>> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(n, entries)| Section::new(n, entries))
    }
}

/// Typed access to one section; keys never read are reported by
/// [`Section::finish`].
struct Section<'a> {
    name: &'a str,
    entries: &'a BTreeMap<String, Entry>,
    used: RefCell<BTreeSet<&'a str>>,
}

impl<'a> Section<'a> {
    fn new(name: &'a str, entries: &'a BTreeMap<String, Entry>) -> Self {
        Section {
            name,
            entries,
            used: RefCell::new(BTreeSet::new()),
        }
    }

    fn path(&self, key: &str) -> String {
        format!("{}.{key}", self.name)
    }

    fn str(&self, key: &str) -> Option<&'a str> {
        let (k, e) = self.entries.get_key_value(key)?;
        self.used.borrow_mut().insert(k.as_str());
        Some(e.value.as_str())
    }

    fn required_str(&self, key: &str) -> Result<&'a str> {
        self.str(key)
            .ok_or_else(|| config_error(self.path(key), "required key is missing"))
    }

    fn parse<T: FromStr>(&self, key: &str, what: &str) -> Result<Option<T>> {
        match self.str(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| {
                let line = self.entries[key].line;
                config_error(
                    self.path(key),
                    format!("expected {what}, got \"{v}\" (line {line})"),
                )
            }),
        }
    }

    fn number(&self, key: &str) -> Result<Option<f64>> {
        match self.parse::<f64>(key, "a number")? {
            Some(v) if !v.is_finite() => Err(config_error(self.path(key), "must be finite")),
            v => Ok(v),
        }
    }

    fn required_number(&self, key: &str) -> Result<f64> {
        self.number(key)?
            .ok_or_else(|| config_error(self.path(key), "required key is missing"))
    }

    fn count(&self, key: &str) -> Result<Option<usize>> {
        self.parse(key, "a nonnegative integer")
    }

    fn flag(&self, key: &str) -> Result<Option<bool>> {
        self.parse(key, "true or false")
    }

    fn list<T: FromStr>(&self, key: &str, what: &str) -> Result<Option<Vec<T>>> {
        let Some(v) = self.str(key) else {
            return Ok(None);
        };
        v.split(',')
            .map(|item| {
                item.trim().parse().map_err(|_| {
                    config_error(
                        self.path(key),
                        format!("expected a comma-separated list of {what}, got \"{v}\""),
                    )
                })
            })
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    /// Maps a keyword value through `choices`.
    fn choice<T: Copy>(&self, key: &str, choices: &[(&str, T)]) -> Result<Option<T>> {
        let Some(v) = self.str(key) else {
            return Ok(None);
        };
        choices
            .iter()
            .find(|(name, _)| *name == v)
            .map(|&(_, t)| Some(t))
            .ok_or_else(|| {
                let names: Vec<&str> = choices.iter().map(|(n, _)| *n).collect();
                config_error(
                    self.path(key),
                    format!(
                        "unknown value \"{v}\"; expected one of {}",
                        names.join(", ")
                    ),
                )
            })
    }

    fn finish(self) -> Result<()> {
        let used = self.used.borrow();
        match self.entries.keys().find(|k| !used.contains(k.as_str())) {
            Some(k) => Err(config_error(self.path(k), "unknown key")),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Model {
    BinaryLogistic,
    Multinomial,
    LeastSquares,
    Quadratic,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    File {
        path: PathBuf,
        n_features: Option<usize>,
    },
    Synthetic(SyntheticParams),
}

/// Generator settings; only the ones relevant to the model are read.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticParams {
    pub m: usize,
    pub n: usize,
    pub seed: u64,
    pub sparsity: f64,
    pub separation: f64,
    /// Column `j` is scaled by a log-spaced factor from `scale_first` (first
    /// column) to `scale_last`.
    pub scale_first: f64,
    pub scale_last: f64,
    pub mu: f64,
    pub lipschitz: f64,
    pub spread: f64,
}

/// Where the gap column gets `f*` from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimum {
    /// Best value of a long full-batch L-BFGS run.
    Reference {
        iterations: usize,
    },
    Value(f64),
    Unknown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemConfig {
    pub model: Model,
    pub source: Source,
    pub lambda: f64,
    pub classes: Option<usize>,
    pub optimum: Optimum,
}

/// Batch schedule as written in the config; the strong-rate rule needs the
/// problem's `μ` and `L`, so it is resolved once the problem exists.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleSpec {
    Ready(Schedule<f64>),
    StrongRate { rho: f64, beta1: f64, beta2: f64 },
}

impl ScheduleSpec {
    fn resolve(&self, key: &str, c: &ProblemConstants<f64>) -> Result<Schedule<f64>> {
        match *self {
            ScheduleSpec::Ready(s) => Ok(s),
            ScheduleSpec::StrongRate { rho, beta1, beta2 } => {
                let (Some(mu), Some(lipschitz)) = (c.mu, c.lipschitz) else {
                    return Err(config_error(
                        key,
                        "strong-rate schedule needs a problem with known mu and L",
                    ));
                };
                Ok(Schedule::StrongRate(StrongRateParams {
                    lipschitz,
                    mu,
                    rho,
                    beta1,
                    beta2,
                }))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ErrorSpec {
    Injected {
        sequence: NoiseBoundSequence<f64>,
        mode: NoiseMode,
    },
    Sampled {
        schedule: ScheduleSpec,
        mode: SampleMode,
        nested: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum MethodKind {
    ControlledErrorGd {
        error: ErrorSpec,
        step: StepPolicy<f64>,
        average: bool,
    },
    StochasticGd {
        step: StepPolicy<f64>,
        average: bool,
    },
    HybridQn {
        schedule: ScheduleSpec,
        sampling: SampleMode,
        nested: bool,
        eta: f64,
        memory: usize,
    },
    DeterministicQn {
        line_search: LineSearchKind<f64>,
        memory: usize,
    },
}

/// One `[method.<label>]` block. Step-size methods carry one entry in
/// `steps` per configured step size.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodConfig {
    pub label: String,
    kind: MethodKind,
    pub steps: Vec<Option<f64>>,
}

impl MethodConfig {
    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            MethodKind::ControlledErrorGd { .. } => "controlled-error-gd",
            MethodKind::StochasticGd { .. } => "stochastic-gd",
            MethodKind::HybridQn { .. } => "hybrid-qn",
            MethodKind::DeterministicQn { .. } => "deterministic-qn",
        }
    }

    pub fn is_stochastic(&self) -> bool {
        matches!(self.kind, MethodKind::StochasticGd { .. })
    }

    /// Concrete method for one configured step (or `step` overriding it with
    /// a constant step when given).
    pub fn method(&self, step: Option<f64>, c: &ProblemConstants<f64>) -> Result<Method<f64>> {
        let key = format!("method.{}.schedule", self.label);
        let with_step = |policy: StepPolicy<f64>| match (policy, step) {
            (StepPolicy::Decaying(_), Some(a)) => StepPolicy::Decaying(a),
            (_, Some(a)) => StepPolicy::Constant(a),
            (p, None) => p,
        };
        Ok(match self.kind {
            MethodKind::ControlledErrorGd {
                error,
                step,
                average,
            } => Method::ControlledErrorGd {
                error: match error {
                    ErrorSpec::Injected { sequence, mode } => {
                        ErrorSource::Injected { sequence, mode }
                    }
                    ErrorSpec::Sampled {
                        schedule,
                        mode,
                        nested,
                    } => ErrorSource::Sampled {
                        schedule: schedule.resolve(&key, c)?,
                        mode,
                        nested,
                    },
                },
                step: with_step(step),
                average,
            },
            MethodKind::StochasticGd { step, average } => Method::StochasticGd {
                step: with_step(step),
                average,
            },
            MethodKind::HybridQn {
                schedule,
                sampling,
                nested,
                eta,
                memory,
            } => Method::HybridQn {
                schedule: schedule.resolve(&key, c)?,
                sampling,
                nested,
                eta,
                memory,
            },
            MethodKind::DeterministicQn {
                line_search,
                memory,
            } => Method::DeterministicQn {
                line_search,
                memory,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub budget: Budget,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub trace: TracePolicy,
    pub methods: Vec<MethodConfig>,
}

impl ExperimentConfig {
    /// Reads and validates a config file. Relative data paths resolve
    /// against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_raw(&RawConfig::parse(&text)?, base)
    }

    pub fn from_raw(raw: &RawConfig, base: &Path) -> Result<Self> {
        for (name, _) in &raw.sections {
            if name != "problem" && name != "run" && !name.starts_with("method.") {
                return Err(config_error(name.as_str(), "unknown section"));
            }
        }
        let problem = raw
            .section("problem")
            .ok_or_else(|| config_error("problem", "section is missing"))
            .and_then(|s| parse_problem(s, base))?;
        let run = raw
            .section("run")
            .ok_or_else(|| config_error("run", "section is missing"))?;
        let budget = Budget {
            max_iters: run.count("iterations")?,
            max_passes: run.number("passes")?,
        };
        budget.validate().map_err(|e| {
            config_error(
                "run.passes",
                format!("{e} (set run.passes and/or run.iterations)"),
            )
        })?;
        let seeds = run
            .list::<u64>("seeds", "nonnegative integers")?
            .unwrap_or_else(|| vec![1]);
        if seeds.is_empty() {
            return Err(config_error("run.seeds", "needs at least one seed"));
        }
        let out = PathBuf::from(run.str("out").unwrap_or("results"));
        let trace = run
            .choice(
                "trace",
                &[
                    ("pass-boundary", TracePolicy::PassBoundary),
                    ("every-iteration", TracePolicy::EveryIteration),
                    ("never", TracePolicy::Never),
                ],
            )?
            .unwrap_or_default();
        run.finish()?;

        let methods = raw
            .sections
            .iter()
            .filter_map(|(name, entries)| {
                name.strip_prefix("method.")
                    .map(|label| (name, label, entries))
            })
            .map(|(name, label, entries)| parse_method(Section::new(name, entries), label))
            .collect::<Result<Vec<_>>>()?;
        if methods.is_empty() {
            return Err(config_error(
                "method",
                "at least one [method.<label>] section is required",
            ));
        }
        Ok(ExperimentConfig {
            problem,
            budget,
            seeds,
            out,
            trace,
            methods,
        })
    }
}

fn parse_problem(s: Section<'_>, base: &Path) -> Result<ProblemConfig> {
    let model = s
        .choice(
            "model",
            &[
                ("binary-logistic", Model::BinaryLogistic),
                ("multinomial", Model::Multinomial),
                ("least-squares", Model::LeastSquares),
                ("quadratic", Model::Quadratic),
            ],
        )?
        .ok_or_else(|| config_error("problem.model", "required key is missing"))?;
    let lambda = s.number("lambda")?.unwrap_or(0.0);
    if lambda < 0.0 {
        return Err(config_error("problem.lambda", "must be nonnegative"));
    }
    let classes = s.count("classes")?;
    if classes.is_some_and(|c| c < 2) {
        return Err(config_error(
            "problem.classes",
            "needs at least two classes",
        ));
    }
    let source = match s.required_str("source")? {
        "file" => {
            let path = base.join(s.required_str("path")?);
            if !path.is_file() {
                return Err(config_error(
                    "problem.path",
                    format!("dataset not found: {}", path.display()),
                ));
            }
            if model == Model::Quadratic {
                return Err(config_error(
                    "problem.model",
                    "quadratic requires source = synthetic",
                ));
            }
            Source::File {
                path,
                n_features: s.count("n_features")?,
            }
        }
        "synthetic" => {
            let p = SyntheticParams {
                m: s.count("m")?.unwrap_or(1000),
                n: s.count("n")?.unwrap_or(20),
                seed: s.parse("data_seed", "a nonnegative integer")?.unwrap_or(1),
                sparsity: s.number("sparsity")?.unwrap_or(1.0),
                separation: s.number("separation")?.unwrap_or(4.0),
                scale_first: s.number("column_scale_first")?.unwrap_or(1.0),
                scale_last: s.number("column_scale_last")?.unwrap_or(1.0),
                mu: s.number("mu")?.unwrap_or(0.5),
                lipschitz: s.number("lipschitz")?.unwrap_or(2.0),
                spread: s.number("spread")?.unwrap_or(1.0),
            };
            for (key, ok) in [
                ("m", p.m > 0),
                ("n", p.n > 0),
                ("sparsity", p.sparsity > 0.0 && p.sparsity <= 1.0),
                ("separation", p.separation >= 0.0),
                ("column_scale_first", p.scale_first > 0.0),
                ("column_scale_last", p.scale_last > 0.0),
                ("mu", p.mu > 0.0 && p.mu <= p.lipschitz),
                ("spread", p.spread >= 0.0),
            ] {
                if !ok {
                    return Err(config_error(format!("problem.{key}"), "value out of range"));
                }
            }
            Source::Synthetic(p)
        }
        other => {
            return Err(config_error(
                "problem.source",
                format!("unknown value \"{other}\"; expected one of file, synthetic"),
            ))
        }
    };
    let optimum =
        match s.str("f_star").unwrap_or("reference") {
            "reference" => Optimum::Reference {
                iterations: s.count("reference_iterations")?.unwrap_or(2000),
            },
            "none" => Optimum::Unknown,
            v => Optimum::Value(v.parse().ok().filter(|f: &f64| f.is_finite()).ok_or_else(
                || {
                    config_error(
                        "problem.f_star",
                        format!("expected reference, none or a number, got \"{v}\""),
                    )
                },
            )?),
        };
    s.finish()?;
    Ok(ProblemConfig {
        model,
        source,
        lambda,
        classes,
        optimum,
    })
}

const SAMPLING: [(&str, SampleMode); 2] = [
    ("uniform", SampleMode::UniformWithoutReplacement),
    ("prefix", SampleMode::DeterministicPrefix),
];

fn parse_schedule(s: &Section<'_>) -> Result<ScheduleSpec> {
    let kind = s.str("schedule").unwrap_or("paper-linear");
    let initial = s.count("initial")?.unwrap_or(1);
    let gamma = || -> Result<f64> {
        let g = s.required_number("gamma")?;
        if !(g > 0.0 && g < 1.0) {
            return Err(config_error(s.path("gamma"), "must lie in (0, 1)"));
        }
        Ok(g)
    };
    let spec = match kind {
        "paper-linear" => ScheduleSpec::Ready(Schedule::PaperLinear { initial }),
        "add-one" => ScheduleSpec::Ready(Schedule::AddOne { initial }),
        "constant" => ScheduleSpec::Ready(Schedule::Constant {
            size: s.count("size")?.ok_or_else(|| config_error(s.path("size"), "required key is missing"))?,
        }),
        "geometric-det" => ScheduleSpec::Ready(Schedule::GeometricDeterministic { gamma: gamma()? }),
        "geometric-stoch" => ScheduleSpec::Ready(Schedule::GeometricStochastic { gamma: gamma()? }),
        "strong-rate" => ScheduleSpec::StrongRate {
            rho: s.required_number("rho")?,
            beta1: s.required_number("beta1")?,
            beta2: s.required_number("beta2")?,
        },
        other => {
            return Err(config_error(
                s.path("schedule"),
                format!(
                    "unknown value \"{other}\"; expected one of paper-linear, add-one, constant, geometric-det, geometric-stoch, strong-rate"
                ),
            ))
        }
    };
    if let ScheduleSpec::Ready(schedule) = spec {
        schedule
            .validate()
            .map_err(|e| config_error(s.path("schedule"), e.to_string()))?;
    }
    Ok(spec)
}

/// Step rule plus the list of step sizes (`alpha`, comma-separated).
fn parse_step(s: &Section<'_>, default: &str) -> Result<(StepPolicy<f64>, Vec<Option<f64>>)> {
    let rule = s.str("step").unwrap_or(default);
    let alphas = || -> Result<Vec<f64>> {
        let list = s
            .list::<f64>("alpha", "numbers")?
            .ok_or_else(|| config_error(s.path("alpha"), "required key is missing"))?;
        if list.is_empty() || list.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
            return Err(config_error(
                s.path("alpha"),
                "step sizes must be positive and finite",
            ));
        }
        Ok(list)
    };
    match rule {
        "inverse-lipschitz" => Ok((StepPolicy::InverseLipschitz, vec![None])),
        "constant" => {
            let a = alphas()?;
            Ok((
                StepPolicy::Constant(a[0]),
                a.into_iter().map(Some).collect(),
            ))
        }
        "decaying" => {
            let a = alphas()?;
            Ok((
                StepPolicy::Decaying(a[0]),
                a.into_iter().map(Some).collect(),
            ))
        }
        other => Err(config_error(
            s.path("step"),
            format!(
                "unknown value \"{other}\"; expected one of inverse-lipschitz, constant, decaying"
            ),
        )),
    }
}

fn parse_noise(s: &Section<'_>) -> Result<NoiseBoundSequence<f64>> {
    let b0 = || s.required_number("b0");
    let seq = match s.required_str("noise")? {
        "geometric" => NoiseBoundSequence::Geometric {
            b0: b0()?,
            gamma: s.required_number("gamma")?,
        },
        "polynomial" => NoiseBoundSequence::Polynomial {
            b0: b0()?,
            power: s.required_number("power")?,
        },
        "summable" => NoiseBoundSequence::Summable {
            b0: b0()?,
            power: s.required_number("power")?,
        },
        "strong-rate" => NoiseBoundSequence::StrongRate {
            rho: s.required_number("rho")?,
            pi: s
                .choice(
                    "pi",
                    &[
                        ("oracle", PiSource::Oracle),
                        ("gradient", PiSource::GradientHeuristic),
                        ("step", PiSource::StepHeuristic),
                    ],
                )?
                .unwrap_or(PiSource::Oracle),
        },
        other => {
            return Err(config_error(
                s.path("noise"),
                format!("unknown value \"{other}\"; expected one of geometric, polynomial, summable, strong-rate"),
            ))
        }
    };
    seq.validate()
        .map_err(|e| config_error(s.path("noise"), e.to_string()))?;
    Ok(seq)
}

fn parse_method(s: Section<'_>, label: &str) -> Result<MethodConfig> {
    if label.is_empty()
        || !label
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
    {
        return Err(config_error(
            s.name,
            "method labels may use only letters, digits, '-' and '_'",
        ));
    }
    let memory = || -> Result<usize> {
        match s.count("memory")?.unwrap_or(DEFAULT_MEMORY) {
            0 => Err(config_error(s.path("memory"), "must be at least 1")),
            m => Ok(m),
        }
    };
    let mut steps = vec![None];
    let kind = match s.required_str("kind")? {
        "hybrid-qn" => MethodKind::HybridQn {
            schedule: parse_schedule(&s)?,
            sampling: s.choice("sampling", &SAMPLING)?.unwrap_or(SampleMode::UniformWithoutReplacement),
            nested: s.flag("nested")?.unwrap_or(false),
            eta: positive(&s, "eta", ARMIJO_ETA)?,
            memory: memory()?,
        },
        "deterministic-qn" => MethodKind::DeterministicQn {
            line_search: match s.str("line_search").unwrap_or("wolfe") {
                "wolfe" => {
                    let (c1, c2) = (positive(&s, "c1", WOLFE_C1)?, positive(&s, "c2", WOLFE_C2)?);
                    if !(c1 < c2 && c2 < 1.0) {
                        return Err(config_error(s.path("c2"), "need 0 < c1 < c2 < 1"));
                    }
                    LineSearchKind::Wolfe { c1, c2 }
                }
                "armijo" => LineSearchKind::Armijo {
                    eta: positive(&s, "eta", ARMIJO_ETA)?,
                },
                other => {
                    return Err(config_error(
                        s.path("line_search"),
                        format!("unknown value \"{other}\"; expected one of wolfe, armijo"),
                    ))
                }
            },
            memory: memory()?,
        },
        "stochastic-gd" => {
            let (step, list) = parse_step(&s, "constant")?;
            steps = list;
            MethodKind::StochasticGd {
                step,
                average: s.flag("average")?.unwrap_or(false),
            }
        }
        "controlled-error-gd" => {
            let error = match s.str("error").unwrap_or("sampled") {
                "injected" => ErrorSpec::Injected {
                    sequence: parse_noise(&s)?,
                    mode: s
                        .choice(
                            "noise_mode",
                            &[
                                ("exact-norm", NoiseMode::ExactNorm),
                                ("expectation", NoiseMode::Expectation),
                                ("biased", NoiseMode::Biased),
                            ],
                        )?
                        .unwrap_or(NoiseMode::ExactNorm),
                },
                "sampled" => ErrorSpec::Sampled {
                    schedule: parse_schedule(&s)?,
                    mode: s.choice("sampling", &SAMPLING)?.unwrap_or(SampleMode::UniformWithoutReplacement),
                    nested: s.flag("nested")?.unwrap_or(false),
                },
                other => {
                    return Err(config_error(
                        s.path("error"),
                        format!("unknown value \"{other}\"; expected one of injected, sampled"),
                    ))
                }
            };
            let (step, list) = parse_step(&s, "inverse-lipschitz")?;
            steps = list;
            MethodKind::ControlledErrorGd {
                error,
                step,
                average: s.flag("average")?.unwrap_or(false),
            }
        }
        other => {
            return Err(config_error(
                s.path("kind"),
                format!("unknown value \"{other}\"; expected one of hybrid-qn, deterministic-qn, stochastic-gd, controlled-error-gd"),
            ))
        }
    };
    s.finish()?;
    Ok(MethodConfig {
        label: label.to_string(),
        kind,
        steps,
    })
}

fn positive(s: &Section<'_>, key: &str, default: f64) -> Result<f64> {
    let v = s.number(key)?.unwrap_or(default);
    if v > 0.0 {
        Ok(v)
    } else {
        Err(config_error(s.path(key), "must be positive"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "
# comment
[problem]
model = quadratic
source = synthetic
m = 8
n = 4

[run]
passes = 5
seeds = 1, 2

[method.lbfgs]
kind = deterministic-qn
";

    fn load(text: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::from_raw(&RawConfig::parse(text)?, Path::new("."))
    }

    fn error_key(text: &str) -> String {
        match load(text) {
            Err(CliError::Config { key, .. }) => key,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = load(MINIMAL).unwrap();
        assert_eq!(cfg.seeds, vec![1, 2]);
        assert_eq!(cfg.budget, Budget::passes(5.0));
        assert_eq!(cfg.trace, TracePolicy::PassBoundary);
        assert_eq!(cfg.out, PathBuf::from("results"));
        assert_eq!(cfg.methods.len(), 1);
        assert_eq!(cfg.methods[0].label, "lbfgs");
        let method = cfg.methods[0]
            .method(None, &ProblemConstants::default())
            .unwrap();
        assert_eq!(
            method,
            Method::DeterministicQn {
                line_search: LineSearchKind::Wolfe {
                    c1: WOLFE_C1,
                    c2: WOLFE_C2
                },
                memory: DEFAULT_MEMORY
            }
        );
    }

    #[test]
    fn step_lists_expand() {
        let text = format!("{MINIMAL}\n[method.sgd]\nkind = stochastic-gd\nalpha = 1, 0.1, 1e-3\n");
        let cfg = load(&text).unwrap();
        let sgd = &cfg.methods[1];
        assert!(sgd.is_stochastic());
        assert_eq!(sgd.steps, vec![Some(1.0), Some(0.1), Some(1e-3)]);
        let m = sgd.method(Some(0.1), &ProblemConstants::default()).unwrap();
        assert_eq!(
            m,
            Method::StochasticGd {
                step: StepPolicy::Constant(0.1),
                average: false
            }
        );
    }

    #[test]
    fn errors_name_the_key_path() {
        assert_eq!(
            error_key(&MINIMAL.replace("passes = 5", "passes = five")),
            "run.passes"
        );
        assert_eq!(error_key(&MINIMAL.replace("passes = 5", "")), "run.passes");
        assert_eq!(
            error_key(&MINIMAL.replace("n = 4", "n = 4\ncolour = red")),
            "problem.colour"
        );
        assert_eq!(
            error_key(&MINIMAL.replace("deterministic-qn", "newton")),
            "method.lbfgs.kind"
        );
        assert_eq!(
            error_key(&MINIMAL.replace("model = quadratic", "")),
            "problem.model"
        );
        assert_eq!(
            error_key(&format!(
                "{MINIMAL}\n[method.h]\nkind = hybrid-qn\nschedule = geometric-det\ngamma = 1.5\n"
            )),
            "method.h.gamma"
        );
        assert_eq!(
            error_key(&format!("{MINIMAL}\n[method.s]\nkind = stochastic-gd\n")),
            "method.s.alpha"
        );
        assert_eq!(error_key(&format!("{MINIMAL}\n[extra]\n")), "extra");
    }

    #[test]
    fn missing_dataset_is_reported_on_path_key() {
        let text = MINIMAL
            .replace("model = quadratic", "model = binary-logistic")
            .replace(
                "source = synthetic",
                "source = file\npath = /nonexistent/data.svm",
            );
        assert_eq!(error_key(&text), "problem.path");
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(RawConfig::parse("key = value").is_err());
        assert!(RawConfig::parse("[a]\nnot a pair").is_err());
        assert!(RawConfig::parse("[a]\nx = 1\nx = 2").is_err());
        assert!(RawConfig::parse("[a]\n[a]").is_err());
        assert!(RawConfig::parse("[]").is_err());
    }

    #[test]
    fn strong_rate_schedule_needs_constants() {
        let text = format!("{MINIMAL}\n[method.h]\nkind = hybrid-qn\nschedule = strong-rate\nrho = 0.1\nbeta1 = 1\nbeta2 = 2\n");
        let cfg = load(&text).unwrap();
        assert!(cfg.methods[1]
            .method(None, &ProblemConstants::default())
            .is_err());
        let c = ProblemConstants {
            mu: Some(0.5),
            lipschitz: Some(2.0),
            ..Default::default()
        };
        assert!(matches!(
            cfg.methods[1].method(None, &c).unwrap(),
            Method::HybridQn {
                schedule: Schedule::StrongRate(_),
                ..
            }
        ));
    }
}
