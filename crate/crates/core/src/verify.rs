//! Numerical verification of the convergence guarantees: each suite runs the
//! controlled-error driver (or the sampling formulas) on problems with a known
//! optimum and reports the worst margin of every inequality it checks.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{invalid, Result};
use crate::linalg::{axpy, norm, norm_sq, scale};
use crate::optimizers::{
    run_controlled_error_gd, Budget, ControlledErrorConfig, ErrorSource, StepPolicy, TracePolicy,
};
use crate::problems::{log_spaced, SumProblem, SyntheticQuadratic};
use crate::rng::keyed_rng;
use crate::sampling::{
    deterministic_bound, enumerate_mean_residual_sq, expected_residual_sq, sample_variance,
};
use crate::theory::{
    fit_linear_rate, lemma_bound, sublinear_constant, BetaCertificate, NoiseBoundSequence,
    NoiseMode, PiSource,
};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Lemma,
    Weak,
    Strong,
    StrongExpected,
    Sublinear,
    Sampling,
}

impl Suite {
    pub const ALL: [Suite; 6] = [
        Suite::Lemma,
        Suite::Weak,
        Suite::Strong,
        Suite::StrongExpected,
        Suite::Sublinear,
        Suite::Sampling,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Suite::Lemma => "lemma",
            Suite::Weak => "weak",
            Suite::Strong => "strong",
            Suite::StrongExpected => "strong-expected",
            Suite::Sublinear => "sublinear",
            Suite::Sampling => "sampling",
        }
    }
}

impl FromStr for Suite {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.name() == s)
            .ok_or_else(|| invalid(format!("unknown suite \"{s}\"")))
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Outcome of one inequality. `margin` is the worst value of
/// `lhs − rhs` normalized by the check's scale; the check passes when it does
/// not exceed the allowed tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub margin: f64,
    /// Iteration (or probe) where the worst margin occurred.
    pub at: usize,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: Suite,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Tracks the worst normalized violation over a sequence of checks.
struct Worst {
    margin: f64,
    at: usize,
    detail: String,
}

impl Worst {
    fn new() -> Self {
        Worst {
            margin: f64::NEG_INFINITY,
            at: 0,
            detail: String::new(),
        }
    }

    fn update(&mut self, margin: f64, at: usize, detail: impl FnOnce() -> String) {
        if margin > self.margin || margin.is_nan() {
            self.margin = margin;
            self.at = at;
            self.detail = detail();
        }
    }

    fn finish(self, name: impl Into<String>, tolerance: f64) -> Check {
        Check {
            name: name.into(),
            passed: self.margin <= tolerance,
            margin: self.margin,
            at: self.at,
            detail: self.detail,
        }
    }
}

/// Strongly convex quadratic used by the rate suites: `n = 10`, curvatures
/// log-spaced in `[μ, L] = [0.5, 2]`, minimizer at the origin.
pub fn default_quadratic() -> SyntheticQuadratic<f64> {
    SyntheticQuadratic::centered(log_spaced(10, 0.5, 2.0).expect("valid range"), 4)
        .expect("valid quadratic")
}

/// Convex quadratic with one zero-curvature direction and the remaining
/// curvatures log-spaced in `[1e-4, 1]`.
pub fn flat_direction_quadratic() -> SyntheticQuadratic<f64> {
    let mut d = vec![0.0];
    d.extend(log_spaced(9, 1e-4, 1.0).expect("valid range"));
    SyntheticQuadratic::centered(d, 4).expect("valid quadratic")
}

fn start_point(n: usize) -> Vec<f64> {
    (0..n).map(|j| 1.0 + 0.1 * j as f64).collect()
}

fn injected(
    sequence: NoiseBoundSequence<f64>,
    mode: NoiseMode,
    iters: usize,
    seed: u64,
) -> ControlledErrorConfig<f64> {
    ControlledErrorConfig {
        error: ErrorSource::Injected { sequence, mode },
        step: StepPolicy::InverseLipschitz,
        budget: Budget::iterations(iters),
        seed,
        trace: TracePolicy::Never,
        average: false,
    }
}

pub const RELATIVE_TOLERANCE: f64 = 1e-12;

/// `gap_{k+1} ≤ (1 − μ/L)·gap_k + ‖e_k‖²/(2L)` at every iteration under
/// several noise laws.
pub fn lemma_suite(seed: u64, iters: usize) -> Result<SuiteReport> {
    let q = default_quadratic();
    let (mu, l) = (0.5, 2.0);
    let x0 = start_point(10);
    let cases = [
        (
            "polynomial exact-norm",
            NoiseBoundSequence::Polynomial {
                b0: 1.0,
                power: 1.0,
            },
            NoiseMode::ExactNorm,
        ),
        (
            "geometric expectation",
            NoiseBoundSequence::Geometric {
                b0: 4.0,
                gamma: 0.95,
            },
            NoiseMode::Expectation,
        ),
        (
            "constant biased",
            NoiseBoundSequence::Geometric {
                b0: 0.5,
                gamma: 1.0,
            },
            NoiseMode::Biased,
        ),
    ];
    let mut checks = Vec::new();
    for (label, seq, mode) in cases {
        let run = run_controlled_error_gd(&q, &x0, &injected(seq, mode, iters, seed))?;
        let mut worst = Worst::new();
        for k in 0..iters {
            let bound = lemma_bound(run.gaps[k], run.err_sq[k], mu, l);
            let margin = (run.gaps[k + 1] - bound) / bound;
            worst.update(margin, k, || {
                format!("gap_next={:.6e} bound={:.6e}", run.gaps[k + 1], bound)
            });
        }
        checks.push(worst.finish(format!("lemma bound, {label}"), RELATIVE_TOLERANCE));
    }
    Ok(SuiteReport {
        suite: Suite::Lemma,
        checks,
    })
}

/// Fitted rate over the last half of the run against `max{γ, 1 − μ/L} + 0.02`.
pub fn weak_suite(seed: u64, iters: usize) -> Result<SuiteReport> {
    let q = default_quadratic();
    let x0 = start_point(10);
    let contraction = 1.0 - 0.5 / 2.0;
    let mut checks = Vec::new();
    for gamma in [0.7, 0.9] {
        let seq = NoiseBoundSequence::Geometric { b0: 0.25, gamma };
        let run =
            run_controlled_error_gd(&q, &x0, &injected(seq, NoiseMode::ExactNorm, iters, seed))?;
        let fit = fit_linear_rate(&run.gaps, iters / 2..iters + 1)?;
        let limit = gamma.max(contraction) + 0.02;
        checks.push(Check {
            name: format!("weak rate, gamma={gamma}"),
            passed: fit.sigma_hat <= limit,
            margin: fit.sigma_hat - limit,
            at: iters,
            detail: format!(
                "sigma_hat={:.6} limit={limit:.6} residual={:.3e}",
                fit.sigma_hat, fit.residual
            ),
        });
    }
    Ok(SuiteReport {
        suite: Suite::Weak,
        checks,
    })
}

/// Per-iteration contraction `gap_{k+1} ≤ (1 − ρ)·gap_k` with the noise level
/// set from the true gap, `ρ = μ/(2L)`.
pub fn strong_suite(seed: u64, iters: usize, seeds: usize) -> Result<SuiteReport> {
    let q = default_quadratic();
    let x0 = start_point(10);
    let rho = 0.5 * 0.5 / 2.0;
    let seq = NoiseBoundSequence::StrongRate {
        rho,
        pi: PiSource::Oracle,
    };
    let mut worst = Worst::new();
    let mut max_ratio = 0.0f64;
    for s in 0..seeds as u64 {
        let run = run_controlled_error_gd(
            &q,
            &x0,
            &injected(seq, NoiseMode::ExactNorm, iters, seed + s),
        )?;
        for k in 0..iters {
            let rhs = (1.0 - rho) * run.gaps[k];
            max_ratio = max_ratio.max(run.gaps[k + 1] / run.gaps[k]);
            worst.update((run.gaps[k + 1] - rhs) / rhs, k, || {
                format!(
                    "seed={} gap={:.6e} gap_next={:.6e}",
                    seed + s,
                    run.gaps[k],
                    run.gaps[k + 1]
                )
            });
        }
    }
    let mut check = worst.finish("strong rate, oracle pi", RELATIVE_TOLERANCE);
    check.detail = format!(
        "max ratio {max_ratio:.6} vs 1-rho {:.6}; {}",
        1.0 - rho,
        check.detail
    );
    Ok(SuiteReport {
        suite: Suite::Strong,
        checks: vec![check],
    })
}

/// Expected contraction across seeded runs with expectation-mode noise: the
/// mean of `gap_{k+1} − (1 − ρ)·gap_k` over seeds stays within three standard
/// errors of zero (or below).
pub fn strong_expected_suite(seed: u64, iters: usize, seeds: usize) -> Result<SuiteReport> {
    let q = default_quadratic();
    let x0 = start_point(10);
    let rho = 0.5 * 0.5 / 2.0;
    let seq = NoiseBoundSequence::StrongRate {
        rho,
        pi: PiSource::Oracle,
    };
    let runs: Vec<Vec<f64>> = (0..seeds as u64)
        .map(|s| {
            run_controlled_error_gd(
                &q,
                &x0,
                &injected(seq, NoiseMode::Expectation, iters, seed + s),
            )
            .map(|r| r.gaps)
        })
        .collect::<Result<_>>()?;
    let (worst, worst_contraction) = expected_contraction(&runs, rho);
    let mut check = worst.finish("strong expected rate", 0.0);
    check.detail = format!(
        "worst mean contraction {worst_contraction:.6} vs 1-rho {:.6}; {}",
        1.0 - rho,
        check.detail
    );
    Ok(SuiteReport {
        suite: Suite::StrongExpected,
        checks: vec![check],
    })
}

/// Margin `(mean(d) − 3·SE(d))/mean(gap_k)` per iteration, where
/// `d = gap_{k+1} − (1 − ρ)·gap_k` across runs; also the worst ratio of mean
/// gaps.
fn expected_contraction(runs: &[Vec<f64>], rho: f64) -> (Worst, f64) {
    let iters = runs
        .iter()
        .map(|g| g.len())
        .min()
        .unwrap_or(0)
        .saturating_sub(1);
    let count = runs.len() as f64;
    let mut worst = Worst::new();
    let mut worst_ratio = 0.0f64;
    for k in 0..iters {
        let d: Vec<f64> = runs.iter().map(|g| g[k + 1] - (1.0 - rho) * g[k]).collect();
        let mean = d.iter().sum::<f64>() / count;
        let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (count - 1.0);
        let se = (var / count).sqrt();
        let mean_gap = runs.iter().map(|g| g[k]).sum::<f64>() / count;
        let mean_next = runs.iter().map(|g| g[k + 1]).sum::<f64>() / count;
        worst_ratio = worst_ratio.max(mean_next / mean_gap);
        worst.update((mean - 3.0 * se) / mean_gap, k, || {
            format!("mean d={mean:.6e} se={se:.6e} mean gap={mean_gap:.6e}")
        });
    }
    (worst, worst_ratio)
}

/// Running-average gaps with summable noise `‖e_k‖ = 1/(k+1)²`: the constant
/// `sup_{10 ≤ k ≤ K} k·gap(x̄_k)` is finite and changes by less than 20% as
/// `K` runs over the last decade of the window.
pub fn sublinear_suite(seed: u64, iters: usize) -> Result<SuiteReport> {
    let q = flat_direction_quadratic();
    let x0 = start_point(10);
    let mut cfg = injected(
        NoiseBoundSequence::Summable {
            b0: 1.0,
            power: 2.0,
        },
        NoiseMode::ExactNorm,
        iters,
        seed,
    );
    cfg.average = true;
    let run = run_controlled_error_gd(&q, &x0, &cfg)?;
    let (c_decade, c_full) = (
        sublinear_constant(&run.avg_gaps, 10..iters / 10 + 1),
        sublinear_constant(&run.avg_gaps, 10..iters + 1),
    );
    let variation = (c_full - c_decade) / c_full;
    Ok(SuiteReport {
        suite: Suite::Sublinear,
        checks: vec![Check {
            name: "sublinear constant".into(),
            passed: c_full.is_finite() && variation < 0.2,
            margin: variation - 0.2,
            at: iters,
            detail: format!(
                "sup k*gap over [10,{}]={c_decade:.6e}, over [10,{iters}]={c_full:.6e}",
                iters / 10
            ),
        }],
    })
}

/// Quadratic with `m` distinct random terms for the sampling identity.
pub fn sampling_quadratic(m: usize, seed: u64) -> SyntheticQuadratic<f64> {
    SyntheticQuadratic::random(3, m, 0.5, 2.0, 1.0, seed).expect("valid quadratic")
}

/// Enumerated mean of `‖e‖²` over all `C(M, b)` samples against
/// `((M − b)/M)·S/b` for `M ∈ {2, …, 8}` and every `b`.
pub fn sampling_suite(seed: u64) -> Result<SuiteReport> {
    let mut worst = Worst::new();
    let mut case = 0;
    for m in 2..=8usize {
        let q = sampling_quadratic(m, seed + m as u64);
        let mut rng = keyed_rng(seed, m as u64);
        let x: Vec<f64> = (0..3).map(|_| 4.0 * rng.random::<f64>() - 2.0).collect();
        let s = sample_variance(&q, &x)?;
        for b in 1..=m {
            let enumerated = enumerate_mean_residual_sq(&q, &x, b)?;
            let formula = expected_residual_sq(s, m, b);
            let scale = formula.abs().max(s * 1e-3).max(f64::MIN_POSITIVE);
            worst.update((enumerated - formula).abs() / scale, case, || {
                format!("M={m} b={b} enumerated={enumerated:.12e} formula={formula:.12e}")
            });
            case += 1;
        }
    }
    Ok(SuiteReport {
        suite: Suite::Sampling,
        checks: vec![worst.finish("without-replacement identity", 1e-10)],
    })
}

/// Runs `suite` with its default sizes.
pub fn run_suite(suite: Suite, seed: u64) -> Result<SuiteReport> {
    match suite {
        Suite::Lemma => lemma_suite(seed, 500),
        Suite::Weak => weak_suite(seed, 500),
        Suite::Strong => strong_suite(seed, 300, 5),
        Suite::StrongExpected => strong_expected_suite(seed, 100, 200),
        Suite::Sublinear => sublinear_suite(seed, 1000),
        Suite::Sampling => sampling_suite(seed),
    }
}

/// Effective term gradients `∇f_i(x) + λx`, whose mean is `∇f(x)`.
pub fn effective_term_gradients<T, P>(p: &P, x: &[T]) -> Vec<Vec<T>>
where
    T: Scalar,
    P: SumProblem<T> + ?Sized,
{
    let lambda = p.lambda();
    (0..p.num_terms())
        .map(|i| {
            let mut g = p.term_gradient(i, x);
            axpy(lambda, x, &mut g);
            g
        })
        .collect()
}

/// Worst ratios `‖e‖²/bound` for the deterministic residual bound at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubsetBoundCheck {
    /// Over random subsets and a greedy adversarial chain, every `b < M`.
    pub sampled_ratio: f64,
    /// `max_𝓑 (c₁Σ_𝓑‖∇f_i‖ + c₂Σ_𝓝‖∇f_i‖)² / bound`, an upper bound on the
    /// ratio over all subsets.
    pub all_subsets_ratio: f64,
    pub subsets_checked: usize,
    /// Largest `‖e‖` seen at `b = M`, where the bound is zero.
    pub full_batch_residual: f64,
}

/// Checks `‖e_𝓑‖² ≤ 4((M−b)/M)²(β₁ + 2β₂L·gap)` at `x`.
pub fn check_subset_bound<P>(
    p: &P,
    x: &[f64],
    cert: BetaCertificate<f64>,
    lipschitz: f64,
    gap: f64,
    random_per_size: usize,
    seed: u64,
) -> SubsetBoundCheck
where
    P: SumProblem<f64> + ?Sized,
{
    let m = p.num_terms();
    let grads = effective_term_gradients(p, x);
    let norms: Vec<f64> = grads.iter().map(|g| norm(g)).collect();
    let n = x.len();
    let mut total = vec![0.0; n];
    for g in &grads {
        axpy(1.0, g, &mut total);
    }
    let mut mean = total.clone();
    scale(1.0 / m as f64, &mut mean);
    let residual_sq = |idx: &[usize]| {
        let mut s = vec![0.0; n];
        for &i in idx {
            axpy(1.0, &grads[i], &mut s);
        }
        scale(1.0 / idx.len() as f64, &mut s);
        axpy(-1.0, &mean, &mut s);
        norm_sq(&s)
    };

    let mut sampled_ratio = 0.0f64;
    let mut all_subsets_ratio = 0.0f64;
    let mut subsets_checked = 0;
    let mut rng = keyed_rng(seed, 0);
    let mut sorted_norms = norms.clone();
    sorted_norms.sort_by(f64::total_cmp);
    let norm_total: f64 = norms.iter().sum();

    for b in 1..m {
        let bound = deterministic_bound(m, b, cert.beta1, cert.beta2, lipschitz, gap);
        for _ in 0..random_per_size {
            let idx = rand::seq::index::sample(&mut rng, m, b).into_vec();
            sampled_ratio = sampled_ratio.max(residual_sq(&idx) / bound);
            subsets_checked += 1;
        }
        // c₂·Σ_all + (c₁ − c₂)·Σ_𝓑 is maximized by the b largest norms when
        // c₁ ≥ c₂ and by the b smallest otherwise
        let (mf, bf) = (m as f64, b as f64);
        let c1 = (mf - bf) / (mf * bf);
        let c2 = 1.0 / mf;
        let chosen: f64 = if c1 >= c2 {
            sorted_norms[m - b..].iter().sum()
        } else {
            sorted_norms[..b].iter().sum()
        };
        let triangle = c2 * norm_total + (c1 - c2) * chosen;
        all_subsets_ratio = all_subsets_ratio.max(triangle * triangle / bound);
    }

    // greedy chain: grow the subset by the index that maximizes ‖e‖
    let mut chosen: Vec<usize> = Vec::new();
    let mut remaining: Vec<usize> = (0..m).collect();
    while chosen.len() + 1 < m {
        let (pos, value) = remaining
            .iter()
            .enumerate()
            .map(|(pos, &i)| {
                let mut trial = chosen.clone();
                trial.push(i);
                (pos, residual_sq(&trial))
            })
            .fold((0, f64::NEG_INFINITY), |best, cur| {
                if cur.1 > best.1 {
                    cur
                } else {
                    best
                }
            });
        chosen.push(remaining.remove(pos));
        let bound = deterministic_bound(m, chosen.len(), cert.beta1, cert.beta2, lipschitz, gap);
        sampled_ratio = sampled_ratio.max(value / bound);
        subsets_checked += 1;
    }
    let all: Vec<usize> = (0..m).collect();
    SubsetBoundCheck {
        sampled_ratio,
        all_subsets_ratio,
        subsets_checked,
        full_batch_residual: residual_sq(&all).sqrt(),
    }
}
