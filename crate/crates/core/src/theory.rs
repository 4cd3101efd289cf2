//! Error-bound machinery for gradient descent with inexact gradients:
//! per-iteration bounds, noise-bound sequences, lower bounds on the
//! optimality gap, controlled noise injection and rate estimation.

use std::ops::Range;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::linalg::norm_sq;
use crate::problems::{all_indices, check_dim, SumProblem};
use crate::rng::keyed_rng;
use crate::Scalar;

/// Guaranteed upper bound on the next gap for a `1/L` step:
/// `(1 − μ/L)·gap + ‖e‖²/(2L)`.
pub fn lemma_bound<T: Scalar>(gap: T, err_sq: T, mu: T, l: T) -> T {
    (T::one() - mu / l) * gap + err_sq / (T::of(2.0) * l)
}

/// Largest admissible `‖e_k‖²` for a per-iteration contraction `1 − ρ`:
/// `2L(μ/L − ρ)·π`.
pub fn strong_rate_noise_bound<T: Scalar>(pi: T, mu: T, l: T, rho: T) -> Result<T> {
    let ratio = mu / l;
    if rho > ratio || rho <= T::zero() {
        return Err(invalid("need 0 < rho ≤ mu/L"));
    }
    if pi < T::zero() {
        return Err(invalid("pi must be nonnegative"));
    }
    Ok(T::of(2.0) * l * (ratio - rho) * pi)
}

/// `(μ/(2L²))·‖g‖²`, a lower bound on the gap when `g` is the true gradient.
pub fn pi_gradient_heuristic<T: Scalar>(g_norm: T, mu: T, l: T) -> T {
    mu / (T::of(2.0) * l * l) * g_norm * g_norm
}

/// `(μ/8)·‖x_k − x_{k+1}‖²`, a lower bound on the gap at `x_k` when the
/// distance to the minimizer decreases monotonically.
pub fn pi_step_heuristic<T: Scalar>(step_norm: T, mu: T) -> T {
    mu / T::of(8.0) * step_norm * step_norm
}

/// β₂ values tried by [`certify_beta`].
pub const BETA2_GRID: [f64; 12] = [
    1.0, 1.25, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0, 12.0, 16.0, 32.0, 64.0,
];

/// Constants for `‖∇f_i(x)‖² ≤ β₁ + β₂‖∇f(x)‖²` at a set of probes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaCertificate<T> {
    pub beta1: T,
    pub beta2: T,
}

impl<T: Scalar> BetaCertificate<T> {
    /// Largest violation `max_i ‖∇f_i‖² − β₁ − β₂‖∇f‖²` at `x` (≤ 0 when the
    /// inequality holds).
    pub fn worst_violation<P: SumProblem<T> + ?Sized>(&self, p: &P, x: &[T]) -> T {
        let (term_sq, full_sq) = gradient_norms(p, x);
        term_sq
            .iter()
            .map(|&t| t - self.beta1 - self.beta2 * full_sq)
            .fold(T::neg_infinity(), T::max)
    }
}

/// Squared norms of the effective term gradients `∇f_i(x) + λx` (whose mean
/// is `∇f(x)`) and of `∇f(x)`.
pub fn gradient_norms<T, P>(p: &P, x: &[T]) -> (Vec<T>, T)
where
    T: Scalar,
    P: SumProblem<T> + ?Sized,
{
    let lambda = p.lambda();
    let terms = (0..p.num_terms())
        .map(|i| {
            let mut g = p.term_gradient(i, x);
            crate::linalg::axpy(lambda, x, &mut g);
            norm_sq(&g)
        })
        .collect();
    let full =
        norm_sq(&crate::problems::average_value_gradient(p, &all_indices(p.num_terms()), x).1);
    (terms, full)
}

/// Smallest β₁ for each β₂ on [`BETA2_GRID`] such that the gradient bound
/// holds at every probe; returns the pair minimizing `β₁ + β₂·median‖∇f‖²`.
pub fn certify_beta<T, P>(p: &P, probes: &[Vec<T>]) -> Result<BetaCertificate<T>>
where
    T: Scalar,
    P: SumProblem<T> + ?Sized,
{
    if probes.is_empty() {
        return Err(invalid("certify_beta needs at least one probe"));
    }
    let mut data = Vec::with_capacity(probes.len());
    for x in probes {
        check_dim(p.dim(), x.len())?;
        let (terms, full) = gradient_norms(p, x);
        let max_term = terms.into_iter().fold(T::zero(), T::max);
        data.push((max_term, full));
    }
    let mut fulls: Vec<T> = data.iter().map(|d| d.1).collect();
    fulls.sort_by(|a, b| a.partial_cmp(b).expect("finite gradient norms"));
    let median = fulls[fulls.len() / 2];

    let mut best: Option<(T, BetaCertificate<T>)> = None;
    for &b2 in BETA2_GRID.iter() {
        let beta2 = T::of(b2);
        let beta1 = data
            .iter()
            .map(|&(t, f)| (t - beta2 * f).max(T::zero()))
            .fold(T::zero(), T::max);
        let score = beta1 + beta2 * median;
        if best.as_ref().is_none_or(|(s, _)| score < *s) {
            best = Some((score, BetaCertificate { beta1, beta2 }));
        }
    }
    Ok(best.expect("grid is nonempty").1)
}

/// Law of an injected gradient error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    /// `‖e‖² = B` exactly, isotropic direction.
    ExactNorm,
    /// `‖e‖²` uniform on `[0, 2B]`, isotropic direction: `E‖e‖² = B`.
    Expectation,
    /// `‖e‖² = B` along one fixed (seeded) direction for every `k`.
    Biased,
}

fn unit_direction<T: Scalar>(rng: &mut impl Rng, dim: usize) -> Vec<T> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if nv > 1e-300 {
            return v.into_iter().map(|a| T::of(a / nv)).collect();
        }
    }
}

/// Error vector `e_k` with `‖e‖² = B` (or `E‖e‖² = B`), reproducible per
/// `(seed, k)`.
pub fn inject_noise<T: Scalar>(
    target: T,
    dim: usize,
    seed: u64,
    k: usize,
    mode: NoiseMode,
) -> Vec<T> {
    if target <= T::zero() || dim == 0 {
        return vec![T::zero(); dim];
    }
    let (direction, norm) = match mode {
        NoiseMode::ExactNorm => {
            let mut rng = keyed_rng(seed, k as u64);
            (unit_direction::<T>(&mut rng, dim), target.sqrt())
        }
        NoiseMode::Expectation => {
            let mut rng = keyed_rng(seed, k as u64);
            let dir = unit_direction::<T>(&mut rng, dim);
            let u: f64 = rng.random();
            (dir, (T::of(2.0 * u) * target).sqrt())
        }
        NoiseMode::Biased => {
            let mut rng = keyed_rng(seed, u64::MAX);
            (unit_direction::<T>(&mut rng, dim), target.sqrt())
        }
    };
    direction.into_iter().map(|d| d * norm).collect()
}

/// Source of the lower bound `π_k` used by the strong-rate noise sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PiSource {
    /// The true gap (requires a known optimum).
    Oracle,
    /// `(μ/(2L²))‖∇f(x_k)‖²`
    GradientHeuristic,
    /// `(μ/8)‖x_{k−1} − x_k‖²`, lagged by one iteration (zero at `k = 0`).
    StepHeuristic,
}

/// Per-iteration state a noise-bound sequence may depend on.
#[derive(Debug, Clone, Copy)]
pub struct NoiseContext<T> {
    pub gap: Option<T>,
    pub grad_norm: T,
    pub last_step_norm: T,
    pub mu: Option<T>,
    pub lipschitz: T,
}

/// Sequence of bounds `B_k` on `‖e_k‖²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseBoundSequence<T> {
    /// `B₀·γ^k`
    Geometric { b0: T, gamma: T },
    /// `B₀/(k+1)^p`
    Polynomial { b0: T, power: T },
    /// `2L(μ/L − ρ)·π_k`
    StrongRate { rho: T, pi: PiSource },
    /// `‖e_k‖ = B₀/(k+1)^p` with `p > 1`, i.e. `B_k = B₀²/(k+1)^{2p}`.
    Summable { b0: T, power: T },
}

impl<T: Scalar> NoiseBoundSequence<T> {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseBoundSequence::Geometric { b0, gamma } => {
                if b0 < T::zero() || !(gamma > T::zero() && gamma <= T::one()) {
                    return Err(invalid("geometric noise needs B0 ≥ 0 and 0 < gamma ≤ 1"));
                }
            }
            NoiseBoundSequence::Polynomial { b0, power } => {
                if b0 < T::zero() || power < T::zero() {
                    return Err(invalid("polynomial noise needs B0 ≥ 0 and power ≥ 0"));
                }
            }
            NoiseBoundSequence::Summable { b0, power } => {
                if b0 < T::zero() || power <= T::one() {
                    return Err(invalid("summable noise needs B0 ≥ 0 and power > 1"));
                }
            }
            NoiseBoundSequence::StrongRate { rho, .. } => {
                if rho <= T::zero() {
                    return Err(invalid("strong-rate noise needs rho > 0"));
                }
            }
        }
        Ok(())
    }

    pub fn bound(&self, k: usize, ctx: &NoiseContext<T>) -> Result<T> {
        let kp1 = T::of_usize(k + 1);
        match *self {
            NoiseBoundSequence::Geometric { b0, gamma } => {
                Ok(b0 * gamma.powi(k.min(i32::MAX as usize) as i32))
            }
            NoiseBoundSequence::Polynomial { b0, power } => Ok(b0 / kp1.powf(power)),
            NoiseBoundSequence::Summable { b0, power } => {
                let e = b0 / kp1.powf(power);
                Ok(e * e)
            }
            NoiseBoundSequence::StrongRate { rho, pi } => {
                let mu = ctx.mu.ok_or(Error::MissingConstant("mu"))?;
                let l = ctx.lipschitz;
                let pi_k = match pi {
                    PiSource::Oracle => ctx.gap.ok_or(Error::MissingConstant("f_star"))?,
                    PiSource::GradientHeuristic => pi_gradient_heuristic(ctx.grad_norm, mu, l),
                    PiSource::StepHeuristic => pi_step_heuristic(ctx.last_step_norm, mu),
                };
                strong_rate_noise_bound(pi_k.max(T::zero()), mu, l, rho)
            }
        }
    }
}

/// Log-linear fit of a gap sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct RateEstimate<T> {
    /// Fitted per-iteration factor `exp(slope)`.
    pub sigma_hat: T,
    pub window: Range<usize>,
    /// Root-mean-square residual of the fit in log space.
    pub residual: T,
}

/// Least-squares slope of `log gap_k` against `k` over `window`.
pub fn fit_linear_rate<T: Scalar>(gaps: &[T], window: Range<usize>) -> Result<RateEstimate<T>> {
    if window.end > gaps.len() || window.len() < 2 {
        return Err(invalid("fit window must hold at least two in-range points"));
    }
    for k in window.clone() {
        if !(gaps[k] > T::zero()) {
            return Err(Error::NonPositiveGap {
                index: k,
                gap: gaps[k].as_f64(),
            });
        }
    }
    let n = window.len() as f64;
    let ks: Vec<f64> = window.clone().map(|k| k as f64).collect();
    let ys: Vec<f64> = window.clone().map(|k| gaps[k].as_f64().ln()).collect();
    let mk = ks.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = ks.iter().zip(&ys).map(|(k, y)| (k - mk) * (y - my)).sum();
    let sxx: f64 = ks.iter().map(|k| (k - mk) * (k - mk)).sum();
    let slope = sxy / sxx;
    let rss: f64 = ks
        .iter()
        .zip(&ys)
        .map(|(k, y)| {
            let r = y - (my + slope * (k - mk));
            r * r
        })
        .sum();
    Ok(RateEstimate {
        sigma_hat: T::of(slope.exp()),
        window,
        residual: T::of((rss / n).sqrt()),
    })
}

/// Last half of the iterations preceding the first gap at or below
/// `100·ε·gap₀` (the floating-point floor).
pub fn default_fit_window<T: Scalar>(gaps: &[T]) -> Range<usize> {
    let Some(&g0) = gaps.first() else {
        return 0..0;
    };
    let floor = T::of(100.0) * T::epsilon() * g0;
    let end = gaps.iter().position(|&g| g <= floor).unwrap_or(gaps.len());
    end / 2..end
}

/// `sup_k k·gap_k` where `avg_gaps[i]` is the gap of the running-average
/// iterate after `k = i + 1` iterations.
pub fn check_sublinear<T: Scalar>(avg_gaps: &[T]) -> T {
    sublinear_constant(avg_gaps, 1..avg_gaps.len() + 1)
}

/// `sup_{k ∈ ks} k·gap_k` with the same indexing as [`check_sublinear`].
pub fn sublinear_constant<T: Scalar>(avg_gaps: &[T], ks: Range<usize>) -> T {
    ks.filter(|&k| k >= 1 && k <= avg_gaps.len())
        .map(|k| T::of_usize(k) * avg_gaps[k - 1])
        .fold(T::zero(), T::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{full_gradient, full_value, SyntheticQuadratic};
    use crate::rng::keyed_rng;

    #[test]
    fn lemma_bound_examples() {
        assert_eq!(lemma_bound(5.0, 2.0, 1.0, 1.0), 1.0);
        assert_eq!(lemma_bound(4.0, 0.0, 1.0, 2.0), 2.0);
    }

    #[test]
    fn strong_rate_noise_bound_examples() {
        assert_eq!(strong_rate_noise_bound(4.0, 1.0, 2.0, 0.25).unwrap(), 4.0);
        assert_eq!(strong_rate_noise_bound(0.0, 1.0, 2.0, 0.25).unwrap(), 0.0);
        assert_eq!(strong_rate_noise_bound(7.0, 1.0, 2.0, 0.5).unwrap(), 0.0);
        assert!(strong_rate_noise_bound(1.0, 1.0, 2.0, 0.6).is_err());
    }

    #[test]
    fn pi_heuristic_examples() {
        assert_eq!(pi_gradient_heuristic(2.0, 1.0, 2.0), 0.5);
        assert_eq!(pi_gradient_heuristic(0.0, 1.0, 2.0), 0.0);
        assert_eq!(pi_step_heuristic(1.0, 8.0), 1.0);
        assert_eq!(pi_step_heuristic(0.0, 8.0), 0.0);
    }

    #[test]
    fn gradient_heuristic_is_lower_bound_along_gd_run() {
        let q = SyntheticQuadratic::random(6, 5, 0.3, 3.0, 2.0, 4).unwrap();
        let (mu, l) = (0.3f64, 3.0f64);
        let mut x = vec![4.0f64; 6];
        for _ in 0..100 {
            let g = full_gradient(&q, &x).unwrap();
            let gap = q.gap(&x);
            assert!(pi_gradient_heuristic(norm_sq(&g).sqrt(), mu, l) <= gap * (1.0 + 1e-12));
            crate::linalg::axpy(-1.0 / l, &g, &mut x);
        }
    }

    #[test]
    fn step_heuristic_is_lower_bound_on_monotone_run() {
        let q = SyntheticQuadratic::random(6, 5, 0.3, 3.0, 2.0, 4).unwrap();
        let (mu, l) = (0.3f64, 3.0f64);
        let mut x = vec![-2.0; 6];
        let mut prev_dist = f64::INFINITY;
        for _ in 0..100 {
            let g = full_gradient(&q, &x).unwrap();
            let gap = q.gap(&x);
            let mut next = x.clone();
            crate::linalg::axpy(-1.0 / l, &g, &mut next);
            let dist = crate::linalg::dist_sq(&x, q.x_star());
            assert!(
                dist <= prev_dist,
                "distance must be monotone for this check"
            );
            prev_dist = dist;
            let step = crate::linalg::dist_sq(&x, &next).sqrt();
            assert!(pi_step_heuristic(step, mu) <= gap * (1.0 + 1e-12));
            x = next;
        }
    }

    #[test]
    fn certify_identical_terms() {
        let q = SyntheticQuadratic::centered(vec![1.0, 2.0], 3).unwrap();
        let probes = vec![vec![1.0, -1.0], vec![0.5, 2.0]];
        let c = certify_beta(&q, &probes).unwrap();
        assert_eq!(c.beta2, 1.0);
        assert!(c.beta1 <= 1e-14);
    }

    #[test]
    fn certify_two_term_at_origin() {
        let q = SyntheticQuadratic::new(vec![1.0], vec![vec![1.0], vec![-1.0]], 0.0).unwrap();
        let c = certify_beta(&q, &[vec![0.0]]).unwrap();
        assert!(c.beta1 >= 1.0);
        assert!(certify_beta::<f64, _>(&q, &[]).is_err());
    }

    #[test]
    fn certified_pair_holds_on_holdout() {
        // probes spread wide enough that the worst case is covered
        let q = SyntheticQuadratic::random(3, 6, 0.5, 2.0, 1.0, 13).unwrap();
        let mut rng = keyed_rng(1, 0);
        let mut probe = |s: f64| -> Vec<f64> {
            (0..3)
                .map(|_| s * rng.sample::<f64, _>(StandardNormal))
                .collect()
        };
        let probes: Vec<Vec<f64>> = (0..400)
            .map(|i| probe(if i % 2 == 0 { 0.5 } else { 10.0 }))
            .collect();
        let c = certify_beta(&q, &probes).unwrap();
        let c_safe = BetaCertificate {
            beta1: c.beta1 * 1.5,
            beta2: c.beta2.max(4.0),
        };
        for _ in 0..100 {
            let x = probe(2.0);
            assert!(c_safe.worst_violation(&q, &x) <= 0.0);
        }
    }

    #[test]
    fn inject_noise_exact_norm() {
        assert_eq!(
            inject_noise(0.0, 4, 1, 0, NoiseMode::ExactNorm),
            vec![0.0; 4]
        );
        let e = inject_noise(4.0f64, 7, 3, 2, NoiseMode::ExactNorm);
        assert!((norm_sq(&e).sqrt() - 2.0).abs() < 1e-12);
        assert_eq!(e, inject_noise(4.0, 7, 3, 2, NoiseMode::ExactNorm));
        assert_ne!(e, inject_noise(4.0, 7, 3, 3, NoiseMode::ExactNorm));
    }

    #[test]
    fn inject_noise_expectation_mean() {
        let draws = 100_000;
        let mean: f64 = (0..draws)
            .map(|k| norm_sq(&inject_noise(1.0, 3, 11, k, NoiseMode::Expectation)))
            .sum::<f64>()
            / draws as f64;
        assert!((mean - 1.0).abs() < 0.01, "{mean}");
    }

    #[test]
    fn biased_noise_has_fixed_direction() {
        let a = inject_noise(1.0f64, 5, 2, 0, NoiseMode::Biased);
        let b = inject_noise(9.0, 5, 2, 17, NoiseMode::Biased);
        for (x, y) in a.iter().zip(&b) {
            assert!((3.0 * x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn geometric_sequence_ratio_is_exact() {
        let s = NoiseBoundSequence::Geometric {
            b0: 0.25,
            gamma: 0.5,
        };
        let ctx = NoiseContext {
            gap: None,
            grad_norm: 0.0,
            last_step_norm: 0.0,
            mu: None,
            lipschitz: 1.0,
        };
        for k in 0..20 {
            let a = s.bound(k, &ctx).unwrap();
            let b = s.bound(k + 1, &ctx).unwrap();
            assert_eq!(b / a, 0.5);
        }
        let sum = NoiseBoundSequence::Summable {
            b0: 1.0,
            power: 2.0,
        };
        assert_eq!(sum.bound(1, &ctx).unwrap(), 1.0 / 16.0);
        assert!(NoiseBoundSequence::Summable {
            b0: 1.0,
            power: 1.0
        }
        .validate()
        .is_err());
    }

    #[test]
    fn strong_sequence_uses_pi_source() {
        let ctx = NoiseContext {
            gap: Some(4.0),
            grad_norm: 2.0,
            last_step_norm: 1.0,
            mu: Some(1.0),
            lipschitz: 2.0,
        };
        let oracle = NoiseBoundSequence::StrongRate {
            rho: 0.25,
            pi: PiSource::Oracle,
        };
        assert_eq!(oracle.bound(0, &ctx).unwrap(), 4.0);
        let grad = NoiseBoundSequence::StrongRate {
            rho: 0.25,
            pi: PiSource::GradientHeuristic,
        };
        assert_eq!(grad.bound(0, &ctx).unwrap(), 0.5);
        let no_gap = NoiseContext { gap: None, ..ctx };
        assert!(oracle.bound(0, &no_gap).is_err());
    }

    #[test]
    fn fit_examples() {
        let gaps: Vec<f64> = (0..100).map(|k| 0.9f64.powi(k)).collect();
        let r = fit_linear_rate(&gaps, 0..100).unwrap();
        assert!((r.sigma_hat - 0.9).abs() < 1e-6);
        let flat = vec![3.0f64; 50];
        assert!((fit_linear_rate(&flat, 0..50).unwrap().sigma_hat - 1.0).abs() < 1e-12);
        let mut rng = keyed_rng(5, 0);
        let noisy: Vec<f64> = (0..200)
            .map(|k| 0.5 * 0.8f64.powi(k) * (1.0 + 0.01 * (rng.random::<f64>() - 0.5)))
            .collect();
        let r = fit_linear_rate(&noisy, 0..200).unwrap();
        assert!(r.sigma_hat >= 0.79 && r.sigma_hat <= 0.81);
        let bad = vec![1.0, 0.0, 1.0];
        assert!(matches!(
            fit_linear_rate(&bad, 0..3),
            Err(Error::NonPositiveGap { index: 1, .. })
        ));
    }

    #[test]
    fn default_window_stops_at_floor() {
        let mut gaps: Vec<f64> = (0..40).map(|k| 0.5f64.powi(k)).collect();
        gaps.extend(std::iter::repeat_n(1e-20, 60));
        let w = default_fit_window(&gaps);
        assert!(w.end <= 40 && w.start == w.end / 2);
    }

    #[test]
    fn sublinear_examples() {
        let inv: Vec<f64> = (1..=100).map(|k| 1.0 / k as f64).collect();
        assert!((check_sublinear(&inv) - 1.0).abs() < 1e-12);
        let inv2: Vec<f64> = (1..=100).map(|k| 1.0 / (k * k) as f64).collect();
        assert_eq!(check_sublinear(&inv2), 1.0);
        assert!((sublinear_constant(&inv2, 10..101) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn full_value_helper_consistent() {
        let q = SyntheticQuadratic::centered(vec![1.0], 2).unwrap();
        assert_eq!(full_value(&q, &[2.0]).unwrap(), 2.0);
        assert_eq!(full_gradient(&q, &[2.0]).unwrap(), vec![2.0]);
    }
}
