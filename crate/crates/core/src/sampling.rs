//! Batch selection, batch-size schedules and gradient-residual bounds for
//! sampled gradients.
//!
//! Indices are 0-based throughout: a sample is a subset of `0..M`.

use crate::error::{invalid, Error, Result};
use crate::linalg::{norm, norm_sq, sub};
use crate::problems::{average_value_gradient, check_dim, mean_term_gradient, SumProblem};
use crate::rng::keyed_rng;
use crate::Scalar;

/// How the indices of a batch are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    /// `{0, …, b−1}`; nested across iterations by construction.
    DeterministicPrefix,
    /// `b` distinct indices drawn uniformly.
    UniformWithoutReplacement,
}

/// Index subset drawn at one iteration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleSet {
    indices: Vec<usize>,
    iteration: usize,
    seed: u64,
}

impl SampleSet {
    /// Builds a sample from arbitrary indices (sorted and deduplicated).
    pub fn from_indices(mut indices: Vec<usize>, m: usize) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if indices.is_empty() || indices.len() > m || indices.last().is_some_and(|&i| i >= m) {
            return Err(invalid("sample indices must be a nonempty subset of 0..M"));
        }
        Ok(Self {
            indices,
            iteration: 0,
            seed: 0,
        })
    }

    pub fn full(m: usize) -> Self {
        Self {
            indices: (0..m).collect(),
            iteration: 0,
            seed: 0,
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Indices of `0..m` not in the sample.
    pub fn complement(&self, m: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(m - self.indices.len());
        let mut it = self.indices.iter().peekable();
        for i in 0..m {
            if it.peek() == Some(&&i) {
                it.next();
            } else {
                out.push(i);
            }
        }
        out
    }
}

/// Draws batch `k` of size `b` from `0..m`. Uniform draws are keyed by
/// `(seed, k)` and are independent across `k`.
pub fn draw_sample(m: usize, b: usize, mode: SampleMode, seed: u64, k: usize) -> Result<SampleSet> {
    if b == 0 || b > m {
        return Err(invalid(format!("batch size {b} outside [1, {m}]")));
    }
    let indices = match mode {
        _ if b == m => (0..m).collect(),
        SampleMode::DeterministicPrefix => (0..b).collect(),
        SampleMode::UniformWithoutReplacement => {
            let mut rng = keyed_rng(seed, k as u64);
            let mut v = rand::seq::index::sample(&mut rng, m, b).into_vec();
            v.sort_unstable();
            v
        }
    };
    Ok(SampleSet {
        indices,
        iteration: k,
        seed,
    })
}

/// Batch source used by the drivers. In nested uniform mode every batch is
/// a prefix of one seeded permutation, so `𝓑_k ⊆ 𝓑_{k+1}`.
#[derive(Debug, Clone)]
pub struct Sampler {
    m: usize,
    mode: SampleMode,
    seed: u64,
    permutation: Option<Vec<usize>>,
}

impl Sampler {
    pub fn new(m: usize, mode: SampleMode, nested: bool, seed: u64) -> Self {
        let permutation = (nested && mode == SampleMode::UniformWithoutReplacement).then(|| {
            let mut rng = keyed_rng(seed, u64::MAX);
            rand::seq::index::sample(&mut rng, m, m).into_vec()
        });
        Self {
            m,
            mode,
            seed,
            permutation,
        }
    }

    pub fn draw(&self, b: usize, k: usize) -> Result<SampleSet> {
        match &self.permutation {
            Some(perm) => {
                if b == 0 || b > self.m {
                    return Err(invalid(format!("batch size {b} outside [1, {}]", self.m)));
                }
                let mut indices = perm[..b].to_vec();
                indices.sort_unstable();
                Ok(SampleSet {
                    indices,
                    iteration: k,
                    seed: self.seed,
                })
            }
            None => draw_sample(self.m, b, self.mode, self.seed, k),
        }
    }
}

/// `⌈min{1.1·b + 1, M}⌉`, evaluated in integer arithmetic.
pub fn next_batch_size_paper(b_prev: usize, m: usize) -> usize {
    // ⌈(11b + 10)/10⌉
    ((11 * b_prev + 19) / 10).min(m).max(1)
}

/// Smallest `b ∈ [1, M]` satisfying a predicate that is monotone in `b`.
fn smallest_satisfying(m: usize, pred: impl Fn(usize) -> bool) -> usize {
    if m <= 1 || pred(1) {
        return 1;
    }
    let (mut lo, mut hi) = (1, m);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if pred(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Smallest `b` with `(M − b)/M ≤ γ^{k/2}`, clamped to `[1, M]`.
pub fn batch_size_geometric_det(k: usize, m: usize, gamma: f64) -> usize {
    let q = gamma.powf(k as f64 / 2.0);
    let mf = m as f64;
    smallest_satisfying(m, |b| (mf - b as f64) / mf <= q)
}

/// Smallest `b` with `(M − b)/(M·b) ≤ γ^k`.
pub fn batch_size_geometric_stoch(k: usize, m: usize, gamma: f64) -> usize {
    let q = gamma.powi(k.min(i32::MAX as usize) as i32);
    let mf = m as f64;
    smallest_satisfying(m, |b| (mf - b as f64) / (mf * b as f64) <= q)
}

/// Parameters of the strong-rate sample-size rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrongRateParams<T> {
    pub lipschitz: T,
    pub mu: T,
    pub rho: T,
    pub beta1: T,
    pub beta2: T,
}

/// Smallest `b` with `4((M−b)/M)²(β₁ + 2β₂L·gap) ≤ L(μ/L − ρ)·gap`; `M`
/// when only the full batch qualifies.
pub fn batch_size_strong_rate<T: Scalar>(
    gap: T,
    m: usize,
    c: &StrongRateParams<T>,
) -> Result<usize> {
    if gap <= T::zero() {
        return Err(invalid(
            "strong-rate schedule needs a positive optimality gap",
        ));
    }
    let ratio = c.mu / c.lipschitz;
    if !(c.rho > T::zero() && c.rho <= ratio) {
        return Err(invalid("need 0 < rho ≤ mu/L"));
    }
    let rhs = c.lipschitz * (ratio - c.rho) * gap;
    let level = c.beta1 + T::of(2.0) * c.beta2 * c.lipschitz * gap;
    let mf = T::of_usize(m);
    Ok(smallest_satisfying(m, |b| {
        let frac = (mf - T::of_usize(b)) / mf;
        T::of(4.0) * frac * frac * level <= rhs
    }))
}

/// Batch-size rule mapping an iteration index and the previous size to the
/// next size. Emitted sizes are nondecreasing and clamped to `[1, M]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule<T> {
    Constant { size: usize },
    PaperLinear { initial: usize },
    GeometricDeterministic { gamma: f64 },
    GeometricStochastic { gamma: f64 },
    StrongRate(StrongRateParams<T>),
    AddOne { initial: usize },
}

impl<T: Scalar> Schedule<T> {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Schedule::Constant { size: s }
            | Schedule::PaperLinear { initial: s }
            | Schedule::AddOne { initial: s }
                if s == 0 =>
            {
                Err(invalid("batch size must be at least 1"))
            }
            Schedule::GeometricDeterministic { gamma }
            | Schedule::GeometricStochastic { gamma }
                if !(gamma > 0.0 && gamma < 1.0) =>
            {
                Err(invalid("gamma must lie in (0, 1)"))
            }
            Schedule::StrongRate(c) if !(c.rho > T::zero() && c.rho <= c.mu / c.lipschitz) => {
                Err(invalid("need 0 < rho ≤ mu/L"))
            }
            _ => Ok(()),
        }
    }

    /// Size of batch `k` given the previous size (ignored at `k = 0`) and,
    /// for the strong-rate rule, the current optimality gap (full batch when
    /// unknown or zero).
    pub fn size(&self, k: usize, prev: usize, m: usize, gap: Option<T>) -> usize {
        let raw = match *self {
            Schedule::Constant { size } => size,
            Schedule::PaperLinear { initial } if k == 0 => initial,
            Schedule::PaperLinear { .. } => next_batch_size_paper(prev, m),
            Schedule::GeometricDeterministic { gamma } => batch_size_geometric_det(k, m, gamma),
            Schedule::GeometricStochastic { gamma } => batch_size_geometric_stoch(k, m, gamma),
            Schedule::StrongRate(c) => gap
                .and_then(|g| batch_size_strong_rate(g, m, &c).ok())
                .unwrap_or(m),
            Schedule::AddOne { initial } if k == 0 => initial,
            Schedule::AddOne { .. } => prev + 1,
        };
        let floor = if k == 0 { 1 } else { prev.max(1) };
        raw.max(floor).min(m)
    }
}

/// Gradient residual `e = g_𝓑(x) − ∇f(x)`, computed from the definition and
/// from the re-weighting decomposition; the two routes must agree to 1e-10
/// relative.
pub fn residual<T, P>(p: &P, x: &[T], s: &SampleSet) -> Result<Vec<T>>
where
    T: Scalar,
    P: SumProblem<T> + ?Sized,
{
    check_dim(p.dim(), x.len())?;
    let m = p.num_terms();
    let all: Vec<usize> = (0..m).collect();
    let (_, g_sample) = average_value_gradient(p, s.indices(), x);
    let (_, g_full) = average_value_gradient(p, &all, x);
    let by_definition = sub(&g_sample, &g_full);

    let b = s.len();
    let weight = T::of_usize(m - b) / (T::of_usize(m) * T::of_usize(b));
    let mut by_decomposition = vec![T::zero(); p.dim()];
    let mut scale = T::zero();
    for &i in s.indices() {
        let gi = p.term_gradient(i, x);
        scale += norm(&gi);
        crate::linalg::axpy(weight, &gi, &mut by_decomposition);
    }
    let inv_m = T::one() / T::of_usize(m);
    for i in s.complement(m) {
        let gi = p.term_gradient(i, x);
        scale += norm(&gi);
        crate::linalg::axpy(-inv_m, &gi, &mut by_decomposition);
    }
    let scale = (scale * inv_m).max(norm(&by_definition));
    let diff = crate::linalg::dist_sq(&by_definition, &by_decomposition).sqrt();
    let tol = T::of(1e-10).max(T::epsilon() * T::of(64.0));
    if diff > tol * scale {
        return Err(Error::ResidualMismatch {
            rel: (diff / scale).as_f64(),
        });
    }
    Ok(by_definition)
}

/// `S = (1/(M−1)) Σ ‖∇f_i(x) − ∇f̄(x)‖²` with `∇f̄` the unregularized mean.
pub fn sample_variance<T, P>(p: &P, x: &[T]) -> Result<T>
where
    T: Scalar,
    P: SumProblem<T> + ?Sized,
{
    check_dim(p.dim(), x.len())?;
    let m = p.num_terms();
    if m < 2 {
        return Err(invalid("sample variance needs M ≥ 2"));
    }
    let all: Vec<usize> = (0..m).collect();
    let mean = mean_term_gradient(p, &all, x);
    let total = crate::linalg::reduce_values(&all, |i| {
        crate::linalg::dist_sq(&p.term_gradient(i, x), &mean)
    });
    Ok(total / T::of_usize(m - 1))
}

/// `E‖e‖² = ((M − b)/M)·S/b` under uniform sampling without replacement.
pub fn expected_residual_sq<T: Scalar>(variance: T, m: usize, b: usize) -> T {
    T::of_usize(m - b) / T::of_usize(m) * variance / T::of_usize(b)
}

/// `4((M − b)/M)²(β₁ + 2β₂·L·gap)`, valid for any sample of size `b`.
pub fn deterministic_bound<T: Scalar>(m: usize, b: usize, beta1: T, beta2: T, l: T, gap: T) -> T {
    let frac = T::of_usize(m - b) / T::of_usize(m);
    T::of(4.0) * frac * frac * (beta1 + T::of(2.0) * beta2 * l * gap)
}

/// `((M−b)/(M·b))·(M/(M−1))·(β₁ + 2(β₂−1)·L·gap)`, bounding `E‖e‖²` under
/// uniform sampling without replacement.
pub fn stochastic_beta_bound<T: Scalar>(m: usize, b: usize, beta1: T, beta2: T, l: T, gap: T) -> T {
    if m < 2 {
        return T::zero();
    }
    let (mf, bf) = (T::of_usize(m), T::of_usize(b));
    (mf - bf) / (mf * bf) * mf / (mf - T::one())
        * (beta1 + T::of(2.0) * (beta2 - T::one()) * l * gap)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResidualBoundKind {
    Deterministic,
    StochasticVariance,
    StochasticBeta,
}

/// A computed bound `B` on `‖e‖²` (or on `E‖e‖²` for the stochastic kinds).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientResidualBound<T> {
    pub kind: ResidualBoundKind,
    pub value: T,
    /// Set when the `β₂ − 1` factor removed a nonzero gap term.
    pub gap_term_vanished: bool,
}

impl<T: Scalar> GradientResidualBound<T> {
    pub fn deterministic(m: usize, b: usize, beta1: T, beta2: T, l: T, gap: T) -> Self {
        Self {
            kind: ResidualBoundKind::Deterministic,
            value: deterministic_bound(m, b, beta1, beta2, l, gap),
            gap_term_vanished: false,
        }
    }

    pub fn stochastic_variance(variance: T, m: usize, b: usize) -> Self {
        Self {
            kind: ResidualBoundKind::StochasticVariance,
            value: expected_residual_sq(variance, m, b),
            gap_term_vanished: false,
        }
    }

    pub fn stochastic_beta(m: usize, b: usize, beta1: T, beta2: T, l: T, gap: T) -> Self {
        Self {
            kind: ResidualBoundKind::StochasticBeta,
            value: stochastic_beta_bound(m, b, beta1, beta2, l, gap),
            gap_term_vanished: beta2 == T::one() && gap > T::zero(),
        }
    }
}

/// Mean of `‖e‖²` over all `C(M, b)` subsets, by explicit enumeration.
/// Intended for small `M` (verification only).
pub fn enumerate_mean_residual_sq<T, P>(p: &P, x: &[T], b: usize) -> Result<T>
where
    T: Scalar,
    P: SumProblem<T> + ?Sized,
{
    let m = p.num_terms();
    if b == 0 || b > m || m > 20 {
        return Err(invalid("enumeration needs 1 ≤ b ≤ M ≤ 20"));
    }
    let mut total = T::zero();
    let mut count = 0usize;
    for_each_subset(m, b, |subset| {
        let s = SampleSet::from_indices(subset.to_vec(), m).expect("valid subset");
        if let Ok(e) = residual(p, x, &s) {
            total += norm_sq(&e);
        }
        count += 1;
    });
    Ok(total / T::of_usize(count))
}

/// Calls `f` on every `b`-subset of `0..m` in lexicographic order.
pub fn for_each_subset(m: usize, b: usize, mut f: impl FnMut(&[usize])) {
    if b == 0 || b > m {
        return;
    }
    let mut idx: Vec<usize> = (0..b).collect();
    loop {
        f(&idx);
        let mut i = b;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] < m - b + i {
                break;
            }
            if i == 0 && idx[0] >= m - b {
                return;
            }
        }
        idx[i] += 1;
        for j in i + 1..b {
            idx[j] = idx[j - 1] + 1;
        }
    }
}
