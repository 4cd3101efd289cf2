//! Limited-memory BFGS and the line searches used by the quasi-Newton drivers.

use std::collections::VecDeque;

use crate::error::{invalid, Error, Result};
use crate::linalg::{axpy, dot, norm, scale};
use crate::Scalar;

/// Pairs with `sᵀy ≤ CURVATURE_THRESHOLD·‖s‖‖y‖` are skipped.
pub const CURVATURE_THRESHOLD: f64 = 1e-10;
pub const DEFAULT_MEMORY: usize = 10;

/// Initial inverse-Hessian approximation used by the two-loop recursion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitialScaling {
    /// `γ·I` with `γ = yᵀs / yᵀy` from the newest pair.
    #[default]
    ShannoPhua,
    Identity,
}

#[derive(Debug, Clone)]
struct Pair<T> {
    s: Vec<T>,
    y: Vec<T>,
    sy: T,
}

/// Ring buffer of curvature pairs `(s, y)`.
#[derive(Debug, Clone)]
pub struct LbfgsMemory<T> {
    capacity: usize,
    scaling: InitialScaling,
    pairs: VecDeque<Pair<T>>,
}

impl<T: Scalar> LbfgsMemory<T> {
    pub fn new(capacity: usize, scaling: InitialScaling) -> Self {
        LbfgsMemory {
            capacity: capacity.max(1),
            scaling,
            pairs: VecDeque::with_capacity(capacity.max(1)),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn clear(&mut self) {
        self.pairs.clear();
    }

    /// Stored curvatures `sᵀy`, oldest first.
    pub fn curvatures(&self) -> impl Iterator<Item = T> + '_ {
        self.pairs.iter().map(|p| p.sy)
    }

    /// Stores the pair if it passes the skip rule, evicting the oldest pair at
    /// capacity. Returns whether the pair was stored.
    pub fn push_pair(&mut self, s: Vec<T>, y: Vec<T>) -> Result<bool> {
        if s.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: s.len(),
                got: y.len(),
            });
        }
        if let Some(first) = self.pairs.front() {
            if first.s.len() != s.len() {
                return Err(Error::DimensionMismatch {
                    expected: first.s.len(),
                    got: s.len(),
                });
            }
        }
        let sy = dot(&s, &y);
        let threshold = T::of(CURVATURE_THRESHOLD) * norm(&s) * norm(&y);
        if !(sy > threshold) || !sy.is_finite() {
            return Ok(false);
        }
        if self.pairs.len() == self.capacity {
            self.pairs.pop_front();
        }
        self.pairs.push_back(Pair { s, y, sy });
        Ok(true)
    }

    /// Scale of the initial operator for the current memory.
    pub fn initial_scale(&self) -> T {
        match (self.scaling, self.pairs.back()) {
            (InitialScaling::ShannoPhua, Some(p)) => p.sy / dot(&p.y, &p.y),
            _ => T::one(),
        }
    }

    /// `d = −H·g` via the two-loop recursion; `−g` when memory is empty.
    pub fn two_loop_direction(&self, g: &[T]) -> Result<Vec<T>> {
        if let Some(first) = self.pairs.front() {
            if first.s.len() != g.len() {
                return Err(Error::DimensionMismatch {
                    expected: first.s.len(),
                    got: g.len(),
                });
            }
        }
        let mut q = g.to_vec();
        let mut alphas = vec![T::zero(); self.pairs.len()];
        for (j, p) in self.pairs.iter().enumerate().rev() {
            let a = dot(&p.s, &q) / p.sy;
            alphas[j] = a;
            axpy(-a, &p.y, &mut q);
        }
        scale(self.initial_scale(), &mut q);
        for (j, p) in self.pairs.iter().enumerate() {
            let b = dot(&p.y, &q) / p.sy;
            axpy(alphas[j] - b, &p.s, &mut q);
        }
        scale(-T::one(), &mut q);
        Ok(q)
    }
}

/// `yᵀs / yᵀy`.
pub fn shanno_phua_scale<T: Scalar>(s: &[T], y: &[T]) -> Result<T> {
    let sy = dot(s, y);
    if !(sy > T::zero()) {
        return Err(invalid("Shanno-Phua scale needs sᵀy > 0"));
    }
    Ok(sy / dot(y, y))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineSearchStatus {
    Satisfied,
    MaxBacktracks,
    StepUnderflow,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchResult<T> {
    /// Accepted step, or the best sufficient-decrease step found (zero if
    /// none) when the search did not succeed.
    pub step: T,
    /// `φ(step)` and `φ′(step)`; `φ(0)`, `φ′(0)` for a zero step.
    pub value: T,
    pub slope: T,
    pub evaluations: usize,
    pub status: LineSearchStatus,
}

impl<T> LineSearchResult<T> {
    pub fn satisfied(&self) -> bool {
        self.status == LineSearchStatus::Satisfied
    }
}

pub const ARMIJO_ETA: f64 = 1e-4;
pub const MAX_BACKTRACKS: usize = 50;
pub const MIN_STEP: f64 = 1e-14;
pub const WOLFE_C1: f64 = 1e-4;
pub const WOLFE_C2: f64 = 0.9;
pub const MAX_WOLFE_EVALS: usize = 25;

/// `φ(α) < φ(0) + η·α·φ′(0)`
pub fn armijo_holds<T: Scalar>(phi0: T, slope0: T, step: T, value: T, eta: T) -> bool {
    value < phi0 + eta * step * slope0
}

fn clamp_trial<T: Scalar>(trial: T, prev: T) -> T {
    let lo = T::of(0.1) * prev;
    let hi = T::of(0.9) * prev;
    if trial.is_finite() {
        trial.max(lo).min(hi)
    } else {
        T::of(0.5) * prev
    }
}

/// Minimizer of the quadratic through `φ(0)`, `φ′(0)` and `φ(α)`.
fn quadratic_trial<T: Scalar>(phi0: T, slope0: T, a: T, fa: T) -> T {
    let denom = T::of(2.0) * (fa - phi0 - slope0 * a);
    -slope0 * a * a / denom
}

/// Minimizer of the cubic through `φ(0)`, `φ′(0)`, `φ(a)` and `φ(b)`.
fn cubic_trial<T: Scalar>(phi0: T, slope0: T, a: T, fa: T, b: T, fb: T) -> T {
    let ra = fa - phi0 - slope0 * a;
    let rb = fb - phi0 - slope0 * b;
    let d = a * a * b * b * (a - b);
    let c3 = (b * b * ra - a * a * rb) / d;
    let c2 = (-b * b * b * ra + a * a * a * rb) / d;
    if c3 == T::zero() {
        return -slope0 / (T::of(2.0) * c2);
    }
    let disc = c2 * c2 - T::of(3.0) * c3 * slope0;
    (-c2 + disc.max(T::zero()).sqrt()) / (T::of(3.0) * c3)
}

/// Backtracking search for `φ(α) < φ(0) + η·α·φ′(0)` starting at `α₀`.
///
/// `phi` returns `(φ(α), φ′(α))`; only values drive the backtracking, slopes
/// are passed through in the result.
pub fn armijo_search<T, F>(
    mut phi: F,
    phi0: T,
    slope0: T,
    alpha0: T,
    eta: T,
) -> Result<LineSearchResult<T>>
where
    T: Scalar,
    F: FnMut(T) -> (T, T),
{
    if !(slope0 < T::zero()) {
        return Err(Error::NotDescent {
            slope: slope0.as_f64(),
        });
    }
    if !(eta > T::zero() && eta < T::one()) || !(alpha0 > T::zero()) {
        return Err(invalid("armijo search needs 0 < eta < 1 and alpha0 > 0"));
    }
    let min_step = T::of(MIN_STEP);
    let mut alpha = alpha0;
    let mut prev: Option<(T, T)> = None;
    let mut evaluations = 0;
    let failed = |status, evaluations| LineSearchResult {
        step: T::zero(),
        value: phi0,
        slope: slope0,
        evaluations,
        status,
    };
    for backtracks in 0..=MAX_BACKTRACKS {
        if alpha < min_step {
            return Ok(failed(LineSearchStatus::StepUnderflow, evaluations));
        }
        let (value, slope) = phi(alpha);
        evaluations += 1;
        if armijo_holds(phi0, slope0, alpha, value, eta) {
            return Ok(LineSearchResult {
                step: alpha,
                value,
                slope,
                evaluations,
                status: LineSearchStatus::Satisfied,
            });
        }
        if backtracks == MAX_BACKTRACKS {
            break;
        }
        let trial = if !value.is_finite() {
            T::of(0.1) * alpha
        } else {
            match prev {
                None => quadratic_trial(phi0, slope0, alpha, value),
                Some((pa, pv)) => cubic_trial(phi0, slope0, alpha, value, pa, pv),
            }
        };
        prev = value.is_finite().then_some((alpha, value));
        alpha = clamp_trial(trial, alpha);
    }
    Ok(failed(LineSearchStatus::MaxBacktracks, evaluations))
}

/// Minimizer of the Hermite cubic matching values and slopes at `a` and `b`,
/// safeguarded to the interior of the interval.
fn hermite_trial<T: Scalar>(a: T, fa: T, da: T, b: T, fb: T, db: T) -> T {
    let lo = a.min(b);
    let hi = a.max(b);
    let margin = T::of(0.1) * (hi - lo);
    let d1 = da + db - T::of(3.0) * (fa - fb) / (a - b);
    let rad = d1 * d1 - da * db;
    let trial = if rad >= T::zero() {
        let d2 = (b - a).signum() * rad.sqrt();
        b - (b - a) * (db + d2 - d1) / (db - da + T::of(2.0) * d2)
    } else {
        T::nan()
    };
    if trial.is_finite() && trial >= lo + margin && trial <= hi - margin {
        trial
    } else {
        T::of(0.5) * (a + b)
    }
}

/// Strong Wolfe search by bracketing and zoom with Hermite cubic
/// interpolation; at most [`MAX_WOLFE_EVALS`] evaluations of `phi`.
pub fn wolfe_search<T, F>(
    mut phi: F,
    phi0: T,
    slope0: T,
    alpha0: T,
    c1: T,
    c2: T,
) -> Result<LineSearchResult<T>>
where
    T: Scalar,
    F: FnMut(T) -> (T, T),
{
    if !(slope0 < T::zero()) {
        return Err(Error::NotDescent {
            slope: slope0.as_f64(),
        });
    }
    if !(c1 > T::zero() && c1 < c2 && c2 < T::one()) || !(alpha0 > T::zero()) {
        return Err(invalid("wolfe search needs 0 < c1 < c2 < 1 and alpha0 > 0"));
    }
    let curvature_bound = c2 * slope0.abs();
    let mut evaluations = 0;
    let mut best = LineSearchResult {
        step: T::zero(),
        value: phi0,
        slope: slope0,
        evaluations: 0,
        status: LineSearchStatus::MaxBacktracks,
    };
    let mut eval = |alpha: T, evaluations: &mut usize, best: &mut LineSearchResult<T>| {
        let (v, d) = phi(alpha);
        *evaluations += 1;
        if armijo_holds(phi0, slope0, alpha, v, c1) && v < best.value {
            *best = LineSearchResult {
                step: alpha,
                value: v,
                slope: d,
                evaluations: 0,
                status: LineSearchStatus::MaxBacktracks,
            };
        }
        (v, d)
    };
    let accept = |alpha, v, d, evaluations| LineSearchResult {
        step: alpha,
        value: v,
        slope: d,
        evaluations,
        status: LineSearchStatus::Satisfied,
    };

    // (step, value, slope) at the low and high ends of the bracket
    let mut lo = (T::zero(), phi0, slope0);
    let mut hi;
    let mut alpha = alpha0;
    loop {
        if evaluations >= MAX_WOLFE_EVALS {
            best.evaluations = evaluations;
            return Ok(best);
        }
        let (v, d) = eval(alpha, &mut evaluations, &mut best);
        if !v.is_finite()
            || !armijo_holds(phi0, slope0, alpha, v, c1)
            || (evaluations > 1 && v >= lo.1)
        {
            hi = (alpha, v, d);
            break;
        }
        if d.abs() <= curvature_bound {
            return Ok(accept(alpha, v, d, evaluations));
        }
        if d >= T::zero() {
            hi = lo;
            lo = (alpha, v, d);
            break;
        }
        lo = (alpha, v, d);
        alpha *= T::of(2.0);
    }

    loop {
        if evaluations >= MAX_WOLFE_EVALS {
            best.evaluations = evaluations;
            return Ok(best);
        }
        let trial = if hi.1.is_finite() && hi.2.is_finite() {
            hermite_trial(lo.0, lo.1, lo.2, hi.0, hi.1, hi.2)
        } else {
            T::of(0.5) * (lo.0 + hi.0)
        };
        if (hi.0 - lo.0).abs() < T::of(MIN_STEP) * lo.0.max(hi.0).max(T::one()) {
            best.evaluations = evaluations;
            best.status = LineSearchStatus::StepUnderflow;
            return Ok(best);
        }
        let (v, d) = eval(trial, &mut evaluations, &mut best);
        if !v.is_finite() || !armijo_holds(phi0, slope0, trial, v, c1) || v >= lo.1 {
            hi = (trial, v, d);
        } else {
            if d.abs() <= curvature_bound {
                return Ok(accept(trial, v, d, evaluations));
            }
            if d * (hi.0 - lo.0) >= T::zero() {
                hi = lo;
            }
            lo = (trial, v, d);
        }
    }
}
