//! Sum-structured objectives `f(x) = (1/M) Σ f_i(x) + (λ/2)‖x‖²`.
//!
//! The regularizer is applied once at the aggregate level, never per term,
//! so a sample average of term gradients is unbiased for the unregularized
//! part and the sampled gradient adds `λx` after averaging.

mod least_squares;
mod logistic;
mod quadratic;

pub use least_squares::LeastSquares;
pub use logistic::{
    binary_logistic_term, lipschitz_bound_logistic, log1p_exp, multinomial_logistic_term, sigmoid,
    spectral_norm_sq, BinaryLogistic, MultinomialLogistic,
};
pub use quadratic::{log_spaced, SyntheticQuadratic};

use crate::error::{invalid, Error, Result};
use crate::linalg::{norm_sq, reduce_values, reduce_values_vectors};
use crate::Scalar;

/// Known or certified constants of a problem instance. Every field is optional.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProblemConstants<T> {
    /// Strong-convexity parameter.
    pub mu: Option<T>,
    /// Gradient Lipschitz constant (or a certified upper bound).
    pub lipschitz: Option<T>,
    pub f_star: Option<T>,
    pub x_star: Option<Vec<T>>,
    /// Constants of `‖∇f_i(x)‖² ≤ β₁ + β₂‖∇f(x)‖²`.
    pub beta1: Option<T>,
    pub beta2: Option<T>,
}

impl<T: Scalar> ProblemConstants<T> {
    pub fn validate(&self) -> Result<()> {
        if let Some(mu) = self.mu {
            if mu <= T::zero() {
                return Err(invalid("mu must be positive"));
            }
        }
        if let (Some(mu), Some(l)) = (self.mu, self.lipschitz) {
            if mu > l {
                return Err(invalid("mu must not exceed L"));
            }
        }
        if matches!(self.beta1, Some(b) if b < T::zero()) {
            return Err(invalid("beta1 must be nonnegative"));
        }
        if matches!(self.beta2, Some(b) if b < T::one()) {
            return Err(invalid("beta2 must be at least 1"));
        }
        Ok(())
    }

    pub fn require_lipschitz(&self) -> Result<T> {
        self.lipschitz.ok_or(Error::MissingConstant("lipschitz"))
    }

    pub fn require_mu(&self) -> Result<T> {
        self.mu.ok_or(Error::MissingConstant("mu"))
    }
}

/// A differentiable objective made of `M` terms over `n` parameters.
///
/// Term evaluations must be pure: equal inputs give bit-identical outputs.
pub trait SumProblem<T: Scalar>: Send + Sync {
    /// `M`
    fn num_terms(&self) -> usize;
    /// `n`
    fn dim(&self) -> usize;
    /// Aggregate 2-norm regularization weight (may be zero).
    fn lambda(&self) -> T;

    fn term_value(&self, i: usize, x: &[T]) -> T;

    /// Returns `f_i(x)` and adds `weight · ∇f_i(x)` into `acc`.
    fn term_accumulate(&self, i: usize, x: &[T], weight: T, acc: &mut [T]) -> T;

    fn term_gradient(&self, i: usize, x: &[T]) -> Vec<T> {
        let mut g = vec![T::zero(); self.dim()];
        self.term_accumulate(i, x, T::one(), &mut g);
        g
    }

    fn constants(&self) -> ProblemConstants<T> {
        ProblemConstants::default()
    }

    /// `f(x) − f*` when the optimal value is known. Implementations with a
    /// closed form override this to avoid cancellation near the optimum.
    fn optimality_gap(&self, x: &[T]) -> Option<T> {
        let f_star = self.constants().f_star?;
        full_value(self, x).ok().map(|f| f - f_star)
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

/// Sampled objective over `indices` (sorted, in-range) including the
/// aggregate regularizer. `indices` equal to `0..M` gives the full objective.
pub fn average_value<T, P>(p: &P, indices: &[usize], x: &[T]) -> T
where
    T: Scalar,
    P: SumProblem<T> + ?Sized,
{
    let sum = reduce_values(indices, |i| p.term_value(i, x));
    let avg = sum / T::of_usize(indices.len().max(1));
    avg + p.lambda() * T::of(0.5) * norm_sq(x)
}

/// Sampled objective value and gradient over `indices`.
pub fn average_value_gradient<T, P>(p: &P, indices: &[usize], x: &[T]) -> (T, Vec<T>)
where
    T: Scalar,
    P: SumProblem<T> + ?Sized,
{
    let (sum, mut grad) = reduce_values_vectors(indices, p.dim(), |i, acc| {
        p.term_accumulate(i, x, T::one(), acc)
    });
    let count = T::of_usize(indices.len().max(1));
    let lambda = p.lambda();
    for (g, &xi) in grad.iter_mut().zip(x) {
        *g = *g / count + lambda * xi;
    }
    (sum / count + lambda * T::of(0.5) * norm_sq(x), grad)
}

/// Unregularized mean of term gradients over `indices`.
pub(crate) fn mean_term_gradient<T, P>(p: &P, indices: &[usize], x: &[T]) -> Vec<T>
where
    T: Scalar,
    P: SumProblem<T> + ?Sized,
{
    let (_, mut grad) = reduce_values_vectors(indices, p.dim(), |i, acc| {
        p.term_accumulate(i, x, T::one(), acc)
    });
    let count = T::of_usize(indices.len().max(1));
    grad.iter_mut().for_each(|g| *g /= count);
    grad
}

pub(crate) fn all_indices(m: usize) -> Vec<usize> {
    (0..m).collect()
}

pub fn full_value<T, P>(p: &P, x: &[T]) -> Result<T>
where
    T: Scalar,
    P: SumProblem<T> + ?Sized,
{
    check_dim(p.dim(), x.len())?;
    Ok(average_value(p, &all_indices(p.num_terms()), x))
}

pub fn full_gradient<T, P>(p: &P, x: &[T]) -> Result<Vec<T>>
where
    T: Scalar,
    P: SumProblem<T> + ?Sized,
{
    Ok(full_value_gradient(p, x)?.1)
}

pub fn full_value_gradient<T, P>(p: &P, x: &[T]) -> Result<(T, Vec<T>)>
where
    T: Scalar,
    P: SumProblem<T> + ?Sized,
{
    check_dim(p.dim(), x.len())?;
    Ok(average_value_gradient(p, &all_indices(p.num_terms()), x))
}

#[cfg(test)]
pub(crate) mod testing {
    //! Finite-difference oracle shared by the problem unit tests.
    use super::*;
    use crate::linalg::norm;

    pub fn central_difference<F: Fn(&[f64]) -> f64>(f: F, x: &[f64]) -> Vec<f64> {
        let h = 1e-5 * (1.0 + norm(x));
        let mut xp = x.to_vec();
        (0..x.len())
            .map(|j| {
                let orig = xp[j];
                xp[j] = orig + h;
                let fp = f(&xp);
                xp[j] = orig - h;
                let fm = f(&xp);
                xp[j] = orig;
                (fp - fm) / (2.0 * h)
            })
            .collect()
    }

    pub fn assert_gradient_matches_fd<P: SumProblem<f64>>(p: &P, x: &[f64], tol: f64) {
        let g = full_gradient(p, x).unwrap();
        let fd = central_difference(|z| full_value(p, z).unwrap(), x);
        let err = crate::linalg::rel_diff(&g, &fd, 1e-8);
        assert!(
            err <= tol,
            "gradient vs finite differences: rel err {err:e}"
        );
    }
}
