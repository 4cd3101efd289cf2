use super::logistic::spectral_norm_sq;
use super::{check_dim, ProblemConstants, SumProblem};
use crate::error::{invalid, Result};
use crate::linalg::SparseVec;
use crate::Scalar;

/// Regularized linear least squares, `f_i(x) = ½(a_iᵀx − b_i)²`.
#[derive(Debug, Clone)]
pub struct LeastSquares<T> {
    rows: Vec<SparseVec<T>>,
    targets: Vec<T>,
    n: usize,
    lambda: T,
    constants: ProblemConstants<T>,
}

impl<T: Scalar> LeastSquares<T> {
    pub fn new(rows: Vec<SparseVec<T>>, targets: Vec<T>, n: usize, lambda: T) -> Result<Self> {
        check_dim(rows.len(), targets.len())?;
        if rows.is_empty() {
            return Err(invalid("least squares needs at least one row"));
        }
        if let Some(needed) = rows.iter().map(SparseVec::min_dim).max() {
            check_dim(n.max(needed), n)?;
        }
        if lambda < T::zero() {
            return Err(invalid("lambda must be nonnegative"));
        }
        let constants = ProblemConstants {
            mu: (lambda > T::zero()).then_some(lambda),
            ..Default::default()
        };
        Ok(Self {
            rows,
            targets,
            n,
            lambda,
            constants,
        })
    }

    /// Fills in `L = ‖A‖²/M + λ`.
    pub fn with_lipschitz_bound(mut self) -> Result<Self> {
        let s = spectral_norm_sq(&self.rows, self.n)?;
        self.constants.lipschitz = Some(s / T::of_usize(self.rows.len()) + self.lambda);
        Ok(self)
    }

    pub fn with_constants(mut self, constants: ProblemConstants<T>) -> Self {
        self.constants = constants;
        self
    }
}

impl<T: Scalar> SumProblem<T> for LeastSquares<T> {
    fn num_terms(&self) -> usize {
        self.rows.len()
    }

    fn dim(&self) -> usize {
        self.n
    }

    fn lambda(&self) -> T {
        self.lambda
    }

    fn term_value(&self, i: usize, x: &[T]) -> T {
        let r = self.rows[i].dot_dense(x) - self.targets[i];
        T::of(0.5) * r * r
    }

    fn term_accumulate(&self, i: usize, x: &[T], weight: T, acc: &mut [T]) -> T {
        let r = self.rows[i].dot_dense(x) - self.targets[i];
        self.rows[i].axpy_into(weight * r, acc, 0);
        T::of(0.5) * r * r
    }

    fn constants(&self) -> ProblemConstants<T> {
        self.constants.clone()
    }
}
