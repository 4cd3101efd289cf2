use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{check_dim, ProblemConstants, SumProblem};
use crate::error::{invalid, Error, Result};
use crate::linalg::{norm, SparseVec};
use crate::Scalar;

const POWER_ITER_CAP: usize = 1000;
const POWER_ITER_TOL: f64 = 1e-6;

/// `log(1 + exp(t))` without overflow for large `|t|`.
pub fn log1p_exp<T: Scalar>(t: T) -> T {
    if t > T::zero() {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// Logistic function `1 / (1 + exp(−t))`.
pub fn sigmoid<T: Scalar>(t: T) -> T {
    if t >= T::zero() {
        T::one() / (T::one() + (-t).exp())
    } else {
        let e = t.exp();
        e / (T::one() + e)
    }
}

/// Value `log(1 + exp(−b aᵀx))` and gradient `−b σ(−b aᵀx) a`.
pub fn binary_logistic_term<T: Scalar>(a: &SparseVec<T>, b: T, x: &[T]) -> Result<(T, Vec<T>)> {
    if a.min_dim() > x.len() {
        return Err(Error::DimensionMismatch {
            expected: a.min_dim(),
            got: x.len(),
        });
    }
    if b != T::one() && b != -T::one() {
        return Err(invalid("binary label must be ±1"));
    }
    let mut g = vec![T::zero(); x.len()];
    let v = binary_accumulate(a, b, x, T::one(), &mut g);
    Ok((v, g))
}

fn binary_accumulate<T: Scalar>(a: &SparseVec<T>, b: T, x: &[T], weight: T, acc: &mut [T]) -> T {
    let margin = b * a.dot_dense(x);
    a.axpy_into(-weight * b * sigmoid(-margin), acc, 0);
    log1p_exp(-margin)
}

/// Value `−log p(b | a, X)` under the softmax model and its gradient,
/// laid out like `X` (row-major `classes × n`).
pub fn multinomial_logistic_term<T: Scalar>(
    a: &SparseVec<T>,
    class: usize,
    params: &[T],
    classes: usize,
) -> Result<(T, Vec<T>)> {
    if classes < 2 {
        return Err(invalid("multinomial model needs at least two classes"));
    }
    if class >= classes {
        return Err(Error::ClassOutOfRange { class, classes });
    }
    if !params.len().is_multiple_of(classes) || a.min_dim() > params.len() / classes {
        return Err(Error::DimensionMismatch {
            expected: a.min_dim() * classes,
            got: params.len(),
        });
    }
    let mut g = vec![T::zero(); params.len()];
    let v = multinomial_accumulate(a, class, params, classes, T::one(), &mut g);
    Ok((v, g))
}

fn multinomial_accumulate<T: Scalar>(
    a: &SparseVec<T>,
    class: usize,
    params: &[T],
    classes: usize,
    weight: T,
    acc: &mut [T],
) -> T {
    let n = params.len() / classes;
    let scores: Vec<T> = (0..classes)
        .map(|j| a.dot_dense(&params[j * n..(j + 1) * n]))
        .collect();
    let max = scores.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = max + scores.iter().map(|&s| (s - max).exp()).sum::<T>().ln();
    for (j, &s) in scores.iter().enumerate() {
        let indicator = if j == class { T::one() } else { T::zero() };
        let coeff = (s - lse).exp() - indicator;
        a.axpy_into(weight * coeff, acc, j * n);
    }
    lse - scores[class]
}

/// Estimate of `‖A‖²` (largest eigenvalue of `AᵀA`) by power iteration.
pub fn spectral_norm_sq<T: Scalar>(rows: &[SparseVec<T>], n: usize) -> Result<T> {
    if rows.is_empty() || n == 0 {
        return Err(invalid("data matrix must be nonempty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v: Vec<T> = (0..n)
        .map(|_| T::of(rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let nv = norm(&v);
    v.iter_mut().for_each(|e| *e /= nv);
    let tol = T::of(POWER_ITER_TOL);
    let mut estimate = T::zero();
    for iter in 0..POWER_ITER_CAP {
        let mut w = vec![T::zero(); n];
        for row in rows {
            row.axpy_into(row.dot_dense(&v), &mut w, 0);
        }
        let next = crate::linalg::dot(&v, &w);
        let nw = norm(&w);
        if nw == T::zero() {
            return Ok(T::zero());
        }
        w.iter_mut().for_each(|e| *e /= nw);
        v = w;
        if iter > 0 && (next - estimate).abs() <= tol * next.abs() {
            return Ok(next);
        }
        estimate = next;
    }
    Err(Error::PowerIteration {
        estimate: estimate.as_f64(),
    })
}

/// Upper bound `0.25‖A‖²/M + λ` on the gradient Lipschitz constant of the
/// averaged, regularized binary logistic objective.
pub fn lipschitz_bound_logistic<T: Scalar>(
    rows: &[SparseVec<T>],
    n: usize,
    lambda: T,
) -> Result<T> {
    let s = spectral_norm_sq(rows, n)?;
    Ok(T::of(0.25) * s / T::of_usize(rows.len()) + lambda)
}

fn data_dim<T: Scalar>(rows: &[SparseVec<T>], n: usize) -> Result<()> {
    let needed = rows.iter().map(SparseVec::min_dim).max().unwrap_or(0);
    if needed > n {
        return Err(Error::DimensionMismatch {
            expected: needed,
            got: n,
        });
    }
    Ok(())
}

/// Regularized binary logistic regression with labels `±1`.
#[derive(Debug, Clone)]
pub struct BinaryLogistic<T> {
    rows: Vec<SparseVec<T>>,
    labels: Vec<T>,
    n: usize,
    lambda: T,
    constants: ProblemConstants<T>,
}

impl<T: Scalar> BinaryLogistic<T> {
    pub fn new(rows: Vec<SparseVec<T>>, labels: Vec<T>, n: usize, lambda: T) -> Result<Self> {
        check_dim(rows.len(), labels.len())?;
        if rows.is_empty() {
            return Err(invalid("logistic problem needs at least one example"));
        }
        data_dim(&rows, n)?;
        if labels.iter().any(|&b| b != T::one() && b != -T::one()) {
            return Err(invalid("binary labels must be ±1"));
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
            labels,
            n,
            lambda,
            constants,
        })
    }

    /// Fills in `L` from the power-iteration bound.
    pub fn with_lipschitz_bound(mut self) -> Result<Self> {
        self.constants.lipschitz = Some(lipschitz_bound_logistic(&self.rows, self.n, self.lambda)?);
        Ok(self)
    }

    pub fn with_constants(mut self, constants: ProblemConstants<T>) -> Self {
        self.constants = constants;
        self
    }

    pub fn rows(&self) -> &[SparseVec<T>] {
        &self.rows
    }

    pub fn labels(&self) -> &[T] {
        &self.labels
    }
}

impl<T: Scalar> SumProblem<T> for BinaryLogistic<T> {
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
        log1p_exp(-self.labels[i] * self.rows[i].dot_dense(x))
    }

    fn term_accumulate(&self, i: usize, x: &[T], weight: T, acc: &mut [T]) -> T {
        binary_accumulate(&self.rows[i], self.labels[i], x, weight, acc)
    }

    fn constants(&self) -> ProblemConstants<T> {
        self.constants.clone()
    }
}

/// Regularized multinomial (softmax) logistic regression. Parameters are a
/// row-major `classes × n` matrix flattened to length `classes · n`.
#[derive(Debug, Clone)]
pub struct MultinomialLogistic<T> {
    rows: Vec<SparseVec<T>>,
    labels: Vec<usize>,
    classes: usize,
    n: usize,
    lambda: T,
    constants: ProblemConstants<T>,
}

impl<T: Scalar> MultinomialLogistic<T> {
    pub fn new(
        rows: Vec<SparseVec<T>>,
        labels: Vec<usize>,
        classes: usize,
        n: usize,
        lambda: T,
    ) -> Result<Self> {
        check_dim(rows.len(), labels.len())?;
        if rows.is_empty() {
            return Err(invalid("logistic problem needs at least one example"));
        }
        if classes < 2 {
            return Err(invalid("multinomial model needs at least two classes"));
        }
        data_dim(&rows, n)?;
        if let Some(&class) = labels.iter().find(|&&c| c >= classes) {
            return Err(Error::ClassOutOfRange { class, classes });
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
            labels,
            classes,
            n,
            lambda,
            constants,
        })
    }

    /// Fills in `L ≤ 0.5‖A‖²/M + λ` (softmax Hessian blocks are bounded by ½).
    pub fn with_lipschitz_bound(mut self) -> Result<Self> {
        let s = spectral_norm_sq(&self.rows, self.n)?;
        self.constants.lipschitz =
            Some(T::of(0.5) * s / T::of_usize(self.rows.len()) + self.lambda);
        Ok(self)
    }

    pub fn with_constants(mut self, constants: ProblemConstants<T>) -> Self {
        self.constants = constants;
        self
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self) -> usize {
        self.n
    }
}

impl<T: Scalar> SumProblem<T> for MultinomialLogistic<T> {
    fn num_terms(&self) -> usize {
        self.rows.len()
    }

    fn dim(&self) -> usize {
        self.classes * self.n
    }

    fn lambda(&self) -> T {
        self.lambda
    }

    fn term_value(&self, i: usize, x: &[T]) -> T {
        let a = &self.rows[i];
        let n = self.n;
        let scores: Vec<T> = (0..self.classes)
            .map(|j| a.dot_dense(&x[j * n..(j + 1) * n]))
            .collect();
        let max = scores.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + scores.iter().map(|&s| (s - max).exp()).sum::<T>().ln();
        lse - scores[self.labels[i]]
    }

    fn term_accumulate(&self, i: usize, x: &[T], weight: T, acc: &mut [T]) -> T {
        multinomial_accumulate(&self.rows[i], self.labels[i], x, self.classes, weight, acc)
    }

    fn constants(&self) -> ProblemConstants<T> {
        self.constants.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{dot, norm_sq};
    use crate::problems::testing::assert_gradient_matches_fd;
    use crate::problems::{full_gradient, full_value};

    fn random_rows(m: usize, n: usize, density: f64, seed: u64) -> Vec<SparseVec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..m)
            .map(|_| {
                let (mut idx, mut val) = (Vec::new(), Vec::new());
                for j in 0..n {
                    if rng.random::<f64>() < density {
                        idx.push(j);
                        val.push(rng.sample(StandardNormal));
                    }
                }
                SparseVec::new(idx, val)
            })
            .collect()
    }

    fn random_binary(m: usize, n: usize, lambda: f64, seed: u64) -> BinaryLogistic<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let labels = (0..m)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        BinaryLogistic::new(random_rows(m, n, 0.6, seed), labels, n, lambda).unwrap()
    }

    #[test]
    fn binary_term_at_zero_margin() {
        let a = SparseVec::new(vec![0, 2], vec![1.0, -2.0]);
        let (v, g) = binary_logistic_term(&a, -1.0, &[0.0; 3]).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-15);
        assert_eq!(g, vec![0.5, 0.0, -1.0]);
    }

    #[test]
    fn binary_term_is_overflow_safe() {
        let a = SparseVec::new(vec![0], vec![1.0]);
        let (v, _) = binary_logistic_term(&a, 1.0, &[50.0]).unwrap();
        assert!((v - (-50f64).exp()).abs() < 1e-30);
        let (v, g) = binary_logistic_term(&a, 1.0, &[-50.0]).unwrap();
        assert!((v - 50.0).abs() < 1e-12 && v.is_finite());
        assert!((g[0] + 1.0).abs() < 1e-15);
        let (v, _) = binary_logistic_term(&a, 1.0, &[-800.0]).unwrap();
        assert_eq!(v, 800.0);
    }

    #[test]
    fn binary_term_rejects_bad_label() {
        let a = SparseVec::new(vec![0], vec![1.0]);
        assert!(binary_logistic_term(&a, 0.5, &[0.0]).is_err());
    }

    #[test]
    fn binary_full_value_at_origin_is_log_two() {
        let p = random_binary(30, 5, 0.0, 1);
        let x = vec![0.0; 5];
        assert!((full_value(&p, &x).unwrap() - 2f64.ln()).abs() < 1e-15);
        // −(1/2M) Σ b_i a_i
        let mut expect = vec![0.0; 5];
        for (row, &b) in p.rows().iter().zip(p.labels()) {
            row.axpy_into(-b / 60.0, &mut expect, 0);
        }
        let g = full_gradient(&p, &x).unwrap();
        assert!(crate::linalg::rel_diff(&g, &expect, 1e-12) < 1e-13);
    }

    #[test]
    fn binary_gradient_matches_finite_differences() {
        let p = random_binary(40, 6, 0.1, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let x: Vec<f64> = (0..6).map(|_| rng.sample(StandardNormal)).collect();
            assert_gradient_matches_fd(&p, &x, 1e-6);
        }
    }

    #[test]
    fn regularized_logistic_is_lambda_strongly_convex() {
        let lambda = 0.3;
        let p = random_binary(25, 4, lambda, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let x: Vec<f64> = (0..4)
                .map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let y: Vec<f64> = (0..4)
                .map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let fx = full_value(&p, &x).unwrap();
            let fy = full_value(&p, &y).unwrap();
            let g = full_gradient(&p, &x).unwrap();
            let d = crate::linalg::sub(&y, &x);
            let lower = fx + dot(&g, &d) + 0.5 * lambda * norm_sq(&d);
            assert!(fy >= lower - 1e-12 * fy.abs().max(1.0));
        }
    }

    #[test]
    fn multinomial_uniform_at_zero() {
        let a = SparseVec::new(vec![1, 3], vec![0.5, 2.0]);
        let (v, g) = multinomial_logistic_term(&a, 4, &vec![0.0; 40], 10).unwrap();
        assert!((v - 10f64.ln()).abs() < 1e-14);
        assert_eq!(g.len(), 40);
    }

    #[test]
    fn multinomial_gradient_rows_sum_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = SparseVec::new(vec![0, 2, 4], vec![1.5, -0.5, 3.0]);
        for _ in 0..10 {
            let params: Vec<f64> = (0..15)
                .map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let (_, g) = multinomial_logistic_term(&a, 1, &params, 3).unwrap();
            for col in 0..5 {
                let s: f64 = (0..3).map(|j| g[j * 5 + col]).sum();
                assert!(s.abs() < 1e-14);
            }
        }
    }

    #[test]
    fn multinomial_rejects_bad_class() {
        let a = SparseVec::new(vec![0], vec![1.0]);
        assert_eq!(
            multinomial_logistic_term(&a, 3, &[0.0; 3], 3),
            Err(Error::ClassOutOfRange {
                class: 3,
                classes: 3
            })
        );
        assert!(MultinomialLogistic::new(vec![a], vec![5], 3, 1, 0.0).is_err());
    }

    #[test]
    fn multinomial_gradient_matches_finite_differences() {
        let rows = random_rows(30, 4, 0.7, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let labels = (0..30).map(|_| rng.random_range(0..3)).collect();
        let p = MultinomialLogistic::new(rows, labels, 3, 4, 0.05).unwrap();
        for _ in 0..10 {
            let x: Vec<f64> = (0..12).map(|_| rng.sample(StandardNormal)).collect();
            assert_gradient_matches_fd(&p, &x, 1e-6);
        }
    }

    #[test]
    fn lipschitz_bound_examples() {
        let eye: Vec<SparseVec<f64>> = vec![
            SparseVec::new(vec![0], vec![1.0]),
            SparseVec::new(vec![1], vec![1.0]),
        ];
        let l = lipschitz_bound_logistic(&eye, 2, 0.0).unwrap();
        assert!((l - 0.125).abs() < 1e-12);
        let l2 = lipschitz_bound_logistic(&eye, 2, 0.01).unwrap();
        assert!((l2 - (l + 0.01)).abs() < 1e-15);
        let single = vec![SparseVec::new(vec![0], vec![2.0f64])];
        assert!((lipschitz_bound_logistic(&single, 2, 0.0).unwrap() - 1.0).abs() < 1e-12);
        assert!(lipschitz_bound_logistic::<f64>(&[], 2, 0.0).is_err());
    }

    #[test]
    fn lipschitz_bound_dominates_curvature() {
        // Rayleigh quotients of the data Gram matrix never exceed the estimate.
        let p = random_binary(50, 6, 0.0, 9).with_lipschitz_bound().unwrap();
        let l = p.constants().lipschitz.unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..50 {
            let v: Vec<f64> = (0..6).map(|_| rng.sample(StandardNormal)).collect();
            let av: f64 = p.rows().iter().map(|r| r.dot_dense(&v).powi(2)).sum();
            let rq = 0.25 * av / 50.0 / norm_sq(&v);
            assert!(rq <= l * (1.0 + 1e-6));
        }
    }
}
