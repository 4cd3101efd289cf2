use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{check_dim, full_value, ProblemConstants, SumProblem};
use crate::error::{invalid, Result};
use crate::Scalar;

/// Separable quadratic test bed with per-term centers:
///
/// `f_i(x) = ½ Σ_j d_j (x_j − c_ij)²`, shared positive curvature `d`.
///
/// The aggregate has Hessian `diag(d) + λI`, so `μ = min(d) + λ` and
/// `L = max(d) + λ` exactly, and the minimizer and optimal value are known.
/// A zero curvature entry gives a flat (non-strongly-convex) direction.
#[derive(Debug, Clone)]
pub struct SyntheticQuadratic<T> {
    curvature: Vec<T>,
    centers: Vec<Vec<T>>,
    lambda: T,
    x_star: Vec<T>,
    f_star: T,
}

impl<T: Scalar> SyntheticQuadratic<T> {
    pub fn new(curvature: Vec<T>, centers: Vec<Vec<T>>, lambda: T) -> Result<Self> {
        let n = curvature.len();
        if n == 0 || centers.is_empty() {
            return Err(invalid("quadratic needs n ≥ 1 and M ≥ 1"));
        }
        if curvature.iter().any(|&d| d < T::zero() || !d.is_finite()) {
            return Err(invalid("curvatures must be finite and nonnegative"));
        }
        if lambda < T::zero() {
            return Err(invalid("lambda must be nonnegative"));
        }
        for c in &centers {
            check_dim(n, c.len())?;
        }
        let m = T::of_usize(centers.len());
        let x_star = (0..n)
            .map(|j| {
                let mean = centers.iter().map(|c| c[j]).sum::<T>() / m;
                let h = curvature[j] + lambda;
                if h > T::zero() {
                    curvature[j] * mean / h
                } else {
                    mean
                }
            })
            .collect();
        let mut q = Self {
            curvature,
            centers,
            lambda,
            x_star,
            f_star: T::zero(),
        };
        q.f_star = full_value(&q, &q.x_star)?;
        Ok(q)
    }

    /// `M` identical terms centered at the origin: `x* = 0`, `f* = 0`, and
    /// gradients carry only relative rounding error all the way down.
    pub fn centered(curvature: Vec<T>, m: usize) -> Result<Self> {
        let n = curvature.len();
        Self::new(curvature, vec![vec![T::zero(); n]; m.max(1)], T::zero())
    }

    /// Curvatures log-spaced from `mu` to `l` (both attained exactly) and
    /// Gaussian term centers with standard deviation `spread`.
    pub fn random(n: usize, m: usize, mu: T, l: T, spread: T, seed: u64) -> Result<Self> {
        let curvature = log_spaced(n, mu, l)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = (0..m.max(1))
            .map(|_| {
                (0..n)
                    .map(|_| spread * T::of(rng.sample::<f64, _>(StandardNormal)))
                    .collect()
            })
            .collect();
        Self::new(curvature, centers, T::zero())
    }

    pub fn curvature(&self) -> &[T] {
        &self.curvature
    }

    pub fn centers(&self) -> &[Vec<T>] {
        &self.centers
    }

    pub fn x_star(&self) -> &[T] {
        &self.x_star
    }

    pub fn f_star(&self) -> T {
        self.f_star
    }

    /// `½ Σ_j (d_j + λ)(x_j − x*_j)²`
    pub fn gap(&self, x: &[T]) -> T {
        self.curvature.iter().zip(x.iter().zip(&self.x_star)).fold(
            T::zero(),
            |acc, (&d, (&xi, &si))| {
                let r = xi - si;
                acc + (d + self.lambda) * r * r
            },
        ) * T::of(0.5)
    }
}

/// `n` values from `lo` to `hi` (both exact) with constant ratio.
pub fn log_spaced<T: Scalar>(n: usize, lo: T, hi: T) -> Result<Vec<T>> {
    if n == 0 {
        return Err(invalid("dimension must be positive"));
    }
    if !(lo > T::zero() && lo <= hi) {
        return Err(invalid("need 0 < mu ≤ L"));
    }
    if n == 1 {
        return if lo == hi {
            Ok(vec![lo])
        } else {
            Err(invalid("n = 1 requires mu = L"))
        };
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..n)
        .map(|j| match j {
            0 => lo,
            _ if j == n - 1 => hi,
            _ => (a + (b - a) * T::of_usize(j) / T::of_usize(n - 1)).exp(),
        })
        .collect())
}

impl<T: Scalar> SumProblem<T> for SyntheticQuadratic<T> {
    fn num_terms(&self) -> usize {
        self.centers.len()
    }

    fn dim(&self) -> usize {
        self.curvature.len()
    }

    fn lambda(&self) -> T {
        self.lambda
    }

    fn term_value(&self, i: usize, x: &[T]) -> T {
        let c = &self.centers[i];
        self.curvature
            .iter()
            .zip(x.iter().zip(c))
            .fold(T::zero(), |acc, (&d, (&xj, &cj))| {
                acc + d * (xj - cj) * (xj - cj)
            })
            * T::of(0.5)
    }

    fn term_accumulate(&self, i: usize, x: &[T], weight: T, acc: &mut [T]) -> T {
        let c = &self.centers[i];
        for j in 0..x.len() {
            acc[j] += weight * self.curvature[j] * (x[j] - c[j]);
        }
        self.term_value(i, x)
    }

    fn constants(&self) -> ProblemConstants<T> {
        let min = self.curvature.iter().copied().fold(T::infinity(), T::min) + self.lambda;
        let max = self.curvature.iter().copied().fold(T::zero(), T::max) + self.lambda;
        ProblemConstants {
            mu: (min > T::zero()).then_some(min),
            lipschitz: Some(max),
            f_star: Some(self.f_star),
            x_star: Some(self.x_star.clone()),
            beta1: None,
            beta2: None,
        }
    }

    fn optimality_gap(&self, x: &[T]) -> Option<T> {
        Some(self.gap(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{norm_sq, rel_diff};
    use crate::problems::testing::assert_gradient_matches_fd;
    use crate::problems::{full_gradient, full_value};

    fn two_term() -> SyntheticQuadratic<f64> {
        SyntheticQuadratic::new(vec![1.0], vec![vec![1.0], vec![-1.0]], 0.0).unwrap()
    }

    #[test]
    fn two_term_value_and_gradient_at_origin() {
        let q = two_term();
        assert_eq!(full_value(&q, &[0.0]).unwrap(), 0.5);
        assert_eq!(full_gradient(&q, &[0.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn minimizer_attains_optimal_value() {
        let q = SyntheticQuadratic::random(6, 9, 0.5, 2.0, 1.0, 3).unwrap();
        assert_eq!(full_value(&q, q.x_star()).unwrap(), q.f_star());
        assert_eq!(q.gap(q.x_star()), 0.0);
        let g = full_gradient(&q, q.x_star()).unwrap();
        assert!(norm_sq(&g) < 1e-28);
    }

    #[test]
    fn constants_are_exact_extremes() {
        let q = SyntheticQuadratic::random(10, 4, 0.5, 2.0, 1.0, 1).unwrap();
        let c = q.constants();
        assert_eq!(c.mu, Some(0.5));
        assert_eq!(c.lipschitz, Some(2.0));
        let flat = SyntheticQuadratic::new(vec![0.0, 1.0], vec![vec![1.0, 1.0]], 0.0).unwrap();
        assert_eq!(flat.constants().mu, None);
    }

    #[test]
    fn regularized_minimizer_closed_form() {
        let q = SyntheticQuadratic::new(vec![1.0, 3.0], vec![vec![2.0, 1.0], vec![0.0, -3.0]], 0.5)
            .unwrap();
        let g = full_gradient(&q, q.x_star()).unwrap();
        assert!(norm_sq(&g) < 1e-28);
        let x = [0.3f64, -0.7];
        let direct = full_value(&q, &x).unwrap() - q.f_star();
        assert!((direct - q.gap(&x)).abs() < 1e-14);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let q = SyntheticQuadratic::random(5, 7, 0.1, 3.0, 2.0, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let x: Vec<f64> = (0..5).map(|_| rng.sample(StandardNormal)).collect();
            assert_gradient_matches_fd(&q, &x, 1e-6);
        }
    }

    #[test]
    fn gradient_norm_sandwich() {
        // 2μ(f − f*) ≤ ‖∇f‖² ≤ 2L(f − f*)
        let q = SyntheticQuadratic::random(8, 5, 0.5, 4.0, 1.0, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let x: Vec<f64> = (0..8)
                .map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let g2 = norm_sq(&full_gradient(&q, &x).unwrap());
            let gap = q.gap(&x);
            assert!(g2 >= 2.0 * 0.5 * gap * (1.0 - 1e-10));
            assert!(g2 <= 2.0 * 4.0 * gap * (1.0 + 1e-10));
        }
    }

    #[test]
    fn centered_instance_has_origin_minimizer() {
        let q = SyntheticQuadratic::centered(vec![0.5, 2.0], 3).unwrap();
        assert_eq!(q.x_star(), &[0.0, 0.0]);
        assert_eq!(q.f_star(), 0.0);
        let g = full_gradient(&q, &[1e-200, 1e-200]).unwrap();
        assert!(rel_diff(&g, &[0.5e-200, 2e-200], 0.0) < 1e-15);
    }

    #[test]
    fn term_evaluation_is_pure() {
        let q = SyntheticQuadratic::random(4, 3, 1.0, 2.0, 1.0, 9).unwrap();
        let x = [0.1f64, 0.2, 0.3, 0.4];
        assert_eq!(q.term_value(1, &x).to_bits(), q.term_value(1, &x).to_bits());
        assert_eq!(q.term_gradient(2, &x), q.term_gradient(2, &x));
    }

    #[test]
    fn works_in_single_precision() {
        let q =
            SyntheticQuadratic::<f32>::new(vec![1.0], vec![vec![1.0], vec![-1.0]], 0.0).unwrap();
        assert_eq!(full_value(&q, &[0.0f32]).unwrap(), 0.5f32);
    }
}
