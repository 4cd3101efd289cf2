//! Small dense/sparse vector kernels and the deterministic reduction used
//! by every aggregate over terms.

use rayon::prelude::*;

use crate::Scalar;

/// Number of consecutive terms folded sequentially before the tree phase.
pub const REDUCTION_CHUNK: usize = 256;

/// Chunk count above which chunk partials are computed on the rayon pool.
const PARALLEL_CHUNKS: usize = 8;

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn norm_sq<T: Scalar>(a: &[T]) -> T {
    dot(a, a)
}

pub fn norm<T: Scalar>(a: &[T]) -> T {
    norm_sq(a).sqrt()
}

/// `y += alpha * x`
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scale<T: Scalar>(alpha: T, x: &mut [T]) {
    for xi in x.iter_mut() {
        *xi *= alpha;
    }
}

pub fn sub<T: Scalar>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| x - y).collect()
}

pub fn dist_sq<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y))
}

/// Relative difference `‖a − b‖ / max(‖a‖, ‖b‖, floor)`.
pub fn rel_diff<T: Scalar>(a: &[T], b: &[T], floor: T) -> T {
    let d = dist_sq(a, b).sqrt();
    let s = norm(a).max(norm(b)).max(floor);
    if s == T::zero() {
        d
    } else {
        d / s
    }
}

/// Sparse vector with strictly increasing 0-based indices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVec<T> {
    pub indices: Vec<usize>,
    pub values: Vec<T>,
}

impl<T: Scalar> SparseVec<T> {
    pub fn new(indices: Vec<usize>, values: Vec<T>) -> Self {
        debug_assert_eq!(indices.len(), values.len());
        debug_assert!(indices.windows(2).all(|w| w[0] < w[1]));
        Self { indices, values }
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// Largest index plus one, or 0 for an empty row.
    pub fn min_dim(&self) -> usize {
        self.indices.last().map_or(0, |&i| i + 1)
    }

    pub fn dot_dense(&self, x: &[T]) -> T {
        self.indices
            .iter()
            .zip(&self.values)
            .fold(T::zero(), |acc, (&i, &v)| acc + v * x[i])
    }

    /// Merge-based sparse-sparse inner product.
    pub fn dot_sparse(&self, other: &SparseVec<T>) -> T {
        let (mut p, mut q) = (0, 0);
        let mut acc = T::zero();
        while p < self.indices.len() && q < other.indices.len() {
            match self.indices[p].cmp(&other.indices[q]) {
                std::cmp::Ordering::Less => p += 1,
                std::cmp::Ordering::Greater => q += 1,
                std::cmp::Ordering::Equal => {
                    acc += self.values[p] * other.values[q];
                    p += 1;
                    q += 1;
                }
            }
        }
        acc
    }

    /// `y[offset + i] += alpha * self[i]`
    pub fn axpy_into(&self, alpha: T, y: &mut [T], offset: usize) {
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            y[offset + i] += alpha * v;
        }
    }

    pub fn norm_sq(&self) -> T {
        self.values.iter().fold(T::zero(), |acc, &v| acc + v * v)
    }

    pub fn cast<U: Scalar>(&self) -> SparseVec<U> {
        SparseVec {
            indices: self.indices.clone(),
            values: self.values.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

/// Pairwise (tree) sum of partials; the shape of the tree depends only on
/// `parts.len()`.
pub fn tree_sum<T: Scalar>(parts: &[T]) -> T {
    match parts.len() {
        0 => T::zero(),
        1 => parts[0],
        n => {
            let mid = n / 2;
            tree_sum(&parts[..mid]) + tree_sum(&parts[mid..])
        }
    }
}

fn tree_sum_vec<T: Scalar>(parts: &mut [Vec<T>]) -> Vec<T> {
    match parts.len() {
        0 => Vec::new(),
        1 => std::mem::take(&mut parts[0]),
        n => {
            let mid = n / 2;
            let (lo, hi) = parts.split_at_mut(mid);
            let mut a = tree_sum_vec(lo);
            let b = tree_sum_vec(hi);
            for (ai, bi) in a.iter_mut().zip(&b) {
                *ai += *bi;
            }
            a
        }
    }
}

/// Sums `f(i)` over `indices` in fixed chunks followed by a tree reduction.
/// The result is independent of the number of worker threads.
pub fn reduce_values<T, F>(indices: &[usize], f: F) -> T
where
    T: Scalar,
    F: Fn(usize) -> T + Sync,
{
    let chunk = |c: &[usize]| c.iter().fold(T::zero(), |acc, &i| acc + f(i));
    let partials: Vec<T> = if indices.len() > PARALLEL_CHUNKS * REDUCTION_CHUNK {
        indices.par_chunks(REDUCTION_CHUNK).map(chunk).collect()
    } else {
        indices.chunks(REDUCTION_CHUNK).map(chunk).collect()
    };
    tree_sum(&partials)
}

/// Like [`reduce_values`] but each term also accumulates a dense vector of
/// length `dim` through `f(i, acc) -> value`.
pub fn reduce_values_vectors<T, F>(indices: &[usize], dim: usize, f: F) -> (T, Vec<T>)
where
    T: Scalar,
    F: Fn(usize, &mut [T]) -> T + Sync,
{
    let chunk = |c: &[usize]| {
        let mut acc = vec![T::zero(); dim];
        let v = c.iter().fold(T::zero(), |s, &i| s + f(i, &mut acc));
        (v, acc)
    };
    let partials: Vec<(T, Vec<T>)> = if indices.len() > PARALLEL_CHUNKS * REDUCTION_CHUNK {
        indices.par_chunks(REDUCTION_CHUNK).map(chunk).collect()
    } else {
        indices.chunks(REDUCTION_CHUNK).map(chunk).collect()
    };
    let (vals, mut vecs): (Vec<T>, Vec<Vec<T>>) = partials.into_iter().unzip();
    let total = tree_sum(&vals);
    let mut grad = tree_sum_vec(&mut vecs);
    if grad.is_empty() {
        grad = vec![T::zero(); dim];
    }
    (total, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparse_dot_matches_dense() {
        let a = SparseVec::new(vec![0, 3, 7], vec![1.0, 2.0, -1.0]);
        let b = SparseVec::new(vec![3, 5, 7], vec![4.0, 9.0, 2.0]);
        assert_eq!(a.dot_sparse(&b), 8.0 - 2.0);
        let mut dense = vec![0.0; 8];
        b.axpy_into(1.0, &mut dense, 0);
        assert_eq!(a.dot_dense(&dense), 6.0);
    }

    #[test]
    fn reduction_is_order_fixed() {
        let idx: Vec<usize> = (0..5000).collect();
        let f = |i: usize| 1.0 / (1.0 + i as f64);
        let a: f64 = reduce_values(&idx, f);
        let b: f64 = reduce_values(&idx, f);
        assert_eq!(a.to_bits(), b.to_bits());
        let (v, g) = reduce_values_vectors(&idx, 2, |i, acc: &mut [f64]| {
            acc[0] += f(i);
            acc[1] -= f(i);
            f(i)
        });
        assert_eq!(v.to_bits(), a.to_bits());
        assert_eq!(g[0].to_bits(), a.to_bits());
        assert_eq!(g[1], -a);
    }

    #[test]
    fn empty_reduction_yields_zero_vector() {
        let (v, g) = reduce_values_vectors::<f64, _>(&[], 3, |_, _| 1.0);
        assert_eq!(v, 0.0);
        assert_eq!(g, vec![0.0; 3]);
    }
}
