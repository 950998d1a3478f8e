//! Small dense linear-algebra helpers on top of ndarray.

use crate::scalar::Scalar;
use ndarray::{Array1, Array2};

pub type Vector<T> = Array1<T>;
pub type Matrix<T> = Array2<T>;

pub fn norm2<T: Scalar>(v: &Vector<T>) -> T {
    v.iter().map(|&x| x * x).sum::<T>().sqrt()
}

pub fn norm2_sq<T: Scalar>(v: &Vector<T>) -> T {
    v.iter().map(|&x| x * x).sum::<T>()
}

pub fn dist_sq<T: Scalar>(a: &Vector<T>, b: &Vector<T>) -> T {
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<T>()
}

/// Frobenius norm; also an upper bound on the operator norm.
pub fn frob<T: Scalar>(m: &Matrix<T>) -> T {
    m.iter().map(|&x| x * x).sum::<T>().sqrt()
}

pub fn is_finite_vec<T: Scalar>(v: &Vector<T>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Euclidean projection onto the probability simplex {p >= 0, sum p = 1}.
///
/// Held/Wolfe/Crowder pivoting on the sorted coordinates.
pub fn project_simplex<T: Scalar>(v: &[T]) -> Vec<T> {
    let m = v.len();
    assert!(m > 0, "empty simplex projection");
    let mut u: Vec<T> = v.to_vec();
    u.sort_unstable_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let mut css = T::zero();
    let mut theta = T::zero();
    let mut rho = 0usize;
    for (j, &uj) in u.iter().enumerate() {
        css += uj;
        let jt = T::from_usize(j + 1).unwrap();
        let cand = (css - T::one()) / jt;
        if uj - cand > T::zero() {
            rho = j + 1;
            theta = cand;
        }
    }
    debug_assert!(rho >= 1);
    v.iter().map(|&x| (x - theta).max(T::zero())).collect()
}

pub fn clamp<T: Scalar>(x: T, lo: T, hi: T) -> T {
    x.max(lo).min(hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simplex_projection_basics() {
        // Already on the simplex: unchanged.
        let p = project_simplex(&[0.25f64, 0.75]);
        assert!((p[0] - 0.25).abs() < 1e-14 && (p[1] - 0.75).abs() < 1e-14);
        // Dominated coordinate clipped to zero.
        let p = project_simplex(&[10.0f64, 0.0, 0.0]);
        assert_eq!(p, vec![1.0, 0.0, 0.0]);
        // Result is feasible for random inputs.
        for s in 0..50 {
            let v: Vec<f64> = (0..6)
                .map(|i| ((s * 7 + i * 13) % 11) as f64 - 5.0)
                .collect();
            let p = project_simplex(&v);
            let sum: f64 = p.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|&x| x >= 0.0));
        }
    }
}
