//! Small dense matrices.
//!
//! Everything here works on the handful-of-dimensions matrices that show up
//! in mixed Hessians and local affine fits, so the algorithms favour accuracy
//! over asymptotics: partial-pivot LU for determinants and inverses,
//! Householder QR for least squares, and one-sided Jacobi for singular
//! values (which keeps small singular values accurate to working precision,
//! unlike eigenvalues of `AᵀA`).

use std::ops::{Index, IndexMut};

use serde::ser::{Serialize, SerializeSeq, Serializer};

use crate::scalar::Scalar;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from row vectors. Panics on ragged input.
    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        Self {
            rows: r,
            cols: c,
            data: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        Self::from_fn(self.rows, other.cols, |i, j| {
            (0..self.cols).map(|k| self[(i, k)] * other[(k, j)]).sum()
        })
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(self.cols, v.len(), "mul_vec shape mismatch");
        (0..self.rows)
            .map(|i| crate::scalar::dot(self.row(i), v))
            .collect()
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a - b)
                .collect(),
        }
    }

    pub fn scale(&self, s: T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&a| a * s).collect(),
        }
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &a| m.max(a.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|a| a.is_finite())
    }

    /// Determinant by LU with partial pivoting.
    pub fn determinant(&self) -> T {
        assert!(self.is_square(), "determinant of non-square matrix");
        let n = self.rows;
        let mut a = self.data.clone();
        let mut det = T::one();
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| a[i * n + k].abs().partial_cmp(&a[j * n + k].abs()).unwrap())
                .unwrap();
            if a[p * n + k] == T::zero() {
                return T::zero();
            }
            if p != k {
                for j in 0..n {
                    a.swap(k * n + j, p * n + j);
                }
                det = -det;
            }
            let pivot = a[k * n + k];
            det = det * pivot;
            for i in k + 1..n {
                let f = a[i * n + k] / pivot;
                for j in k + 1..n {
                    a[i * n + j] = a[i * n + j] - f * a[k * n + j];
                }
            }
        }
        det
    }

    /// Inverse by Gauss-Jordan with partial pivoting; `None` if singular.
    pub fn inverse(&self) -> Option<Self> {
        assert!(self.is_square(), "inverse of non-square matrix");
        let n = self.rows;
        let mut a = self.clone();
        let mut inv = Self::identity(n);
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| a[(i, k)].abs().partial_cmp(&a[(j, k)].abs()).unwrap())
                .unwrap();
            if a[(p, k)] == T::zero() {
                return None;
            }
            if p != k {
                for j in 0..n {
                    a.data.swap(k * n + j, p * n + j);
                    inv.data.swap(k * n + j, p * n + j);
                }
            }
            let pivot = a[(k, k)];
            for j in 0..n {
                a[(k, j)] = a[(k, j)] / pivot;
                inv[(k, j)] = inv[(k, j)] / pivot;
            }
            for i in 0..n {
                if i == k {
                    continue;
                }
                let f = a[(i, k)];
                if f == T::zero() {
                    continue;
                }
                for j in 0..n {
                    a[(i, j)] = a[(i, j)] - f * a[(k, j)];
                    inv[(i, j)] = inv[(i, j)] - f * inv[(k, j)];
                }
            }
        }
        Some(inv)
    }

    /// Singular values in descending order (one-sided Jacobi).
    pub fn singular_values(&self) -> Vec<T> {
        // Work on the orientation with at least as many rows as columns.
        let mut a = if self.rows >= self.cols {
            self.clone()
        } else {
            self.transpose()
        };
        let (m, n) = (a.rows, a.cols);
        let eps = T::epsilon();
        for _sweep in 0..60 {
            let mut rotated = false;
            for p in 0..n {
                for q in p + 1..n {
                    let (mut alpha, mut beta, mut gamma) = (T::zero(), T::zero(), T::zero());
                    for i in 0..m {
                        let (ap, aq) = (a[(i, p)], a[(i, q)]);
                        alpha = alpha + ap * ap;
                        beta = beta + aq * aq;
                        gamma = gamma + ap * aq;
                    }
                    if gamma == T::zero() || gamma.abs() <= eps * (alpha * beta).sqrt() {
                        continue;
                    }
                    rotated = true;
                    let zeta = (beta - alpha) / (gamma + gamma);
                    let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                    let c = T::one() / (T::one() + t * t).sqrt();
                    let s = c * t;
                    for i in 0..m {
                        let (ap, aq) = (a[(i, p)], a[(i, q)]);
                        a[(i, p)] = c * ap - s * aq;
                        a[(i, q)] = s * ap + c * aq;
                    }
                }
            }
            if !rotated {
                break;
            }
        }
        let mut sv: Vec<T> = (0..n)
            .map(|j| (0..m).map(|i| a[(i, j)] * a[(i, j)]).sum::<T>().sqrt())
            .collect();
        sv.sort_by(|x, y| y.partial_cmp(x).unwrap());
        sv
    }

    /// Operator 2-norm.
    pub fn spectral_norm(&self) -> T {
        self.singular_values()
            .first()
            .copied()
            .unwrap_or_else(T::zero)
    }

    /// Solves `min ‖self·X − rhs‖` by Householder QR.
    ///
    /// Returns `None` when `self` is numerically rank deficient, i.e. some
    /// diagonal entry of `R` falls below `rank_tol` times the largest one.
    pub fn least_squares(&self, rhs: &Self, rank_tol: T) -> Option<Self> {
        assert_eq!(self.rows, rhs.rows, "least_squares shape mismatch");
        let (m, n) = (self.rows, self.cols);
        if m < n {
            return None;
        }
        let mut a = self.clone();
        let mut b = rhs.clone();
        for k in 0..n {
            let norm_x = (k..m).map(|i| a[(i, k)] * a[(i, k)]).sum::<T>().sqrt();
            if norm_x == T::zero() {
                continue;
            }
            let alpha = if a[(k, k)] > T::zero() {
                -norm_x
            } else {
                norm_x
            };
            let mut v: Vec<T> = (k..m).map(|i| a[(i, k)]).collect();
            v[0] = v[0] - alpha;
            let vnorm2: T = v.iter().map(|&x| x * x).sum();
            if vnorm2 == T::zero() {
                continue;
            }
            let two = T::lit(2.0);
            for j in k..n {
                let s: T = (k..m).map(|i| v[i - k] * a[(i, j)]).sum();
                let f = two * s / vnorm2;
                for i in k..m {
                    a[(i, j)] = a[(i, j)] - f * v[i - k];
                }
            }
            for j in 0..b.cols {
                let s: T = (k..m).map(|i| v[i - k] * b[(i, j)]).sum();
                let f = two * s / vnorm2;
                for i in k..m {
                    b[(i, j)] = b[(i, j)] - f * v[i - k];
                }
            }
        }
        let rmax = (0..n).fold(T::zero(), |acc, i| acc.max(a[(i, i)].abs()));
        if rmax == T::zero() || (0..n).any(|i| a[(i, i)].abs() <= rank_tol * rmax) {
            return None;
        }
        let mut x = Self::zeros(n, b.cols);
        for j in 0..b.cols {
            for i in (0..n).rev() {
                let s: T = (i + 1..n).map(|k| a[(i, k)] * x[(k, j)]).sum();
                x[(i, j)] = (b[(i, j)] - s) / a[(i, i)];
            }
        }
        Some(x)
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// Serialized as a list of rows.
impl<T: Scalar> Serialize for Matrix<T> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(self.rows))?;
        for i in 0..self.rows {
            seq.serialize_element(self.row(i))?;
        }
        seq.end()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix<f64> {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
    }

    #[test]
    fn determinant_and_inverse() {
        let a = m(&[&[4.0, 3.0], &[6.0, 3.0]]);
        assert!((a.determinant() + 6.0).abs() < 1e-14);
        let inv = a.inverse().unwrap();
        let prod = a.matmul(&inv);
        assert!(prod.sub(&Matrix::identity(2)).max_abs() < 1e-14);
        assert!(m(&[&[1.0, 2.0], &[2.0, 4.0]]).inverse().is_none());
        let p = m(&[&[0.0, 1.0, 0.0], &[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0]]);
        assert_eq!(p.determinant(), -1.0);
    }

    #[test]
    fn singular_values_of_rotation_scaled() {
        let th: f64 = 0.7;
        let a = m(&[&[3.0 * th.cos(), -th.sin()], &[3.0 * th.sin(), th.cos()]]);
        let sv = a.singular_values();
        assert!((sv[0] - 3.0).abs() < 1e-14);
        assert!((sv[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn tiny_singular_value_stays_accurate() {
        let a = m(&[&[1.0, 1.0], &[1.0, 1.0 + 1e-12]]);
        let sv = a.singular_values();
        // σ₁σ₂ = |det| ≈ 1e-12 with σ₁ ≈ 2; eigenvalues of AᵀA would lose σ₂
        // entirely at this scale.
        let det = a.determinant();
        assert!((sv[0] * sv[1] - det).abs() < 1e-4 * det, "{sv:?} vs {det}");
        let rank1 = m(&[&[1.0, 0.0], &[0.0, 0.0]]);
        assert_eq!(rank1.singular_values()[1], 0.0);
    }

    #[test]
    fn least_squares_exact_on_consistent_system() {
        let a = m(&[&[1.0, 0.0], &[1.0, 1.0], &[1.0, 2.0], &[1.0, 3.0]]);
        let b = m(&[&[1.0], &[3.0], &[5.0], &[7.0]]);
        let x = a.least_squares(&b, 1e-12).unwrap();
        assert!((x[(0, 0)] - 1.0).abs() < 1e-13);
        assert!((x[(1, 0)] - 2.0).abs() < 1e-13);
        let rank_def = m(&[&[1.0, 2.0], &[2.0, 4.0], &[3.0, 6.0]]);
        let rhs = m(&[&[1.0], &[2.0], &[3.0]]);
        assert!(rank_def.least_squares(&rhs, 1e-10).is_none());
    }

    #[test]
    fn works_in_single_precision() {
        let a = Matrix::<f32>::from_rows(&[vec![2.0, 0.0], vec![0.0, 0.5]]);
        assert!((a.determinant() - 1.0).abs() < 1e-6);
        assert!((a.spectral_norm() - 2.0).abs() < 1e-6);
    }
}
