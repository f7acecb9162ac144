//! Small dense linear algebra over [`Real`].
//!
//! Matrices here are m×m with m the number of atoms, so plain row-major
//! storage and O(m³) algorithms are all that is needed.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::Real;

/// Row-major dense matrix. Serializes as a list of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<Vec<T>>", try_from = "Vec<Vec<T>>")]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> DenseMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(invalid("ragged matrix rows"));
        }
        Ok(Self { rows: r, cols: c, data: rows.into_iter().flatten().collect() })
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

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
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
            (0..self.cols).fold(T::zero(), |acc, k| acc + self[(i, k)] * other[(k, j)])
        })
    }

    pub fn matvec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(self.cols, v.len(), "matvec shape mismatch");
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    pub fn quad_form(&self, v: &[T]) -> T {
        dot(v, &self.matvec(v))
    }

    pub fn scale(&self, s: T) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| x * s).collect() }
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |acc, (&a, &b)| acc.max((a - b).abs()))
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }

    /// Replaces the matrix by `(A + Aᵀ) / 2`.
    pub fn symmetrize(&mut self) {
        let half = T::of(0.5);
        for i in 0..self.rows {
            for j in 0..i {
                let s = (self[(i, j)] + self[(j, i)]) * half;
                self[(i, j)] = s;
                self[(j, i)] = s;
            }
        }
    }

    pub fn row_sums(&self) -> Vec<T> {
        (0..self.rows).map(|i| self.row(i).iter().copied().sum()).collect()
    }
}

impl<T> Index<(usize, usize)> for DenseMatrix<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for DenseMatrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

impl<T: Real> From<DenseMatrix<T>> for Vec<Vec<T>> {
    fn from(m: DenseMatrix<T>) -> Self {
        m.to_rows()
    }
}

impl<T: Real> TryFrom<Vec<Vec<T>>> for DenseMatrix<T> {
    type Error = crate::error::Error;
    fn try_from(rows: Vec<Vec<T>>) -> Result<Self> {
        Self::from_rows(rows)
    }
}

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn norm2<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order and the matching orthonormal
/// eigenvectors as the columns of the second matrix.
pub fn symmetric_eigen<T: Real>(a: &DenseMatrix<T>) -> (Vec<T>, DenseMatrix<T>) {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "eigen of non-square matrix");
    let mut m = a.clone();
    m.symmetrize();
    let mut v = DenseMatrix::identity(n);
    let two = T::of(2.0);

    for _sweep in 0..100 {
        let off: T = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .fold(T::zero(), |acc, (i, j)| acc + m[(i, j)] * m[(i, j)]);
        let scale: T = (0..n).fold(T::zero(), |acc, i| acc + m[(i, i)] * m[(i, i)]) + off;
        if off <= T::epsilon() * T::epsilon() * scale || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (two * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].partial_cmp(&m[(j, j)]).expect("finite eigenvalues"));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let vectors = DenseMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    (values, vectors)
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
/// Returns `None` when a pivot vanishes relative to the matrix scale.
pub fn solve<T: Real>(a: &DenseMatrix<T>, b: &[T]) -> Option<Vec<T>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    assert_eq!(n, b.len());
    let scale = a.data.iter().fold(T::zero(), |acc, &x| acc.max(x.abs()));
    if scale == T::zero() {
        return if n == 0 { Some(Vec::new()) } else { None };
    }
    let tiny = scale * T::epsilon() * T::of_usize(n.max(1)) * T::of(16.0);
    let mut m = a.clone();
    let mut x = b.to_vec();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[(i, col)].abs().partial_cmp(&m[(j, col)].abs()).unwrap())
            .unwrap();
        if m[(piv, col)].abs() <= tiny {
            return None;
        }
        if piv != col {
            for k in 0..n {
                let tmp = m[(col, k)];
                m[(col, k)] = m[(piv, k)];
                m[(piv, k)] = tmp;
            }
            x.swap(col, piv);
        }
        for r in (col + 1)..n {
            let f = m[(r, col)] / m[(col, col)];
            if f == T::zero() {
                continue;
            }
            for k in col..n {
                let upd = m[(col, k)];
                m[(r, k)] = m[(r, k)] - f * upd;
            }
            let upd = x[col];
            x[r] = x[r] - f * upd;
        }
    }
    for col in (0..n).rev() {
        let mut acc = x[col];
        for k in (col + 1)..n {
            acc = acc - m[(col, k)] * x[k];
        }
        x[col] = acc / m[(col, col)];
    }
    Some(x)
}

/// Spectrum of a symmetric matrix restricted to the complement of the
/// all-ones direction.
///
/// Returns the `m − 1` restricted eigenvalues (ascending) together with an
/// orthonormal basis of ⟨1⟩^⊥ made of the matching eigenvectors.
pub fn restricted_eigen<T: Real>(a: &DenseMatrix<T>) -> (Vec<T>, Vec<Vec<T>>) {
    let n = a.nrows();
    if n <= 1 {
        return (Vec::new(), Vec::new());
    }
    // Project with Π = I − 11ᵀ/n and shift the 1-direction far away so it
    // is identified unambiguously.
    let pa = project_out_ones(a);
    let shift = pa.data.iter().fold(T::one(), |acc, &x| acc + x.abs()) * T::of(4.0);
    let inv_n = T::one() / T::of_usize(n);
    let shifted = DenseMatrix::from_fn(n, n, |i, j| pa[(i, j)] + shift * inv_n);
    let (vals, vecs) = symmetric_eigen(&shifted);
    // The largest eigenvalue belongs to the 1-direction.
    let values = vals[..n - 1].to_vec();
    let basis = (0..n - 1).map(|c| (0..n).map(|r| vecs[(r, c)]).collect()).collect();
    (values, basis)
}

/// `Π A Π` with `Π = I − 11ᵀ/n`.
pub fn project_out_ones<T: Real>(a: &DenseMatrix<T>) -> DenseMatrix<T> {
    let n = a.nrows();
    let inv_n = T::one() / T::of_usize(n);
    let row_means: Vec<T> = (0..n).map(|i| a.row(i).iter().copied().sum::<T>() * inv_n).collect();
    let col_means: Vec<T> = (0..n).map(|j| (0..n).map(|i| a[(i, j)]).sum::<T>() * inv_n).collect();
    let total: T = row_means.iter().copied().sum::<T>() * inv_n;
    DenseMatrix::from_fn(n, n, |i, j| a[(i, j)] - row_means[i] - col_means[j] + total)
}
