//! Dense matrices over a [`Scalar`] with LU factorization (partial pivoting).

use std::ops::{Index, IndexMut};

use thiserror::Error;

use crate::scalar::{Mode, Scalar};
use crate::wide::Wide;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LinalgError {
    #[error("matrix is singular (pivot column {column})")]
    Singular { column: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self, LinalgError> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(LinalgError::Dimension("ragged rows".into()));
        }
        Ok(Matrix { rows: r, cols: c, data: rows.into_iter().flatten().collect() })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)].clone()).collect()
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(&T) -> U) -> Matrix<U> {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(f).collect() }
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)].clone();
            }
        }
        t
    }

    pub fn mul(&self, other: &Matrix<T>) -> Result<Matrix<T>, LinalgError> {
        if self.cols != other.rows {
            return Err(LinalgError::Dimension(format!(
                "{}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = &self[(i, k)];
                if a.is_zero() {
                    continue;
                }
                for j in 0..other.cols {
                    let prod = a.clone() * other[(k, j)].clone();
                    out[(i, j)] = out[(i, j)].clone() + prod;
                }
            }
        }
        Ok(out)
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        (0..self.rows)
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(v)
                    .fold(T::zero(), |acc, (a, b)| acc + a.clone() * b.clone())
            })
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.to_f64_lossy().abs()).fold(0.0, f64::max)
    }

    pub fn lu(&self) -> Result<Lu<T>, LinalgError> {
        Lu::factor(self)
    }

    pub fn inverse(&self) -> Result<Matrix<T>, LinalgError> {
        let lu = self.lu()?;
        let n = self.rows;
        let mut inv = Self::zeros(n, n);
        for j in 0..n {
            let mut e = vec![T::zero(); n];
            e[j] = T::one();
            let col = lu.solve(&e);
            for (i, v) in col.into_iter().enumerate() {
                inv[(i, j)] = v;
            }
        }
        Ok(inv)
    }

    pub fn solve(&self, rhs: &[T]) -> Result<Vec<T>, LinalgError> {
        Ok(self.lu()?.solve(rhs))
    }

    /// Inverse with every column refined to double-word precision, as a
    /// vector of columns.
    pub fn inverse_refined(&self, steps: usize) -> Result<Vec<Vec<Wide<T>>>, LinalgError> {
        let lu = self.lu()?;
        let n = self.rows;
        Ok((0..n)
            .map(|j| {
                let mut e = vec![T::zero(); n];
                e[j] = T::one();
                lu.solve_refined(self, &e, steps)
            })
            .collect())
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// `P A = L U` with unit lower-triangular `L` stored below the diagonal.
#[derive(Debug, Clone)]
pub struct Lu<T> {
    lu: Matrix<T>,
    perm: Vec<usize>,
}

/// Pivots below this multiple of the largest entry count as zero in float mode.
const FLOAT_PIVOT_TOL: f64 = 1e-14;

impl<T: Scalar> Lu<T> {
    fn factor(a: &Matrix<T>) -> Result<Self, LinalgError> {
        if a.rows != a.cols {
            return Err(LinalgError::Dimension("LU of a non-square matrix".into()));
        }
        let n = a.rows;
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = a.max_abs();
        for k in 0..n {
            let mut p = k;
            let mut best = lu[(k, k)].abs();
            for i in k + 1..n {
                let v = lu[(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            let singular = match T::MODE {
                Mode::Rational => best.is_zero(),
                Mode::Float => best.to_f64_lossy() <= FLOAT_PIVOT_TOL * scale,
            };
            if singular {
                return Err(LinalgError::Singular { column: k });
            }
            if p != k {
                for j in 0..n {
                    lu.data.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let pivot = lu[(k, k)].clone();
            for i in k + 1..n {
                if lu[(i, k)].is_zero() {
                    continue;
                }
                let factor = lu[(i, k)].clone() / pivot.clone();
                for j in k + 1..n {
                    let delta = factor.clone() * lu[(k, j)].clone();
                    lu[(i, j)] = lu[(i, j)].clone() - delta;
                }
                lu[(i, k)] = factor;
            }
        }
        Ok(Lu { lu, perm })
    }

    /// Solution of `a x = rhs` (where `self` factors `a`) in double-word
    /// precision, by iterative refinement with residuals accumulated in
    /// [`Wide`] arithmetic. Rational solves are already exact.
    pub fn solve_refined(&self, a: &Matrix<T>, rhs: &[T], steps: usize) -> Vec<Wide<T>> {
        let mut x: Vec<Wide<T>> = self.solve(rhs).into_iter().map(Wide::new).collect();
        if T::MODE == Mode::Rational {
            return x;
        }
        let n = self.lu.rows;
        for _ in 0..steps {
            let r: Vec<T> = (0..n)
                .map(|i| {
                    let mut acc = Wide::new(rhs[i].clone());
                    for (j, xj) in x.iter().enumerate() {
                        if !a[(i, j)].is_zero() {
                            acc = acc.sub(&xj.mul_scalar(&a[(i, j)]));
                        }
                    }
                    acc.value()
                })
                .collect();
            for (xi, d) in x.iter_mut().zip(self.solve(&r)) {
                *xi = xi.add(&Wide::new(d));
            }
        }
        x
    }

    pub fn solve(&self, rhs: &[T]) -> Vec<T> {
        let n = self.lu.rows;
        let mut y: Vec<T> = self.perm.iter().map(|&p| rhs[p].clone()).collect();
        for i in 0..n {
            for j in 0..i {
                if !self.lu[(i, j)].is_zero() {
                    let d = self.lu[(i, j)].clone() * y[j].clone();
                    y[i] = y[i].clone() - d;
                }
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                if !self.lu[(i, j)].is_zero() {
                    let d = self.lu[(i, j)].clone() * y[j].clone();
                    y[i] = y[i].clone() - d;
                }
            }
            y[i] = y[i].clone() / self.lu[(i, i)].clone();
        }
        y
    }
}
