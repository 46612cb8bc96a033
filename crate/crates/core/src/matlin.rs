//! Dense real linear algebra for the small systems this crate works with.
//!
//! Everything here is row-major and allocation-per-result; dimensions stay
//! well below a hundred so no blocking or sparse storage is attempted.

use std::ops::{Deref, DerefMut, Index, IndexMut};

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("dimension mismatch in {op}: left is {left:?}, right is {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not positive definite (pivot {index} = {pivot:e})")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("matrix is singular (pivot {index} = {pivot:e})")]
    Singular { index: usize, pivot: f64 },
    #[error("entry data has length {len}, expected {expected}")]
    BadLength { len: usize, expected: usize },
    #[error("non-finite entry at position {0}")]
    NonFinite(usize),
    #[error("ragged row list: row {row} has {len} entries, expected {expected}")]
    Ragged { row: usize, len: usize, expected: usize },
}

pub type LinalgResult<T> = Result<T, LinalgError>;

/// Column vector.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Vector<S>(Vec<S>);

impl<S: Scalar> Vector<S> {
    pub fn new(entries: Vec<S>) -> Self {
        Vector(entries)
    }

    pub fn zeros(dim: usize) -> Self {
        Vector(vec![S::zero(); dim])
    }

    pub fn from_slice(entries: &[S]) -> Self {
        Vector(entries.to_vec())
    }

    /// Unit vector `e_index` of length `dim`.
    pub fn unit(dim: usize, index: usize) -> Self {
        let mut v = Self::zeros(dim);
        v.0[index] = S::one();
        v
    }

    pub fn from_f64(entries: &[f64]) -> Self {
        Vector(entries.iter().map(|&x| S::lit(x)).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[S] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<S> {
        self.0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|x| x.as_f64()).collect()
    }

    pub fn dot(&self, other: &[S]) -> S {
        dot(&self.0, other)
    }

    pub fn norm(&self) -> S {
        self.dot(&self.0).sqrt()
    }

    pub fn norm_inf(&self) -> S {
        self.0.iter().fold(S::zero(), |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn scaled(&self, factor: S) -> Self {
        Vector(self.0.iter().map(|&x| x * factor).collect())
    }

    pub fn add(&self, other: &[S]) -> Self {
        debug_assert_eq!(self.dim(), other.len());
        Vector(self.0.iter().zip(other).map(|(&a, &b)| a + b).collect())
    }

    pub fn sub(&self, other: &[S]) -> Self {
        debug_assert_eq!(self.dim(), other.len());
        Vector(self.0.iter().zip(other).map(|(&a, &b)| a - b).collect())
    }

    /// `self += factor * other`
    pub fn axpy(&mut self, factor: S, other: &[S]) {
        debug_assert_eq!(self.dim(), other.len());
        for (a, &b) in self.0.iter_mut().zip(other) {
            *a += factor * b;
        }
    }

    pub fn segment(&self, start: usize, len: usize) -> Self {
        Vector(self.0[start..start + len].to_vec())
    }

    /// Stacks the given pieces into one vector.
    pub fn concat(parts: &[&[S]]) -> Self {
        Vector(parts.iter().flat_map(|p| p.iter().copied()).collect())
    }

    pub fn distance(&self, other: &[S]) -> S {
        self.sub(other).norm()
    }
}

impl<S> Deref for Vector<S> {
    type Target = [S];
    fn deref(&self) -> &[S] {
        &self.0
    }
}

impl<S> DerefMut for Vector<S> {
    fn deref_mut(&mut self) -> &mut [S] {
        &mut self.0
    }
}

impl<S> From<Vec<S>> for Vector<S> {
    fn from(v: Vec<S>) -> Self {
        Vector(v)
    }
}

impl<S> FromIterator<S> for Vector<S> {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        Vector(iter.into_iter().collect())
    }
}

pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(S::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn norm<S: Scalar>(a: &[S]) -> S {
    dot(a, a).sqrt()
}

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Matrix<S> {
    pub fn new(rows: usize, cols: usize, data: Vec<S>) -> LinalgResult<Self> {
        if data.len() != rows * cols {
            return Err(LinalgError::BadLength {
                len: data.len(),
                expected: rows * cols,
            });
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(LinalgError::NonFinite(pos));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { S::one() } else { S::zero() })
    }

    pub fn from_diag(diag: &[S]) -> Self {
        let n = diag.len();
        Self::from_fn(n, n, |i, j| if i == j { diag[i] } else { S::zero() })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Builds a matrix from a list of rows. An empty list gives a `0 x cols` matrix.
    pub fn from_rows(rows: &[Vec<S>], cols: usize) -> LinalgResult<Self> {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(LinalgError::Ragged {
                    row: r,
                    len: row.len(),
                    expected: cols,
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn from_f64_rows(rows: &[&[f64]]) -> LinalgResult<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let rows: Vec<Vec<S>> = rows
            .iter()
            .map(|r| r.iter().map(|&x| S::lit(x)).collect())
            .collect();
        Self::from_rows(&rows, cols)
    }

    /// Column matrix holding `v`.
    pub fn column_from(v: &[S]) -> Self {
        Matrix {
            rows: v.len(),
            cols: 1,
            data: v.to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vector<S> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn mul_vec(&self, v: &[S]) -> LinalgResult<Vector<S>> {
        if v.len() != self.cols {
            return Err(LinalgError::DimensionMismatch {
                op: "mul_vec",
                left: self.shape(),
                right: (v.len(), 1),
            });
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    /// `self^T v`
    pub fn tr_mul_vec(&self, v: &[S]) -> LinalgResult<Vector<S>> {
        if v.len() != self.rows {
            return Err(LinalgError::DimensionMismatch {
                op: "tr_mul_vec",
                left: (self.cols, self.rows),
                right: (v.len(), 1),
            });
        }
        let mut out = Vector::zeros(self.cols);
        for (i, &vi) in v.iter().enumerate() {
            out.axpy(vi, self.row(i));
        }
        Ok(out)
    }

    pub fn matmul(&self, other: &Matrix<S>) -> LinalgResult<Matrix<S>> {
        matmul(self, other)
    }

    pub fn add(&self, other: &Matrix<S>) -> LinalgResult<Matrix<S>> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix<S>) -> LinalgResult<Matrix<S>> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    fn zip_with(
        &self,
        other: &Matrix<S>,
        op: &'static str,
        f: impl Fn(S, S) -> S,
    ) -> LinalgResult<Matrix<S>> {
        if self.shape() != other.shape() {
            return Err(LinalgError::DimensionMismatch {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scaled(&self, factor: S) -> Self {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| x * factor).collect(),
        }
    }

    /// Concatenates `[self, other]` column-wise.
    pub fn hstack(&self, other: &Matrix<S>) -> LinalgResult<Matrix<S>> {
        if self.rows != other.rows {
            return Err(LinalgError::DimensionMismatch {
                op: "hstack",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let cols = self.cols + other.cols;
        Ok(Self::from_fn(self.rows, cols, |i, j| {
            if j < self.cols {
                self[(i, j)]
            } else {
                other[(i, j - self.cols)]
            }
        }))
    }

    /// Concatenates `[self; other]` row-wise.
    pub fn vstack(&self, other: &Matrix<S>) -> LinalgResult<Matrix<S>> {
        if self.cols != other.cols {
            return Err(LinalgError::DimensionMismatch {
                op: "vstack",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Matrix {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn block(&self, row0: usize, col0: usize, rows: usize, cols: usize) -> Matrix<S> {
        Self::from_fn(rows, cols, |i, j| self[(row0 + i, col0 + j)])
    }

    pub fn set_block(&mut self, row0: usize, col0: usize, block: &Matrix<S>) {
        for i in 0..block.rows {
            for j in 0..block.cols {
                self[(row0 + i, col0 + j)] = block[(i, j)];
            }
        }
    }

    /// Keeps the listed columns, in order.
    pub fn select_columns(&self, keep: &[usize]) -> Matrix<S> {
        Self::from_fn(self.rows, keep.len(), |i, j| self[(i, keep[j])])
    }

    pub fn frobenius_norm(&self) -> S {
        norm(&self.data)
    }

    pub fn max_abs(&self) -> S {
        self.data.iter().fold(S::zero(), |m, x| m.max(x.abs()))
    }

    pub fn is_symmetric(&self, tol: S) -> bool {
        self.is_square()
            && (0..self.rows)
                .all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }

    pub fn to_f64_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|x| x.as_f64()).collect())
            .collect()
    }
}

impl<S> Index<(usize, usize)> for Matrix<S> {
    type Output = S;
    fn index(&self, (i, j): (usize, usize)) -> &S {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<S> IndexMut<(usize, usize)> for Matrix<S> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut S {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

pub fn matmul<S: Scalar>(a: &Matrix<S>, b: &Matrix<S>) -> LinalgResult<Matrix<S>> {
    if a.cols != b.rows {
        return Err(LinalgError::DimensionMismatch {
            op: "matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for k in 0..a.cols {
            let aik = a[(i, k)];
            if aik == S::zero() {
                continue;
            }
            for j in 0..b.cols {
                out.data[i * b.cols + j] += aik * b.data[k * b.cols + j];
            }
        }
    }
    Ok(out)
}

pub fn matrix_power<S: Scalar>(a: &Matrix<S>, k: usize) -> LinalgResult<Matrix<S>> {
    if !a.is_square() {
        return Err(LinalgError::NotSquare {
            rows: a.rows,
            cols: a.cols,
        });
    }
    let mut result = Matrix::identity(a.rows);
    let mut base = a.clone();
    let mut k = k;
    while k > 0 {
        if k & 1 == 1 {
            result = matmul(&result, &base)?;
        }
        k >>= 1;
        if k > 0 {
            base = matmul(&base, &base)?;
        }
    }
    Ok(result)
}

/// Pivot threshold, relative to the largest diagonal entry, below which a
/// Cholesky factorization is rejected.
pub const SPD_PIVOT_TOL: f64 = 1e-12;

/// Lower-triangular Cholesky factor `L` with `A = L L^T`.
#[derive(Clone, Debug)]
pub struct Cholesky<S> {
    lower: Matrix<S>,
}

impl<S: Scalar> Cholesky<S> {
    /// Factorizes the lower triangle of `a`. Pivots at or below
    /// `pivot_tol * max(1, max diag)` are rejected.
    pub fn factor_with_tol(a: &Matrix<S>, pivot_tol: S) -> LinalgResult<Self> {
        if !a.is_square() {
            return Err(LinalgError::NotSquare {
                rows: a.rows,
                cols: a.cols,
            });
        }
        let n = a.rows;
        let scale = (0..n).fold(S::one(), |m, i| m.max(a[(i, i)].abs()));
        let threshold = pivot_tol * scale;
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > threshold) {
                return Err(LinalgError::NotPositiveDefinite {
                    index: j,
                    pivot: d.as_f64(),
                });
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / djj;
            }
        }
        Ok(Cholesky { lower: l })
    }

    pub fn factor(a: &Matrix<S>) -> LinalgResult<Self> {
        Self::factor_with_tol(a, S::lit(SPD_PIVOT_TOL))
    }

    pub fn lower(&self) -> &Matrix<S> {
        &self.lower
    }

    pub fn solve(&self, b: &[S]) -> LinalgResult<Vector<S>> {
        let n = self.lower.rows;
        if b.len() != n {
            return Err(LinalgError::DimensionMismatch {
                op: "cholesky_solve",
                left: self.lower.shape(),
                right: (b.len(), 1),
            });
        }
        let l = &self.lower;
        let mut y = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                let lik = l[(i, k)];
                let yk = y[k];
                y[i] -= lik * yk;
            }
            y[i] /= l[(i, i)];
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                let lki = l[(k, i)];
                let yk = y[k];
                y[i] -= lki * yk;
            }
            y[i] /= l[(i, i)];
        }
        Ok(Vector(y))
    }

    /// Solves for every column of `b`.
    pub fn solve_matrix(&self, b: &Matrix<S>) -> LinalgResult<Matrix<S>> {
        let mut out = Matrix::zeros(b.rows, b.cols);
        for j in 0..b.cols {
            let x = self.solve(&b.column(j))?;
            for i in 0..b.rows {
                out[(i, j)] = x[i];
            }
        }
        Ok(out)
    }
}

/// Solves `a x = b` for symmetric positive definite `a`.
pub fn solve_spd<S: Scalar>(a: &Matrix<S>, b: &[S]) -> LinalgResult<Vector<S>> {
    Cholesky::factor(a)?.solve(b)
}

/// Strict positive-definiteness test (all Cholesky pivots strictly positive).
pub fn is_positive_definite<S: Scalar>(a: &Matrix<S>) -> bool {
    Cholesky::factor_with_tol(a, S::zero()).is_ok()
}

/// Solves the general square system `a x = b` with column-wise right-hand
/// sides using LU with partial pivoting.
pub fn solve_general<S: Scalar>(a: &Matrix<S>, b: &Matrix<S>) -> LinalgResult<Matrix<S>> {
    if !a.is_square() {
        return Err(LinalgError::NotSquare {
            rows: a.rows,
            cols: a.cols,
        });
    }
    if b.rows != a.rows {
        return Err(LinalgError::DimensionMismatch {
            op: "solve_general",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let n = a.rows;
    let mut m = a.clone();
    let mut x = b.clone();
    let scale = a.max_abs().max(S::min_positive_value());
    let tiny = S::epsilon() * S::lit(n.max(1) as f64) * scale;
    for col in 0..n {
        let (piv, pval) = (col..n)
            .map(|r| (r, m[(r, col)].abs()))
            .fold((col, -S::one()), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pval <= tiny {
            return Err(LinalgError::Singular {
                index: col,
                pivot: pval.as_f64(),
            });
        }
        if piv != col {
            for j in 0..n {
                m.data.swap(col * n + j, piv * n + j);
            }
            for j in 0..x.cols {
                x.data.swap(col * x.cols + j, piv * x.cols + j);
            }
        }
        for r in col + 1..n {
            let factor = m[(r, col)] / m[(col, col)];
            if factor == S::zero() {
                continue;
            }
            for j in col..n {
                let v = m[(col, j)];
                m[(r, j)] -= factor * v;
            }
            for j in 0..x.cols {
                let v = x[(col, j)];
                x[(r, j)] -= factor * v;
            }
        }
    }
    for col in (0..n).rev() {
        for j in 0..x.cols {
            let mut s = x[(col, j)];
            for k in col + 1..n {
                s -= m[(col, k)] * x[(k, j)];
            }
            x[(col, j)] = s / m[(col, col)];
        }
    }
    Ok(x)
}

/// Determinant via LU with partial pivoting.
pub fn determinant<S: Scalar>(a: &Matrix<S>) -> LinalgResult<S> {
    if !a.is_square() {
        return Err(LinalgError::NotSquare {
            rows: a.rows,
            cols: a.cols,
        });
    }
    let n = a.rows;
    let mut m = a.clone();
    let mut det = S::one();
    for col in 0..n {
        let (piv, pval) = (col..n)
            .map(|r| (r, m[(r, col)].abs()))
            .fold((col, -S::one()), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pval == S::zero() {
            return Ok(S::zero());
        }
        if piv != col {
            for j in 0..n {
                m.data.swap(col * n + j, piv * n + j);
            }
            det = -det;
        }
        det *= m[(col, col)];
        for r in col + 1..n {
            let factor = m[(r, col)] / m[(col, col)];
            for j in col..n {
                let v = m[(col, j)];
                m[(r, j)] -= factor * v;
            }
        }
    }
    Ok(det)
}

/// Default relative rank tolerance.
pub const RANK_TOL: f64 = 1e-10;

/// Rank by Gaussian elimination with complete pivoting. Pivots below
/// `tol * (largest pivot)` count as zero.
pub fn numeric_rank<S: Scalar>(a: &Matrix<S>, tol: S) -> usize {
    let (rows, cols) = a.shape();
    let mut m = a.clone();
    let mut rank = 0;
    let mut first_pivot = S::zero();
    for step in 0..rows.min(cols) {
        let mut best = (step, step, S::zero());
        for i in step..rows {
            for j in step..cols {
                let v = m[(i, j)].abs();
                if v > best.2 {
                    best = (i, j, v);
                }
            }
        }
        let (pi, pj, pval) = best;
        if step == 0 {
            first_pivot = pval;
        }
        if pval == S::zero() || pval <= tol * first_pivot {
            break;
        }
        if pi != step {
            for j in 0..cols {
                m.data.swap(step * cols + j, pi * cols + j);
            }
        }
        if pj != step {
            for i in 0..rows {
                m.data.swap(i * cols + step, i * cols + pj);
            }
        }
        for i in step + 1..rows {
            let factor = m[(i, step)] / m[(step, step)];
            for j in step..cols {
                let v = m[(step, j)];
                m[(i, j)] -= factor * v;
            }
        }
        rank += 1;
    }
    rank
}

/// Lower and upper Gershgorin bounds on the spectrum of a symmetric matrix.
fn gershgorin<S: Scalar>(a: &Matrix<S>) -> (S, S) {
    let n = a.rows;
    let mut lo = S::infinity();
    let mut hi = S::neg_infinity();
    for i in 0..n {
        let radius: S = (0..n).filter(|&j| j != i).map(|j| a[(i, j)].abs()).sum();
        lo = lo.min(a[(i, i)] - radius);
        hi = hi.max(a[(i, i)] + radius);
    }
    if n == 0 {
        (S::zero(), S::zero())
    } else {
        (lo, hi)
    }
}

fn shifted<S: Scalar>(a: &Matrix<S>, sign: S, shift: S) -> Matrix<S> {
    // sign * a - shift * I
    Matrix::from_fn(a.rows, a.cols, |i, j| {
        sign * a[(i, j)] - if i == j { shift } else { S::zero() }
    })
}

/// Brackets the largest eigenvalue of `sign * a` by bisection on the
/// positive-definiteness of `s I - sign * a`; returns `(lo, hi)`.
fn bisect_top<S: Scalar>(a: &Matrix<S>, sign: S) -> (S, S) {
    let signed = a.scaled(sign);
    let (mut lo, mut hi) = gershgorin(&signed);
    let two = S::lit(2.0);
    let width = (hi - lo).abs().max(S::min_positive_value());
    // hi is a valid upper bound; lo is a valid lower bound.
    for _ in 0..200 {
        let mid = (lo + hi) / two;
        if mid <= lo || mid >= hi {
            break;
        }
        if is_positive_definite(&shifted(&signed, -S::one(), -mid)) {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= S::epsilon() * S::lit(4.0) * (hi.abs().max(lo.abs()).max(width * S::epsilon())) {
            break;
        }
    }
    (lo, hi)
}

/// Smallest and largest eigenvalue of a symmetric matrix, computed by
/// bisection on Cholesky-based definiteness tests.
pub fn symmetric_eigen_bounds<S: Scalar>(a: &Matrix<S>) -> LinalgResult<(S, S)> {
    if !a.is_square() {
        return Err(LinalgError::NotSquare {
            rows: a.rows,
            cols: a.cols,
        });
    }
    let (_, max_hi) = bisect_top(a, S::one());
    let (_, neg_min_hi) = bisect_top(a, -S::one());
    Ok((-neg_min_hi, max_hi))
}

/// Upper bound on the induced 2-norm, `sqrt(lambda_max(a^T a))`.
pub fn spectral_norm<S: Scalar>(a: &Matrix<S>) -> S {
    if a.rows == 0 || a.cols == 0 {
        return S::zero();
    }
    let gram = matmul(&a.transpose(), a).expect("gram dims");
    if gram.max_abs() == S::zero() {
        return S::zero();
    }
    let (_, hi) = bisect_top(&gram, S::one());
    hi.max(S::zero()).sqrt()
}

/// Finite-horizon decay certificate `||a^k||_2 < 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerCertificate<S> {
    pub k: usize,
    pub bound: S,
}

impl<S: Scalar> PowerCertificate<S> {
    /// Constants `(c_a, phi)` with `||a^j|| <= c_a * phi^j` for every `j`.
    pub fn decay_constants(&self, a: &Matrix<S>) -> (S, S) {
        let floor = S::lit(0.5);
        let phi = self
            .bound
            .powf(S::one() / S::lit(self.k as f64))
            .max(if self.bound == S::zero() { floor } else { S::zero() });
        let mut c = S::one();
        let mut power = Matrix::identity(a.rows());
        for j in 1..self.k {
            power = matmul(&power, a).expect("square");
            c = c.max(spectral_norm(&power) / phi.powi(j as i32));
        }
        (c, phi)
    }
}

/// Smallest `k` in `1..=n_max` with `||a^k||_2 < 1`, or `None`.
pub fn power_norm_certificate<S: Scalar>(
    a: &Matrix<S>,
    n_max: usize,
) -> LinalgResult<Option<PowerCertificate<S>>> {
    if !a.is_square() {
        return Err(LinalgError::NotSquare {
            rows: a.rows,
            cols: a.cols,
        });
    }
    let mut power = Matrix::identity(a.rows);
    for k in 1..=n_max {
        power = matmul(&power, a)?;
        let bound = spectral_norm(&power);
        if bound < S::one() {
            return Ok(Some(PowerCertificate { k, bound }));
        }
        if !bound.is_finite() {
            break;
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix<f64> {
        Matrix::from_f64_rows(rows).unwrap()
    }

    #[test]
    fn matmul_examples() {
        let a = m(&[&[1.0, 1.0], &[0.0, 1.0]]);
        assert_eq!(matmul(&a, &a).unwrap(), m(&[&[1.0, 2.0], &[0.0, 1.0]]));
        assert_eq!(matmul(&Matrix::identity(2), &a).unwrap(), a);
        assert_eq!(matmul(&Matrix::zeros(2, 2), &a).unwrap(), Matrix::zeros(2, 2));
        assert!(matches!(
            matmul(&a, &Matrix::zeros(3, 1)),
            Err(LinalgError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn matrix_power_examples() {
        let a = m(&[&[3.0, 1.0], &[2.0, 5.0]]);
        assert_eq!(matrix_power(&a, 0).unwrap(), Matrix::identity(2));
        let half = Matrix::from_diag(&[0.5, 0.5]);
        assert_eq!(matrix_power(&half, 3).unwrap(), Matrix::from_diag(&[0.125, 0.125]));
        let nil = m(&[&[0.0, 1.0], &[0.0, 0.0]]);
        assert_eq!(matrix_power(&nil, 2).unwrap(), Matrix::zeros(2, 2));
        assert!(matches!(
            matrix_power(&Matrix::<f64>::zeros(2, 3), 2),
            Err(LinalgError::NotSquare { .. })
        ));
    }

    #[test]
    fn solve_spd_examples() {
        let b = [1.5, -2.0];
        assert_eq!(solve_spd(&Matrix::identity(2), &b).unwrap().as_slice(), &b);
        let x = solve_spd(&m(&[&[4.0, 0.0], &[0.0, 9.0]]), &[8.0, 27.0]).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-14 && (x[1] - 3.0).abs() < 1e-14);
        let x = solve_spd(&m(&[&[2.0, 1.0], &[1.0, 2.0]]), &[3.0, 3.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
        assert!(matches!(
            solve_spd(&m(&[&[1.0, 2.0], &[2.0, 1.0]]), &[1.0, 1.0]),
            Err(LinalgError::NotPositiveDefinite { .. })
        ));
        assert!(solve_spd(&m(&[&[1.0, 0.0], &[0.0, 1e-14]]), &[1.0, 1.0]).is_err());
    }

    #[test]
    fn rank_examples() {
        assert_eq!(numeric_rank(&Matrix::<f64>::identity(3), RANK_TOL), 3);
        assert_eq!(numeric_rank(&m(&[&[1.0, 2.0], &[2.0, 4.0]]), RANK_TOL), 1);
        assert_eq!(numeric_rank(&Matrix::<f64>::zeros(3, 2), RANK_TOL), 0);
    }

    #[test]
    fn certificate_examples() {
        let c = power_norm_certificate(&Matrix::<f64>::from_diag(&[0.5, 0.5]), 10)
            .unwrap()
            .unwrap();
        assert_eq!(c.k, 1);
        assert!((c.bound - 0.5).abs() < 1e-12);
        let c = power_norm_certificate(&m(&[&[0.0, 2.0], &[0.0, 0.0]]), 10)
            .unwrap()
            .unwrap();
        assert_eq!((c.k, c.bound), (2, 0.0));
        assert!(power_norm_certificate(&Matrix::<f64>::identity(2), 10)
            .unwrap()
            .is_none());
    }

    #[test]
    fn decay_constants_bound_powers() {
        let a = m(&[&[0.9, 0.5], &[0.0, 0.8]]);
        let cert = power_norm_certificate(&a, 100).unwrap().unwrap();
        let (c, phi) = cert.decay_constants(&a);
        assert!(phi < 1.0);
        let mut p = Matrix::identity(2);
        for j in 0..60 {
            assert!(spectral_norm(&p) <= c * phi.powi(j) * (1.0 + 1e-9));
            p = matmul(&p, &a).unwrap();
        }
    }

    #[test]
    fn eigen_bounds_match_closed_form() {
        // eigenvalues of [[2,1],[1,2]] are 1 and 3
        let (lo, hi) = symmetric_eigen_bounds(&m(&[&[2.0, 1.0], &[1.0, 2.0]])).unwrap();
        assert!((lo - 1.0).abs() < 1e-12 && (hi - 3.0).abs() < 1e-12);
        let (lo, hi) = symmetric_eigen_bounds(&Matrix::<f64>::from_diag(&[-4.0, 0.25, 7.0])).unwrap();
        assert!((lo + 4.0).abs() < 1e-12 && (hi - 7.0).abs() < 1e-12);
    }

    #[test]
    fn general_solve_and_determinant() {
        let a = m(&[&[0.0, 2.0], &[1.0, 1.0]]);
        let x = solve_general(&a, &Matrix::column_from(&[4.0, 3.0])).unwrap();
        assert!((x[(0, 0)] - 1.0).abs() < 1e-14 && (x[(1, 0)] - 2.0).abs() < 1e-14);
        assert!((determinant(&a).unwrap() + 2.0).abs() < 1e-14);
        assert!(solve_general(&m(&[&[1.0, 2.0], &[2.0, 4.0]]), &Matrix::identity(2)).is_err());
    }

    #[test]
    fn works_in_single_precision() {
        let a = Matrix::<f32>::from_f64_rows(&[&[2.0, 1.0], &[1.0, 2.0]]).unwrap();
        let x = solve_spd(&a, &[3.0, 3.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-5);
        assert_eq!(numeric_rank(&a, 1e-5), 2);
    }
}
