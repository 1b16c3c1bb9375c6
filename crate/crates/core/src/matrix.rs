//! Dense row-major matrices and the embedding type every other module works on.
//!
//! All reductions run sequentially in index order so that results are
//! bit-identical from run to run.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SelexError};

/// Plain dense `rows × cols` matrix of `f64`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(SelexError::DimensionMismatch(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(SelexError::DimensionMismatch(format!("row {i} has {} columns, expected {cols}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on a zero chunk size
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols && (0..self.rows).all(|i| (0..i).all(|j| self[(i, j)] == self[(j, i)]))
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Euclidean norm of the flattened matrix.
    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// `N × D` matrix of sample representations. Row index is the sample id.
///
/// Guaranteed non-empty in both dimensions with every entry finite.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmbeddingMatrix {
    inner: Matrix,
}

impl EmbeddingMatrix {
    pub fn new(n: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        Self::try_from(Matrix::from_vec(n, d, data)?)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::try_from(Matrix::from_rows(rows)?)
    }

    pub fn n(&self) -> usize {
        self.inner.rows
    }

    pub fn d(&self) -> usize {
        self.inner.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.inner.row(i)
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.inner
    }

    pub fn into_matrix(self) -> Matrix {
        self.inner
    }

    pub fn as_slice(&self) -> &[f64] {
        self.inner.as_slice()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.inner[(i, j)]
    }

    /// Returns `self - step * direction`, rejecting non-finite results.
    pub fn step(&self, direction: &Matrix, step: f64) -> Result<Self> {
        if direction.rows != self.n() || direction.cols != self.d() {
            return Err(SelexError::DimensionMismatch(format!(
                "step direction is {}x{}, embeddings are {}x{}",
                direction.rows,
                direction.cols,
                self.n(),
                self.d()
            )));
        }
        let data = self.as_slice().iter().zip(direction.as_slice()).map(|(x, g)| x - step * g).collect();
        Self::new(self.n(), self.d(), data)
    }

    /// Multiplies every entry by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let data = self.as_slice().iter().map(|x| x * factor).collect();
        Self::new(self.n(), self.d(), data)
    }
}

impl TryFrom<Matrix> for EmbeddingMatrix {
    type Error = SelexError;

    fn try_from(m: Matrix) -> Result<Self> {
        if m.rows == 0 || m.cols == 0 {
            return Err(SelexError::InvalidArgument(format!(
                "embedding matrix must be non-empty, got {}x{}",
                m.rows, m.cols
            )));
        }
        if let Some(pos) = m.data.iter().position(|v| !v.is_finite()) {
            return Err(SelexError::NonFinite { row: pos / m.cols, col: pos % m.cols });
        }
        Ok(Self { inner: m })
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Scales every nonzero row to unit Euclidean norm.
///
/// Zero rows are passed through untouched; their count is returned alongside
/// the result and logged.
pub fn normalize_rows(e: &EmbeddingMatrix) -> (EmbeddingMatrix, usize) {
    let (m, zero_rows) = normalize_matrix_rows(e.as_matrix());
    if zero_rows > 0 {
        log::warn!("normalize_rows: {zero_rows} zero row(s) left unnormalized");
    }
    (EmbeddingMatrix { inner: m }, zero_rows)
}

pub(crate) fn normalize_matrix_rows(m: &Matrix) -> (Matrix, usize) {
    let mut out = m.clone();
    let mut zero_rows = 0;
    for i in 0..m.rows {
        let r = out.row_mut(i);
        let nrm = norm(r);
        if nrm == 0.0 {
            zero_rows += 1;
        } else {
            r.iter_mut().for_each(|v| *v /= nrm);
        }
    }
    (out, zero_rows)
}

/// Squared Euclidean distances between every row of `a` and every row of `b`.
pub fn pairwise_sq_dist(a: &EmbeddingMatrix, b: &EmbeddingMatrix) -> Result<Matrix> {
    pairwise_sq_dist_matrix(a.as_matrix(), b.as_matrix())
}

pub(crate) fn pairwise_sq_dist_matrix(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(SelexError::DimensionMismatch(format!(
            "pairwise distance between {}-dim and {}-dim rows",
            a.cols, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let ai = a.row(i);
        for j in 0..b.rows {
            out[(i, j)] = sq_dist(ai, b.row(j));
        }
    }
    Ok(out)
}

/// First `width` columns of `e`.
pub fn slice_dims(e: &EmbeddingMatrix, width: usize) -> Result<EmbeddingMatrix> {
    if width == 0 || width > e.d() {
        return Err(SelexError::InvalidArgument(format!("slice width {width} outside 1..={}", e.d())));
    }
    if width == e.d() {
        return Ok(e.clone());
    }
    let mut data = Vec::with_capacity(e.n() * width);
    for i in 0..e.n() {
        data.extend_from_slice(&e.row(i)[..width]);
    }
    EmbeddingMatrix::new(e.n(), width, data)
}
