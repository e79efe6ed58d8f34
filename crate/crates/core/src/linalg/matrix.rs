//! Dense row-major matrices and vectors over `f64`.
//!
//! Every reduction runs in a fixed order (row-major, left to right over the
//! contracted index, accumulator starting at `0.0`) so repeated evaluations are
//! bit-identical on a given platform.

use std::fmt;

use crate::error::{Error, Result};

/// Dense row-major matrix with positive dimensions and finite entries.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix({}x{})", self.rows, self.cols)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

fn check_finite(data: &[f64], op: &'static str) -> Result<()> {
    if data.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(op))
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::dim("Matrix::new", format!("{rows}x{cols}"), "positive dims"));
        }
        if data.len() != rows * cols {
            return Err(Error::dim(
                "Matrix::new",
                format!("{rows}x{cols}"),
                format!("{} entries", data.len()),
            ));
        }
        check_finite(&data, "Matrix::new")?;
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Input("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    /// # Panics
    /// Panics when either dimension is zero.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Column matrix (`n x 1`) holding the entries of `v`.
    pub fn column(v: &Vector) -> Self {
        Self {
            rows: v.dim(),
            cols: 1,
            data: v.as_slice().to_vec(),
        }
    }

    /// Stacks column matrices side by side.
    pub fn hstack(columns: &[&Matrix]) -> Result<Self> {
        let first = columns
            .first()
            .ok_or_else(|| Error::Input("hstack of zero columns".into()))?;
        let rows = first.rows;
        let mut cols = 0;
        for c in columns {
            if c.rows != rows {
                return Err(Error::dim("hstack", first.shape_str(), c.shape_str()));
            }
            cols += c.cols;
        }
        let mut data = vec![0.0; rows * cols];
        let mut offset = 0;
        for c in columns {
            for i in 0..rows {
                let dst = &mut data[i * cols + offset..i * cols + offset + c.cols];
                dst.copy_from_slice(c.row(i));
            }
            offset += c.cols;
        }
        Ok(Self { rows, cols, data })
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

    pub(crate) fn shape_str(&self) -> String {
        format!("{}x{}", self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Column `j` as a vector.
    pub fn col_vector(&self, j: usize) -> Vector {
        Vector((0..self.rows).map(|i| self.get(i, j)).collect())
    }

    /// Reinterprets an `n x 1` matrix as a vector.
    pub fn to_vector(&self) -> Result<Vector> {
        if self.cols != 1 {
            return Err(Error::dim("to_vector", self.shape_str(), "n x 1"));
        }
        Ok(Vector(self.data.clone()))
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&x| x == 0.0)
    }

    pub fn transpose(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                data.push(self.get(i, j));
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }

    /// Standard product `self * rhs`.
    ///
    /// Each entry is `sum_k a[i][k] * b[k][j]` accumulated from `0.0` in
    /// increasing `k`.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::dim("matmul", self.shape_str(), rhs.shape_str()));
        }
        let (n, m, p) = (self.rows, self.cols, rhs.cols);
        let mut data = vec![0.0; n * p];
        for i in 0..n {
            let a_row = self.row(i);
            for j in 0..p {
                let mut acc = 0.0;
                for (k, &a) in a_row.iter().enumerate() {
                    acc += a * rhs.data[k * p + j];
                }
                data[i * p + j] = acc;
            }
        }
        debug_assert_eq!(m, rhs.rows);
        check_finite(&data, "matmul")?;
        Ok(Matrix { rows: n, cols: p, data })
    }

    /// `self * v` for a vector `v`.
    pub fn matvec(&self, v: &Vector) -> Result<Vector> {
        if self.cols != v.dim() {
            return Err(Error::dim("matvec", self.shape_str(), format!("vector({})", v.dim())));
        }
        let out: Vec<f64> = (0..self.rows)
            .map(|i| {
                let mut acc = 0.0;
                for (a, b) in self.row(i).iter().zip(v.as_slice()) {
                    acc += a * b;
                }
                acc
            })
            .collect();
        check_finite(&out, "matvec")?;
        Ok(Vector(out))
    }

    fn zip_with(&self, rhs: &Matrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != rhs.shape() {
            return Err(Error::dim(op, self.shape_str(), rhs.shape_str()));
        }
        let data: Vec<f64> = self.data.iter().zip(&rhs.data).map(|(&a, &b)| f(a, b)).collect();
        check_finite(&data, op)?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn add(&self, rhs: &Matrix) -> Result<Matrix> {
        self.zip_with(rhs, "add", |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Matrix) -> Result<Matrix> {
        self.zip_with(rhs, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, rhs: &Matrix) -> Result<Matrix> {
        self.zip_with(rhs, "hadamard", |a, b| a * b)
    }

    /// Applies `f` entrywise; fails if any output is non-finite.
    pub fn map(&self, op: &'static str, f: impl Fn(f64) -> f64) -> Result<Matrix> {
        let data: Vec<f64> = self.data.iter().map(|&x| f(x)).collect();
        check_finite(&data, op)?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scale(&self, c: f64) -> Result<Matrix> {
        self.map("scale", |x| c * x)
    }

    /// Frobenius inner product `tr(self^T rhs) = sum_ij a_ij b_ij`.
    pub fn frobenius_inner(&self, rhs: &Matrix) -> Result<f64> {
        if self.shape() != rhs.shape() {
            return Err(Error::dim("frobenius_inner", self.shape_str(), rhs.shape_str()));
        }
        let mut acc = 0.0;
        for (a, b) in self.data.iter().zip(&rhs.data) {
            acc += a * b;
        }
        Ok(acc)
    }

    pub fn frobenius_norm(&self) -> f64 {
        let mut acc = 0.0;
        for a in &self.data {
            acc += a * a;
        }
        acc.sqrt()
    }
}

/// Free-function form of [`Matrix::matmul`].
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    a.matmul(b)
}

/// Free-function form of [`Matrix::frobenius_inner`].
pub fn frobenius_inner(a: &Matrix, b: &Matrix) -> Result<f64> {
    a.frobenius_inner(b)
}

pub fn frobenius_norm(a: &Matrix) -> f64 {
    a.frobenius_norm()
}

/// Dense vector with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::dim("Vector::new", "0", "positive dim"));
        }
        check_finite(&data, "Vector::new")?;
        Ok(Self(data))
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "vector dimension must be positive");
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn get(&self, i: usize) -> f64 {
        self.0[i]
    }

    pub fn dot(&self, rhs: &Vector) -> Result<f64> {
        if self.dim() != rhs.dim() {
            return Err(Error::dim("dot", self.dim().to_string(), rhs.dim().to_string()));
        }
        let mut acc = 0.0;
        for (a, b) in self.0.iter().zip(&rhs.0) {
            acc += a * b;
        }
        Ok(acc)
    }

    pub fn norm(&self) -> f64 {
        let mut acc = 0.0;
        for a in &self.0 {
            acc += a * a;
        }
        acc.sqrt()
    }

    fn zip_with(&self, rhs: &Vector, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Vector> {
        if self.dim() != rhs.dim() {
            return Err(Error::dim(op, self.dim().to_string(), rhs.dim().to_string()));
        }
        let out: Vec<f64> = self.0.iter().zip(&rhs.0).map(|(&a, &b)| f(a, b)).collect();
        check_finite(&out, op)?;
        Ok(Vector(out))
    }

    pub fn add(&self, rhs: &Vector) -> Result<Vector> {
        self.zip_with(rhs, "add", |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Vector) -> Result<Vector> {
        self.zip_with(rhs, "sub", |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> Result<Vector> {
        let out: Vec<f64> = self.0.iter().map(|&x| c * x).collect();
        check_finite(&out, "scale")?;
        Ok(Vector(out))
    }

    /// `self + c * dir`.
    pub fn axpy(&self, c: f64, dir: &Vector) -> Result<Vector> {
        self.zip_with(dir, "axpy", |a, b| a + c * b)
    }
}

impl AsRef<[f64]> for Vector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}
