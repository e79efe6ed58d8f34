//! Forward-mode differentiation with (primal, tangent) pairs.
//!
//! [`DualTensor`] carries a value together with its directional derivative
//! along a single direction. Every primitive computes its primal with the
//! same [`Matrix`] routine the plain [`Lane`] uses, so a dual evaluation
//! reproduces a plain evaluation bit for bit on the primal side.

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Primal/tangent pair of identical shape.
#[derive(Debug, Clone, PartialEq)]
pub struct DualTensor {
    primal: Matrix,
    tangent: Matrix,
}

/// Network primitives with exact tangent rules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    Matmul,
    Add,
    Hadamard,
    Tanh,
    /// Softmax over every entry of the input.
    Softmax,
    /// Entrywise `x^{-1/2}`; requires strictly positive entries.
    Rsqrt,
    Scale(f64),
}

impl Primitive {
    pub fn arity(self) -> usize {
        match self {
            Primitive::Matmul | Primitive::Add | Primitive::Hadamard => 2,
            _ => 1,
        }
    }

    /// Plain evaluation of the primitive.
    pub fn eval(self, inputs: &[&Matrix]) -> Result<Matrix> {
        self.check_arity(inputs.len())?;
        match self {
            Primitive::Matmul => inputs[0].matmul(inputs[1]),
            Primitive::Add => inputs[0].add(inputs[1]),
            Primitive::Hadamard => inputs[0].hadamard(inputs[1]),
            Primitive::Tanh => tanh(inputs[0]),
            Primitive::Softmax => softmax(inputs[0]),
            Primitive::Rsqrt => rsqrt(inputs[0]),
            Primitive::Scale(c) => inputs[0].scale(c),
        }
    }

    fn check_arity(self, n: usize) -> Result<()> {
        if n != self.arity() {
            return Err(Error::Input(format!("{self:?} takes {} inputs, got {n}", self.arity())));
        }
        Ok(())
    }
}

/// Evaluates `kind` on dual inputs, returning the primal and the exact
/// directional derivative along the input tangents.
pub fn dual_primitive(kind: Primitive, inputs: &[&DualTensor]) -> Result<DualTensor> {
    kind.check_arity(inputs.len())?;
    let x = inputs[0];
    match kind {
        Primitive::Matmul => x.matmul(inputs[1]),
        Primitive::Add => x.add(inputs[1]),
        Primitive::Hadamard => x.hadamard(inputs[1]),
        Primitive::Tanh => x.tanh(),
        Primitive::Softmax => x.softmax(),
        Primitive::Rsqrt => x.rsqrt(),
        Primitive::Scale(c) => x.scale(c),
    }
}

pub fn tanh(x: &Matrix) -> Result<Matrix> {
    x.map("tanh", f64::tanh)
}

pub fn softmax(x: &Matrix) -> Result<Matrix> {
    let max = x.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps = x.map("softmax", |v| (v - max).exp())?;
    let mut total = 0.0;
    for e in exps.data() {
        total += e;
    }
    exps.map("softmax", |e| e / total)
}

pub fn rsqrt(x: &Matrix) -> Result<Matrix> {
    if let Some(bad) = x.data().iter().find(|&&v| v <= 0.0) {
        return Err(Error::Degenerate {
            op: "rsqrt",
            detail: format!("non-positive argument {bad}"),
        });
    }
    x.map("rsqrt", |v| 1.0 / v.sqrt())
}

impl DualTensor {
    pub fn new(primal: Matrix, tangent: Matrix) -> Result<Self> {
        if primal.shape() != tangent.shape() {
            return Err(Error::dim("DualTensor::new", primal.shape_str(), tangent.shape_str()));
        }
        Ok(Self { primal, tangent })
    }

    /// A constant: tangent identically zero.
    pub fn constant(primal: Matrix) -> Self {
        let tangent = Matrix::zeros(primal.rows(), primal.cols());
        Self { primal, tangent }
    }

    pub fn primal(&self) -> &Matrix {
        &self.primal
    }

    pub fn tangent(&self) -> &Matrix {
        &self.tangent
    }

    pub fn into_parts(self) -> (Matrix, Matrix) {
        (self.primal, self.tangent)
    }

    pub fn matmul(&self, rhs: &DualTensor) -> Result<DualTensor> {
        let primal = self.primal.matmul(&rhs.primal)?;
        let tangent = self
            .tangent
            .matmul(&rhs.primal)?
            .add(&self.primal.matmul(&rhs.tangent)?)?;
        Ok(Self { primal, tangent })
    }

    /// `w * self` for a constant matrix `w`.
    pub fn left_mul_const(&self, w: &Matrix) -> Result<DualTensor> {
        Ok(Self {
            primal: w.matmul(&self.primal)?,
            tangent: w.matmul(&self.tangent)?,
        })
    }

    pub fn add(&self, rhs: &DualTensor) -> Result<DualTensor> {
        Ok(Self {
            primal: self.primal.add(&rhs.primal)?,
            tangent: self.tangent.add(&rhs.tangent)?,
        })
    }

    pub fn hadamard(&self, rhs: &DualTensor) -> Result<DualTensor> {
        let primal = self.primal.hadamard(&rhs.primal)?;
        let tangent = self
            .tangent
            .hadamard(&rhs.primal)?
            .add(&self.primal.hadamard(&rhs.tangent)?)?;
        Ok(Self { primal, tangent })
    }

    pub fn scale(&self, c: f64) -> Result<DualTensor> {
        Ok(Self {
            primal: self.primal.scale(c)?,
            tangent: self.tangent.scale(c)?,
        })
    }

    pub fn tanh(&self) -> Result<DualTensor> {
        let primal = tanh(&self.primal)?;
        let slope = primal.map("tanh", |t| 1.0 - t * t)?;
        let tangent = slope.hadamard(&self.tangent)?;
        Ok(Self { primal, tangent })
    }

    pub fn softmax(&self) -> Result<DualTensor> {
        let p = softmax(&self.primal)?;
        let mut mean = 0.0;
        for (pi, ti) in p.data().iter().zip(self.tangent.data()) {
            mean += pi * ti;
        }
        let centered = self.tangent.map("softmax", |t| t - mean)?;
        let tangent = p.hadamard(&centered)?;
        Ok(Self { primal: p, tangent })
    }

    pub fn rsqrt(&self) -> Result<DualTensor> {
        let y = rsqrt(&self.primal)?;
        // d(x^{-1/2}) = -1/2 * x^{-3/2} dx = -1/2 * (y / x) dx
        let slope = y.hadamard(&self.primal.map("rsqrt", |x| -0.5 / x)?)?;
        let tangent = slope.hadamard(&self.tangent)?;
        Ok(Self { primal: y, tangent })
    }

    pub fn transpose(&self) -> DualTensor {
        Self {
            primal: self.primal.transpose(),
            tangent: self.tangent.transpose(),
        }
    }
}

/// Evaluation lane: the operations the network is written against. [`Matrix`]
/// evaluates plainly; [`DualTensor`] additionally propagates a tangent.
pub trait Lane: Clone + Sized {
    fn lift(m: &Matrix) -> Self;
    fn value(&self) -> &Matrix;
    fn matmul(&self, rhs: &Self) -> Result<Self>;
    /// `w * self` for a frozen weight `w`.
    fn linear(&self, w: &Matrix) -> Result<Self>;
    fn add(&self, rhs: &Self) -> Result<Self>;
    fn hadamard(&self, rhs: &Self) -> Result<Self>;
    fn scale(&self, c: f64) -> Result<Self>;
    fn tanh(&self) -> Result<Self>;
    fn softmax(&self) -> Result<Self>;
    fn rsqrt(&self) -> Result<Self>;
    fn transpose(&self) -> Self;
    fn hstack(cols: &[&Self]) -> Result<Self>;
}

impl Lane for Matrix {
    fn lift(m: &Matrix) -> Self {
        m.clone()
    }
    fn value(&self) -> &Matrix {
        self
    }
    fn matmul(&self, rhs: &Self) -> Result<Self> {
        Matrix::matmul(self, rhs)
    }
    fn linear(&self, w: &Matrix) -> Result<Self> {
        w.matmul(self)
    }
    fn add(&self, rhs: &Self) -> Result<Self> {
        Matrix::add(self, rhs)
    }
    fn hadamard(&self, rhs: &Self) -> Result<Self> {
        Matrix::hadamard(self, rhs)
    }
    fn scale(&self, c: f64) -> Result<Self> {
        Matrix::scale(self, c)
    }
    fn tanh(&self) -> Result<Self> {
        tanh(self)
    }
    fn softmax(&self) -> Result<Self> {
        softmax(self)
    }
    fn rsqrt(&self) -> Result<Self> {
        rsqrt(self)
    }
    fn transpose(&self) -> Self {
        Matrix::transpose(self)
    }
    fn hstack(cols: &[&Self]) -> Result<Self> {
        Matrix::hstack(cols)
    }
}

impl Lane for DualTensor {
    fn lift(m: &Matrix) -> Self {
        DualTensor::constant(m.clone())
    }
    fn value(&self) -> &Matrix {
        &self.primal
    }
    fn matmul(&self, rhs: &Self) -> Result<Self> {
        DualTensor::matmul(self, rhs)
    }
    fn linear(&self, w: &Matrix) -> Result<Self> {
        self.left_mul_const(w)
    }
    fn add(&self, rhs: &Self) -> Result<Self> {
        DualTensor::add(self, rhs)
    }
    fn hadamard(&self, rhs: &Self) -> Result<Self> {
        DualTensor::hadamard(self, rhs)
    }
    fn scale(&self, c: f64) -> Result<Self> {
        DualTensor::scale(self, c)
    }
    fn tanh(&self) -> Result<Self> {
        DualTensor::tanh(self)
    }
    fn softmax(&self) -> Result<Self> {
        DualTensor::softmax(self)
    }
    fn rsqrt(&self) -> Result<Self> {
        DualTensor::rsqrt(self)
    }
    fn transpose(&self) -> Self {
        DualTensor::transpose(self)
    }
    fn hstack(cols: &[&Self]) -> Result<Self> {
        let primals: Vec<&Matrix> = cols.iter().map(|c| &c.primal).collect();
        let tangents: Vec<&Matrix> = cols.iter().map(|c| &c.tangent).collect();
        Ok(Self {
            primal: Matrix::hstack(&primals)?,
            tangent: Matrix::hstack(&tangents)?,
        })
    }
}
