//! Values that flow between tasks.

use std::fmt;

use crate::error::TaskError;

/// Dense row-major `f64` matrix.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from row-major data. Returns `None` when the length
    /// does not match `rows * cols`.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Option<Self> {
        (rows.checked_mul(cols)? == data.len()).then_some(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Option<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return None;
        }
        let data = rows.iter().flatten().copied().collect();
        Some(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on zero, and a 0-column matrix still has rows.
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn same_shape(&self, other: &Matrix) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }
}

/// A datum exchanged between tasks. Every variant except [`Value::Unit`] has
/// a binary encoding (see [`crate::codec`]).
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    I64(i64),
    F64(f64),
    F64Vec(Vec<f64>),
    Matrix(Matrix),
    I64Vec(Vec<i64>),
    Bytes(Vec<u8>),
    /// Completion token of a task that does not return a value.
    Unit,
}

impl Value {
    pub fn kind(&self) -> &'static str {
        match self {
            Value::I64(_) => "i64",
            Value::F64(_) => "f64",
            Value::F64Vec(_) => "f64 vector",
            Value::Matrix(_) => "matrix",
            Value::I64Vec(_) => "i64 vector",
            Value::Bytes(_) => "bytes",
            Value::Unit => "unit",
        }
    }

    /// Equality that compares floats by bit pattern (NaN payloads, signed zeros).
    pub fn bit_eq(&self, other: &Value) -> bool {
        fn f64s(a: &[f64], b: &[f64]) -> bool {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
        }
        match (self, other) {
            (Value::F64(a), Value::F64(b)) => a.to_bits() == b.to_bits(),
            (Value::F64Vec(a), Value::F64Vec(b)) => f64s(a, b),
            (Value::Matrix(a), Value::Matrix(b)) => {
                a.same_shape(b) && f64s(a.as_slice(), b.as_slice())
            }
            _ => self == other,
        }
    }

    pub fn as_i64(&self) -> Result<i64, TaskError> {
        match self {
            Value::I64(v) => Ok(*v),
            other => Err(TaskError::type_mismatch("i64", other)),
        }
    }

    pub fn as_f64(&self) -> Result<f64, TaskError> {
        match self {
            Value::F64(v) => Ok(*v),
            other => Err(TaskError::type_mismatch("f64", other)),
        }
    }

    pub fn as_f64_vec(&self) -> Result<&[f64], TaskError> {
        match self {
            Value::F64Vec(v) => Ok(v),
            other => Err(TaskError::type_mismatch("f64 vector", other)),
        }
    }

    pub fn as_i64_vec(&self) -> Result<&[i64], TaskError> {
        match self {
            Value::I64Vec(v) => Ok(v),
            other => Err(TaskError::type_mismatch("i64 vector", other)),
        }
    }

    pub fn as_matrix(&self) -> Result<&Matrix, TaskError> {
        match self {
            Value::Matrix(m) => Ok(m),
            other => Err(TaskError::type_mismatch("matrix", other)),
        }
    }

    pub fn as_bytes(&self) -> Result<&[u8], TaskError> {
        match self {
            Value::Bytes(b) => Ok(b),
            other => Err(TaskError::type_mismatch("bytes", other)),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::I64(v) => write!(f, "{v}"),
            Value::F64(v) => write!(f, "{v}"),
            Value::F64Vec(v) => write!(f, "{v:?}"),
            Value::I64Vec(v) => write!(f, "{v:?}"),
            Value::Matrix(m) => {
                write!(f, "[")?;
                for (i, row) in m.row_iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{row:?}")?;
                }
                write!(f, "]")
            }
            Value::Bytes(b) => write!(f, "<{} bytes>", b.len()),
            Value::Unit => write!(f, "()"),
        }
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::I64(v)
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::F64(v)
    }
}

impl From<Vec<f64>> for Value {
    fn from(v: Vec<f64>) -> Self {
        Value::F64Vec(v)
    }
}

impl From<Vec<i64>> for Value {
    fn from(v: Vec<i64>) -> Self {
        Value::I64Vec(v)
    }
}

impl From<Matrix> for Value {
    fn from(m: Matrix) -> Self {
        Value::Matrix(m)
    }
}

impl From<Vec<u8>> for Value {
    fn from(v: Vec<u8>) -> Self {
        Value::Bytes(v)
    }
}
