use crate::error::{Error, Result};

/// Dense row-major array of `f64`.
///
/// Two-dimensional tensors are `(batch, features)`; a 1-D tensor is treated as
/// a single row wherever a batch is expected.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(Error::dims("Tensor::new", &shape, &[values.len()]));
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            values: vec![0.0; numel],
        }
    }

    pub fn vector(values: Vec<f64>) -> Self {
        Self {
            shape: vec![values.len()],
            values,
        }
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], values)
    }

    /// Stacks equally sized rows into a `(rows.len(), dim)` matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        let mut values = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::dims("Tensor::from_rows", &[dim], &[r.len()]));
            }
            values.extend_from_slice(r);
        }
        Self::matrix(rows.len(), dim, values)
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            values: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    /// Size of the last axis.
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Number of rows when viewed as `(rows, cols)`.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[..self.shape.len() - 1].iter().product(),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.values[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.values[i * c..(i + 1) * c]
    }

    /// Returns the value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.values.len() != 1 {
            return Err(Error::Contract(format!(
                "expected a scalar, got a tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.values[0])
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Gathers the given rows into a new `(indices.len(), cols)` matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let c = self.cols();
        let mut values = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Self {
            shape: vec![indices.len(), c],
            values,
        }
    }

    /// Row-wise concatenation of two matrices with the same column count.
    pub fn concat_rows(&self, other: &Tensor) -> Result<Self> {
        if self.numel() == 0 {
            return Ok(other.as_matrix());
        }
        if other.numel() == 0 {
            return Ok(self.as_matrix());
        }
        if self.cols() != other.cols() {
            return Err(Error::dims("concat_rows", &self.shape, &other.shape));
        }
        let mut values = Vec::with_capacity(self.numel() + other.numel());
        values.extend_from_slice(&self.values);
        values.extend_from_slice(&other.values);
        Ok(Self {
            shape: vec![self.rows() + other.rows(), self.cols()],
            values,
        })
    }

    /// Splits the columns of a matrix at `at`, returning `(left, right)`.
    pub fn split_cols(&self, at: usize) -> Result<(Self, Self)> {
        let c = self.cols();
        if at > c {
            return Err(Error::dims("split_cols", &self.shape, &[at]));
        }
        let r = self.rows();
        let mut left = Vec::with_capacity(r * at);
        let mut right = Vec::with_capacity(r * (c - at));
        for i in 0..r {
            let row = self.row(i);
            left.extend_from_slice(&row[..at]);
            right.extend_from_slice(&row[at..]);
        }
        Ok((
            Self {
                shape: vec![r, at],
                values: left,
            },
            Self {
                shape: vec![r, c - at],
                values: right,
            },
        ))
    }

    fn as_matrix(&self) -> Self {
        Self {
            shape: vec![self.rows(), self.cols()],
            values: self.values.clone(),
        }
    }
}
