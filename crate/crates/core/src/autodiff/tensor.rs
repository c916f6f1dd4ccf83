use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major array of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.iter().product::<usize>() != values.len() {
            return Err(Error::Dimension {
                op: "tensor".into(),
                shapes: vec![shape, vec![values.len()]],
            });
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            values: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            values: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![],
            values: vec![value],
        }
    }

    /// A `[1 × n]` row.
    pub fn row(values: Vec<f64>) -> Self {
        Self {
            shape: vec![1, values.len()],
            values,
        }
    }

    /// A `[n × 1]` column.
    pub fn column(values: Vec<f64>) -> Self {
        Self {
            shape: vec![values.len(), 1],
            values,
        }
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], values)
    }

    /// Stacks equal-length rows into a matrix. An empty slice gives `[0 × width]`.
    pub fn from_rows(rows: &[Vec<f64>], width: usize) -> Result<Self> {
        let mut values = Vec::with_capacity(rows.len() * width);
        for r in rows {
            if r.len() != width {
                return Err(Error::dimension("from_rows", &[&[width], &[r.len()]]));
            }
            values.extend_from_slice(r);
        }
        Self::new(vec![rows.len(), width], values)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.values[i * n + i] = 1.0;
        }
        t
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

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.values.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.values[0]
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[1..].iter().product()
        } else {
            self.shape.first().copied().unwrap_or(1)
        }
    }

    pub fn row_slice(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.values[i * c..(i + 1) * c]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols() + j]
    }

    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.values.len() {
            return Err(Error::dimension("reshape", &[&self.shape, &shape]));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.values.len(), other.values.len());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }
}
