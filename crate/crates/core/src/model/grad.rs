use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric;

/// A named, row-major parameter block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

/// Layout of a model's flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamShape {
    pub blocks: Vec<ParamBlock>,
}

/// Where a flat index lands: block name, row (hidden unit or position) and
/// column (vocabulary index).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamIndex<'a> {
    pub block: &'a str,
    pub row: usize,
    pub col: usize,
}

impl ParamShape {
    pub fn single(name: &str, rows: usize, cols: usize) -> Self {
        Self {
            blocks: vec![ParamBlock {
                name: name.to_string(),
                rows,
                cols,
            }],
        }
    }

    pub fn len(&self) -> usize {
        self.blocks.iter().map(|b| b.rows * b.cols).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn locate(&self, mut index: usize) -> Option<ParamIndex<'_>> {
        for block in &self.blocks {
            let size = block.rows * block.cols;
            if index < size {
                return Some(ParamIndex {
                    block: &block.name,
                    row: index / block.cols,
                    col: index % block.cols,
                });
            }
            index -= size;
        }
        None
    }
}

/// A flat gradient (or update direction) tied to a model's parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector {
    shape: Arc<ParamShape>,
    values: Vec<f64>,
}

impl GradientVector {
    pub fn zeros(shape: Arc<ParamShape>) -> Self {
        let n = shape.len();
        Self {
            shape,
            values: vec![0.0; n],
        }
    }

    pub fn from_values(shape: Arc<ParamShape>, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(Error::DimensionMismatch {
                expected: shape.len(),
                found: values.len(),
            });
        }
        Ok(Self { shape, values })
    }

    pub fn shape(&self) -> &Arc<ParamShape> {
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

    pub(crate) fn check_same_shape(&self, other: &GradientVector) -> Result<()> {
        if self.values.len() != other.values.len()
            || (!Arc::ptr_eq(&self.shape, &other.shape) && *self.shape != *other.shape)
        {
            return Err(Error::DimensionMismatch {
                expected: self.values.len(),
                found: other.values.len(),
            });
        }
        Ok(())
    }

    pub fn dot(&self, other: &GradientVector) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(numeric::dot(&self.values, &other.values))
    }

    pub fn norm_sq(&self) -> f64 {
        numeric::norm_sq(&self.values)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            shape: Arc::clone(&self.shape),
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &GradientVector) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Relative distance `‖a − b‖ / max(‖a‖, ‖b‖)`, or the absolute distance when
    /// both are below `floor`.
    pub fn relative_error(&self, other: &GradientVector, floor: f64) -> Result<f64> {
        self.check_same_shape(other)?;
        let diff: Vec<f64> = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        let dist = numeric::norm_sq(&diff).sqrt();
        let scale = self.norm().max(other.norm());
        Ok(if scale < floor { dist } else { dist / scale })
    }

    /// Sums vectors of identical shape with the fixed pairwise tree, coordinate-wise.
    pub fn sum<'a, I>(shape: Arc<ParamShape>, items: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a GradientVector>,
    {
        let items: Vec<&GradientVector> = items.into_iter().collect();
        let mut out = GradientVector::zeros(shape);
        for item in &items {
            out.check_same_shape(item)?;
        }
        let mut column = vec![0.0; items.len()];
        for (k, slot) in out.values.iter_mut().enumerate() {
            for (c, item) in column.iter_mut().zip(&items) {
                *c = item.values[k];
            }
            *slot = numeric::pairwise_sum(&column);
        }
        Ok(out)
    }
}
