//! Dense row-major tensors. No broadcasting anywhere: every operation
//! states the shapes it accepts and rejects everything else.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{GlyceError, Result};

/// A tensor owns its values and a gradient buffer of the same size.
/// Scalars have the empty shape `[]` (numel 1).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Vec<f64>,
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    /// All-zero tensor; the gradient starts zeroed as well.
    pub fn zeros(shape: &[usize]) -> Tensor {
        let n = numel(shape);
        Tensor {
            shape: shape.to_vec(),
            values: vec![0.0; n],
            grad: vec![0.0; n],
        }
    }

    pub fn from_values(shape: &[usize], values: Vec<f64>) -> Result<Tensor> {
        let n = numel(shape);
        if values.len() != n {
            return Err(GlyceError::Shape(format!(
                "shape {:?} wants {} values, got {}",
                shape,
                n,
                values.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            grad: vec![0.0; n],
            values,
        })
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor {
            shape: Vec::new(),
            values: vec![v],
            grad: vec![0.0],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut [f64] {
        &mut self.grad
    }

    /// Mutable values together with the read-only gradient, for in-place
    /// optimizer updates.
    pub fn values_and_grad(&mut self) -> (&mut [f64], &[f64]) {
        (&mut self.values, &self.grad)
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grad {
            *g = 0.0;
        }
    }

    /// Value at a row-major multi-index; rank and bounds are checked.
    pub fn at(&self, index: &[usize]) -> Result<f64> {
        Ok(self.values[self.offset(index)?])
    }

    pub fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.shape.len() {
            return Err(GlyceError::Index(format!(
                "index rank {} vs tensor rank {}",
                index.len(),
                self.shape.len()
            )));
        }
        let mut off = 0;
        for (d, (&i, &s)) in index.iter().zip(self.shape.iter()).enumerate() {
            if i >= s {
                return Err(GlyceError::Index(format!(
                    "index {i} out of bounds for axis {d} of size {s}"
                )));
            }
            off = off * s + i;
        }
        Ok(off)
    }

    pub fn is_scalar(&self) -> bool {
        self.values.len() == 1 && self.shape.is_empty()
    }

    pub fn scalar_value(&self) -> Result<f64> {
        if !self.is_scalar() {
            return Err(GlyceError::Contract(format!(
                "expected scalar, got shape {:?}",
                self.shape
            )));
        }
        Ok(self.values[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeros_and_grad_start_clean() {
        let t = Tensor::zeros(&[2, 3]);
        assert_eq!(t.shape(), &[2, 3]);
        assert_eq!(t.numel(), 6);
        assert!(t.values().iter().all(|&v| v == 0.0));
        assert!(t.grad().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn from_values_rejects_bad_len() {
        assert!(Tensor::from_values(&[2, 2], vec![1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn row_major_offsets() {
        let t = Tensor::from_values(&[2, 3], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(t.at(&[0, 0]).unwrap(), 0.0);
        assert_eq!(t.at(&[0, 2]).unwrap(), 2.0);
        assert_eq!(t.at(&[1, 0]).unwrap(), 3.0);
        assert_eq!(t.at(&[1, 2]).unwrap(), 5.0);
        assert!(t.at(&[2, 0]).is_err());
        assert!(t.at(&[0]).is_err());
    }

    #[test]
    fn scalar_contract() {
        let s = Tensor::scalar(4.5);
        assert!(s.is_scalar());
        assert_eq!(s.scalar_value().unwrap(), 4.5);
        let t = Tensor::zeros(&[1]);
        assert!(t.scalar_value().is_err());
    }
}
