//! Deterministic n-dimensional f64 arrays with reverse-mode automatic
//! differentiation.
//!
//! A [`Graph`] is a Wengert tape: every forward op appends a node holding the
//! op's output value plus references to its inputs, so inputs always precede
//! consumers. [`backward`] replays the tape once in reverse, accumulating
//! vector-Jacobian products. All arithmetic is f64; loops have a fixed
//! iteration order, so identical inputs give bitwise-identical outputs.
//!
//! Layer primitives cover the network family used here: strided
//! convolutions (1-D and 2-D, valid by default with optional symmetric zero
//! padding), transposed convolutions (the adjoint map), dense layers,
//! residual blocks, global average pooling, and adaptive instance
//! normalization.

mod backward;
mod fd;
mod graph;
mod kernels;
mod nn;

pub use backward::{backward, Gradients};
pub use fd::{finite_diff_grad, grad_rel_err};
pub use graph::{Graph, Op, Var};
pub use nn::{residual_block, ResBlockParams};

use crate::error::{Error, Result};

/// Degeneracy epsilon for adaptive instance normalization, on the standard
/// deviation scale: the effective std is `sqrt(var + ADAIN_EPS^2)`, so a
/// constant channel divides by `ADAIN_EPS` instead of zero while channels
/// with std well above it are left essentially untouched.
pub const ADAIN_EPS: f64 = 1e-5;

/// An n-dimensional array of f64 in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Build a tensor, checking that the extents multiply to the data length.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("zero extent in shape {shape:?}")));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    /// 1-D tensor from a value list.
    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::Shape(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_validates_extent_product() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn item_requires_single_element() {
        assert_eq!(Tensor::scalar(4.5).item().unwrap(), 4.5);
        assert!(Tensor::from_vec(vec![1.0, 2.0]).item().is_err());
    }
}
