//! Dense f64 tensors with tape-based reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is an immutable n-dimensional value. Tensors become
//! differentiable by being recorded on a [`Tape`]: leaves are registered with
//! [`Tape::leaf`], and every op whose inputs include a recorded tensor records
//! a node carrying the local backward rule. Tensors without a node are plain
//! constants: they participate in forward computation but receive no gradient.
//!
//! Everything is 64-bit: the experiments are small and the test suite leans
//! on tight finite-difference tolerances rather than throughput.

mod fft;
mod gradcheck;
pub(crate) mod linear;
mod loss;
mod norm;
mod ops;
mod tape;

pub use fft::rfft_bins;
pub use gradcheck::grad_check;
pub use norm::BatchNormMode;
pub use tape::{Gradients, NodeRef, Tape};

pub(crate) use linear::dot as dot_slices;

use std::sync::Arc;

/// Dense n-dimensional array of f64 with row-major contiguous storage.
///
/// Cloning is cheap (the buffer is shared); tensors are immutable once built.
#[derive(Clone, Debug)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    node: Option<NodeRef>,
}

impl Tensor {
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Tensor {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            data.len(),
            "shape {:?} implies {} elements, data has {}",
            shape,
            numel,
            data.len()
        );
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(data),
            node: None,
        }
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let numel: usize = shape.iter().product();
        Tensor::from_vec(shape, vec![0.0; numel])
    }

    pub fn filled(shape: &[usize], value: f64) -> Tensor {
        let numel: usize = shape.iter().product();
        Tensor::from_vec(shape, vec![value; numel])
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::from_vec(&[1], vec![value])
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Tensor {
        let numel: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..numel).map(&mut f).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data.as_ref().clone()
    }

    /// The single element of a scalar (1-element) tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn is_scalar(&self) -> bool {
        self.len() == 1
    }

    /// Node reference on the tape this tensor was recorded on, if any.
    pub fn node(&self) -> Option<NodeRef> {
        self.node
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    /// Same value, detached from any tape.
    pub fn detached(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            node: None,
        }
    }

    pub(crate) fn with_node(mut self, node: NodeRef) -> Tensor {
        self.node = Some(node);
        self
    }

    pub(crate) fn share_data(&self) -> Arc<Vec<f64>> {
        Arc::clone(&self.data)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub(crate) fn same_shape(a: &Tensor, b: &Tensor) -> bool {
    a.shape() == b.shape()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_data_invariant() {
        let t = Tensor::from_vec(&[2, 3], vec![1., 2., 3., 4., 5., 6.]);
        assert_eq!(t.len(), 6);
        assert_eq!(t.shape(), &[2, 3]);
    }

    #[test]
    #[should_panic(expected = "implies")]
    fn shape_mismatch_panics() {
        let _ = Tensor::from_vec(&[2, 2], vec![1.0; 5]);
    }

    #[test]
    fn detached_shares_data() {
        let t = Tensor::from_vec(&[3], vec![1., 2., 3.]);
        let d = t.detached();
        assert_eq!(d.data(), t.data());
        assert!(d.node().is_none());
    }
}

/// Bench-only re-export of the internal matmul kernel.
#[doc(hidden)]
pub fn bench_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    linear::matmul_acc(a, b, m, k, n, out)
}
