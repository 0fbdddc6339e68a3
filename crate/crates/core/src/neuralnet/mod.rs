//! A small differentiable substrate for sequential stacks of dilated valid
//! convolutions: forward, backprop, smooth-L1 loss and Adam.
//!
//! Tensors have up to four axes `(channel, angle, radius, slice)`; missing
//! trailing axes have extent 1.

mod adam;
mod conv;
mod loss;
mod network;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use conv::{conv_forward, Activation, ConvLayer, ConvSpec};
pub use loss::smooth_l1;
pub use network::{grad_check, grad_check_report, GradCheck, Network, Trace};

use crate::{Error, Result};

/// Dense tensor laid out `[channel][slice][angle][radius]`, radius fastest.
/// The shape is still reported in `(channel, angle, radius, slice)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Shape(format!(
                "tensor axes must be positive, got {shape:?}"
            )));
        }
        let len: usize = shape.iter().product();
        if data.len() != len {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape,
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.iter().product()],
            grad: None,
        }
    }

    /// Single-channel tensor from a polar image (`[slice][row][sample]`).
    pub fn from_polar(img: &crate::polar::PolarImage) -> Self {
        let [rows, r, s] = img.dims();
        Self {
            shape: [1, rows, r, s],
            data: img.data.clone(),
            grad: None,
        }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Allocates (or clears) a gradient buffer matching the shape.
    pub fn zero_grad(&mut self) {
        self.grad = Some(vec![0.0; self.data.len()]);
    }

    #[inline]
    pub fn offset(&self, c: usize, a: usize, r: usize, s: usize) -> usize {
        let [_, na, nr, ns] = self.shape;
        ((c * ns + s) * na + a) * nr + r
    }

    #[inline]
    pub fn get(&self, c: usize, a: usize, r: usize, s: usize) -> f64 {
        self.data[self.offset(c, a, r, s)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_validation() {
        assert!(Tensor::new([1, 2, 3, 1], vec![0.0; 6]).is_ok());
        assert!(Tensor::new([1, 2, 3, 1], vec![0.0; 5]).is_err());
        assert!(Tensor::new([0, 2, 3, 1], vec![]).is_err());
    }

    #[test]
    fn layout_is_radius_fastest() {
        let t = Tensor::new([2, 2, 3, 2], (0..24).map(f64::from).collect()).unwrap();
        assert_eq!(t.get(0, 0, 1, 0), 1.0);
        assert_eq!(t.get(0, 1, 0, 0), 3.0);
        assert_eq!(t.get(0, 0, 0, 1), 6.0);
        assert_eq!(t.get(1, 0, 0, 0), 12.0);
    }

    #[test]
    fn grad_buffer_matches_shape() {
        let mut t = Tensor::zeros([1, 3, 4, 1]);
        assert!(t.grad().is_none());
        t.zero_grad();
        assert_eq!(t.grad().unwrap().len(), 12);
    }
}
