//! Dense row-major tensors over f64.
//!
//! All arithmetic runs in f64; persistent state (parameters, optimizer
//! moments, normalization buffers) is rounded through f32 whenever it is
//! created or updated so that checkpoints round-trip bitwise.

use crate::NetError;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking that the payload matches the shape.
    pub fn from_vec(dims: Vec<usize>, data: Vec<f64>) -> Result<Self, NetError> {
        let expect: usize = dims.iter().product();
        if dims.is_empty() || expect != data.len() {
            return Err(NetError::ShapeMismatch(format!(
                "tensor payload of {} values does not fit shape {:?}",
                data.len(),
                dims
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let len = dims.iter().product();
        Self { dims: dims.to_vec(), data: vec![0.0; len] }
    }

    pub fn filled(dims: &[usize], value: f64) -> Self {
        let len = dims.iter().product();
        Self { dims: dims.to_vec(), data: vec![value; len] }
    }

    pub fn scalar(value: f64) -> Self {
        Self { dims: vec![1], data: vec![value] }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
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

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Rounds every element through single precision in place.
    pub fn quantize_f32(&mut self) {
        for v in &mut self.data {
            *v = *v as f32 as f64;
        }
    }
}
