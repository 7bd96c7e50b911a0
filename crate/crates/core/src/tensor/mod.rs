//! Dense `f64` tensors and a tape-based reverse-mode differentiation graph.
//!
//! Image tensors use `[batch, channel, height, width]` layout. A [`Graph`]
//! records every primitive applied during a forward pass; calling
//! [`Graph::backward`] on a scalar node walks the tape in reverse and fills
//! the gradient of every node that requires one.

mod conv;
mod elementwise;
mod gemm;
pub mod gradcheck;
mod graph;
mod norm;
mod pool;

pub use graph::{Graph, Var};
pub use elementwise::sigmoid;
pub use norm::{BatchNormMode, RunningStats, BN_EPSILON, BN_MOMENTUM};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape("tensor", format!("zero extent in {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {numel} values, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.iter().all(|&d| d == 1)
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        self.data[0]
    }

    /// Returns the four extents of an NCHW tensor.
    pub fn dims4(&self, op: &'static str) -> Result<[usize; 4]> {
        match self.shape[..] {
            [n, c, h, w] => Ok([n, c, h, w]),
            _ => Err(Error::shape(op, format!("expected rank 4, got {:?}", self.shape))),
        }
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Health check: every value must be finite.
    pub fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::Numeric(format!(
                "non-finite value {} at flat index {i} of tensor {:?}",
                self.data[i], self.shape
            ))),
        }
    }

    /// Copies channel range `start..start + len` of an NCHW tensor.
    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Tensor> {
        let [n, c, h, w] = self.dims4("slice_channels")?;
        if len == 0 || start + len > c {
            return Err(Error::shape(
                "slice_channels",
                format!("range {start}..{} of {c} channels", start + len),
            ));
        }
        let plane = h * w;
        let mut out = Vec::with_capacity(n * len * plane);
        for b in 0..n {
            let base = (b * c + start) * plane;
            out.extend_from_slice(&self.data[base..base + len * plane]);
        }
        Tensor::new(vec![n, len, h, w], out)
    }

    /// Copies sample `index` of the batch into a `[1, C, H, W]` tensor.
    pub fn sample(&self, index: usize) -> Result<Tensor> {
        let [n, c, h, w] = self.dims4("sample")?;
        if index >= n {
            return Err(Error::shape("sample", format!("index {index} of batch {n}")));
        }
        let len = c * h * w;
        Tensor::new(
            vec![1, c, h, w],
            self.data[index * len..(index + 1) * len].to_vec(),
        )
    }

    /// Stacks `[1, C, H, W]` (or `[C, H, W]`-compatible) tensors along the
    /// batch axis.
    pub fn stack(items: &[&Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidArgument("stack of zero tensors".into()))?;
        let [_, c, h, w] = first.dims4("stack")?;
        let mut data = Vec::new();
        let mut n = 0;
        for t in items {
            let [tn, tc, th, tw] = t.dims4("stack")?;
            if (tc, th, tw) != (c, h, w) {
                return Err(Error::shape(
                    "stack",
                    format!("{:?} vs {:?}", first.shape, t.shape),
                ));
            }
            n += tn;
            data.extend_from_slice(&t.data);
        }
        Tensor::new(vec![n, c, h, w], data)
    }
}
