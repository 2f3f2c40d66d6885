//! Dense tensors of rank 1 to 4 and trainable parameters.
//!
//! Feature maps use N x C x H x W layout; weights are rank 1 or 2 (and
//! rank 3 for depthwise kernels). Data is a flat row-major buffer.

use rand::Rng;

use crate::error::{Error, Result};
use crate::kernel::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    dims: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(dims: Vec<usize>, data: Vec<S>) -> Result<Self> {
        if dims.is_empty() || dims.len() > 4 {
            return Err(Error::InvalidArgument(format!(
                "tensor rank must be 1..=4, got {}",
                dims.len()
            )));
        }
        let n: usize = dims.iter().product();
        if n == 0 {
            return Err(Error::InvalidArgument("tensor dims must be positive".into()));
        }
        if n != data.len() {
            return Err(Error::ShapeMismatch {
                op: "Tensor::new",
                detail: format!("dims {:?} imply {} values, got {}", dims, n, data.len()),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let n: usize = dims.iter().product();
        assert!(!dims.is_empty() && dims.len() <= 4 && n > 0, "bad dims {dims:?}");
        Self {
            dims,
            data: vec![S::ZERO; n],
        }
    }

    pub fn zeros_like(other: &Self) -> Self {
        Self {
            dims: other.dims.clone(),
            data: vec![S::ZERO; other.data.len()],
        }
    }

    pub fn full(dims: Vec<usize>, value: S) -> Self {
        let mut t = Self::zeros(dims);
        t.data.fill(value);
        t
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    /// (n, c, h, w) of a rank-4 map.
    pub fn nchw(&self) -> Result<(usize, usize, usize, usize)> {
        match self.dims.as_slice() {
            [n, c, h, w] => Ok((*n, *c, *h, *w)),
            other => Err(Error::ShapeMismatch {
                op: "Tensor::nchw",
                detail: format!("expected rank-4 map, got dims {other:?}"),
            }),
        }
    }

    /// One H x W plane of a rank-4 map.
    pub fn plane(&self, n: usize, c: usize) -> &[S] {
        let (_, cs, h, w) = (self.dims[0], self.dims[1], self.dims[2], self.dims[3]);
        let p = h * w;
        let at = (n * cs + c) * p;
        &self.data[at..at + p]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [S] {
        let (_, cs, h, w) = (self.dims[0], self.dims[1], self.dims[2], self.dims[3]);
        let p = h * w;
        let at = (n * cs + c) * p;
        &mut self.data[at..at + p]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.dims == other.dims
    }

    /// Elementwise self + other.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if !self.same_shape(other) {
            return Err(Error::ShapeMismatch {
                op: "Tensor::add",
                detail: format!("{:?} vs {:?}", self.dims, other.dims),
            });
        }
        let mut out = self.clone();
        for (o, x) in out.data.iter_mut().zip(&other.data) {
            *o += *x;
        }
        Ok(out)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, S> {
        self.data.iter()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Cast element by element; exact for f32 -> f64.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| T::from_f64(v.to_f64())).collect(),
        }
    }
}

/// Trainable tensor with its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<S> {
    pub value: Tensor<S>,
    pub grad: Tensor<S>,
}

impl<S: Scalar> Param<S> {
    pub fn new(value: Tensor<S>) -> Self {
        let grad = Tensor::zeros_like(&value);
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().fill(S::ZERO);
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Uniform values in ±sqrt(6 / fan_in), the scaled fan-in scheme used
/// for every convolution weight. Draws f64 then casts, so a given seed
/// yields the same weights in f32 and f64 up to rounding.
pub fn he_uniform<S: Scalar, R: Rng>(rng: &mut R, fan_in: usize, dims: Vec<usize>) -> Tensor<S> {
    assert!(fan_in > 0);
    let bound = (6.0 / fan_in as f64).sqrt();
    let n: usize = dims.iter().product();
    let data = (0..n)
        .map(|_| S::from_f64(rng.gen_range(-bound..bound)))
        .collect();
    Tensor { dims, data }
}
