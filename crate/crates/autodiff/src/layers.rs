//! Parameterized layers and residual blocks built from the op kernels.
//!
//! Layers own their parameters and gradient buffers. `forward` methods
//! return whatever intermediate activations the matching `backward`
//! needs, so a training step is: run forwards keeping traces, run
//! backwards in reverse, then hand the accumulated gradients to the
//! optimizer.

use rand::Rng;

use crate::error::Result;
use crate::kernel::Scalar;
use crate::ops;
use crate::tensor::{he_uniform, Param, Tensor};

/// Ratio applied to the closing convolution of every residual branch
/// at init. Plain fan-in scaling makes activations grow by a constant
/// factor per block, which saturates the head after a dozen blocks;
/// damping the branch keeps the stack near the identity at the start
/// while leaving every weight trainable.
pub const BRANCH_INIT_DAMPING: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct Conv1x1<S> {
    pub w: Param<S>,
    pub b: Param<S>,
}

impl<S: Scalar> Conv1x1<S> {
    pub fn new<R: Rng>(c_in: usize, c_out: usize, rng: &mut R) -> Self {
        Self {
            w: Param::new(he_uniform(rng, c_in, vec![c_out, c_in])),
            b: Param::new(Tensor::zeros(vec![c_out])),
        }
    }

    fn damp_weights(&mut self, factor: S) {
        for v in self.w.value.data_mut() {
            *v = *v * factor;
        }
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        ops::conv1x1_forward(x, &self.w.value, &self.b.value)
    }

    pub fn backward(&mut self, x: &Tensor<S>, gy: &Tensor<S>) -> Result<Tensor<S>> {
        ops::conv1x1_backward(x, &self.w.value, gy, &mut self.w.grad, &mut self.b.grad)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        vec![&mut self.w, &mut self.b]
    }
}

/// Depthwise 3x3 then pointwise 1x1; bias lives on the pointwise side.
#[derive(Debug, Clone)]
pub struct SepConv3x3<S> {
    pub wd: Param<S>,
    pub wp: Param<S>,
    pub b: Param<S>,
}

impl<S: Scalar> SepConv3x3<S> {
    pub fn new<R: Rng>(c_in: usize, c_out: usize, rng: &mut R) -> Self {
        Self {
            wd: Param::new(he_uniform(rng, 9, vec![c_in, 3, 3])),
            wp: Param::new(he_uniform(rng, c_in, vec![c_out, c_in])),
            b: Param::new(Tensor::zeros(vec![c_out])),
        }
    }

    /// Returns (output, depthwise intermediate); the intermediate is the
    /// pointwise input, saved for the backward pass.
    pub fn forward(&self, x: &Tensor<S>) -> Result<(Tensor<S>, Tensor<S>)> {
        let mid = ops::depthwise3x3_forward(x, &self.wd.value)?;
        let y = ops::conv1x1_forward(&mid, &self.wp.value, &self.b.value)?;
        Ok((y, mid))
    }

    pub fn backward(
        &mut self,
        x: &Tensor<S>,
        mid: &Tensor<S>,
        gy: &Tensor<S>,
    ) -> Result<Tensor<S>> {
        let gmid =
            ops::conv1x1_backward(mid, &self.wp.value, gy, &mut self.wp.grad, &mut self.b.grad)?;
        ops::depthwise3x3_backward(x, &self.wd.value, &gmid, &mut self.wd.grad)
    }

    fn damp_weights(&mut self, factor: S) {
        for v in self.wp.value.data_mut() {
            *v = *v * factor;
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        vec![&mut self.wd, &mut self.wp, &mut self.b]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    /// 1x1 convolutions only: mixes spectra, no spatial context.
    Spectral1x1,
    /// Depthwise separable 3x3 convolutions: adds texture context.
    Separable3x3,
}

#[derive(Debug, Clone)]
pub enum ConvUnit<S> {
    Dense(Conv1x1<S>),
    Separable(SepConv3x3<S>),
}

impl<S: Scalar> ConvUnit<S> {
    fn forward(&self, x: &Tensor<S>) -> Result<(Tensor<S>, Option<Tensor<S>>)> {
        match self {
            ConvUnit::Dense(c) => Ok((c.forward(x)?, None)),
            ConvUnit::Separable(c) => {
                let (y, mid) = c.forward(x)?;
                Ok((y, Some(mid)))
            }
        }
    }

    fn backward(
        &mut self,
        x: &Tensor<S>,
        mid: Option<&Tensor<S>>,
        gy: &Tensor<S>,
    ) -> Result<Tensor<S>> {
        match self {
            ConvUnit::Dense(c) => c.backward(x, gy),
            ConvUnit::Separable(c) => c.backward(x, mid.expect("separable trace"), gy),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        match self {
            ConvUnit::Dense(c) => c.params_mut(),
            ConvUnit::Separable(c) => c.params_mut(),
        }
    }
}

/// y = ReLU(x + Conv2(ReLU(Conv1(x)))), identity skip, width preserved.
#[derive(Debug, Clone)]
pub struct ResidualBlock<S> {
    pub kind: BlockKind,
    c1: ConvUnit<S>,
    c2: ConvUnit<S>,
}

/// Activations a block backward pass needs, plus the block output.
#[derive(Debug, Clone)]
pub struct BlockTrace<S> {
    r1: Tensor<S>,
    mid1: Option<Tensor<S>>,
    mid2: Option<Tensor<S>>,
    pub y: Tensor<S>,
}

impl<S: Scalar> ResidualBlock<S> {
    pub fn new<R: Rng>(kind: BlockKind, width: usize, rng: &mut R) -> Self {
        let mk = |rng: &mut R| match kind {
            BlockKind::Spectral1x1 => ConvUnit::Dense(Conv1x1::new(width, width, rng)),
            BlockKind::Separable3x3 => ConvUnit::Separable(SepConv3x3::new(width, width, rng)),
        };
        let c1 = mk(rng);
        let mut c2 = mk(rng);
        match &mut c2 {
            ConvUnit::Dense(c) => c.damp_weights(S::from_f64(BRANCH_INIT_DAMPING)),
            ConvUnit::Separable(c) => c.damp_weights(S::from_f64(BRANCH_INIT_DAMPING)),
        }
        Self { kind, c1, c2 }
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<BlockTrace<S>> {
        let (a1, mid1) = self.c1.forward(x)?;
        let r1 = ops::relu_forward(&a1);
        let (a2, mid2) = self.c2.forward(&r1)?;
        let y = ops::relu_forward(&x.add(&a2)?);
        Ok(BlockTrace { r1, mid1, mid2, y })
    }

    pub fn backward(&mut self, x: &Tensor<S>, trace: &BlockTrace<S>, gy: &Tensor<S>) -> Result<Tensor<S>> {
        let gs = ops::relu_backward(&trace.y, gy)?;
        let gr1 = self.c2.backward(&trace.r1, trace.mid2.as_ref(), &gs)?;
        let ga1 = ops::relu_backward(&trace.r1, &gr1)?;
        let gx_branch = self.c1.backward(x, trace.mid1.as_ref(), &ga1)?;
        gx_branch.add(&gs)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        let mut ps = self.c1.params_mut();
        ps.extend(self.c2.params_mut());
        ps
    }

    /// Number of 3x3 taps this block contributes to the receptive field.
    pub fn taps3x3(&self) -> usize {
        match self.kind {
            BlockKind::Spectral1x1 => 0,
            BlockKind::Separable3x3 => 2,
        }
    }
}
