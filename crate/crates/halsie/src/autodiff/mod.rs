//! Minimal reverse-mode tensor engine.
//!
//! A [`Tape`] records every executed operation together with the values it
//! produced; [`Tape::backward`] walks the record in reverse and accumulates
//! gradients into every tensor that requires them. Only the operations the
//! segmentation network needs are provided: convolution (strided, dilated,
//! pointwise), batch normalization, leaky ReLU, bilinear upsampling, channel
//! concatenation, a handful of elementwise ops, and weighted pixel-wise
//! cross entropy.
//!
//! Tensors are lightweight handles into their tape. Values are stored in
//! row-major N×C×H×W order.

mod conv;
mod gemm;
mod loss;
mod norm;
mod resize;
mod tape;
pub(crate) mod threads;

pub use conv::{conv2d, pointwise_conv, Conv2dCfg};
pub use loss::weighted_cross_entropy;
pub use norm::{batch_norm, BnMode, BnStats};
pub use resize::upsample_bilinear;
pub use tape::{BwdCtx, OpKernel, Tape, Tensor};

use std::fmt;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};
use thiserror::Error;

/// Floating-point element type of a tape. Training runs in `f32`; gradient
/// verification runs the same code in `f64`.
pub trait Scalar:
    Float
    + NumAssignOps
    + FromPrimitive
    + ToPrimitive
    + Default
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`, for constants written in source.
    fn from_f64_c(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 constant")
    }

    /// Lossy conversion to `f64`, for reductions and reporting.
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Tensor extents, rank 0 (scalar) through 4 (N×C×H×W).
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn scalar() -> Self {
        Shape(Vec::new())
    }

    pub fn of(dims: &[usize]) -> Self {
        Shape(dims.to_vec())
    }

    pub fn nchw(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape(vec![n, c, h, w])
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    pub fn is_scalar(&self) -> bool {
        self.0.is_empty()
    }

    /// The four N×C×H×W extents; errors on any other rank.
    pub fn as_nchw(&self) -> Result<(usize, usize, usize, usize), AdError> {
        match self.0.as_slice() {
            &[n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(AdError::Shape(format!("expected rank-4 tensor, got {self}"))),
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, "×")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, "]")
    }
}

impl From<Vec<usize>> for Shape {
    fn from(dims: Vec<usize>) -> Self {
        Shape(dims)
    }
}

impl From<&[usize]> for Shape {
    fn from(dims: &[usize]) -> Self {
        Shape(dims.to_vec())
    }
}

impl<const N: usize> From<[usize; N]> for Shape {
    fn from(dims: [usize; N]) -> Self {
        Shape(dims.to_vec())
    }
}

/// Errors raised while building or differentiating a graph.
#[derive(Debug, Error)]
pub enum AdError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("backward root must be a scalar, got {0}")]
    NonScalarRoot(Shape),
    #[error("label {label} out of range for {classes} classes")]
    Label { label: u32, classes: usize },
    #[error("configuration error: {0}")]
    Config(String),
}
