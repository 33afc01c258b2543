//! The operation tape and its elementwise operations.

use super::{AdError, Scalar, Shape};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Tensor(pub(crate) usize);

/// Backward hook of one recorded operation.
///
/// Kernels receive the output gradient and push contributions into their
/// inputs through [`BwdCtx::accumulate`]. Implementing this trait is how
/// modules outside the engine (the spiking layer) register custom ops.
pub trait OpKernel<T: Scalar>: Send {
    fn backward(&self, ctx: &mut BwdCtx<'_, T>, out_grad: &[T]);
}

/// View of the tape handed to [`OpKernel::backward`].
pub struct BwdCtx<'a, T: Scalar> {
    shapes: &'a [Shape],
    values: &'a [Vec<T>],
    requires: &'a [bool],
    grads: &'a mut [Option<Vec<T>>],
}

impl<'a, T: Scalar> BwdCtx<'a, T> {
    pub fn value(&self, t: Tensor) -> &'a [T] {
        &self.values[t.0]
    }

    pub fn shape(&self, t: Tensor) -> &'a Shape {
        &self.shapes[t.0]
    }

    /// Whether a gradient for `t` is needed at all; kernels may skip the
    /// corresponding work when it is not.
    pub fn wants(&self, t: Tensor) -> bool {
        self.requires[t.0]
    }

    /// Add `g` into the gradient buffer of `t` (ignored unless wanted).
    pub fn accumulate(&mut self, t: Tensor, g: Vec<T>) {
        if !self.requires[t.0] {
            return;
        }
        debug_assert_eq!(g.len(), self.values[t.0].len());
        match &mut self.grads[t.0] {
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(&g) {
                    *a += *b;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }
}

/// Ordered record of executed operations. Node `i` only ever depends on
/// nodes `< i`, so reverse index order is a valid reverse-topological walk.
pub struct Tape<T: Scalar> {
    shapes: Vec<Shape>,
    values: Vec<Vec<T>>,
    requires: Vec<bool>,
    ops: Vec<Option<Box<dyn OpKernel<T>>>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            shapes: Vec::new(),
            values: Vec::new(),
            requires: Vec::new(),
            ops: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Record a differentiable leaf (a parameter).
    pub fn leaf(&mut self, values: Vec<T>, shape: impl Into<Shape>) -> Tensor {
        self.push_node(values, shape.into(), true, None)
    }

    /// Record a non-differentiable input.
    pub fn constant(&mut self, values: Vec<T>, shape: impl Into<Shape>) -> Tensor {
        self.push_node(values, shape.into(), false, None)
    }

    pub fn scalar_leaf(&mut self, v: T) -> Tensor {
        self.leaf(vec![v], Shape::of(&[1]))
    }

    pub fn scalar_constant(&mut self, v: T) -> Tensor {
        self.constant(vec![v], Shape::of(&[1]))
    }

    /// Record the output of a custom operation. `requires` should be true
    /// iff any input requires a gradient; `kernel` is dropped otherwise.
    pub fn push_custom(
        &mut self,
        values: Vec<T>,
        shape: impl Into<Shape>,
        requires: bool,
        kernel: Box<dyn OpKernel<T>>,
    ) -> Tensor {
        self.push_node(values, shape.into(), requires, Some(kernel))
    }

    fn push_node(
        &mut self,
        values: Vec<T>,
        shape: Shape,
        requires: bool,
        op: Option<Box<dyn OpKernel<T>>>,
    ) -> Tensor {
        debug_assert_eq!(values.len(), shape.numel());
        let id = self.values.len();
        self.shapes.push(shape);
        self.values.push(values);
        self.requires.push(requires);
        self.ops.push(if requires { op } else { None });
        self.grads.push(None);
        Tensor(id)
    }

    pub fn value(&self, t: Tensor) -> &[T] {
        &self.values[t.0]
    }

    pub fn shape(&self, t: Tensor) -> &Shape {
        &self.shapes[t.0]
    }

    pub fn requires_grad(&self, t: Tensor) -> bool {
        self.requires[t.0]
    }

    /// Gradient of the last backward pass, if one reached `t`.
    pub fn grad(&self, t: Tensor) -> Option<&[T]> {
        self.grads[t.0].as_deref()
    }

    pub(crate) fn any_requires(&self, ts: &[Tensor]) -> bool {
        ts.iter().any(|t| self.requires[t.0])
    }

    /// Reverse pass from a scalar root. Gradients accumulate (`+=`) across
    /// fan-out and remain readable through [`Tape::grad`] afterwards.
    pub fn backward(&mut self, root: Tensor) -> Result<(), AdError> {
        let root_shape = &self.shapes[root.0];
        if root_shape.numel() != 1 {
            return Err(AdError::NonScalarRoot(root_shape.clone()));
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        self.grads[root.0] = Some(vec![T::one()]);
        for id in (0..=root.0).rev() {
            if self.grads[id].is_none() {
                continue;
            }
            let Some(op) = self.ops[id].take() else {
                continue;
            };
            let out_grad = self.grads[id].take().expect("checked above");
            let mut ctx = BwdCtx {
                shapes: &self.shapes,
                values: &self.values,
                requires: &self.requires,
                grads: &mut self.grads,
            };
            op.backward(&mut ctx, &out_grad);
            self.grads[id] = Some(out_grad);
            self.ops[id] = Some(op);
        }
        Ok(())
    }

    fn same_shape(&self, a: Tensor, b: Tensor) -> Result<(), AdError> {
        if self.shapes[a.0] != self.shapes[b.0] {
            return Err(AdError::Shape(format!(
                "operands differ: {} vs {}",
                self.shapes[a.0], self.shapes[b.0]
            )));
        }
        Ok(())
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: Tensor, b: Tensor) -> Result<Tensor, AdError> {
        self.same_shape(a, b)?;
        let out: Vec<T> = self.values[a.0]
            .iter()
            .zip(&self.values[b.0])
            .map(|(&x, &y)| x + y)
            .collect();
        let requires = self.any_requires(&[a, b]);
        let shape = self.shapes[a.0].clone();
        Ok(self.push_custom(out, shape, requires, Box::new(AddOp { a, b })))
    }

    /// Elementwise difference `a - b`.
    pub fn sub(&mut self, a: Tensor, b: Tensor) -> Result<Tensor, AdError> {
        self.same_shape(a, b)?;
        let out: Vec<T> = self.values[a.0]
            .iter()
            .zip(&self.values[b.0])
            .map(|(&x, &y)| x - y)
            .collect();
        let requires = self.any_requires(&[a, b]);
        let shape = self.shapes[a.0].clone();
        Ok(self.push_custom(out, shape, requires, Box::new(SubOp { a, b })))
    }

    /// Broadcast product of a one-element tensor with `x`.
    pub fn scalar_mul(&mut self, s: Tensor, x: Tensor) -> Result<Tensor, AdError> {
        if self.shapes[s.0].numel() != 1 {
            return Err(AdError::Shape(format!(
                "scalar_mul multiplier must have one element, got {}",
                self.shapes[s.0]
            )));
        }
        let sv = self.values[s.0][0];
        let out: Vec<T> = self.values[x.0].iter().map(|&v| sv * v).collect();
        let requires = self.any_requires(&[s, x]);
        let shape = self.shapes[x.0].clone();
        Ok(self.push_custom(out, shape, requires, Box::new(ScalarMulOp { s, x })))
    }

    /// `max(x, slope·x)` with the subgradient at 0 taken from the positive
    /// branch.
    pub fn leaky_relu(&mut self, x: Tensor, slope: T) -> Tensor {
        let out: Vec<T> = self.values[x.0]
            .iter()
            .map(|&v| if v >= T::zero() { v } else { slope * v })
            .collect();
        let requires = self.requires[x.0];
        let shape = self.shapes[x.0].clone();
        self.push_custom(out, shape, requires, Box::new(LeakyReluOp { x, slope }))
    }

    pub fn relu(&mut self, x: Tensor) -> Tensor {
        self.leaky_relu(x, T::zero())
    }

    /// Sum of all elements, as a scalar tensor.
    pub fn sum(&mut self, x: Tensor) -> Tensor {
        let mut acc = T::zero();
        for &v in &self.values[x.0] {
            acc += v;
        }
        let requires = self.requires[x.0];
        self.push_custom(vec![acc], Shape::scalar(), requires, Box::new(SumOp { x }))
    }

    /// Dot product with a constant coefficient vector, as a scalar tensor.
    /// Used as a randomized projection in gradient checks.
    pub fn weighted_sum(&mut self, x: Tensor, coeffs: Vec<T>) -> Result<Tensor, AdError> {
        if coeffs.len() != self.values[x.0].len() {
            return Err(AdError::Shape(format!(
                "weighted_sum needs {} coefficients, got {}",
                self.values[x.0].len(),
                coeffs.len()
            )));
        }
        let mut acc = T::zero();
        for (&v, &c) in self.values[x.0].iter().zip(&coeffs) {
            acc += v * c;
        }
        let requires = self.requires[x.0];
        Ok(self.push_custom(
            vec![acc],
            Shape::scalar(),
            requires,
            Box::new(WeightedSumOp { x, coeffs }),
        ))
    }

    /// Concatenate rank-4 tensors along the channel axis.
    pub fn concat(&mut self, inputs: &[Tensor]) -> Result<Tensor, AdError> {
        if inputs.is_empty() {
            return Err(AdError::Shape("concat of zero tensors".into()));
        }
        let (n0, _, h0, w0) = self.shapes[inputs[0].0].as_nchw()?;
        let mut channels = Vec::with_capacity(inputs.len());
        let mut c_total = 0;
        for &t in inputs {
            let (n, c, h, w) = self.shapes[t.0].as_nchw()?;
            if (n, h, w) != (n0, h0, w0) {
                return Err(AdError::Shape(format!(
                    "concat operand {} does not match leading {}",
                    self.shapes[t.0], self.shapes[inputs[0].0]
                )));
            }
            channels.push(c);
            c_total += c;
        }
        let hw = h0 * w0;
        let mut out = vec![T::zero(); n0 * c_total * hw];
        for n in 0..n0 {
            let mut c_off = 0;
            for (&t, &c) in inputs.iter().zip(&channels) {
                let src = &self.values[t.0][n * c * hw..(n + 1) * c * hw];
                let dst = &mut out[(n * c_total + c_off) * hw..(n * c_total + c_off + c) * hw];
                dst.copy_from_slice(src);
                c_off += c;
            }
        }
        let requires = self.any_requires(inputs);
        Ok(self.push_custom(
            out,
            Shape::nchw(n0, c_total, h0, w0),
            requires,
            Box::new(ConcatOp {
                inputs: inputs.to_vec(),
                channels,
                n: n0,
                hw,
            }),
        ))
    }
}

struct AddOp {
    a: Tensor,
    b: Tensor,
}

impl<T: Scalar> OpKernel<T> for AddOp {
    fn backward(&self, ctx: &mut BwdCtx<'_, T>, g: &[T]) {
        ctx.accumulate(self.a, g.to_vec());
        ctx.accumulate(self.b, g.to_vec());
    }
}

struct SubOp {
    a: Tensor,
    b: Tensor,
}

impl<T: Scalar> OpKernel<T> for SubOp {
    fn backward(&self, ctx: &mut BwdCtx<'_, T>, g: &[T]) {
        ctx.accumulate(self.a, g.to_vec());
        if ctx.wants(self.b) {
            ctx.accumulate(self.b, g.iter().map(|&v| -v).collect());
        }
    }
}

struct ScalarMulOp {
    s: Tensor,
    x: Tensor,
}

impl<T: Scalar> OpKernel<T> for ScalarMulOp {
    fn backward(&self, ctx: &mut BwdCtx<'_, T>, g: &[T]) {
        if ctx.wants(self.s) {
            let mut ds = T::zero();
            for (&gv, &xv) in g.iter().zip(ctx.value(self.x)) {
                ds += gv * xv;
            }
            ctx.accumulate(self.s, vec![ds]);
        }
        if ctx.wants(self.x) {
            let sv = ctx.value(self.s)[0];
            ctx.accumulate(self.x, g.iter().map(|&v| sv * v).collect());
        }
    }
}

struct LeakyReluOp<T> {
    x: Tensor,
    slope: T,
}

impl<T: Scalar> OpKernel<T> for LeakyReluOp<T> {
    fn backward(&self, ctx: &mut BwdCtx<'_, T>, g: &[T]) {
        if !ctx.wants(self.x) {
            return;
        }
        let dx: Vec<T> = ctx
            .value(self.x)
            .iter()
            .zip(g)
            .map(|(&x, &gv)| if x >= T::zero() { gv } else { self.slope * gv })
            .collect();
        ctx.accumulate(self.x, dx);
    }
}

struct SumOp {
    x: Tensor,
}

impl<T: Scalar> OpKernel<T> for SumOp {
    fn backward(&self, ctx: &mut BwdCtx<'_, T>, g: &[T]) {
        if ctx.wants(self.x) {
            let n = ctx.value(self.x).len();
            ctx.accumulate(self.x, vec![g[0]; n]);
        }
    }
}

struct WeightedSumOp<T> {
    x: Tensor,
    coeffs: Vec<T>,
}

impl<T: Scalar> OpKernel<T> for WeightedSumOp<T> {
    fn backward(&self, ctx: &mut BwdCtx<'_, T>, g: &[T]) {
        if ctx.wants(self.x) {
            ctx.accumulate(self.x, self.coeffs.iter().map(|&c| c * g[0]).collect());
        }
    }
}

struct ConcatOp {
    inputs: Vec<Tensor>,
    channels: Vec<usize>,
    n: usize,
    hw: usize,
}

impl<T: Scalar> OpKernel<T> for ConcatOp {
    fn backward(&self, ctx: &mut BwdCtx<'_, T>, g: &[T]) {
        let c_total: usize = self.channels.iter().sum();
        let mut c_off = 0;
        for (&t, &c) in self.inputs.iter().zip(&self.channels) {
            if ctx.wants(t) {
                let mut dt = vec![T::zero(); self.n * c * self.hw];
                for n in 0..self.n {
                    let src = &g[(n * c_total + c_off) * self.hw..(n * c_total + c_off + c) * self.hw];
                    dt[n * c * self.hw..(n + 1) * c * self.hw].copy_from_slice(src);
                }
                ctx.accumulate(t, dt);
            }
            c_off += c;
        }
    }
}
