//! Named parameter storage shared by the network, optimizer, and
//! checkpoint code.

use std::collections::HashMap;

use crate::autodiff::{Scalar, Shape, Tape, Tensor};
use crate::lif;

/// Index of a parameter within its store.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct ParamId(pub(crate) usize);

/// What a stored tensor is; buffers (running statistics) are carried and
/// checkpointed but never optimized.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ParamKind {
    ConvWeight,
    ConvBias,
    BnGamma,
    BnBeta,
    BnRunningMean,
    BnRunningVar,
    LifThreshold,
    LifLeak,
}

impl ParamKind {
    pub fn learnable(self) -> bool {
        !matches!(self, ParamKind::BnRunningMean | ParamKind::BnRunningVar)
    }
}

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub shape: Shape,
    pub value: Vec<T>,
    pub grad: Vec<T>,
    pub kind: ParamKind,
}

/// All tensors of one model, in a deterministic construction order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    entries: Vec<Param<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        shape: impl Into<Shape>,
        value: Vec<T>,
        kind: ParamKind,
    ) -> ParamId {
        let name = name.into();
        let shape = shape.into();
        assert_eq!(value.len(), shape.numel(), "{name}: value/shape mismatch");
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter {name}"
        );
        let id = self.entries.len();
        self.by_name.insert(name.clone(), id);
        let grad = vec![T::zero(); value.len()];
        self.entries.push(Param {
            name,
            shape,
            value,
            grad,
            kind,
        });
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Param<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [Param<T>] {
        &mut self.entries
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.entries[id.0]
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    /// Exact learnable-scalar count: convolution weights and biases,
    /// batch-norm affine parameters, and the per-layer threshold and leak.
    pub fn learnable_scalars(&self) -> usize {
        self.entries
            .iter()
            .filter(|p| p.kind.learnable())
            .map(|p| p.value.len())
            .sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.entries {
            p.grad.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// Bind every learnable parameter as a tape leaf; buffers stay out of
    /// the graph. Returns the leaf handle per entry index.
    pub fn bind(&self, tape: &mut Tape<T>) -> Vec<Option<Tensor>> {
        self.entries
            .iter()
            .map(|p| {
                p.kind
                    .learnable()
                    .then(|| tape.leaf(p.value.clone(), p.shape.clone()))
            })
            .collect()
    }

    /// Copy gradients of a backward pass into the store. Leaves the reverse
    /// pass never reached get zero gradients, which still counts as
    /// populated.
    pub fn harvest_grads(&mut self, tape: &Tape<T>, binding: &[Option<Tensor>]) {
        for (p, bound) in self.entries.iter_mut().zip(binding) {
            let Some(t) = bound else { continue };
            match tape.grad(*t) {
                Some(g) => p.grad.copy_from_slice(g),
                None => p.grad.iter_mut().for_each(|g| *g = T::zero()),
            }
        }
    }

    /// Global L2 norm over all learnable gradients.
    pub fn grad_norm(&self) -> f64 {
        let mut acc = 0.0f64;
        for p in self.entries.iter().filter(|p| p.kind.learnable()) {
            for &g in &p.grad {
                let g = g.as_f64();
                acc += g * g;
            }
        }
        acc.sqrt()
    }

    pub fn scale_grads(&mut self, factor: T) {
        for p in self.entries.iter_mut().filter(|p| p.kind.learnable()) {
            p.grad.iter_mut().for_each(|g| *g *= factor);
        }
    }

    /// Clamp spiking parameters into their admissible region; applied after
    /// every optimizer step.
    pub fn apply_constraints(&mut self) {
        for p in &mut self.entries {
            match p.kind {
                ParamKind::LifThreshold => {
                    let lo = T::from_f64_c(lif::MIN_THRESHOLD);
                    p.value.iter_mut().for_each(|v| *v = v.max(lo));
                }
                ParamKind::LifLeak => {
                    p.value
                        .iter_mut()
                        .for_each(|v| *v = v.max(T::zero()).min(T::one()));
                }
                _ => {}
            }
        }
    }
}
