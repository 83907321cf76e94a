use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Flat, named list of trainable tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, id: usize) -> &Tensor {
        &self.tensors[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Tensor {
        &mut self.tensors[id]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Zero-filled buffers shaped like each parameter.
    pub fn zeros_like(&self) -> Vec<Vec<f64>> {
        self.tensors.iter().map(|t| vec![0.0; t.numel()]).collect()
    }

    /// Replaces every tensor with `other`'s after checking names and shapes.
    pub fn copy_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Mismatch("parameter names differ".into()));
        }
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            if a.shape() != b.shape() {
                return Err(Error::Mismatch("parameter shapes differ".into()));
            }
            a.data_mut().copy_from_slice(b.data());
        }
        Ok(())
    }
}

/// Leading component of a parameter name, e.g. `mem2` for
/// `mem2.turn-left.wx`.
pub fn param_group(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

/// Records parameters on a tape the first time they are used.
#[derive(Debug)]
pub struct Binder {
    vars: Vec<Option<Var>>,
    trainable: bool,
}

impl Binder {
    pub fn new(store: &ParamStore, trainable: bool) -> Self {
        Binder {
            vars: vec![None; store.len()],
            trainable,
        }
    }

    pub fn get(&mut self, tape: &mut Tape, store: &ParamStore, id: usize) -> Var {
        *self.vars[id].get_or_insert_with(|| {
            if self.trainable {
                tape.param(store.get(id))
            } else {
                tape.constant(store.get(id))
            }
        })
    }

    pub fn var(&self, id: usize) -> Option<Var> {
        self.vars[id]
    }

    /// Adds the tape's accumulated leaf gradients into `grads`.
    pub fn accumulate(&self, tape: &Tape, grads: &mut [Vec<f64>]) {
        for (id, v) in self.vars.iter().enumerate() {
            if let Some(g) = v.and_then(|v| tape.grad(v)) {
                grads[id].iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
        }
    }
}
