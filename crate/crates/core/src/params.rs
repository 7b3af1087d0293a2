//! Flat storage of trainable tensors addressed by [`ParamId`].

use serde::{Deserialize, Serialize};

use crate::numeric::{DenseMatrix, Gradients, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    tensors: Vec<DenseMatrix>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, m: DenseMatrix) -> ParamId {
        self.tensors.push(m);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &DenseMatrix {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut DenseMatrix {
        &mut self.tensors[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn tensors(&self) -> &[DenseMatrix] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut DenseMatrix> {
        self.tensors.iter_mut().collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(DenseMatrix::len).sum()
    }

    /// Records every tensor as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self.tensors.iter().map(|t| tape.leaf(t.clone())).collect(),
        }
    }
}

/// Tape handles for a [`ParamStore`], index-aligned with it.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Wraps leaves that were recorded elsewhere, in store order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradients in store order.
    pub fn gradients(&self, grads: &Gradients) -> Vec<DenseMatrix> {
        self.vars.iter().map(|&v| grads.wrt(v)).collect()
    }
}
