//! Named trainable parameters and their binding onto a [`Tape`].

use std::ops::Index;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Matrix, Tape, Tensor};

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Matrix,
    /// Whether AdamW applies weight decay to this entry.
    pub decay: bool,
}

/// Ordered collection of named parameter matrices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Panics on a duplicate name; names are fixed by model construction.
    pub fn add(&mut self, name: impl Into<String>, value: Matrix, decay: bool) -> ParamId {
        let name = name.into();
        assert!(self.id_of(&name).is_none(), "duplicate parameter {name}");
        self.entries.push(Param { name, value, decay });
        ParamId(self.entries.len() - 1)
    }

    /// Glorot-uniform weight matrix, decayed.
    pub fn glorot<R: Rng + ?Sized>(&mut self, name: impl Into<String>, rows: usize, cols: usize, rng: &mut R) -> ParamId {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let value = Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-limit..limit));
        self.add(name, value, true)
    }

    /// Scalar mixing logit starting at 0, so the mix starts at one half.
    pub fn logit(&mut self, name: impl Into<String>) -> ParamId {
        self.add(name, Matrix::scalar(0.0), false)
    }

    /// Layer-norm gain (ones) and bias (zeros), not decayed.
    pub fn layer_norm(&mut self, name: &str, width: usize) -> (ParamId, ParamId) {
        (
            self.add(format!("{name}.gain"), Matrix::filled(1, width, 1.0), false),
            self.add(format!("{name}.bias"), Matrix::zeros(1, width), false),
        )
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalars across all entries.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|p| p.value.as_slice().len()).sum()
    }

    pub fn entries(&self) -> &[Param] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [Param] {
        &mut self.entries
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.entries[id.0].value
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Matrix> {
        self.id_of(name).map(|id| self.get(id))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.id_of(name).map(|id| self.get_mut(id))
    }

    /// Copies every value from `other`, which must have the same names and
    /// shapes in the same order.
    pub fn copy_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::Contract(format!(
                "parameter count {} vs {}",
                self.len(),
                other.len()
            )));
        }
        for (dst, src) in self.entries.iter_mut().zip(&other.entries) {
            if dst.name != src.name || dst.value.shape() != src.value.shape() {
                return Err(Error::Contract(format!(
                    "parameter {} {:?} does not match {} {:?}",
                    dst.name,
                    dst.value.shape(),
                    src.name,
                    src.value.shape()
                )));
            }
            dst.value = src.value.clone();
        }
        Ok(())
    }

    /// Records every parameter as a gradient-tracking leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound(self.entries.iter().map(|p| tape.leaf(p.value.clone(), true)).collect())
    }
}

/// Tape handles for a bound [`ParamStore`], indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound(Vec<Tensor>);

impl Bound {
    /// Gradients in store order; `None` where a parameter did not reach the loss.
    pub fn grads(&self, tape: &Tape) -> Vec<Option<Matrix>> {
        self.0.iter().map(|&t| tape.grad(t).cloned()).collect()
    }
}

impl Index<ParamId> for Bound {
    type Output = Tensor;

    fn index(&self, id: ParamId) -> &Tensor {
        &self.0[id.0]
    }
}
