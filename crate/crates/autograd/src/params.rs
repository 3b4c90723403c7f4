//! Named parameter registry.
//!
//! A [`ParamStore`] owns the training state; each optimization step binds the
//! parameters onto a fresh [`crate::Tape`] (as trainable leaves, or as frozen
//! constants for inference), runs forward/backward, then applies updates back
//! into the store.

use crate::scalar::Scalar;
use crate::tape::{Gradients, Tape, Var};
use ndarray::ArrayD;

/// Handle to a parameter in a [`ParamStore`]. Stable across bind cycles.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct ParamId(pub(crate) usize);

pub struct ParamStore<F: Scalar> {
    names: Vec<String>,
    values: Vec<ArrayD<F>>,
}

impl<F: Scalar> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore { names: Vec::new(), values: Vec::new() }
    }

    pub fn register(&mut self, name: &str, value: ArrayD<F>) -> ParamId {
        assert!(
            !self.names.iter().any(|n| n == name),
            "duplicate parameter name: {name}"
        );
        self.names.push(name.to_string());
        self.values.push(crate::tape::to_standard(value));
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &ArrayD<F> {
        &self.values[id.0]
    }

    pub fn set(&mut self, id: ParamId, value: ArrayD<F>) {
        assert_eq!(
            self.values[id.0].shape(),
            value.shape(),
            "parameter {} shape change",
            self.names[id.0]
        );
        self.values[id.0] = crate::tape::to_standard(value);
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id_by_name(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &ArrayD<F>)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Bind every parameter onto `tape` as a trainable leaf.
    pub fn bind(&self, tape: &Tape<F>) -> BoundParams {
        BoundParams { vars: self.values.iter().map(|v| tape.leaf(v.clone())).collect() }
    }

    /// Bind every parameter onto `tape` as a frozen constant (no gradients).
    pub fn bind_frozen(&self, tape: &Tape<F>) -> BoundParams {
        BoundParams { vars: self.values.iter().map(|v| tape.constant(v.clone())).collect() }
    }
}

/// Per-tape mapping from [`ParamId`] to the leaf [`Var`] holding its value.
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Pull this binding's parameter gradients out of a backward result.
    /// Parameters the loss does not reach are omitted.
    pub fn collect_grads<F: Scalar>(
        &self,
        grads: &mut Gradients<F>,
    ) -> Vec<(ParamId, ArrayD<F>)> {
        self.vars
            .iter()
            .enumerate()
            .filter_map(|(i, v)| grads.take(*v).map(|g| (ParamId(i), g)))
            .collect()
    }
}
