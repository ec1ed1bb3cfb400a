//! Named parameter storage shared between the optimizer and forward passes.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Default, PartialEq)]
pub struct ParamStore<E: Element> {
    names: Vec<String>,
    values: Vec<Arc<Tensor<E>>>,
}

impl<E: Element> std::fmt::Debug for ParamStore<E> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParamStore").field("tensors", &self.len()).field("scalars", &self.count()).finish()
    }
}

impl<E: Element> ParamStore<E> {
    pub fn new() -> Self {
        Self { names: Vec::new(), values: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<E>) -> ParamId {
        self.names.push(name.into());
        self.values.push(Arc::new(value));
        ParamId(self.values.len() - 1)
    }

    /// Truncated normal at two standard deviations.
    pub fn trunc_normal(&mut self, name: impl Into<String>, shape: &[usize], std: f64, rng: &mut impl Rng) -> ParamId {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| loop {
                let z: f64 = StandardNormal.sample(rng);
                if z.abs() <= 2.0 {
                    break E::of(z * std);
                }
            })
            .collect();
        self.add(name, Tensor::new(shape.to_vec(), data).expect("sized from shape"))
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape.to_vec()))
    }

    pub fn ones(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::ones(shape.to_vec()))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total scalar count.
    pub fn count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor<E> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<E> {
        Arc::make_mut(&mut self.values[id.0])
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<E>) -> Result<()> {
        if value.shape() != self.values[id.0].shape() {
            return Err(TensorError::Dimension {
                op: "param_set",
                detail: format!("{} expects {:?}, got {:?}", self.names[id.0], self.values[id.0].shape(), value.shape()),
            });
        }
        self.values[id.0] = Arc::new(value);
        Ok(())
    }

    pub fn manifest(&self) -> Vec<(String, Vec<usize>)> {
        self.names.iter().zip(&self.values).map(|(n, v)| (n.clone(), v.shape().to_vec())).collect()
    }

    pub fn cast<F: Element>(&self) -> ParamStore<F> {
        ParamStore { names: self.names.clone(), values: self.values.iter().map(|v| Arc::new(v.cast())).collect() }
    }

    /// Records every parameter on `tape` as a leaf.
    pub fn bind<'t>(&self, tape: &'t Tape<E>, trainable: bool) -> Bound<'t, E> {
        Bound { vars: self.values.iter().map(|v| tape.leaf_shared(v.clone(), trainable)).collect() }
    }
}

/// Parameters recorded on one tape.
pub struct Bound<'t, E: Element> {
    vars: Vec<Var<'t, E>>,
}

impl<'t, E: Element> Bound<'t, E> {
    /// Binding from explicit variables in store order, e.g. gradient-check inputs.
    pub fn from_vars(vars: Vec<Var<'t, E>>) -> Self {
        Self { vars }
    }

    pub fn var(&self, id: ParamId) -> Var<'t, E> {
        self.vars[id.0]
    }

    /// Gradients in store order.
    pub fn grads(&self, grads: &Gradients<E>) -> Vec<Tensor<E>> {
        self.vars.iter().map(|&v| grads.wrt(v)).collect()
    }
}
