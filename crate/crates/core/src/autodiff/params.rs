use crate::numerics::{softplus, softplus_inverse, Matrix};

/// How a stored (unconstrained) parameter value maps to the value used in
/// the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    Identity,
    /// Constrained view is `softplus(value)`, strictly positive.
    SoftplusPositive,
}

/// Handle to a parameter in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// A trainable tensor: unconstrained storage, an optional positivity
/// transform, and a gradient slot of the same shape.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    value: Matrix,
    transform: Transform,
    grad: Matrix,
}

impl Parameter {
    pub fn value(&self) -> &Matrix {
        &self.value
    }

    pub fn transform(&self) -> Transform {
        self.transform
    }

    pub fn grad(&self) -> &Matrix {
        &self.grad
    }

    /// Value after applying the transform.
    pub fn constrained(&self) -> Matrix {
        match self.transform {
            Transform::Identity => self.value.clone(),
            Transform::SoftplusPositive => self.value.map(softplus),
        }
    }
}

/// Owns every trainable parameter of a model. Layers hold [`ParamId`]s.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix, transform: Transform) -> ParamId {
        let grad = Matrix::zeros(value.rows(), value.cols());
        self.params.push(Parameter {
            name: name.into(),
            value,
            transform,
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    /// Adds a positive parameter by its constrained value.
    pub fn add_positive(&mut self, name: impl Into<String>, constrained: &Matrix) -> ParamId {
        let unconstrained = constrained.map(softplus_inverse);
        self.add(name, unconstrained, Transform::SoftplusPositive)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].value
    }

    pub fn constrained(&self, id: ParamId) -> Matrix {
        self.params[id.0].constrained()
    }

    pub fn grad(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].grad
    }

    pub fn set_value(&mut self, id: ParamId, value: Matrix) {
        let p = &mut self.params[id.0];
        assert_eq!(p.value.shape(), value.shape(), "parameter shape is fixed");
        p.value = value;
    }

    /// Sets an entry of the unconstrained value (used by finite differencing).
    pub fn set_entry(&mut self, id: ParamId, i: usize, j: usize, v: f64) {
        self.params[id.0].value.set(i, j, v);
    }

    pub fn entry(&self, id: ParamId, i: usize, j: usize) -> f64 {
        self.params[id.0].value.get(i, j)
    }

    pub fn accumulate_grad(&mut self, id: ParamId, delta: &Matrix) {
        let p = &mut self.params[id.0];
        assert_eq!(p.grad.shape(), delta.shape(), "gradient shape mismatch");
        p.grad = p.grad.add(delta);
    }

    /// Zeroes every gradient slot. Idempotent.
    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = Matrix::zeros(p.grad.rows(), p.grad.cols());
        }
    }
}
