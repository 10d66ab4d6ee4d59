use serde::{Deserialize, Serialize};

use super::matrix::{MatRef, Real};
use crate::error::{Error, Result};

/// Shape of one trainable tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Shape {
    Matrix(usize, usize),
    Vector(usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Matrix(r, c) => r * c,
            Shape::Vector(n) => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> Vec<usize> {
        match *self {
            Shape::Matrix(r, c) => vec![r, c],
            Shape::Vector(n) => vec![n],
        }
    }

    pub fn from_dims(dims: &[usize]) -> Option<Self> {
        match *dims {
            [r, c] => Some(Shape::Matrix(r, c)),
            [n] => Some(Shape::Vector(n)),
            _ => None,
        }
    }
}

/// A named trainable tensor with its gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor<F> {
    pub name: String,
    pub shape: Shape,
    pub values: Vec<F>,
    pub grad: Vec<F>,
}

impl<F: Real> ParamTensor<F> {
    pub fn zeros(name: impl Into<String>, shape: Shape) -> Self {
        Self {
            name: name.into(),
            shape,
            values: vec![F::zero(); shape.len()],
            grad: vec![F::zero(); shape.len()],
        }
    }

    pub fn with_values(name: impl Into<String>, shape: Shape, values: Vec<F>) -> Result<Self> {
        let name = name.into();
        if values.len() != shape.len() {
            return Err(Error::shape(
                "ParamTensor",
                format!("{name}: shape {shape:?} but {} values", values.len()),
            ));
        }
        Ok(Self {
            grad: vec![F::zero(); values.len()],
            name,
            shape,
            values,
        })
    }

    /// Values viewed as a matrix; a vector is a single row.
    pub fn matrix(&self) -> MatRef<'_, F> {
        let (rows, cols) = match self.shape {
            Shape::Matrix(r, c) => (r, c),
            Shape::Vector(n) => (1, n),
        };
        MatRef {
            rows,
            cols,
            data: &self.values,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Adds `delta` into the gradient buffer.
    pub fn accumulate_grad(&mut self, delta: &[F]) -> Result<()> {
        if delta.len() != self.grad.len() {
            return Err(Error::shape(
                "accumulate_grad",
                format!("{}: {} vs {}", self.name, delta.len(), self.grad.len()),
            ));
        }
        for (g, &d) in self.grad.iter_mut().zip(delta) {
            *g = *g + d;
        }
        Ok(())
    }
}

/// Ordered collection of trainable tensors.
///
/// The order is the insertion order and is part of the contract: optimizer
/// moment buffers and checkpoint payloads are laid out in the same order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterSet<F> {
    tensors: Vec<ParamTensor<F>>,
}

impl<F: Real> ParameterSet<F> {
    pub fn new() -> Self {
        Self {
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, tensor: ParamTensor<F>) -> Result<()> {
        if self.index_of(&tensor.name).is_some() {
            return Err(Error::InvalidArgument(format!(
                "duplicate parameter name {}",
                tensor.name
            )));
        }
        self.tensors.push(tensor);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.tensors.iter().position(|t| t.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&ParamTensor<F>> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamTensor<F>> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    pub fn tensor(&self, i: usize) -> &ParamTensor<F> {
        &self.tensors[i]
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut ParamTensor<F> {
        &mut self.tensors[i]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, ParamTensor<F>> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> std::slice::IterMut<'_, ParamTensor<F>> {
        self.tensors.iter_mut()
    }

    pub fn zero_grad(&mut self) {
        for t in &mut self.tensors {
            t.grad.iter_mut().for_each(|g| *g = F::zero());
        }
    }

    /// Number of trainable scalars.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn cast<G: Real>(&self) -> ParameterSet<G> {
        let conv = |v: &[F]| {
            v.iter()
                .map(|x| G::from_f64_lossy(x.to_f64_lossy()))
                .collect()
        };
        ParameterSet {
            tensors: self
                .tensors
                .iter()
                .map(|t| ParamTensor {
                    name: t.name.clone(),
                    shape: t.shape,
                    values: conv(&t.values),
                    grad: conv(&t.grad),
                })
                .collect(),
        }
    }

    /// True when names and shapes agree position by position.
    pub fn same_layout<G: Real>(&self, other: &ParameterSet<G>) -> bool {
        self.len() == other.len()
            && self
                .iter()
                .zip(other.iter())
                .all(|(a, b)| a.name == b.name && a.shape == b.shape)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_duplicate_names() {
        let mut p = ParameterSet::<f32>::new();
        p.push(ParamTensor::zeros("a", Shape::Vector(2))).unwrap();
        assert!(p.push(ParamTensor::zeros("a", Shape::Vector(3))).is_err());
    }

    #[test]
    fn grad_shape_follows_values() {
        let t = ParamTensor::<f64>::with_values("w", Shape::Matrix(2, 3), vec![1.0; 6]).unwrap();
        assert_eq!(t.grad.len(), 6);
        assert!(ParamTensor::<f64>::with_values("w", Shape::Matrix(2, 3), vec![1.0; 5]).is_err());
    }

    #[test]
    fn order_is_insertion_order() {
        let mut p = ParameterSet::<f32>::new();
        for name in ["z", "a", "m"] {
            p.push(ParamTensor::zeros(name, Shape::Vector(1))).unwrap();
        }
        let names: Vec<_> = p.iter().map(|t| t.name.as_str()).collect();
        assert_eq!(names, ["z", "a", "m"]);
        assert_eq!(p.index_of("m"), Some(2));
    }
}
