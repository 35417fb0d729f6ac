use super::{Scalar, Tensor};

/// A named parameter array with a trainable flag.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub trainable: bool,
}

/// Ordered parameter collection. Gradients and optimizer moments are kept in
/// vectors aligned with this order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet<T> {
    pub params: Vec<Param<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn push(&mut self, name: impl Into<String>, value: Tensor<T>) -> usize {
        self.params.push(Param {
            name: name.into(),
            value,
            trainable: true,
        });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn value(&self, idx: usize) -> &Tensor<T> {
        &self.params[idx].value
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        for p in &mut self.params {
            p.trainable = trainable;
        }
    }

    pub fn zero_grads(&self) -> Gradients<T> {
        Gradients {
            tensors: self.params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    trainable: p.trainable,
                })
                .collect(),
        }
    }
}

/// Gradients aligned with a [`ParamSet`]; entries for frozen parameters stay zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn add(&mut self, idx: usize, g: &Tensor<T>) {
        self.tensors[idx].add_assign(g);
    }

    pub fn accumulate(&mut self, other: &Gradients<T>) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, k: T) {
        for t in &mut self.tensors {
            t.scale(k);
        }
    }

    /// Look up a gradient by parameter name.
    pub fn by_name<'a>(&'a self, params: &ParamSet<T>, name: &str) -> Option<&'a Tensor<T>> {
        let idx = params.params.iter().position(|p| p.name == name)?;
        self.tensors.get(idx)
    }
}
