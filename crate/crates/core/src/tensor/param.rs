use super::{Real, Result, Tape, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param<T = f32> {
    pub name: String,
    pub value: Tensor<T>,
    /// Empty until a backward pass reaches the parameter.
    pub grad: Option<Vec<T>>,
}

/// Named, ordered collection of trainable tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T = f32> {
    params: Vec<Param<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
            grad: None,
        });
        ParamId(self.params.len() - 1)
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

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> Option<&[T]> {
        self.params[id.0].grad.as_deref()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    pub fn has_any_grad(&self) -> bool {
        self.params.iter().any(|p| p.grad.is_some())
    }

    /// Adds the parameter gradients recorded on `tape` into this store.
    pub fn accumulate_grads(&mut self, tape: &Tape<T>) {
        for (id, rows, g) in tape.param_grads() {
            let p = &mut self.params[id.0];
            let n = p.value.numel();
            let buf = p.grad.get_or_insert_with(|| vec![T::zero(); n]);
            match rows {
                None => {
                    for (b, &v) in buf.iter_mut().zip(g) {
                        *b = *b + v;
                    }
                }
                Some(rows) => {
                    let c = n / p.value.shape()[0];
                    for (m, &r) in rows.iter().enumerate() {
                        for j in 0..c {
                            buf[r * c + j] = buf[r * c + j] + g[m * c + j];
                        }
                    }
                }
            }
        }
    }

    pub fn scale_grads(&mut self, c: f64) {
        let c = T::from_f64(c);
        for p in &mut self.params {
            if let Some(g) = &mut p.grad {
                g.iter_mut().for_each(|v| *v = *v * c);
            }
        }
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: None,
                })
                .collect(),
        }
    }

    /// Replaces every value with the matching (by position) entry of `values`.
    pub fn load_values(&mut self, values: Vec<Tensor<T>>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(TensorError::Format(format!(
                "expected {} tensors, got {}",
                self.params.len(),
                values.len()
            )));
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            if p.value.shape() != v.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "load_values",
                    left: p.value.shape().to_vec(),
                    right: v.shape().to_vec(),
                });
            }
            p.value = v;
        }
        Ok(())
    }
}
