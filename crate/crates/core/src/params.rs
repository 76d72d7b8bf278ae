//! Named trainable tensors and their gradients.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    /// Adam first-moment estimate.
    pub m: Tensor,
    /// Adam second-moment estimate.
    pub v: Tensor,
}

/// All trainable tensors of a model, in registration order.
///
/// Initialization draws from a ChaCha8 stream seeded at construction, so the
/// same seed and the same sequence of registrations give bit-identical
/// values.
#[derive(Clone, Debug)]
pub struct ParameterStore {
    params: Vec<Parameter>,
    rng: ChaCha8Rng,
    step: u64,
}

impl ParameterStore {
    pub fn new(seed: u64) -> Self {
        Self {
            params: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            step: 0,
        }
    }

    fn insert(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        if self.id(name).is_some() {
            return Err(Error::DuplicateParameter(name.to_string()));
        }
        let [r, c] = value.shape();
        self.params.push(Parameter {
            name: name.to_string(),
            value,
            m: Tensor::zeros(r, c),
            v: Tensor::zeros(r, c),
        });
        Ok(ParamId(self.params.len() - 1))
    }

    /// Registers a weight drawn from `uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn uniform(&mut self, name: &str, rows: usize, cols: usize, fan_in: usize) -> Result<ParamId> {
        let bound = 1.0 / libm::sqrt(fan_in.max(1) as f64);
        let mut t = Tensor::zeros(rows, cols);
        for v in t.data_mut() {
            *v = self.rng.gen_range(-bound..bound);
        }
        self.insert(name, t)
    }

    pub fn zeros(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId> {
        self.insert(name, Tensor::zeros(rows, cols))
    }

    pub fn with_value(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        self.insert(name, value)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn require(&self, name: &str) -> Result<ParamId> {
        self.id(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
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

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|p| (p.name.as_str(), &p.value))
    }

    pub fn total_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub(crate) fn bump_step(&mut self) -> u64 {
        self.step += 1;
        self.step
    }

    /// Replaces the value of an existing parameter, checking its shape.
    pub fn load(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = self.require(name)?;
        let expected = self.get(id).shape();
        if expected != value.shape() {
            return Err(Error::ShapeMismatch {
                name: name.to_string(),
                expected,
                found: value.shape(),
            });
        }
        self.params[id.0].value = value;
        Ok(())
    }
}

/// Gradients indexed like the [`ParameterStore`] they were produced for.
///
/// Entries stay `None` until some recorded operation touches the parameter.
#[derive(Clone, Debug)]
pub struct Gradients {
    shapes: Vec<[usize; 2]>,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn for_store(store: &ParameterStore) -> Self {
        let shapes: Vec<_> = store.params.iter().map(|p| p.value.shape()).collect();
        let grads = shapes.iter().map(|_| None).collect();
        Self { shapes, grads }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    fn slot(&mut self, id: ParamId) -> Result<&mut Tensor> {
        let [r, c] = *self.shapes.get(id.0).ok_or_else(|| Error::Dimension {
            op: "gradients",
            detail: alloc::format!("parameter index {} outside store", id.0),
        })?;
        Ok(self.grads[id.0].get_or_insert_with(|| Tensor::zeros(r, c)))
    }

    pub fn accumulate(&mut self, id: ParamId, grad: &Tensor) -> Result<()> {
        let slot = self.slot(id)?;
        if slot.shape() != grad.shape() {
            return Err(Error::Dimension {
                op: "gradients",
                detail: alloc::format!("{:?} vs {:?}", slot.shape(), grad.shape()),
            });
        }
        slot.add_assign(grad);
        Ok(())
    }

    pub(crate) fn accumulate_rows(&mut self, id: ParamId, rows: &[usize], grad: &Tensor) -> Result<()> {
        let slot = self.slot(id)?;
        for (i, &r) in rows.iter().enumerate() {
            for (dst, src) in slot.row_mut(r).iter_mut().zip(grad.row(i)) {
                *dst += src;
            }
        }
        Ok(())
    }

    /// Gives every untouched parameter an explicit zero gradient.
    pub fn fill_missing(&mut self) {
        for (slot, &[r, c]) in self.grads.iter_mut().zip(&self.shapes) {
            slot.get_or_insert_with(|| Tensor::zeros(r, c));
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.iter_mut().flatten() {
            for v in g.data_mut() {
                *v *= factor;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}
