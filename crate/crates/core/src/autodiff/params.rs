use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const STORE_FORMAT_VERSION: u32 = 1;

/// Index of a parameter within its [`ParameterStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    name: String,
    value: Tensor,
    grad: Tensor,
}

/// Named learnable tensors with a gradient buffer of matching shape.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    entries: Vec<Entry>,
    by_name: HashMap<String, ParamId>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Validation(format!("duplicate parameter `{name}`")));
        }
        let id = ParamId(self.entries.len());
        self.by_name.insert(name.clone(), id);
        let (r, c) = value.shape();
        self.entries.push(Entry {
            name,
            value,
            grad: Tensor::zeros(r, c),
        });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    /// Looks up `name` and checks its shape.
    pub fn expect(&self, name: &str, rows: usize, cols: usize) -> Result<ParamId> {
        let id = self
            .id(name)
            .ok_or_else(|| Error::Validation(format!("missing parameter `{name}`")))?;
        let shape = self.value(id).shape();
        if shape != (rows, cols) {
            return Err(Error::Validation(format!(
                "parameter `{name}` has shape {shape:?}, expected ({rows}, {cols})"
            )));
        }
        Ok(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].grad
    }

    /// Mutable access to a value and its gradient at once.
    pub fn value_and_grad_mut(&mut self, id: ParamId) -> (&mut Tensor, &Tensor) {
        let e = &mut self.entries[id.0];
        (&mut e.value, &e.grad)
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad.data_mut().fill(0.0);
        }
    }

    /// Adds `grads` into the gradient buffers.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (i, g) in grads.slots.iter().enumerate() {
            if let Some(g) = g {
                for (acc, v) in self.entries[i].grad.data_mut().iter_mut().zip(g.data()) {
                    *acc += v;
                }
            }
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn to_wire(&self) -> StoreWire {
        StoreWire {
            format_version: STORE_FORMAT_VERSION,
            params: self
                .entries
                .iter()
                .map(|e| {
                    (
                        e.name.clone(),
                        TensorWire {
                            shape: [e.value.rows(), e.value.cols()],
                            data: e.value.data().to_vec(),
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn from_wire(wire: StoreWire) -> Result<Self> {
        if wire.format_version != STORE_FORMAT_VERSION {
            return Err(Error::Validation(format!(
                "unsupported parameter format version {}",
                wire.format_version
            )));
        }
        let mut store = ParameterStore::new();
        for (name, t) in wire.params {
            let tensor = Tensor::new(t.shape[0], t.shape[1], t.data)?;
            if !tensor.is_finite() {
                return Err(Error::Validation(format!("parameter `{name}` is not finite")));
            }
            store.insert(name, tensor)?;
        }
        Ok(store)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_wire()).expect("parameters serialize")
    }

    pub fn from_json(raw: &[u8]) -> Result<Self> {
        let wire: StoreWire = serde_json::from_slice(raw).map_err(|e| Error::from_json(raw, e))?;
        Self::from_wire(wire)
    }
}

/// JSON shape of a [`ParameterStore`]; names are sorted.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoreWire {
    pub format_version: u32,
    pub params: BTreeMap<String, TensorWire>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorWire {
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

/// Per-parameter gradients produced by one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    slots: Vec<Option<Tensor>>,
}

impl Gradients {
    pub(crate) fn new(n: usize) -> Self {
        Gradients {
            slots: vec![None; n],
        }
    }

    pub(crate) fn slot_mut(&mut self, id: ParamId, shape: (usize, usize)) -> &mut Tensor {
        self.slots[id.0].get_or_insert_with(|| Tensor::zeros(shape.0, shape.1))
    }

    /// Gradient for `id`; `None` when the parameter was not reached.
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.slots.get(id.0).and_then(Option::as_ref)
    }
}
