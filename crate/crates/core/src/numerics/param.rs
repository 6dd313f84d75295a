use crate::error::{Error, Result};

use super::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A learnable tensor together with its gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Param {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Ordered collection of parameters. Registration order is the canonical
/// order for checkpoints, optimizer state and gradient merging.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            self.find(&name).is_none(),
            "parameter {name} registered twice"
        );
        self.params.push(Param::new(name, value));
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
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

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(Param::zero_grad);
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Adds a backward pass's gradients into the stored grads.
    pub fn accumulate(&mut self, grads: &Gradients) -> Result<()> {
        for (idx, slot) in grads.slots.iter().enumerate() {
            let Some(buf) = slot else { continue };
            let param = self
                .params
                .get_mut(idx)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter #{idx}")))?;
            match buf {
                GradBuf::Dense(t) => param.grad.add_assign(t)?,
                GradBuf::Rows { cols, rows } => {
                    let g = param.grad.data_mut();
                    for (&r, vals) in rows {
                        debug_assert_eq!(vals.len(), *cols);
                        for (a, b) in g[r * cols..(r + 1) * cols].iter_mut().zip(vals) {
                            *a += b;
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Gradient for one parameter produced by a backward pass. Row-gathered
/// tables (embeddings) keep only the rows that were touched.
#[derive(Clone, Debug, PartialEq)]
pub enum GradBuf {
    Dense(Tensor),
    Rows {
        cols: usize,
        rows: std::collections::BTreeMap<usize, Vec<f64>>,
    },
}

impl GradBuf {
    pub fn to_dense(&self, shape: &[usize]) -> Tensor {
        match self {
            GradBuf::Dense(t) => t.clone(),
            GradBuf::Rows { cols, rows } => {
                let mut t = Tensor::zeros(shape);
                let d = t.data_mut();
                for (&r, vals) in rows {
                    d[r * cols..(r + 1) * cols].copy_from_slice(vals);
                }
                t
            }
        }
    }
}

/// Per-parameter gradients from one backward pass, indexed by [`ParamId`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    pub(crate) slots: Vec<Option<GradBuf>>,
}

impl Gradients {
    pub(crate) fn with_len(n: usize) -> Self {
        Gradients {
            slots: vec![None; n],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&GradBuf> {
        self.slots.get(id.0).and_then(|s| s.as_ref())
    }

    pub(crate) fn add_dense(&mut self, id: ParamId, g: &Tensor) -> Result<()> {
        let slot = &mut self.slots[id.0];
        match slot {
            None => *slot = Some(GradBuf::Dense(g.clone())),
            Some(GradBuf::Dense(t)) => t.add_assign(g)?,
            Some(GradBuf::Rows { cols, rows }) => {
                let mut dense = g.clone();
                let d = dense.data_mut();
                for (&r, vals) in rows.iter() {
                    for (a, b) in d[r * *cols..(r + 1) * *cols].iter_mut().zip(vals) {
                        *a += b;
                    }
                }
                *slot = Some(GradBuf::Dense(dense));
            }
        }
        Ok(())
    }

    pub(crate) fn add_row(&mut self, id: ParamId, cols: usize, row: usize, g: &[f64]) {
        let slot = &mut self.slots[id.0];
        match slot {
            None => {
                let mut rows = std::collections::BTreeMap::new();
                rows.insert(row, g.to_vec());
                *slot = Some(GradBuf::Rows { cols, rows });
            }
            Some(GradBuf::Rows { rows, .. }) => {
                let entry = rows.entry(row).or_insert_with(|| vec![0.0; cols]);
                for (a, b) in entry.iter_mut().zip(g) {
                    *a += b;
                }
            }
            Some(GradBuf::Dense(t)) => {
                for (a, b) in t.data_mut()[row * cols..(row + 1) * cols].iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
    }
}
