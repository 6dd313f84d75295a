//! Reverse-mode differentiation over a linear tape.
//!
//! Every differentiable operation appends a node holding its output value and
//! the indices of its inputs. [`Tape::backward`] walks the nodes in exact
//! reverse order, so a node's gradient is complete before it is propagated.
//! Parameter leaves borrow their values from the [`ParamStore`]; nothing is
//! copied for them.

use crate::error::{Error, Result};

use super::param::{Gradients, ParamId, ParamStore};
use super::tensor::{dot, softmax, Activation, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Const,
    Param(ParamId),
    MatMul(Var, Var),
    MatVec(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    ScaleBy(Var, Var),
    Act(Var, Activation),
    Softmax(Var),
    Concat(Vec<Var>),
    Stack(Vec<Var>),
    Slice(Var, usize),
    Gather {
        table: Var,
        ids: Vec<usize>,
        frozen_row: Option<usize>,
    },
    Sum(Var),
    Dot(Var, Var),
    AddN(Vec<Var>),
    Bce(Var, f64),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Option<Tensor>,
    needs_grad: bool,
}

/// Probabilities are clamped to this before taking logs.
pub const LOG_CLAMP: f64 = 1e-12;

pub struct Tape<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.store.value(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn scalar(&self, v: Var) -> Result<f64> {
        self.value(v).item()
    }

    fn push(&mut self, op: Op, value: Tensor, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("output of {op:?}")));
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            op,
            value: Some(value),
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            op: Op::Const,
            value: Some(value),
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push(Op::MatMul(a, b), out, &[a, b])
    }

    pub fn matvec(&mut self, m: Var, v: Var) -> Result<Var> {
        let out = self.value(m).matvec(self.value(v))?;
        self.push(Op::MatVec(m, v), out, &[m, v])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        self.push(Op::Transpose(a), out, &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        self.push(Op::Reshape(a), out, &[a])
    }

    fn zip_with(&self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(op, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("add", a, b, |x, y| x + y)?;
        self.push(Op::Add(a, b), out, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("sub", a, b, |x, y| x - y)?;
        self.push(Op::Sub(a, b), out, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("mul", a, b, |x, y| x * y)?;
        self.push(Op::Mul(a, b), out, &[a, b])
    }

    /// `a * s` for a one-element `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        let factor = self.value(s).item()?;
        let out = self.value(a).map(|x| x * factor);
        self.push(Op::ScaleBy(a, s), out, &[a, s])
    }

    pub fn activation(&mut self, a: Var, kind: Activation) -> Result<Var> {
        let out = super::tensor::activation(self.value(a), kind);
        self.push(Op::Act(a, kind), out, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Sigmoid)
    }

    /// Softmax over a 1-D input; see [`softmax`](super::softmax) for masking.
    pub fn softmax(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 1 {
            return Err(Error::shape("softmax", t.shape(), &[t.len()]));
        }
        let out = Tensor::vector(softmax(t.data(), mask)?);
        self.push(Op::Softmax(a), out, &[a])
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.rank() != 1 {
                return Err(Error::shape("concat", t.shape(), &[t.len()]));
            }
            data.extend_from_slice(t.data());
        }
        if data.is_empty() {
            return Err(Error::InvalidArgument("concat of nothing".into()));
        }
        self.push(Op::Concat(parts.to_vec()), Tensor::vector(data), parts)
    }

    /// Stacks equal-length vectors as the rows of a matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var> {
        let first = rows
            .first()
            .ok_or_else(|| Error::InvalidArgument("stack of nothing".into()))?;
        let width = self.value(*first).len();
        let mut data = Vec::with_capacity(width * rows.len());
        for &r in rows {
            let t = self.value(r);
            if t.rank() != 1 || t.len() != width {
                return Err(Error::shape("stack", &[width], t.shape()));
            }
            data.extend_from_slice(t.data());
        }
        let out = Tensor::matrix(rows.len(), width, data)?;
        self.push(Op::Stack(rows.to_vec()), out, rows)
    }

    /// Contiguous slice of the flattened data, as a 1-D tensor.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        if len == 0 || start + len > t.len() {
            return Err(Error::shape("slice", t.shape(), &[start, len]));
        }
        let out = Tensor::vector(t.data()[start..start + len].to_vec());
        self.push(Op::Slice(a, start), out, &[a])
    }

    pub fn row(&mut self, m: Var, i: usize) -> Result<Var> {
        let t = self.value(m);
        if t.rank() != 2 || i >= t.rows() {
            return Err(Error::shape("row", t.shape(), &[i]));
        }
        let cols = t.cols();
        self.slice(m, i * cols, cols)
    }

    /// Row gather `table[ids]` → `[ids.len() × cols]`. Gradient for
    /// `frozen_row` is dropped.
    pub fn gather(&mut self, table: Var, ids: &[usize], frozen_row: Option<usize>) -> Result<Var> {
        let t = self.value(table);
        if t.rank() != 2 || ids.is_empty() {
            return Err(Error::shape("gather", t.shape(), &[ids.len()]));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::InvalidArgument(format!(
                "row id {bad} out of range for table with {} rows",
                t.rows()
            )));
        }
        let mut data = Vec::with_capacity(ids.len() * t.cols());
        for &i in ids {
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::matrix(ids.len(), t.cols(), data)?;
        self.push(
            Op::Gather {
                table,
                ids: ids.to_vec(),
                frozen_row,
            },
            out,
            &[table],
        )
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s), &[a])
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.len() != tb.len() {
            return Err(Error::shape("dot", ta.shape(), tb.shape()));
        }
        let s = dot(ta.data(), tb.data());
        self.push(Op::Dot(a, b), Tensor::scalar(s), &[a, b])
    }

    pub fn add_n(&mut self, terms: &[Var]) -> Result<Var> {
        let first = terms
            .first()
            .ok_or_else(|| Error::InvalidArgument("add_n of nothing".into()))?;
        let mut out = self.value(*first).clone();
        for &t in &terms[1..] {
            out.add_assign(self.value(t))?;
        }
        self.push(Op::AddN(terms.to_vec()), out, terms)
    }

    /// Binary cross-entropy `−[y ln p + (1−y) ln(1−p)]` of a one-element
    /// probability, with log arguments clamped at [`LOG_CLAMP`].
    pub fn bce(&mut self, p: Var, label: f64) -> Result<Var> {
        let prob = self.value(p).item()?;
        let loss = -(label * prob.max(LOG_CLAMP).ln() + (1.0 - label) * (1.0 - prob).max(LOG_CLAMP).ln());
        self.push(Op::Bce(p, label), Tensor::scalar(loss), &[p])
    }

    /// Reverse pass from a one-element `loss`. Returns the gradient of every
    /// parameter reachable from it; parameters used more than once get the
    /// sum of their contributions.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::shape("backward", lt.shape(), &[1]));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::filled(lt.shape(), 1.0));
        let mut out = Gradients::with_len(self.store.len());

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let y = self.value(Var(idx));
            match &node.op {
                Op::Const => {}
                Op::Param(id) => out.add_dense(*id, &g)?,
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        let bt = self.value(*b).transpose()?;
                        acc(&mut grads, *a, g.matmul(&bt)?)?;
                    }
                    if self.needs(*b) {
                        let at = self.value(*a).transpose()?;
                        acc(&mut grads, *b, at.matmul(&g)?)?;
                    }
                }
                Op::MatVec(m, v) => {
                    if self.needs(*m) {
                        let vt = self.value(*v);
                        let mut dm = Vec::with_capacity(g.len() * vt.len());
                        for &gi in g.data() {
                            dm.extend(vt.data().iter().map(|&x| gi * x));
                        }
                        acc(&mut grads, *m, Tensor::matrix(g.len(), vt.len(), dm)?)?;
                    }
                    if self.needs(*v) {
                        let mt = self.value(*m);
                        let cols = mt.cols();
                        let mut dv = vec![0.0; cols];
                        for (row, &gi) in mt.data().chunks_exact(cols).zip(g.data()) {
                            for (d, &x) in dv.iter_mut().zip(row) {
                                *d += gi * x;
                            }
                        }
                        acc(&mut grads, *v, Tensor::vector(dv))?;
                    }
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.transpose()?)?,
                Op::Reshape(a) => {
                    let shape = self.value(*a).shape().to_vec();
                    acc(&mut grads, *a, g.reshape(&shape)?)?;
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        acc(&mut grads, *a, g.clone())?;
                    }
                    if self.needs(*b) {
                        acc(&mut grads, *b, g)?;
                    }
                }
                Op::Sub(a, b) => {
                    if self.needs(*b) {
                        acc(&mut grads, *b, g.map(|x| -x))?;
                    }
                    if self.needs(*a) {
                        acc(&mut grads, *a, g)?;
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        acc(&mut grads, *a, hadamard(&g, self.value(*b)))?;
                    }
                    if self.needs(*b) {
                        acc(&mut grads, *b, hadamard(&g, self.value(*a)))?;
                    }
                }
                Op::ScaleBy(a, s) => {
                    if self.needs(*s) {
                        let ds = dot(g.data(), self.value(*a).data());
                        acc(&mut grads, *s, Tensor::scalar(ds))?;
                    }
                    if self.needs(*a) {
                        let factor = self.value(*s).item()?;
                        acc(&mut grads, *a, g.map(|x| x * factor))?;
                    }
                }
                Op::Act(a, kind) => {
                    let data = g
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(&gi, &yi)| gi * kind.derivative_from_output(yi))
                        .collect();
                    acc(&mut grads, *a, Tensor::new(g.shape().to_vec(), data)?)?;
                }
                Op::Softmax(a) => {
                    // dx_i = y_i (g_i − Σ_j g_j y_j); masked y_i = 0 gives 0.
                    let inner = dot(g.data(), y.data());
                    let data = g
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(&gi, &yi)| yi * (gi - inner))
                        .collect();
                    acc(&mut grads, *a, Tensor::vector(data))?;
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        if self.needs(p) {
                            acc(&mut grads, p, Tensor::vector(g.data()[offset..offset + n].to_vec()))?;
                        }
                        offset += n;
                    }
                }
                Op::Stack(rows) => {
                    for (i, &r) in rows.iter().enumerate() {
                        if self.needs(r) {
                            acc(&mut grads, r, Tensor::vector(g.row(i).to_vec()))?;
                        }
                    }
                }
                Op::Slice(a, start) => {
                    let src = self.value(*a);
                    let mut d = Tensor::zeros(src.shape());
                    d.data_mut()[*start..*start + g.len()].copy_from_slice(g.data());
                    acc(&mut grads, *a, d)?;
                }
                Op::Gather {
                    table,
                    ids,
                    frozen_row,
                } => {
                    let src = self.value(*table);
                    let cols = src.cols();
                    match self.nodes[table.0].op {
                        Op::Param(pid) => {
                            for (i, &r) in ids.iter().enumerate() {
                                if Some(r) != *frozen_row {
                                    out.add_row(pid, cols, r, g.row(i));
                                }
                            }
                        }
                        _ => {
                            let mut d = Tensor::zeros(src.shape());
                            for (i, &r) in ids.iter().enumerate() {
                                if Some(r) == *frozen_row {
                                    continue;
                                }
                                let dst = &mut d.data_mut()[r * cols..(r + 1) * cols];
                                for (x, &gi) in dst.iter_mut().zip(g.row(i)) {
                                    *x += gi;
                                }
                            }
                            acc(&mut grads, *table, d)?;
                        }
                    }
                }
                Op::Sum(a) => {
                    let g0 = g.item()?;
                    acc(&mut grads, *a, Tensor::filled(self.value(*a).shape(), g0))?;
                }
                Op::Dot(a, b) => {
                    let g0 = g.item()?;
                    if self.needs(*a) {
                        acc(&mut grads, *a, self.value(*b).map(|x| x * g0).reshape(self.value(*a).shape())?)?;
                    }
                    if self.needs(*b) {
                        acc(&mut grads, *b, self.value(*a).map(|x| x * g0).reshape(self.value(*b).shape())?)?;
                    }
                }
                Op::AddN(terms) => {
                    for &t in terms {
                        if self.needs(t) {
                            acc(&mut grads, t, g.clone())?;
                        }
                    }
                }
                Op::Bce(p, label) => {
                    let prob = self.value(*p).item()?;
                    let mut d = 0.0;
                    if prob > LOG_CLAMP {
                        d -= label / prob;
                    }
                    if 1.0 - prob > LOG_CLAMP {
                        d += (1.0 - label) / (1.0 - prob);
                    }
                    acc(&mut grads, *p, Tensor::scalar(g.item()? * d))?;
                }
            }
        }
        Ok(out)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }
}

fn hadamard(a: &Tensor, b: &Tensor) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Tensor::new(a.shape().to_vec(), data).expect("hadamard of equal shapes")
}

fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) -> Result<()> {
    match &mut grads[v.0] {
        Some(t) => t.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}
