//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Every primitive evaluates eagerly and appends one entry to the tape, so
//! entries are topologically ordered by construction. [`Tape::backward`]
//! walks them in reverse, accumulating (`+=`) into each input's adjoint;
//! values consumed by several ops therefore collect every contribution.

use super::params::{Gradients, ParamId, ParameterStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    MatVec(Var, Var),
    Add(Var, Var),
    Hadamard(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    SumList(Vec<Var>),
    Sum(Var),
    Scale(Var, f64),
    Embed { table: Var, index: usize },
    SoftmaxXent { logits: Var, class: usize, probs: Vec<f64> },
}

#[derive(Debug)]
enum Value {
    Owned(Tensor),
    Param(ParamId),
}

#[derive(Debug)]
struct Entry {
    op: Op,
    value: Value,
}

/// Record of one forward computation over a read-only parameter store.
pub struct Tape<'p> {
    store: &'p ParameterStore,
    entries: Vec<Entry>,
    param_vars: Vec<Option<Var>>,
}

impl<'p> Tape<'p> {
    pub fn new(store: &'p ParameterStore) -> Self {
        Tape {
            store,
            entries: Vec::new(),
            param_vars: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'p ParameterStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.entries[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.store.value(*id),
        }
    }

    fn push(&mut self, op: Op, value: Tensor, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        self.entries.push(Entry {
            op,
            value: Value::Owned(value),
        });
        Ok(Var(self.entries.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.entries.push(Entry {
            op: Op::Constant,
            value: Value::Owned(value),
        });
        Var(self.entries.len() - 1)
    }

    /// Leaf for a stored parameter. Repeated calls return the same leaf.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.entries.push(Entry {
            op: Op::Param(id),
            value: Value::Param(id),
        });
        let v = Var(self.entries.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let (wt, xt) = (self.value(w), self.value(x));
        if xt.cols() != 1 || wt.cols() != xt.rows() {
            return Err(Error::Shape {
                op: "matvec",
                detail: format!("{:?} x {:?}", wt.shape(), xt.shape()),
            });
        }
        let out: Vec<f64> = (0..wt.rows())
            .map(|r| wt.row(r).iter().zip(xt.data()).map(|(a, b)| a * b).sum())
            .collect();
        self.push(Op::MatVec(w, x), Tensor::vector(out), "matvec")
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Shape {
                op,
                detail: format!("{sa:?} vs {sb:?}"),
            });
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(ta.rows(), ta.cols(), data).expect("shape preserved")
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(a);
        Tensor::new(t.rows(), t.cols(), t.data().iter().map(|x| f(*x)).collect())
            .expect("shape preserved")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip_map(a, b, |x, y| x + y);
        self.push(Op::Add(a, b), out, "add")
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("hadamard", a, b)?;
        let out = self.zip_map(a, b, |x, y| x * y);
        self.push(Op::Hadamard(a, b), out, "hadamard")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.map(a, sigmoid);
        self.push(Op::Sigmoid(a), out, "sigmoid")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.map(a, f64::tanh);
        self.push(Op::Tanh(a), out, "tanh")
    }

    /// Rectifier. The backward pass uses slope 1 at exactly zero so that a
    /// zero-initialised layer still receives gradient.
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.map(a, |x| x.max(0.0));
        self.push(Op::Relu(a), out, "relu")
    }

    /// Elementwise sum of equally shaped values, added left to right.
    pub fn sum_list(&mut self, items: &[Var]) -> Result<Var> {
        let first = *items.first().ok_or(Error::Shape {
            op: "sum_list",
            detail: "empty input list".into(),
        })?;
        for v in &items[1..] {
            self.same_shape("sum_list", first, *v)?;
        }
        let t = self.value(first);
        let mut acc = t.data().to_vec();
        for v in &items[1..] {
            for (a, b) in acc.iter_mut().zip(self.value(*v).data()) {
                *a += b;
            }
        }
        let out = Tensor::new(t.rows(), t.cols(), acc).expect("shape preserved");
        self.push(Op::SumList(items.to_vec()), out, "sum_list")
    }

    /// Sum of all entries, as a 1x1 tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s), "sum")
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let out = self.map(a, |x| x * factor);
        self.push(Op::Scale(a, factor), out, "scale")
    }

    /// Row `index` of `table`, as a column vector.
    pub fn embed(&mut self, table: Var, index: usize) -> Result<Var> {
        let t = self.value(table);
        if index >= t.rows() {
            return Err(Error::Shape {
                op: "embed_lookup",
                detail: format!("row {index} out of {} rows", t.rows()),
            });
        }
        let out = Tensor::vector(t.row(index).to_vec());
        self.push(Op::Embed { table, index }, out, "embed_lookup")
    }

    /// Cross-entropy of `softmax(logits)` against `class`, as a 1x1 tensor.
    pub fn softmax_cross_entropy(&mut self, logits: Var, class: usize) -> Result<Var> {
        let z = self.value(logits);
        if z.cols() != 1 || class >= z.rows() {
            return Err(Error::Shape {
                op: "softmax_cross_entropy",
                detail: format!("class {class} for logits {:?}", z.shape()),
            });
        }
        let probs = softmax(z.data());
        let max = z.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_norm = max + z.data().iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let loss = log_norm - z.data()[class];
        self.push(
            Op::SoftmaxXent { logits, class, probs },
            Tensor::scalar(loss),
            "softmax_cross_entropy",
        )
    }

    /// Back-propagates from a scalar `loss`, returning parameter gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape {
                op: "backward",
                detail: format!("loss must be scalar, got {:?}", self.value(loss).shape()),
            });
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);
        let mut grads = Gradients::new(self.store.len());

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let entry = &self.entries[i];
            match &entry.op {
                Op::Constant => {}
                Op::Param(id) => {
                    let slot = grads.slot_mut(*id, self.store.value(*id).shape());
                    add_into(slot.data_mut(), &g);
                }
                Op::MatVec(w, x) => {
                    let (wt, xt) = (self.value(*w), self.value(*x));
                    let cols = wt.cols();
                    let gw = accum(&mut adj, *w, wt.len());
                    for (r, gr) in g.iter().enumerate() {
                        if *gr != 0.0 {
                            for (dst, xv) in gw[r * cols..(r + 1) * cols].iter_mut().zip(xt.data()) {
                                *dst += gr * xv;
                            }
                        }
                    }
                    let gx = accum(&mut adj, *x, cols);
                    for (r, gr) in g.iter().enumerate() {
                        for (dst, wv) in gx.iter_mut().zip(wt.row(r)) {
                            *dst += gr * wv;
                        }
                    }
                }
                Op::Add(a, b) => {
                    add_into(accum(&mut adj, *a, g.len()), &g);
                    add_into(accum(&mut adj, *b, g.len()), &g);
                }
                Op::Hadamard(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    for ((dst, gv), bv) in accum(&mut adj, *a, g.len()).iter_mut().zip(&g).zip(tb.data()) {
                        *dst += gv * bv;
                    }
                    for ((dst, gv), av) in accum(&mut adj, *b, g.len()).iter_mut().zip(&g).zip(ta.data()) {
                        *dst += gv * av;
                    }
                }
                Op::Sigmoid(a) => {
                    let y = self.entry_value(i);
                    for ((dst, gv), yv) in accum(&mut adj, *a, g.len()).iter_mut().zip(&g).zip(y.data()) {
                        *dst += gv * yv * (1.0 - yv);
                    }
                }
                Op::Tanh(a) => {
                    let y = self.entry_value(i);
                    for ((dst, gv), yv) in accum(&mut adj, *a, g.len()).iter_mut().zip(&g).zip(y.data()) {
                        *dst += gv * (1.0 - yv * yv);
                    }
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    for ((dst, gv), xv) in accum(&mut adj, *a, g.len()).iter_mut().zip(&g).zip(x.data()) {
                        if *xv >= 0.0 {
                            *dst += gv;
                        }
                    }
                }
                Op::SumList(items) => {
                    for v in items {
                        add_into(accum(&mut adj, *v, g.len()), &g);
                    }
                }
                Op::Sum(a) => {
                    let n = self.value(*a).len();
                    for dst in accum(&mut adj, *a, n) {
                        *dst += g[0];
                    }
                }
                Op::Scale(a, f) => {
                    for (dst, gv) in accum(&mut adj, *a, g.len()).iter_mut().zip(&g) {
                        *dst += f * gv;
                    }
                }
                Op::Embed { table, index } => {
                    let t = self.value(*table);
                    let cols = t.cols();
                    let gt = accum(&mut adj, *table, t.len());
                    add_into(&mut gt[index * cols..(index + 1) * cols], &g);
                }
                Op::SoftmaxXent { logits, class, probs } => {
                    let gz = accum(&mut adj, *logits, probs.len());
                    for (k, (dst, p)) in gz.iter_mut().zip(probs).enumerate() {
                        let target = if k == *class { 1.0 } else { 0.0 };
                        *dst += g[0] * (p - target);
                    }
                }
            }
        }
        Ok(grads)
    }

    fn entry_value(&self, i: usize) -> &Tensor {
        self.value(Var(i))
    }
}

fn accum(adj: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    adj[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}
