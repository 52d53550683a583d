//! Reverse-mode differentiation over a fixed operation set.
//!
//! A [`Tape`] records every op as it executes. Parameter values are borrowed
//! from a [`ParamStore`] rather than copied, so building a tape for a single
//! example costs only the intermediate activations.

use std::collections::{BTreeMap, HashMap};

use super::params::{ParamId, ParamStore};
use super::tensor::{self, Activation, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    Gather {
        table: Var,
        tokens: Vec<usize>,
        window: usize,
        frozen_row: Option<usize>,
    },
    MatMul(Var, Var),
    Add(Var, Var),
    AddColBias(Var, Var),
    Concat(Vec<Var>),
    Reshape(Var),
    Act(Var, Activation),
    Softmax(Var),
    Hadamard(Var, Var),
    Scale(Var, Var),
    ScaleConst(Var, f64),
    MaxOverTime(Var, Vec<usize>),
    Dropout(Var, Tensor),
    CrossEntropy(Var, usize),
    Sum(Var),
    SquaredNorm(Var),
}

#[derive(Debug)]
struct Node {
    op: Op,
    // `None` for parameters, whose value lives in the store.
    value: Option<Tensor>,
}

pub struct Tape<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, Var>,
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
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
        match (&node.op, &node.value) {
            (_, Some(t)) => t,
            (Op::Param(id), None) => self.store.get(*id),
            _ => unreachable!("node without value"),
        }
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node {
            op,
            value: Some(value),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Constant, t)
    }

    /// Leaf for a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes.insert(id, v);
        v
    }

    /// Unfolds token windows of an embedding table into columns.
    ///
    /// Output is `[window * d_word, L - window + 1]`; column `t` stacks the
    /// embeddings of `tokens[t..t + window]`. `frozen_row` receives no gradient.
    pub fn gather_windows(
        &mut self,
        table: Var,
        tokens: &[usize],
        window: usize,
        frozen_row: Option<usize>,
    ) -> Result<Var> {
        let emb = self.value(table);
        let (vocab, dw) = emb.dims2();
        if window == 0 || tokens.len() < window {
            return Err(Error::Invalid(format!(
                "sentence length {} shorter than window {}",
                tokens.len(),
                window
            )));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= vocab) {
            return Err(Error::Invalid(format!(
                "token id {bad} outside vocabulary of {vocab}"
            )));
        }
        let cols = tokens.len() - window + 1;
        let rows = window * dw;
        let mut out = vec![0.0; rows * cols];
        for t in 0..cols {
            for o in 0..window {
                let e = emb.row(tokens[t + o]);
                for (j, &x) in e.iter().enumerate() {
                    out[(o * dw + j) * cols + t] = x;
                }
            }
        }
        let value = Tensor::matrix(rows, cols, out)?;
        Ok(self.push(
            Op::Gather {
                table,
                tokens: tokens.to_vec(),
                window,
                frozen_row,
            },
            value,
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::add(self.value(a), self.value(b))?;
        Ok(self.push(Op::Add(a, b), out))
    }

    /// `[m x T] + b[m]`, broadcasting the bias over columns.
    pub fn add_col_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let bv = self.value(bias);
        let (m, t) = xv.dims2();
        if xv.rank() != 2 || bv.len() != m {
            return Err(Error::shape("add_col_bias", xv.shape(), bv.shape()));
        }
        let mut out = xv.clone();
        for i in 0..m {
            let b = bv.data()[i];
            for v in &mut out.data_mut()[i * t..(i + 1) * t] {
                *v += b;
            }
        }
        Ok(self.push(Op::AddColBias(x, bias), out))
    }

    /// Flattens and concatenates the inputs into one rank-1 tensor.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Invalid("concat of nothing".into()));
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        Ok(self.push(Op::Concat(parts.to_vec()), Tensor::vector(data)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(Op::Reshape(x), out))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        let out = tensor::activation(self.value(x), kind)?;
        Ok(self.push(Op::Act(x, kind), out))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Tanh)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Relu)
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let out = tensor::softmax(self.value(x))?;
        Ok(self.push(Op::Softmax(x), out))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::hadamard(self.value(a), self.value(b))?;
        Ok(self.push(Op::Hadamard(a, b), out))
    }

    /// Multiplies every element of `v` by the single-element tensor `s`.
    pub fn broadcast_scale(&mut self, v: Var, s: Var) -> Result<Var> {
        let sv = self.value(s);
        if sv.len() != 1 {
            return Err(Error::shape("broadcast_scale", self.value(v).shape(), sv.shape()));
        }
        let out = tensor::broadcast_scale(self.value(v), sv.item())?;
        Ok(self.push(Op::Scale(v, s), out))
    }

    pub fn scale_const(&mut self, v: Var, s: f64) -> Result<Var> {
        let out = tensor::broadcast_scale(self.value(v), s)?;
        Ok(self.push(Op::ScaleConst(v, s), out))
    }

    /// Row-wise maximum of `[m x T]`; the first maximal column wins ties.
    pub fn max_over_time(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (m, t) = xv.dims2();
        if t == 0 {
            return Err(Error::Invalid("max over an empty time axis".into()));
        }
        let mut idx = Vec::with_capacity(m);
        let mut out = Vec::with_capacity(m);
        for i in 0..m {
            let row = xv.row(i);
            let j = tensor::argmax(row);
            idx.push(j);
            out.push(row[j]);
        }
        Ok(self.push(Op::MaxOverTime(x, idx), Tensor::vector(out)))
    }

    /// Elementwise multiplication by a fixed mask (already scaled by 1/keep).
    pub fn dropout(&mut self, x: Var, mask: Tensor) -> Result<Var> {
        let out = tensor::hadamard(self.value(x), &mask)?;
        Ok(self.push(Op::Dropout(x, mask), out))
    }

    /// `-ln p[label]` for a probability vector.
    pub fn cross_entropy(&mut self, probs: Var, label: usize) -> Result<Var> {
        let p = self.value(probs);
        if label >= p.len() {
            return Err(Error::Invalid(format!(
                "label {label} out of range for {} classes",
                p.len()
            )));
        }
        let loss = -p.data()[label].ln();
        if !loss.is_finite() {
            return Err(Error::NonFinite("cross_entropy"));
        }
        Ok(self.push(Op::CrossEntropy(probs, label), Tensor::scalar(loss)))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        Ok(self.push(Op::Sum(x), Tensor::scalar(s)))
    }

    pub fn squared_norm(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).squared_norm();
        Ok(self.push(Op::SquaredNorm(x), Tensor::scalar(s)))
    }

    /// Reverse sweep from a scalar `loss`; returns gradients for every
    /// parameter touched by the tape.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(self.value(loss).shape()));
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Constant => {}
                Op::Param(id) => out.add_dense(*id, g),
                Op::Gather {
                    table,
                    tokens,
                    window,
                    frozen_row,
                } => {
                    let Op::Param(id) = self.nodes[table.0].op else {
                        continue;
                    };
                    let (vocab, dw) = self.value(*table).dims2();
                    let cols = tokens.len() - window + 1;
                    let gd = g.data();
                    let rows = out.rows_entry(id, vocab, dw);
                    for t in 0..cols {
                        for o in 0..*window {
                            let tok = tokens[t + o];
                            if Some(tok) == *frozen_row {
                                continue;
                            }
                            let r = rows.entry(tok).or_insert_with(|| vec![0.0; dw]);
                            for (j, rv) in r.iter_mut().enumerate() {
                                *rv += gd[(o * dw + j) * cols + t];
                            }
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let (m, k) = av.dims2();
                    let n = if bv.rank() == 1 { 1 } else { bv.cols() };
                    let gd = g.data();
                    if self.needs_grad(*a) {
                        let mut ga = vec![0.0; m * k];
                        for r in 0..m {
                            for p in 0..k {
                                let brow = &bv.data()[p * n..(p + 1) * n];
                                let grow = &gd[r * n..(r + 1) * n];
                                ga[r * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                            }
                        }
                        accumulate(&mut grads, *a, ga, av.shape());
                    }
                    if self.needs_grad(*b) {
                        let mut gb = vec![0.0; k * n];
                        for r in 0..m {
                            let grow = &gd[r * n..(r + 1) * n];
                            for p in 0..k {
                                let x = av.data()[r * k + p];
                                if x == 0.0 {
                                    continue;
                                }
                                for (o, &gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                    *o += x * gv;
                                }
                            }
                        }
                        accumulate(&mut grads, *b, gb, bv.shape());
                    }
                }
                Op::Add(a, b) => {
                    let shape = g.shape().to_vec();
                    accumulate(&mut grads, *a, g.data().to_vec(), &shape);
                    accumulate(&mut grads, *b, g.into_data(), &shape);
                }
                Op::AddColBias(x, bias) => {
                    let (m, t) = g.dims2();
                    let gb: Vec<f64> = (0..m).map(|r| g.data()[r * t..(r + 1) * t].iter().sum()).collect();
                    let bshape = self.value(*bias).shape().to_vec();
                    accumulate(&mut grads, *bias, gb, &bshape);
                    let shape = g.shape().to_vec();
                    accumulate(&mut grads, *x, g.into_data(), &shape);
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let pv = self.value(*p);
                        let n = pv.len();
                        let shape = pv.shape().to_vec();
                        accumulate(&mut grads, *p, g.data()[off..off + n].to_vec(), &shape);
                        off += n;
                    }
                }
                Op::Reshape(x) => {
                    let shape = self.value(*x).shape().to_vec();
                    accumulate(&mut grads, *x, g.into_data(), &shape);
                }
                Op::Act(x, kind) => {
                    let xv = self.value(*x);
                    let yv = self.nodes[i].value.as_ref().expect("activation output");
                    let gx: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(xv.data().iter().zip(yv.data()))
                        .map(|(gv, (&xi, &yi))| gv * kind.derivative(xi, yi))
                        .collect();
                    accumulate(&mut grads, *x, gx, xv.shape());
                }
                Op::Softmax(x) => {
                    let y = self.nodes[i].value.as_ref().expect("softmax output");
                    let dot: f64 = g.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
                    let gx: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(gv, yv)| yv * (gv - dot))
                        .collect();
                    accumulate(&mut grads, *x, gx, y.shape());
                }
                Op::Hadamard(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let ga: Vec<f64> = g.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
                    let gb: Vec<f64> = g.data().iter().zip(av.data()).map(|(x, y)| x * y).collect();
                    accumulate(&mut grads, *a, ga, av.shape());
                    accumulate(&mut grads, *b, gb, bv.shape());
                }
                Op::Scale(v, s) => {
                    let vv = self.value(*v);
                    let sv = self.value(*s).item();
                    let gs: f64 = g.data().iter().zip(vv.data()).map(|(x, y)| x * y).sum();
                    let gv: Vec<f64> = g.data().iter().map(|x| x * sv).collect();
                    accumulate(&mut grads, *v, gv, vv.shape());
                    let sshape = self.value(*s).shape().to_vec();
                    accumulate(&mut grads, *s, vec![gs], &sshape);
                }
                Op::ScaleConst(v, s) => {
                    let shape = g.shape().to_vec();
                    let gv: Vec<f64> = g.data().iter().map(|x| x * s).collect();
                    accumulate(&mut grads, *v, gv, &shape);
                }
                Op::MaxOverTime(x, idx) => {
                    let xv = self.value(*x);
                    let (m, t) = xv.dims2();
                    let mut gx = vec![0.0; m * t];
                    for (r, &j) in idx.iter().enumerate() {
                        gx[r * t + j] = g.data()[r];
                    }
                    accumulate(&mut grads, *x, gx, xv.shape());
                }
                Op::Dropout(x, mask) => {
                    let gx: Vec<f64> = g.data().iter().zip(mask.data()).map(|(a, b)| a * b).collect();
                    accumulate(&mut grads, *x, gx, mask.shape());
                }
                Op::CrossEntropy(p, label) => {
                    let pv = self.value(*p);
                    let mut gp = vec![0.0; pv.len()];
                    gp[*label] = -g.item() / pv.data()[*label];
                    accumulate(&mut grads, *p, gp, pv.shape());
                }
                Op::Sum(x) => {
                    let xv = self.value(*x);
                    accumulate(&mut grads, *x, vec![g.item(); xv.len()], xv.shape());
                }
                Op::SquaredNorm(x) => {
                    let xv = self.value(*x);
                    let s = 2.0 * g.item();
                    let gx: Vec<f64> = xv.data().iter().map(|v| v * s).collect();
                    accumulate(&mut grads, *x, gx, xv.shape());
                }
            }
        }
        Ok(out)
    }

    fn needs_grad(&self, v: Var) -> bool {
        !matches!(self.nodes[v.0].op, Op::Constant)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Vec<f64>, shape: &[usize]) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.data_mut().iter_mut().zip(&g) {
                *e += x;
            }
        }
        slot @ None => {
            *slot = Some(Tensor::new(shape.to_vec(), g).expect("gradient shape"));
        }
    }
}

/// Gradient for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub enum Grad {
    Dense(Tensor),
    /// Row-sparse gradient for embedding lookups: only touched rows stored.
    Rows {
        n_rows: usize,
        n_cols: usize,
        rows: BTreeMap<usize, Vec<f64>>,
    },
}

impl Grad {
    pub fn to_dense(&self) -> Tensor {
        match self {
            Grad::Dense(t) => t.clone(),
            Grad::Rows { n_rows, n_cols, rows } => {
                let mut t = Tensor::zeros(&[*n_rows, *n_cols]);
                for (&r, v) in rows {
                    t.row_mut(r).copy_from_slice(v);
                }
                t
            }
        }
    }

    fn scale(&mut self, s: f64) {
        match self {
            Grad::Dense(t) => t.scale_in_place(s),
            Grad::Rows { rows, .. } => rows.values_mut().flatten().for_each(|x| *x *= s),
        }
    }

    fn add(&mut self, other: &Grad) {
        match (&mut *self, other) {
            (Grad::Dense(a), Grad::Dense(b)) => {
                for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                    *x += y;
                }
            }
            (Grad::Rows { rows: a, .. }, Grad::Rows { rows: b, .. }) => {
                for (r, v) in b {
                    match a.get_mut(r) {
                        Some(e) => e.iter_mut().zip(v).for_each(|(x, y)| *x += y),
                        None => {
                            a.insert(*r, v.clone());
                        }
                    }
                }
            }
            (a, b) => {
                let mut d = a.to_dense();
                d.add_assign(&b.to_dense()).expect("gradient shapes agree");
                *a = Grad::Dense(d);
            }
        }
    }

    fn is_finite(&self) -> bool {
        match self {
            Grad::Dense(t) => t.is_finite(),
            Grad::Rows { rows, .. } => rows.values().flatten().all(|x| x.is_finite()),
        }
    }
}

/// Gradients keyed by parameter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    map: BTreeMap<ParamId, Grad>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Grad> {
        self.map.get(&id)
    }

    /// Dense gradient, zeros when the parameter was not reached.
    pub fn dense(&self, id: ParamId, shape: &[usize]) -> Tensor {
        self.map.get(&id).map_or_else(|| Tensor::zeros(shape), Grad::to_dense)
    }

    pub fn add_dense(&mut self, id: ParamId, g: Tensor) {
        let g = Grad::Dense(g);
        match self.map.get_mut(&id) {
            Some(e) => e.add(&g),
            None => {
                self.map.insert(id, g);
            }
        }
    }

    fn rows_entry(&mut self, id: ParamId, n_rows: usize, n_cols: usize) -> &mut BTreeMap<usize, Vec<f64>> {
        let entry = self.map.entry(id).or_insert_with(|| Grad::Rows {
            n_rows,
            n_cols,
            rows: BTreeMap::new(),
        });
        match entry {
            Grad::Rows { rows, .. } => rows,
            Grad::Dense(_) => unreachable!("parameter used both densely and as a lookup table"),
        }
    }

    pub fn insert(&mut self, id: ParamId, grad: Grad) {
        self.map.insert(id, grad);
    }

    /// `self += other`
    pub fn accumulate(&mut self, other: &Gradients) {
        for (id, g) in &other.map {
            match self.map.get_mut(id) {
                Some(e) => e.add(g),
                None => {
                    self.map.insert(*id, g.clone());
                }
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.map.values_mut().for_each(|g| g.scale(s));
    }

    /// Parameters from `ids` that received no gradient.
    pub fn unreached(&self, ids: impl IntoIterator<Item = ParamId>) -> Vec<ParamId> {
        ids.into_iter().filter(|id| !self.map.contains_key(id)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.map.values().all(Grad::is_finite)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Grad)> {
        self.map.iter().map(|(k, v)| (*k, v))
    }
}
