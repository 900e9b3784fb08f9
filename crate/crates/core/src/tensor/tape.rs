//! Tensor-level Wengert tape.
//!
//! Every operation appends one node holding its forward value. Nodes only
//! reference earlier nodes, so the node order is already topological and
//! `backward` is a single reverse sweep.

use std::collections::BTreeMap;

use super::{numel, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// Identity of a trainable parameter bound onto a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryKind {
    Sigmoid,
    Tanh,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Affine {
        x: usize,
        w: usize,
        b: Option<usize>,
        rows: usize,
        din: usize,
        dout: usize,
    },
    Transpose {
        x: usize,
        rows: usize,
        cols: usize,
    },
    Unary {
        x: usize,
        kind: UnaryKind,
    },
    Binary {
        a: usize,
        b: usize,
        kind: BinaryKind,
    },
    AddScalar {
        x: usize,
    },
    Scale {
        x: usize,
        c: T,
    },
    L2Normalize {
        x: usize,
        width: usize,
        // max(norm, eps) per row, and whether the norm was above eps
        denoms: Vec<(T, bool)>,
    },
    Softmax {
        x: usize,
        beta: T,
    },
    Reduce {
        x: usize,
        map: Vec<usize>,
        scale: T,
    },
    Concat {
        parts: Vec<(usize, usize)>,
        outer: usize,
    },
    SelectRows {
        x: usize,
        idx: Vec<usize>,
        width: usize,
    },
    Reshape {
        x: usize,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Records a forward computation for reverse-mode differentiation.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    // activity pattern of every relu and norm guard, used to detect kinks
    branches: Vec<bool>,
}

/// Gradients from one backward sweep.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
    params: BTreeMap<ParamId, Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to a node; zeros if the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor<T> {
        match &self.grads[v.0] {
            Some(g) => Tensor::new(self.shapes[v.0].clone(), g.clone()).expect("shape"),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    /// Accumulated gradient of a parameter over every leaf bound to it.
    pub fn param(&self, id: ParamId) -> Option<Tensor<T>> {
        let nodes = self.params.get(&id)?;
        let mut out = Tensor::zeros(&self.shapes[nodes[0]]);
        for &n in nodes {
            if let Some(g) = &self.grads[n] {
                for (o, &x) in out.data_mut().iter_mut().zip(g) {
                    *o += x;
                }
            }
        }
        Some(out)
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.params.keys().copied()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            branches: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Branch pattern (relu on/off, norm guard on/off) of the recorded pass.
    pub fn branch_signature(&self) -> &[bool] {
        &self.branches
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Input that receives a gradient but is not a named parameter.
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Trainable parameter leaf.
    pub fn param(&mut self, id: ParamId, value: Tensor<T>) -> Var {
        let v = self.push(value, Op::Leaf, true);
        self.nodes[v.0].param = Some(id);
        v
    }

    /// `x · w + b` over the trailing axis of `x`; leading axes are batch positions.
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let din = *xs
            .last()
            .ok_or_else(|| Error::input("affine input must have at least one axis"))?;
        if ws.len() != 2 || ws[0] != din {
            return Err(Error::input(format!(
                "affine weight {ws:?} incompatible with input {xs:?}"
            )));
        }
        let dout = ws[1];
        if let Some(b) = b {
            if self.shape(b) != [dout] {
                return Err(Error::input(format!(
                    "affine bias {:?} does not match output width {dout}",
                    self.shape(b)
                )));
            }
        }
        let rows = numel(&xs) / din;
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let mut out = vec![T::zero(); rows * dout];
        for r in 0..rows {
            let orow = &mut out[r * dout..(r + 1) * dout];
            if let Some(b) = b {
                orow.copy_from_slice(self.nodes[b.0].value.data());
            }
            for i in 0..din {
                let xi = xd[r * din + i];
                if xi == T::zero() {
                    continue;
                }
                let wrow = &wd[i * dout..(i + 1) * dout];
                for (o, &wv) in orow.iter_mut().zip(wrow) {
                    *o += xi * wv;
                }
            }
        }
        let mut shape = xs;
        *shape.last_mut().unwrap() = dout;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Affine {
                x: x.0,
                w: w.0,
                b: b.map(|b| b.0),
                rows,
                din,
                dout,
            },
            rg,
        ))
    }

    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        self.affine(x, w, None)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(Error::input(format!("transpose needs a matrix, got {s:?}")));
        }
        let (rows, cols) = (s[0], s[1]);
        let xd = self.value(x).data();
        let mut out = vec![T::zero(); rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                out[c * rows + r] = xd[r * cols + c];
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(vec![cols, rows], out)?,
            Op::Transpose { x: x.0, rows, cols },
            rg,
        ))
    }

    pub fn unary(&mut self, x: Var, kind: UnaryKind) -> Var {
        let xv = self.value(x);
        let out = match kind {
            UnaryKind::Sigmoid => xv.map(sigmoid),
            UnaryKind::Tanh => xv.map(|v| v.tanh()),
            UnaryKind::Relu => xv.map(|v| if v > T::zero() { v } else { T::zero() }),
        };
        if kind == UnaryKind::Relu {
            let flags: Vec<bool> = xv.data().iter().map(|&v| v > T::zero()).collect();
            self.branches.extend(flags);
        }
        let rg = self.rg(x);
        self.push(out, Op::Unary { x: x.0, kind }, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, UnaryKind::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, UnaryKind::Tanh)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, UnaryKind::Relu)
    }

    fn binary(&mut self, a: Var, b: Var, kind: BinaryKind) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::input(format!(
                "elementwise shapes differ: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let ad = self.value(a).data();
        let bd = self.value(b).data();
        let data: Vec<T> = match kind {
            BinaryKind::Add => ad.iter().zip(bd).map(|(&x, &y)| x + y).collect(),
            BinaryKind::Sub => ad.iter().zip(bd).map(|(&x, &y)| x - y).collect(),
            BinaryKind::Mul => ad.iter().zip(bd).map(|(&x, &y)| x * y).collect(),
        };
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, data)?, Op::Binary { a: a.0, b: b.0, kind }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Mul)
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v + c);
        let rg = self.rg(x);
        self.push(out, Op::AddScalar { x: x.0 }, rg)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v * c);
        let rg = self.rg(x);
        self.push(out, Op::Scale { x: x.0, c }, rg)
    }

    /// Divides each slice along the trailing axis by `max(‖slice‖₂, eps)`.
    pub fn l2_normalize(&mut self, x: Var, eps: T) -> Result<Var> {
        if !(eps > T::zero()) {
            return Err(Error::InvalidConfig(format!("eps must be > 0, got {eps}")));
        }
        let xv = self.value(x);
        let width = *xv.shape().last().unwrap_or(&1);
        let mut denoms = Vec::with_capacity(xv.len() / width);
        let mut out = Vec::with_capacity(xv.len());
        for row in xv.data().chunks(width) {
            let n = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            let above = n > eps;
            let d = if above { n } else { eps };
            denoms.push((d, above));
            out.extend(row.iter().map(|&v| v / d));
        }
        let out = Tensor::new(xv.shape().to_vec(), out)?;
        self.branches.extend(denoms.iter().map(|&(_, a)| a));
        let rg = self.rg(x);
        Ok(self.push(out, Op::L2Normalize { x: x.0, width, denoms }, rg))
    }

    /// `a·b / (max(‖a‖,eps)·max(‖b‖,eps))` for two vectors; returns a scalar.
    pub fn cosine_similarity(&mut self, a: Var, b: Var, eps: T) -> Result<Var> {
        if self.shape(a).len() != 1 || self.shape(a) != self.shape(b) {
            return Err(Error::input(format!(
                "cosine similarity needs equal-length vectors, got {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let an = self.l2_normalize(a, eps)?;
        let bn = self.l2_normalize(b, eps)?;
        let p = self.mul(an, bn)?;
        self.sum_all(p)
    }

    /// Cosine similarity of every row of `x: [..., C]` with `c: [C]`.
    pub fn cosine_rows(&mut self, x: Var, c: Var, eps: T) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let width = *xs.last().unwrap_or(&0);
        if self.shape(c) != [width] {
            return Err(Error::input(format!(
                "cannot compare rows of {xs:?} with vector {:?}",
                self.shape(c)
            )));
        }
        let xn = self.l2_normalize(x, eps)?;
        let cn = self.l2_normalize(c, eps)?;
        let col = self.reshape(cn, &[width, 1])?;
        let s = self.matmul(xn, col)?;
        let lead = if xs.len() > 1 {
            xs[..xs.len() - 1].to_vec()
        } else {
            Vec::new()
        };
        self.reshape(s, &lead)
    }

    /// Softmax of `x / beta` over every element of `x`.
    ///
    /// The normalizer sums the exponentials in ascending order, so permuting
    /// `x` permutes the output exactly.
    pub fn softmax_positions(&mut self, x: Var, beta: T) -> Result<Var> {
        if !(beta > T::zero()) || !beta.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "softmax temperature must be > 0, got {beta}"
            )));
        }
        let xv = self.value(x);
        let max = xv
            .data()
            .iter()
            .fold(T::neg_infinity(), |m, &v| if v > m { v } else { m });
        let exps: Vec<T> = xv.data().iter().map(|&v| ((v - max) / beta).exp()).collect();
        let mut sorted = exps.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        let z: T = sorted.into_iter().sum();
        let out = Tensor::new(xv.shape().to_vec(), exps.into_iter().map(|e| e / z).collect())?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Softmax { x: x.0, beta }, rg))
    }

    /// Sum or mean over the listed axes; reduced axes are removed.
    pub fn reduce(&mut self, x: Var, kind: ReduceKind, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut reduced = vec![false; shape.len()];
        for &a in axes {
            if a >= shape.len() || reduced[a] {
                return Err(Error::input(format!("invalid reduction axis {a} for shape {shape:?}")));
            }
            reduced[a] = true;
        }
        let out_shape: Vec<usize> = shape
            .iter()
            .zip(&reduced)
            .filter(|(_, &r)| !r)
            .map(|(&n, _)| n)
            .collect();
        let total = numel(&shape);
        let mut map = Vec::with_capacity(total);
        let mut index = vec![0usize; shape.len()];
        for _ in 0..total {
            let mut o = 0;
            for (d, &i) in index.iter().enumerate() {
                if !reduced[d] {
                    o = o * shape[d] + i;
                }
            }
            map.push(o);
            for d in (0..shape.len()).rev() {
                index[d] += 1;
                if index[d] < shape[d] {
                    break;
                }
                index[d] = 0;
            }
        }
        let count: usize = axes.iter().map(|&a| shape[a]).product();
        let scale = match kind {
            ReduceKind::Sum => T::one(),
            ReduceKind::Mean => T::one() / T::from_usize(count).unwrap(),
        };
        let mut out = vec![T::zero(); numel(&out_shape)];
        for (&v, &o) in self.value(x).data().iter().zip(&map) {
            out[o] += v;
        }
        if kind == ReduceKind::Mean {
            for v in &mut out {
                *v *= scale;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(out_shape, out)?, Op::Reduce { x: x.0, map, scale }, rg))
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.shape(x).len()).collect();
        self.reduce(x, ReduceKind::Sum, &axes)
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.shape(x).len()).collect();
        self.reduce(x, ReduceKind::Mean, &axes)
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs.first().ok_or_else(|| Error::input("concat of zero tensors"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::input(format!("concat axis {axis} out of range for {base:?}")));
        }
        let mut out_shape = base.clone();
        out_shape[axis] = 0;
        for &x in xs {
            let s = self.shape(x);
            let compatible =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::input(format!(
                    "cannot concatenate {s:?} with {base:?} along axis {axis}"
                )));
            }
            out_shape[axis] += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let parts: Vec<(usize, usize)> = xs.iter().map(|&x| (x.0, self.shape(x)[axis] * inner)).collect();
        let mut out = Vec::with_capacity(numel(&out_shape));
        for o in 0..outer {
            for &(id, w) in &parts {
                out.extend_from_slice(&self.nodes[id].value.data()[o * w..(o + 1) * w]);
            }
        }
        let rg = xs.iter().any(|&x| self.rg(x));
        Ok(self.push(Tensor::new(out_shape, out)?, Op::Concat { parts, outer }, rg))
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(&mut self, xs: &[Var]) -> Result<Var> {
        let mut rows = Vec::with_capacity(xs.len());
        for &x in xs {
            let mut s = vec![1];
            s.extend_from_slice(self.shape(x));
            rows.push(self.reshape(x, &s)?);
        }
        self.concat(&rows, 0)
    }

    /// Gathers slices along the leading axis (elements, for vectors).
    pub fn select_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (rows, rest) = match shape.split_first() {
            Some((&r, rest)) => (r, rest.to_vec()),
            None => return Err(Error::input("cannot select rows of a scalar")),
        };
        if idx.is_empty() {
            return Err(Error::input("row selection is empty"));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::input(format!("row {bad} out of range for {rows} rows")));
        }
        let width = numel(&rest);
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(idx.len() * width);
        for &i in idx {
            out.extend_from_slice(&xd[i * width..(i + 1) * width]);
        }
        let mut out_shape = vec![idx.len()];
        out_shape.extend(rest);
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(out_shape, out)?,
            Op::SelectRows {
                x: x.0,
                idx: idx.to_vec(),
                width,
            },
            rg,
        ))
    }

    /// Row `id` of an embedding table `[V, E]`.
    pub fn embed_lookup(&mut self, table: Var, id: usize) -> Result<Var> {
        let s = self.shape(table).to_vec();
        if s.len() != 2 {
            return Err(Error::input(format!("embedding table must be 2-D, got {s:?}")));
        }
        if id >= s[0] {
            return Err(Error::input(format!(
                "token id {id} out of range for vocabulary of {}",
                s[0]
            )));
        }
        let row = self.select_rows(table, &[id])?;
        self.reshape(row, &[s[1]])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Reshape { x: x.0 }, rg))
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::input(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = vec![None; n];
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        let mut params: BTreeMap<ParamId, Vec<usize>> = BTreeMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Some(p) = node.param {
                params.entry(p).or_default().push(i);
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            params,
        })
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Affine {
                x,
                w,
                b,
                rows,
                din,
                dout,
            } => {
                let (rows, din, dout) = (*rows, *din, *dout);
                let xd = self.nodes[*x].value.data();
                let wd = self.nodes[*w].value.data();
                if self.nodes[*x].requires_grad {
                    let gx = slot(grads, *x, rows * din);
                    for r in 0..rows {
                        let grow = &g[r * dout..(r + 1) * dout];
                        for k in 0..din {
                            let wrow = &wd[k * dout..(k + 1) * dout];
                            let mut acc = T::zero();
                            for (&gv, &wv) in grow.iter().zip(wrow) {
                                acc += gv * wv;
                            }
                            gx[r * din + k] += acc;
                        }
                    }
                }
                if self.nodes[*w].requires_grad {
                    let gw = slot(grads, *w, din * dout);
                    for r in 0..rows {
                        let grow = &g[r * dout..(r + 1) * dout];
                        for k in 0..din {
                            let xv = xd[r * din + k];
                            if xv == T::zero() {
                                continue;
                            }
                            for (o, &gv) in gw[k * dout..(k + 1) * dout].iter_mut().zip(grow) {
                                *o += xv * gv;
                            }
                        }
                    }
                }
                if let Some(b) = b {
                    if self.nodes[*b].requires_grad {
                        let gb = slot(grads, *b, dout);
                        for grow in g.chunks(dout) {
                            for (o, &gv) in gb.iter_mut().zip(grow) {
                                *o += gv;
                            }
                        }
                    }
                }
            }
            Op::Transpose { x, rows, cols } => {
                if self.nodes[*x].requires_grad {
                    let gx = slot(grads, *x, rows * cols);
                    for r in 0..*rows {
                        for c in 0..*cols {
                            gx[r * cols + c] += g[c * rows + r];
                        }
                    }
                }
            }
            Op::Unary { x, kind } => {
                let xd = self.nodes[*x].value.data();
                let gx = slot(grads, *x, g.len());
                for k in 0..g.len() {
                    let d = match kind {
                        UnaryKind::Sigmoid => y[k] * (T::one() - y[k]),
                        UnaryKind::Tanh => T::one() - y[k] * y[k],
                        UnaryKind::Relu => {
                            if xd[k] > T::zero() {
                                T::one()
                            } else {
                                T::zero()
                            }
                        }
                    };
                    gx[k] += g[k] * d;
                }
            }
            Op::Binary { a, b, kind } => {
                let (a, b) = (*a, *b);
                let ad = self.nodes[a].value.data();
                let bd = self.nodes[b].value.data();
                if self.nodes[a].requires_grad {
                    let ga = slot(grads, a, g.len());
                    for k in 0..g.len() {
                        ga[k] += match kind {
                            BinaryKind::Add | BinaryKind::Sub => g[k],
                            BinaryKind::Mul => g[k] * bd[k],
                        };
                    }
                }
                if self.nodes[b].requires_grad {
                    let gb = slot(grads, b, g.len());
                    for k in 0..g.len() {
                        gb[k] += match kind {
                            BinaryKind::Add => g[k],
                            BinaryKind::Sub => -g[k],
                            BinaryKind::Mul => g[k] * ad[k],
                        };
                    }
                }
            }
            Op::AddScalar { x } | Op::Reshape { x } => {
                let gx = slot(grads, *x, g.len());
                for (o, &gv) in gx.iter_mut().zip(g) {
                    *o += gv;
                }
            }
            Op::Scale { x, c } => {
                let gx = slot(grads, *x, g.len());
                for (o, &gv) in gx.iter_mut().zip(g) {
                    *o += gv * *c;
                }
            }
            Op::L2Normalize { x, width, denoms } => {
                let gx = slot(grads, *x, g.len());
                for (r, &(d, above)) in denoms.iter().enumerate() {
                    let span = r * width..(r + 1) * width;
                    let (yr, gr) = (&y[span.clone()], &g[span.clone()]);
                    let gxr = &mut gx[span];
                    if above {
                        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for k in 0..*width {
                            gxr[k] += (gr[k] - yr[k] * dot) / d;
                        }
                    } else {
                        for k in 0..*width {
                            gxr[k] += gr[k] / d;
                        }
                    }
                }
            }
            Op::Softmax { x, beta } => {
                let dot: T = y.iter().zip(g).map(|(&a, &b)| a * b).sum();
                let gx = slot(grads, *x, g.len());
                for k in 0..g.len() {
                    gx[k] += y[k] * (g[k] - dot) / *beta;
                }
            }
            Op::Reduce { x, map, scale } => {
                let gx = slot(grads, *x, map.len());
                for (o, &m) in gx.iter_mut().zip(map) {
                    *o += g[m] * *scale;
                }
            }
            Op::Concat { parts, outer } => {
                let stride: usize = parts.iter().map(|p| p.1).sum();
                let mut start = 0;
                for &(id, w) in parts {
                    if self.nodes[id].requires_grad {
                        let gx = slot(grads, id, outer * w);
                        for o in 0..*outer {
                            let src = &g[o * stride + start..o * stride + start + w];
                            for (d, &s) in gx[o * w..(o + 1) * w].iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    }
                    start += w;
                }
            }
            Op::SelectRows { x, idx, width } => {
                let len = self.nodes[*x].value.len();
                let gx = slot(grads, *x, len);
                for (k, &row) in idx.iter().enumerate() {
                    let src = &g[k * width..(k + 1) * width];
                    for (d, &s) in gx[row * width..(row + 1) * width].iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
    }
}

fn slot<T: Scalar>(grads: &mut [Option<Vec<T>>], id: usize, len: usize) -> &mut Vec<T> {
    grads[id].get_or_insert_with(|| vec![T::zero(); len])
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Smallest denominator of the relative error. Central differences with
/// `h = 1e-5` carry roughly `1e-11` of roundoff, so derivatives below this
/// floor are in effect compared to an absolute tolerance of `floor · tol`.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Outcome of a finite-difference gradient comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (parameter index, element index) of the worst element.
    pub worst: Option<(usize, usize)>,
    /// (analytic, numeric) derivative at the worst element.
    pub worst_values: Option<(f64, f64)>,
    pub checked: usize,
    /// Elements whose ±h perturbation crossed a relu kink or norm guard.
    pub skipped: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }

    pub fn merge(&mut self, other: &GradCheckReport, offset: usize) {
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst.map(|(p, e)| (p + offset, e));
            self.worst_values = other.worst_values;
        }
        self.checked += other.checked;
        self.skipped += other.skipped;
    }
}

/// Compares tape gradients with central differences of step `h`.
///
/// `f` rebuilds the loss on a fresh tape from parameter leaves. Relative
/// error uses the denominator `max(|analytic|, |numeric|, GRAD_CHECK_FLOOR)`.
pub fn grad_check<T, F>(params: &mut [Tensor<T>], h: T, mut f: F) -> Result<GradCheckReport>
where
    T: Scalar,
    F: FnMut(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let mut eval = |params: &[Tensor<T>]| -> Result<(Tape<T>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params
            .iter()
            .enumerate()
            .map(|(i, p)| tape.param(ParamId(i), p.clone()))
            .collect();
        let loss = f(&mut tape, &vars)?;
        Ok((tape, loss))
    };

    let (tape, loss) = eval(params)?;
    let grads = tape.backward(loss)?;
    let base_branches = tape.branch_signature().to_vec();
    let analytic: Vec<Tensor<T>> = (0..params.len())
        .map(|i| grads.param(ParamId(i)).expect("bound parameter"))
        .collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        worst_values: None,
        checked: 0,
        skipped: 0,
    };
    for p in 0..params.len() {
        for e in 0..params[p].len() {
            let orig = params[p].data()[e];
            params[p].data_mut()[e] = orig + h;
            let (tp, lp) = eval(params)?;
            params[p].data_mut()[e] = orig - h;
            let (tm, lm) = eval(params)?;
            params[p].data_mut()[e] = orig;

            if tp.branch_signature() != base_branches || tm.branch_signature() != base_branches {
                report.skipped += 1;
                continue;
            }
            let fp = tp.value(lp).data()[0].as_f64();
            let fm = tm.value(lm).data()[0].as_f64();
            let numeric = (fp - fm) / (2.0 * h.as_f64());
            let a = analytic[p].data()[e].as_f64();
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst = Some((p, e));
                report.worst_values = Some((a, numeric));
            }
        }
    }
    Ok(report)
}
