//! Reverse-mode automatic differentiation on a flat tape.
//!
//! A [`Tape`] is an append-only arena of nodes. Each operation validates
//! shapes, computes its value eagerly, and records its inputs; ids are
//! therefore already in topological order and [`Tape::backward`] is a single
//! reverse sweep. Gradients accumulate additively into every node that
//! requires them, so calling `backward` twice doubles the stored gradients
//! and nodes unreachable from the root receive explicit zeros.
//!
//! Leaves created with [`Tape::leaf`] are differentiated; leaves created
//! with [`Tape::constant`] are not, and the sweep skips whole subgraphs
//! that only feed constants (this is what makes input-only gradients for
//! the SGLD sampler cheap: no weight-gradient matmuls are performed).

use crate::error::{Error, Result};
use crate::numeric;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// `[n, k] @ [k, m] -> [n, m]`
    Matmul(TensorId, TensorId),
    /// Adds a `[m]` bias to every row of `[n, m]`.
    AddRowBias(TensorId, TensorId),
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Scale(TensorId, f64),
    Relu(TensorId),
    Square(TensorId),
    /// Elementwise `max(x - threshold, 0)`; subgradient 0 at the kink.
    Hinge(TensorId, f64),
    /// Rowwise `log(sum(exp(.)))`: `[n, m] -> [n]`.
    LogsumexpLast(TensorId),
    /// `out[i] = x[i, idx[i]]`: `[n, m] -> [n]`.
    GatherLast(TensorId, Vec<usize>),
    /// `out[t] = x[idx[t]]` on a rank-1 input; backward scatter-adds.
    Take(TensorId, Vec<usize>),
    Sum(TensorId),
    Mean(TensorId),
    /// Rowwise sum: `[n, m] -> [n]`.
    SumLast(TensorId),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Append-only computation graph with eager forward evaluation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    /// Number of nodes recorded so far.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a differentiable leaf.
    pub fn leaf(&mut self, value: Tensor) -> TensorId {
        self.push(value, Op::Leaf, true)
    }

    /// Registers a non-differentiable leaf; backward never reaches it.
    pub fn constant(&mut self, value: Tensor) -> TensorId {
        self.push(value, Op::Leaf, false)
    }

    /// Value of a node.
    pub fn value(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Accumulated gradient of a node, if any backward pass reached it.
    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    /// Drops all stored gradients, keeping values and structure.
    pub fn clear_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    // ── Operations ──

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (va, vb) = (self.value(a), self.value(b));
        let ((n, k), (k2, m)) = (va.dims2()?, vb.dims2()?);
        if k != k2 {
            return Err(self.dim_err("matmul", a, b));
        }
        let mut out = vec![0.0; n * m];
        numeric::matmul(&mut out, va.data(), vb.data(), n, k, m);
        Ok(self.derive(Tensor::new(vec![n, m], out)?, Op::Matmul(a, b), &[a, b]))
    }

    pub fn add_row_bias(&mut self, x: TensorId, bias: TensorId) -> Result<TensorId> {
        let (vx, vb) = (self.value(x), self.value(bias));
        let (n, m) = vx.dims2()?;
        if vb.shape() != [m] {
            return Err(self.dim_err("add_row_bias", x, bias));
        }
        let mut out = vx.data().to_vec();
        for i in 0..n {
            for j in 0..m {
                out[i * m + j] += vb.data()[j];
            }
        }
        Ok(self.derive(
            Tensor::new(vec![n, m], out)?,
            Op::AddRowBias(x, bias),
            &[x, bias],
        ))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let out = self.elementwise_pair("add", a, b, |x, y| x + y)?;
        Ok(self.derive(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let out = self.elementwise_pair("sub", a, b, |x, y| x - y)?;
        Ok(self.derive(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let out = self.elementwise_pair("mul", a, b, |x, y| x * y)?;
        Ok(self.derive(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: TensorId, factor: f64) -> TensorId {
        let out = self.map_value(x, |v| v * factor);
        self.derive(out, Op::Scale(x, factor), &[x])
    }

    pub fn relu(&mut self, x: TensorId) -> TensorId {
        let out = self.map_value(x, |v| v.max(0.0));
        self.derive(out, Op::Relu(x), &[x])
    }

    pub fn square(&mut self, x: TensorId) -> TensorId {
        let out = self.map_value(x, |v| v * v);
        self.derive(out, Op::Square(x), &[x])
    }

    /// Elementwise `max(x - threshold, 0)`.
    pub fn hinge(&mut self, x: TensorId, threshold: f64) -> TensorId {
        let out = self.map_value(x, |v| (v - threshold).max(0.0));
        self.derive(out, Op::Hinge(x, threshold), &[x])
    }

    pub fn logsumexp_last(&mut self, x: TensorId) -> Result<TensorId> {
        let vx = self.value(x);
        let (n, m) = vx.dims2()?;
        if m == 0 {
            return Err(Error::Contract(
                "logsumexp over an empty last axis is undefined".into(),
            ));
        }
        let out: Vec<f64> = (0..n).map(|i| numeric::logsumexp(vx.row(i))).collect();
        Ok(self.derive(Tensor::vector(out), Op::LogsumexpLast(x), &[x]))
    }

    /// Selects one column per row: `out[i] = x[i, idx[i]]`.
    pub fn gather_last(&mut self, x: TensorId, idx: Vec<usize>) -> Result<TensorId> {
        let vx = self.value(x);
        let (n, m) = vx.dims2()?;
        if idx.len() != n {
            return Err(Error::Contract(format!(
                "gather_last needs one index per row: {n} rows, {} indices",
                idx.len()
            )));
        }
        if let Some(bad) = idx.iter().position(|&j| j >= m) {
            return Err(Error::Contract(format!(
                "gather_last index {} out of range 0..{m} at row {bad}",
                idx[bad]
            )));
        }
        let out: Vec<f64> = idx.iter().enumerate().map(|(i, &j)| vx.row(i)[j]).collect();
        Ok(self.derive(Tensor::vector(out), Op::GatherLast(x, idx), &[x]))
    }

    /// Selects elements of a rank-1 tensor; an empty index list yields a
    /// zero-size tensor.
    pub fn take(&mut self, x: TensorId, idx: Vec<usize>) -> Result<TensorId> {
        let vx = self.value(x);
        let n = match vx.shape() {
            [n] => *n,
            other => {
                return Err(Error::Contract(format!(
                    "take expects a rank-1 tensor, got shape {other:?}"
                )))
            }
        };
        if let Some(bad) = idx.iter().position(|&j| j >= n) {
            return Err(Error::Contract(format!(
                "take index {} out of range 0..{n} at position {bad}",
                idx[bad]
            )));
        }
        let out: Vec<f64> = idx.iter().map(|&j| vx.data()[j]).collect();
        Ok(self.derive(Tensor::vector(out), Op::Take(x, idx), &[x]))
    }

    pub fn sum(&mut self, x: TensorId) -> TensorId {
        let total: f64 = self.value(x).data().iter().sum();
        self.derive(Tensor::scalar(total), Op::Sum(x), &[x])
    }

    /// Arithmetic mean over all elements; empty tensors are rejected.
    pub fn mean(&mut self, x: TensorId) -> Result<TensorId> {
        let vx = self.value(x);
        if vx.is_empty() {
            return Err(Error::Contract("mean of an empty tensor".into()));
        }
        let total: f64 = vx.data().iter().sum();
        let value = total / vx.len() as f64;
        Ok(self.derive(Tensor::scalar(value), Op::Mean(x), &[x]))
    }

    /// Rowwise sum: `[n, m] -> [n]`.
    pub fn sum_last(&mut self, x: TensorId) -> Result<TensorId> {
        let vx = self.value(x);
        let (n, _m) = vx.dims2()?;
        let out: Vec<f64> = (0..n).map(|i| vx.row(i).iter().sum()).collect();
        Ok(self.derive(Tensor::vector(out), Op::SumLast(x), &[x]))
    }

    // ── Backward ──

    /// Runs one reverse sweep from `root`, which must be a scalar.
    ///
    /// Gradients are added into every gradient-requiring node with id at or
    /// below the root, including zeros for nodes the root does not depend
    /// on. Nodes recorded after the root are untouched.
    pub fn backward(&mut self, root: TensorId) -> Result<()> {
        let r = root.0;
        if r >= self.nodes.len() {
            return Err(Error::Contract(format!(
                "backward root {r} is not on the tape"
            )));
        }
        if !self.nodes[r].value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward requires a scalar root, got shape {:?}",
                self.nodes[r].value.shape()
            )));
        }

        let mut ws: Vec<Option<Vec<f64>>> = vec![None; r + 1];
        ws[r] = Some(vec![1.0]);
        for i in (0..=r).rev() {
            // Inputs always precede outputs on the tape, so splitting at i
            // gives mutable access to all parent slots.
            let (parents, rest) = ws.split_at_mut(i);
            let Some(gout) = rest[0].as_deref() else {
                continue;
            };
            self.backward_op(i, gout, parents);
        }

        for (i, slot) in ws.into_iter().enumerate() {
            let node = &mut self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let g = slot.unwrap_or_else(|| vec![0.0; node.value.len()]);
            match &mut node.grad {
                Some(acc) => {
                    for (a, b) in acc.iter_mut().zip(&g) {
                        *a += b;
                    }
                }
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn backward_op(&self, i: usize, gout: &[f64], ws: &mut [Option<Vec<f64>>]) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (n, k) = va.dims2().expect("checked at construction");
                let m = vb.shape()[1];
                if let Some(da) = self.target(ws, *a) {
                    numeric::acc_matmul_nt(da, gout, vb.data(), n, k, m);
                }
                if let Some(db) = self.target(ws, *b) {
                    numeric::acc_matmul_tn(db, va.data(), gout, n, k, m);
                }
            }
            Op::AddRowBias(x, bias) => {
                let (n, m) = self.nodes[x.0].value.dims2().expect("checked");
                if let Some(dx) = self.target(ws, *x) {
                    for (d, g) in dx.iter_mut().zip(gout) {
                        *d += g;
                    }
                }
                if let Some(db) = self.target(ws, *bias) {
                    for i in 0..n {
                        for j in 0..m {
                            db[j] += gout[i * m + j];
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for id in [a, b] {
                    if let Some(d) = self.target(ws, *id) {
                        for (d, g) in d.iter_mut().zip(gout) {
                            *d += g;
                        }
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(da) = self.target(ws, *a) {
                    for (d, g) in da.iter_mut().zip(gout) {
                        *d += g;
                    }
                }
                if let Some(db) = self.target(ws, *b) {
                    for (d, g) in db.iter_mut().zip(gout) {
                        *d -= g;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                if let Some(da) = self.target(ws, *a) {
                    for ((d, g), y) in da.iter_mut().zip(gout).zip(vb.data()) {
                        *d += g * y;
                    }
                }
                if let Some(db) = self.target(ws, *b) {
                    for ((d, g), x) in db.iter_mut().zip(gout).zip(va.data()) {
                        *d += g * x;
                    }
                }
            }
            Op::Scale(x, factor) => {
                if let Some(dx) = self.target(ws, *x) {
                    for (d, g) in dx.iter_mut().zip(gout) {
                        *d += factor * g;
                    }
                }
            }
            Op::Relu(x) => {
                let vx = self.nodes[x.0].value.data();
                if let Some(dx) = self.target(ws, *x) {
                    for ((d, g), v) in dx.iter_mut().zip(gout).zip(vx) {
                        if *v > 0.0 {
                            *d += g;
                        }
                    }
                }
            }
            Op::Square(x) => {
                let vx = self.nodes[x.0].value.data();
                if let Some(dx) = self.target(ws, *x) {
                    for ((d, g), v) in dx.iter_mut().zip(gout).zip(vx) {
                        *d += 2.0 * v * g;
                    }
                }
            }
            Op::Hinge(x, threshold) => {
                let vx = self.nodes[x.0].value.data();
                if let Some(dx) = self.target(ws, *x) {
                    for ((d, g), v) in dx.iter_mut().zip(gout).zip(vx) {
                        if *v > *threshold {
                            *d += g;
                        }
                    }
                }
            }
            Op::LogsumexpLast(x) => {
                let vx = &self.nodes[x.0].value;
                let (n, m) = vx.dims2().expect("checked");
                let lse = self.nodes[i].value.data();
                if let Some(dx) = self.target(ws, *x) {
                    for r in 0..n {
                        for c in 0..m {
                            dx[r * m + c] += gout[r] * (vx.data()[r * m + c] - lse[r]).exp();
                        }
                    }
                }
            }
            Op::GatherLast(x, idx) => {
                let m = self.nodes[x.0].value.shape()[1];
                if let Some(dx) = self.target(ws, *x) {
                    for (r, &c) in idx.iter().enumerate() {
                        dx[r * m + c] += gout[r];
                    }
                }
            }
            Op::Take(x, idx) => {
                if let Some(dx) = self.target(ws, *x) {
                    for (t, &j) in idx.iter().enumerate() {
                        dx[j] += gout[t];
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(dx) = self.target(ws, *x) {
                    for d in dx.iter_mut() {
                        *d += gout[0];
                    }
                }
            }
            Op::Mean(x) => {
                let len = self.nodes[x.0].value.len() as f64;
                if let Some(dx) = self.target(ws, *x) {
                    let g = gout[0] / len;
                    for d in dx.iter_mut() {
                        *d += g;
                    }
                }
            }
            Op::SumLast(x) => {
                let (n, m) = self.nodes[x.0].value.dims2().expect("checked");
                if let Some(dx) = self.target(ws, *x) {
                    for r in 0..n {
                        for c in 0..m {
                            dx[r * m + c] += gout[r];
                        }
                    }
                }
            }
        }
    }

    // ── Internals ──

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> TensorId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        TensorId(self.nodes.len() - 1)
    }

    fn derive(&mut self, value: Tensor, op: Op, inputs: &[TensorId]) -> TensorId {
        let requires = inputs.iter().any(|id| self.nodes[id.0].requires_grad);
        self.push(value, op, requires)
    }

    /// Workspace slot for `id`, or `None` when the node needs no gradient.
    fn target<'w>(&self, ws: &'w mut [Option<Vec<f64>>], id: TensorId) -> Option<&'w mut [f64]> {
        if !self.nodes[id.0].requires_grad {
            return None;
        }
        let len = self.nodes[id.0].value.len();
        Some(ws[id.0].get_or_insert_with(|| vec![0.0; len]).as_mut_slice())
    }

    fn map_value(&self, x: TensorId, f: impl Fn(f64) -> f64) -> Tensor {
        let vx = self.value(x);
        let data = vx.data().iter().map(|&v| f(v)).collect();
        Tensor::new(vx.shape().to_vec(), data).expect("shape preserved")
    }

    fn elementwise_pair(
        &self,
        op: &'static str,
        a: TensorId,
        b: TensorId,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(self.dim_err(op, a, b));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(va.shape().to_vec(), data)
    }

    fn dim_err(&self, op: &'static str, a: TensorId, b: TensorId) -> Error {
        Error::Dim {
            op,
            lhs: self.value(a).shape().to_vec(),
            rhs: self.value(b).shape().to_vec(),
        }
    }
}
