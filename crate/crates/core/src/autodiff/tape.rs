use std::cell::{Cell, Ref, RefCell};
use std::sync::Arc;

use super::Tensor;
use crate::error::{Error, Result};

/// Slope used by [`Var::leaky_relu`] in the attention scorer.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddConst(usize),
    Relu(usize),
    LeakyRelu(usize, f64),
    Sigmoid(usize),
    Exp(usize),
    Log(usize),
    Softplus(usize),
    Clamp(usize, f64, f64),
    MatMul(usize, usize),
    Transpose(usize),
    Sum(usize, Option<usize>),
    Mean(usize, Option<usize>),
    L2Norm(usize, Option<usize>),
    SoftmaxRows(usize),
    GatherRows(usize, Arc<[usize]>),
    SegmentSum(usize, Arc<[usize]>),
    SegmentSoftmax(usize, Arc<[usize]>),
    ScaleRows(usize, usize),
    AddRow(usize, usize),
    Select(usize, Arc<[usize]>),
    Rbf(usize, usize, f64),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records differentiable operations in evaluation order and replays them
/// backwards to produce gradients.
///
/// A tape is single-threaded. Build one per optimization step, register the
/// parameters with [`Tape::param`], evaluate the objective, then call
/// [`Tape::backward`].
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grads: RefCell<Vec<Option<Vec<f64>>>>,
    backward_done: Cell<bool>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let nodes = self.tape.nodes.borrow();
        let node = &nodes[self.id];
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &node.value.shape())
            .finish()
    }
}

fn broadcast_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Vec<usize>> {
    if a.shape() == b.shape() {
        Ok(a.shape().to_vec())
    } else if b.is_scalar() {
        Ok(a.shape().to_vec())
    } else if a.is_scalar() {
        Ok(b.shape().to_vec())
    } else {
        Err(Error::Shape {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        })
    }
}

fn zip_broadcast(a: &Tensor, b: &Tensor, shape: Vec<usize>, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let len: usize = shape.iter().product();
    let (ad, bd) = (a.data(), b.data());
    let data = if ad.len() == bd.len() {
        ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect()
    } else if bd.len() == 1 {
        let y = bd[0];
        ad.iter().map(|&x| f(x, y)).collect()
    } else {
        let x = ad[0];
        debug_assert_eq!(bd.len(), len);
        bd.iter().map(|&y| f(x, y)).collect()
    };
    Tensor::from_parts(shape, data)
}

/// (outer, axis_len, inner) strides for reducing `shape` over `axis`.
fn axis_strides(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn reduced_shape(shape: &[usize], axis: Option<usize>) -> Vec<usize> {
    match axis {
        None => vec![],
        Some(ax) => shape
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != ax)
            .map(|(_, &d)| d)
            .collect(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn matrix_dims(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        _ => Err(Error::Shape {
            op,
            left: t.shape().to_vec(),
            right: vec![],
        }),
    }
}

/// Interprets `t` as rows: 1-D vectors become a single row.
fn as_rows(t: &Tensor) -> (usize, usize) {
    match t.shape() {
        [] => (1, 1),
        [d] => (1, *d),
        [r, c] => (*r, *c),
        s => (s[0], s[1..].iter().product()),
    }
}

fn segment_check(op: &'static str, rows: usize, offsets: &[usize]) -> Result<()> {
    let ok = !offsets.is_empty()
        && offsets[0] == 0
        && *offsets.last().unwrap() == rows
        && offsets.windows(2).all(|w| w[0] <= w[1]);
    if ok {
        Ok(())
    } else {
        Err(Error::Shape {
            op,
            left: vec![rows],
            right: vec![offsets.len()],
        })
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Records a trainable leaf.
    pub fn param(&self, value: &Tensor) -> Var<'_> {
        self.push(value.clone(), Op::Leaf, true)
    }

    /// Records a constant leaf.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn requires(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    /// Clears all gradients so that [`Tape::backward`] may run again.
    pub fn zero_grad(&self) {
        self.grads.borrow_mut().clear();
        self.backward_done.set(false);
    }

    /// Gradient of the last backward root with respect to `var`, if `var`
    /// requires gradients and was reached.
    pub fn grad(&self, var: Var<'_>) -> Option<Tensor> {
        let grads = self.grads.borrow();
        let g = grads.get(var.id)?.as_ref()?;
        let shape = self.nodes.borrow()[var.id].value.shape().to_vec();
        Some(Tensor::from_parts(shape, g.clone()))
    }

    /// Like [`Tape::grad`] but returns zeros for unreached parameters.
    pub fn grad_or_zeros(&self, var: Var<'_>) -> Tensor {
        self.grad(var).unwrap_or_else(|| {
            let shape = self.nodes.borrow()[var.id].value.shape().to_vec();
            Tensor::zeros(shape)
        })
    }

    /// Runs reverse-mode differentiation from a scalar root.
    pub fn backward(&self, root: Var<'_>) -> Result<()> {
        if self.backward_done.get() {
            return Err(Error::BackwardTwice);
        }
        let nodes = self.nodes.borrow();
        let root_node = &nodes[root.id];
        if !root_node.value.is_scalar() {
            return Err(Error::NonScalarRoot(root_node.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[root.id] = Some(vec![1.0]);
        for id in (0..=root.id).rev() {
            if !nodes[id].requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            propagate(&nodes, &mut grads, id, &g);
            grads[id] = Some(g);
        }
        // Only keep gradients for nodes that actually require them.
        for (g, node) in grads.iter_mut().zip(nodes.iter()) {
            if !node.requires_grad {
                *g = None;
            }
        }
        *self.grads.borrow_mut() = grads;
        self.backward_done.set(true);
        Ok(())
    }
}

fn accumulate(
    nodes: &[Node],
    grads: &mut [Option<Vec<f64>>],
    id: usize,
    f: impl FnOnce(&mut [f64]),
) {
    if !nodes[id].requires_grad {
        return;
    }
    let len = nodes[id].value.len();
    let slot = grads[id].get_or_insert_with(|| vec![0.0; len]);
    f(slot);
}

/// Adds `g` into a parent that may have been broadcast from a scalar.
fn accumulate_broadcast(
    nodes: &[Node],
    grads: &mut [Option<Vec<f64>>],
    id: usize,
    g: impl Iterator<Item = f64>,
) {
    let scalar = nodes[id].value.len() == 1;
    accumulate(nodes, grads, id, |slot| {
        if scalar {
            slot[0] += g.sum::<f64>();
        } else {
            for (s, v) in slot.iter_mut().zip(g) {
                *s += v;
            }
        }
    });
}

fn broadcast_value(t: &Tensor, i: usize) -> f64 {
    if t.len() == 1 {
        t.data()[0]
    } else {
        t.data()[i]
    }
}

fn propagate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], id: usize, g: &[f64]) {
    let out = &nodes[id].value;
    match &nodes[id].op {
        Op::Leaf => {}
        &Op::Add(a, b) => {
            accumulate_broadcast(nodes, grads, a, g.iter().copied());
            accumulate_broadcast(nodes, grads, b, g.iter().copied());
        }
        &Op::Sub(a, b) => {
            accumulate_broadcast(nodes, grads, a, g.iter().copied());
            accumulate_broadcast(nodes, grads, b, g.iter().map(|v| -v));
        }
        &Op::Mul(a, b) => {
            let (av, bv) = (&nodes[a].value, &nodes[b].value);
            accumulate_broadcast(
                nodes,
                grads,
                a,
                g.iter().enumerate().map(|(i, gi)| gi * broadcast_value(bv, i)),
            );
            accumulate_broadcast(
                nodes,
                grads,
                b,
                g.iter().enumerate().map(|(i, gi)| gi * broadcast_value(av, i)),
            );
        }
        &Op::Scale(a, c) => accumulate(nodes, grads, a, |s| {
            for (s, gi) in s.iter_mut().zip(g) {
                *s += c * gi;
            }
        }),
        &Op::AddConst(a) => accumulate(nodes, grads, a, |s| {
            for (s, gi) in s.iter_mut().zip(g) {
                *s += gi;
            }
        }),
        &Op::Relu(a) => {
            let x = nodes[a].value.data();
            accumulate(nodes, grads, a, |s| {
                for ((s, gi), &xi) in s.iter_mut().zip(g).zip(x) {
                    if xi > 0.0 {
                        *s += gi;
                    }
                }
            })
        }
        &Op::LeakyRelu(a, slope) => {
            let x = nodes[a].value.data();
            accumulate(nodes, grads, a, |s| {
                for ((s, gi), &xi) in s.iter_mut().zip(g).zip(x) {
                    *s += if xi > 0.0 { *gi } else { slope * gi };
                }
            })
        }
        &Op::Sigmoid(a) => {
            let y = out.data();
            accumulate(nodes, grads, a, |s| {
                for ((s, gi), &yi) in s.iter_mut().zip(g).zip(y) {
                    *s += gi * yi * (1.0 - yi);
                }
            })
        }
        &Op::Exp(a) => {
            let y = out.data();
            accumulate(nodes, grads, a, |s| {
                for ((s, gi), &yi) in s.iter_mut().zip(g).zip(y) {
                    *s += gi * yi;
                }
            })
        }
        &Op::Log(a) => {
            let x = nodes[a].value.data();
            accumulate(nodes, grads, a, |s| {
                for ((s, gi), &xi) in s.iter_mut().zip(g).zip(x) {
                    *s += gi / xi;
                }
            })
        }
        &Op::Softplus(a) => {
            let x = nodes[a].value.data();
            accumulate(nodes, grads, a, |s| {
                for ((s, gi), &xi) in s.iter_mut().zip(g).zip(x) {
                    *s += gi * sigmoid(xi);
                }
            })
        }
        &Op::Clamp(a, lo, hi) => {
            let x = nodes[a].value.data();
            accumulate(nodes, grads, a, |s| {
                for ((s, gi), &xi) in s.iter_mut().zip(g).zip(x) {
                    if xi >= lo && xi <= hi {
                        *s += gi;
                    }
                }
            })
        }
        &Op::MatMul(a, b) => {
            let (av, bv) = (&nodes[a].value, &nodes[b].value);
            let (m, k) = (av.shape()[0], av.shape()[1]);
            let n = bv.shape()[1];
            let (ad, bd) = (av.data(), bv.data());
            // dA = G · Bᵀ
            accumulate(nodes, grads, a, |s| {
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let brow = &bd[p * n..(p + 1) * n];
                        s[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
            });
            // dB = Aᵀ · G
            accumulate(nodes, grads, b, |s| {
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let av = ad[i * k + p];
                        if av == 0.0 {
                            continue;
                        }
                        let srow = &mut s[p * n..(p + 1) * n];
                        for (sv, gv) in srow.iter_mut().zip(grow) {
                            *sv += av * gv;
                        }
                    }
                }
            });
        }
        &Op::Transpose(a) => {
            let (r, c) = (out.shape()[0], out.shape()[1]);
            // out is r×c, input is c×r
            accumulate(nodes, grads, a, |s| {
                for i in 0..r {
                    for j in 0..c {
                        s[j * r + i] += g[i * c + j];
                    }
                }
            });
        }
        &Op::Sum(a, axis) | &Op::Mean(a, axis) => {
            let shape = nodes[a].value.shape().to_vec();
            let mean = matches!(nodes[id].op, Op::Mean(..));
            match axis {
                None => {
                    let scale = if mean { 1.0 / nodes[a].value.len() as f64 } else { 1.0 };
                    let gv = g[0] * scale;
                    accumulate(nodes, grads, a, |s| s.iter_mut().for_each(|x| *x += gv));
                }
                Some(ax) => {
                    let (outer, len, inner) = axis_strides(&shape, ax);
                    let scale = if mean { 1.0 / len as f64 } else { 1.0 };
                    accumulate(nodes, grads, a, |s| {
                        for o in 0..outer {
                            for l in 0..len {
                                for i in 0..inner {
                                    s[(o * len + l) * inner + i] += scale * g[o * inner + i];
                                }
                            }
                        }
                    });
                }
            }
        }
        &Op::L2Norm(a, axis) => {
            let x = nodes[a].value.data();
            let shape = nodes[a].value.shape().to_vec();
            let norms = out.data();
            match axis {
                None => {
                    let nrm = norms[0];
                    accumulate(nodes, grads, a, |s| {
                        if nrm > 0.0 {
                            for (s, &xi) in s.iter_mut().zip(x) {
                                *s += g[0] * xi / nrm;
                            }
                        }
                    });
                }
                Some(ax) => {
                    let (outer, len, inner) = axis_strides(&shape, ax);
                    accumulate(nodes, grads, a, |s| {
                        for o in 0..outer {
                            for i in 0..inner {
                                let nrm = norms[o * inner + i];
                                if nrm == 0.0 {
                                    continue;
                                }
                                let gv = g[o * inner + i] / nrm;
                                for l in 0..len {
                                    let idx = (o * len + l) * inner + i;
                                    s[idx] += gv * x[idx];
                                }
                            }
                        }
                    });
                }
            }
        }
        &Op::SoftmaxRows(a) => {
            let (r, c) = as_rows(out);
            let y = out.data();
            accumulate(nodes, grads, a, |s| {
                for i in 0..r {
                    let yr = &y[i * c..(i + 1) * c];
                    let gr = &g[i * c..(i + 1) * c];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        s[i * c + j] += yr[j] * (gr[j] - dot);
                    }
                }
            });
        }
        Op::GatherRows(a, idx) => {
            let a = *a;
            let w = out.row_len();
            accumulate(nodes, grads, a, |s| {
                for (r, &src) in idx.iter().enumerate() {
                    let gr = &g[r * w..(r + 1) * w];
                    for (sv, gv) in s[src * w..(src + 1) * w].iter_mut().zip(gr) {
                        *sv += gv;
                    }
                }
            });
        }
        Op::SegmentSum(a, offsets) => {
            let a = *a;
            let w = out.row_len();
            accumulate(nodes, grads, a, |s| {
                for (seg, win) in offsets.windows(2).enumerate() {
                    let gr = &g[seg * w..(seg + 1) * w];
                    for r in win[0]..win[1] {
                        for (sv, gv) in s[r * w..(r + 1) * w].iter_mut().zip(gr) {
                            *sv += gv;
                        }
                    }
                }
            });
        }
        Op::SegmentSoftmax(a, offsets) => {
            let a = *a;
            let y = out.data();
            accumulate(nodes, grads, a, |s| {
                for win in offsets.windows(2) {
                    let (lo, hi) = (win[0], win[1]);
                    let dot: f64 = (lo..hi).map(|k| y[k] * g[k]).sum();
                    for k in lo..hi {
                        s[k] += y[k] * (g[k] - dot);
                    }
                }
            });
        }
        &Op::ScaleRows(m, v) => {
            let (mv, vv) = (&nodes[m].value, &nodes[v].value);
            let w = mv.row_len();
            let (md, vd) = (mv.data(), vv.data());
            accumulate(nodes, grads, m, |s| {
                for (r, &scale) in vd.iter().enumerate() {
                    for c in 0..w {
                        s[r * w + c] += g[r * w + c] * scale;
                    }
                }
            });
            accumulate(nodes, grads, v, |s| {
                for (r, sv) in s.iter_mut().enumerate() {
                    let row = r * w..(r + 1) * w;
                    *sv += g[row.clone()].iter().zip(&md[row]).map(|(a, b)| a * b).sum::<f64>();
                }
            });
        }
        &Op::AddRow(m, row) => {
            let w = nodes[row].value.len();
            accumulate(nodes, grads, m, |s| {
                for (sv, gv) in s.iter_mut().zip(g) {
                    *sv += gv;
                }
            });
            accumulate(nodes, grads, row, |s| {
                for chunk in g.chunks(w) {
                    for (sv, gv) in s.iter_mut().zip(chunk) {
                        *sv += gv;
                    }
                }
            });
        }
        Op::Select(a, idx) => {
            let a = *a;
            accumulate(nodes, grads, a, |s| {
                for (gv, &i) in g.iter().zip(idx.iter()) {
                    s[i] += gv;
                }
            });
        }
        &Op::Rbf(x, y, gamma) => {
            let (xv, yv) = (&nodes[x].value, &nodes[y].value);
            let (n, d) = as_rows(xv);
            let (m, _) = as_rows(yv);
            let (xd, yd) = (xv.data(), yv.data());
            let k = out.data();
            // weights w_ij = g_ij k_ij; dk_ij/dx_i = -2γ k_ij (x_i - y_j)
            let wts: Vec<f64> = g.iter().zip(k).map(|(a, b)| a * b).collect();
            accumulate(nodes, grads, x, |s| {
                for i in 0..n {
                    let xi = &xd[i * d..(i + 1) * d];
                    let srow = &mut s[i * d..(i + 1) * d];
                    let mut total = 0.0;
                    for j in 0..m {
                        let w = wts[i * m + j];
                        if w == 0.0 {
                            continue;
                        }
                        total += w;
                        let yj = &yd[j * d..(j + 1) * d];
                        for (sv, yv) in srow.iter_mut().zip(yj) {
                            *sv += 2.0 * gamma * w * yv;
                        }
                    }
                    for (sv, xv) in srow.iter_mut().zip(xi) {
                        *sv -= 2.0 * gamma * total * xv;
                    }
                }
            });
            accumulate(nodes, grads, y, |s| {
                let mut totals = vec![0.0; m];
                for i in 0..n {
                    let xi = &xd[i * d..(i + 1) * d];
                    for j in 0..m {
                        let w = wts[i * m + j];
                        if w == 0.0 {
                            continue;
                        }
                        totals[j] += w;
                        for (sv, xv) in s[j * d..(j + 1) * d].iter_mut().zip(xi) {
                            *sv += 2.0 * gamma * w * xv;
                        }
                    }
                }
                for j in 0..m {
                    let yj = &yd[j * d..(j + 1) * d];
                    for (c, yv) in yj.iter().enumerate() {
                        s[j * d + c] -= 2.0 * gamma * totals[j] * yv;
                    }
                }
            });
        }
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    /// Borrow of the forward value. Drop it before recording new operations.
    pub fn value(&self) -> Ref<'t, Tensor> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn to_tensor(&self) -> Tensor {
        self.value().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    /// Value of a single-element var.
    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn unary(&self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let value = {
            let v = self.value();
            Tensor::from_parts(v.shape().to_vec(), v.data().iter().map(|&x| f(x)).collect())
        };
        let rg = self.tape.requires(&[self.id]);
        self.tape.push(value, op, rg)
    }

    fn binary(
        &self,
        other: Var<'t>,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'t>> {
        let value = {
            let (a, b) = (self.value(), other.value());
            let shape = broadcast_shape(name, &a, &b)?;
            zip_broadcast(&a, &b, shape, f)
        };
        let rg = self.tape.requires(&[self.id, other.id]);
        Ok(self.tape.push(value, op, rg))
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", Op::Mul(self.id, other.id), |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, c), |x| c * x)
    }

    pub fn neg(&self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn add_const(&self, c: f64) -> Var<'t> {
        self.unary(Op::AddConst(self.id), |x| x + c)
    }

    pub fn square(&self) -> Var<'t> {
        self.mul(*self).expect("same shape")
    }

    pub fn relu(&self) -> Var<'t> {
        self.unary(Op::Relu(self.id), |x| x.max(0.0))
    }

    pub fn leaky_relu(&self, slope: f64) -> Var<'t> {
        self.unary(Op::LeakyRelu(self.id, slope), |x| if x > 0.0 { x } else { slope * x })
    }

    pub fn sigmoid(&self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.id), sigmoid)
    }

    pub fn exp(&self) -> Var<'t> {
        self.unary(Op::Exp(self.id), f64::exp)
    }

    /// Natural logarithm; every entry must be strictly positive.
    pub fn log(&self) -> Result<Var<'t>> {
        {
            let v = self.value();
            if let Some((index, &value)) = v.data().iter().enumerate().find(|(_, &x)| !(x > 0.0)) {
                return Err(Error::Domain {
                    op: "log",
                    index,
                    value,
                });
            }
        }
        Ok(self.unary(Op::Log(self.id), f64::ln))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&self) -> Var<'t> {
        self.unary(Op::Softplus(self.id), softplus)
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Var<'t> {
        self.unary(Op::Clamp(self.id, lo, hi), |x| x.clamp(lo, hi))
    }

    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        let value = {
            let (a, b) = (self.value(), other.value());
            let (m, k) = matrix_dims("matmul", &a)?;
            let (k2, n) = matrix_dims("matmul", &b)?;
            if k != k2 {
                return Err(Error::Shape {
                    op: "matmul",
                    left: a.shape().to_vec(),
                    right: b.shape().to_vec(),
                });
            }
            Tensor::from_parts(vec![m, n], matmul_raw(a.data(), b.data(), m, k, n))
        };
        let rg = self.tape.requires(&[self.id, other.id]);
        Ok(self.tape.push(value, Op::MatMul(self.id, other.id), rg))
    }

    pub fn transpose(&self) -> Result<Var<'t>> {
        let value = {
            let a = self.value();
            let (r, c) = matrix_dims("transpose", &a)?;
            let d = a.data();
            let mut out = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    out[j * r + i] = d[i * c + j];
                }
            }
            Tensor::from_parts(vec![c, r], out)
        };
        let rg = self.tape.requires(&[self.id]);
        Ok(self.tape.push(value, Op::Transpose(self.id), rg))
    }

    fn reduce(&self, axis: Option<usize>, op: Op, f: impl Fn(&mut dyn Iterator<Item = f64>, usize) -> f64) -> Result<Var<'t>> {
        let value = {
            let a = self.value();
            let shape = a.shape();
            match axis {
                None => {
                    let mut it = a.data().iter().copied();
                    Tensor::scalar(f(&mut it, a.len()))
                }
                Some(ax) => {
                    if ax >= shape.len() {
                        return Err(Error::Axis {
                            axis: ax,
                            shape: shape.to_vec(),
                        });
                    }
                    let (outer, len, inner) = axis_strides(shape, ax);
                    let d = a.data();
                    let mut out = Vec::with_capacity(outer * inner);
                    for o in 0..outer {
                        for i in 0..inner {
                            let mut it = (0..len).map(|l| d[(o * len + l) * inner + i]);
                            out.push(f(&mut it, len));
                        }
                    }
                    Tensor::from_parts(reduced_shape(shape, axis), out)
                }
            }
        };
        let rg = self.tape.requires(&[self.id]);
        Ok(self.tape.push(value, op, rg))
    }

    pub fn sum(&self, axis: Option<usize>) -> Result<Var<'t>> {
        self.reduce(axis, Op::Sum(self.id, axis), |it, _| it.sum())
    }

    pub fn mean(&self, axis: Option<usize>) -> Result<Var<'t>> {
        self.reduce(axis, Op::Mean(self.id, axis), |it, n| it.sum::<f64>() / n as f64)
    }

    /// Euclidean norm: square root of the sum of squares.
    pub fn l2_norm(&self, axis: Option<usize>) -> Result<Var<'t>> {
        self.reduce(axis, Op::L2Norm(self.id, axis), |it, _| it.map(|x| x * x).sum::<f64>().sqrt())
    }

    /// Sum of all entries as a scalar.
    pub fn sum_all(&self) -> Var<'t> {
        self.sum(None).expect("full reduction")
    }

    /// Row-wise softmax with max subtraction. 1-D input is one row.
    pub fn softmax_rows(&self) -> Var<'t> {
        let value = {
            let a = self.value();
            let (r, c) = as_rows(&a);
            let d = a.data();
            let mut out = vec![0.0; d.len()];
            for i in 0..r {
                let row = &d[i * c..(i + 1) * c];
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let o = &mut out[i * c..(i + 1) * c];
                let mut z = 0.0;
                for (ov, &x) in o.iter_mut().zip(row) {
                    *ov = (x - max).exp();
                    z += *ov;
                }
                o.iter_mut().for_each(|v| *v /= z);
            }
            Tensor::from_parts(a.shape().to_vec(), out)
        };
        let rg = self.tape.requires(&[self.id]);
        self.tape.push(value, Op::SoftmaxRows(self.id), rg)
    }

    /// Selects rows (leading-dimension slices) by index, with repetition.
    pub fn gather_rows(&self, idx: impl Into<Arc<[usize]>>) -> Result<Var<'t>> {
        let idx: Arc<[usize]> = idx.into();
        let value = {
            let a = self.value();
            let rows = a.rows();
            if a.shape().is_empty() {
                return Err(Error::Shape {
                    op: "gather_rows",
                    left: vec![],
                    right: vec![idx.len()],
                });
            }
            if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
                return Err(Error::Shape {
                    op: "gather_rows",
                    left: a.shape().to_vec(),
                    right: vec![bad],
                });
            }
            let w = a.row_len();
            let mut out = Vec::with_capacity(idx.len() * w);
            for &i in idx.iter() {
                out.extend_from_slice(a.row(i));
            }
            let mut shape = a.shape().to_vec();
            shape[0] = idx.len();
            Tensor::from_parts(shape, out)
        };
        let rg = self.tape.requires(&[self.id]);
        Ok(self.tape.push(value, Op::GatherRows(self.id, idx), rg))
    }

    /// Sums consecutive row ranges `offsets[s]..offsets[s + 1]` into one row each.
    pub fn segment_sum(&self, offsets: impl Into<Arc<[usize]>>) -> Result<Var<'t>> {
        let offsets: Arc<[usize]> = offsets.into();
        let value = {
            let a = self.value();
            segment_check("segment_sum", a.rows(), &offsets)?;
            let w = a.row_len();
            let segs = offsets.len() - 1;
            let mut out = vec![0.0; segs * w];
            for (s, win) in offsets.windows(2).enumerate() {
                let o = &mut out[s * w..(s + 1) * w];
                for r in win[0]..win[1] {
                    for (ov, &x) in o.iter_mut().zip(a.row(r)) {
                        *ov += x;
                    }
                }
            }
            let mut shape = a.shape().to_vec();
            shape[0] = segs;
            Tensor::from_parts(shape, out)
        };
        let rg = self.tape.requires(&[self.id]);
        Ok(self.tape.push(value, Op::SegmentSum(self.id, offsets), rg))
    }

    /// Softmax of a flat vector within each segment `offsets[s]..offsets[s + 1]`.
    pub fn segment_softmax(&self, offsets: impl Into<Arc<[usize]>>) -> Result<Var<'t>> {
        let offsets: Arc<[usize]> = offsets.into();
        let value = {
            let a = self.value();
            segment_check("segment_softmax", a.len(), &offsets)?;
            let d = a.data();
            let mut out = vec![0.0; d.len()];
            for win in offsets.windows(2) {
                let (lo, hi) = (win[0], win[1]);
                if lo == hi {
                    continue;
                }
                let max = d[lo..hi].iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for k in lo..hi {
                    out[k] = (d[k] - max).exp();
                    z += out[k];
                }
                out[lo..hi].iter_mut().for_each(|v| *v /= z);
            }
            Tensor::from_parts(a.shape().to_vec(), out)
        };
        let rg = self.tape.requires(&[self.id]);
        Ok(self.tape.push(value, Op::SegmentSoftmax(self.id, offsets), rg))
    }

    /// Multiplies row `r` by `scales[r]`.
    pub fn scale_rows(&self, scales: Var<'t>) -> Result<Var<'t>> {
        let value = {
            let (a, v) = (self.value(), scales.value());
            if a.rows() != v.len() || a.shape().is_empty() {
                return Err(Error::Shape {
                    op: "scale_rows",
                    left: a.shape().to_vec(),
                    right: v.shape().to_vec(),
                });
            }
            let w = a.row_len();
            let mut out = a.data().to_vec();
            for (r, &s) in v.data().iter().enumerate() {
                out[r * w..(r + 1) * w].iter_mut().for_each(|x| *x *= s);
            }
            Tensor::from_parts(a.shape().to_vec(), out)
        };
        let rg = self.tape.requires(&[self.id, scales.id]);
        Ok(self.tape.push(value, Op::ScaleRows(self.id, scales.id), rg))
    }

    /// Adds `row` to every row of a matrix.
    pub fn add_row(&self, row: Var<'t>) -> Result<Var<'t>> {
        let value = {
            let (a, r) = (self.value(), row.value());
            if a.shape().len() != 2 || a.row_len() != r.len() {
                return Err(Error::Shape {
                    op: "add_row",
                    left: a.shape().to_vec(),
                    right: r.shape().to_vec(),
                });
            }
            let w = r.len();
            let mut out = a.data().to_vec();
            for chunk in out.chunks_mut(w) {
                for (x, b) in chunk.iter_mut().zip(r.data()) {
                    *x += b;
                }
            }
            Tensor::from_parts(a.shape().to_vec(), out)
        };
        let rg = self.tape.requires(&[self.id, row.id]);
        Ok(self.tape.push(value, Op::AddRow(self.id, row.id), rg))
    }

    /// Picks entries by flat (row-major) index into a 1-D result.
    pub fn select(&self, idx: impl Into<Arc<[usize]>>) -> Result<Var<'t>> {
        let idx: Arc<[usize]> = idx.into();
        let value = {
            let a = self.value();
            if let Some(&bad) = idx.iter().find(|&&i| i >= a.len()) {
                return Err(Error::Shape {
                    op: "select",
                    left: a.shape().to_vec(),
                    right: vec![bad],
                });
            }
            Tensor::vector(idx.iter().map(|&i| a.data()[i]).collect())
        };
        let rg = self.tape.requires(&[self.id]);
        Ok(self.tape.push(value, Op::Select(self.id, idx), rg))
    }

    /// RBF kernel matrix `K[i][j] = exp(-gamma * |x_i - y_j|^2)` between the
    /// rows of `self` (n×d) and `other` (m×d).
    pub fn rbf_kernel_matrix(&self, other: Var<'t>, gamma: f64) -> Result<Var<'t>> {
        self.rbf_impl(other, gamma, false)
    }

    /// Scalar RBF kernel between two vectors of equal length.
    pub fn rbf_kernel(&self, other: Var<'t>, gamma: f64) -> Result<Var<'t>> {
        self.rbf_impl(other, gamma, true)
    }

    fn rbf_impl(&self, other: Var<'t>, gamma: f64, scalar: bool) -> Result<Var<'t>> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::invalid(format!("rbf gamma must be positive, got {gamma}")));
        }
        let value = {
            let (x, y) = (self.value(), other.value());
            let mismatch = || Error::Shape {
                op: "rbf_kernel",
                left: x.shape().to_vec(),
                right: y.shape().to_vec(),
            };
            if scalar && (x.shape().len() != 1 || x.shape() != y.shape()) {
                return Err(mismatch());
            }
            if !scalar && (x.shape().len() != 2 || y.shape().len() != 2) {
                return Err(mismatch());
            }
            let (n, d) = as_rows(&x);
            let (m, d2) = as_rows(&y);
            if d != d2 {
                return Err(mismatch());
            }
            let (xd, yd) = (x.data(), y.data());
            let mut out = Vec::with_capacity(n * m);
            for i in 0..n {
                let xi = &xd[i * d..(i + 1) * d];
                for j in 0..m {
                    let yj = &yd[j * d..(j + 1) * d];
                    let dist: f64 = xi.iter().zip(yj).map(|(a, b)| (a - b) * (a - b)).sum();
                    out.push((-gamma * dist).exp());
                }
            }
            let shape = if scalar { vec![] } else { vec![n, m] };
            Tensor::from_parts(shape, out)
        };
        let rg = self.tape.requires(&[self.id, other.id]);
        Ok(self.tape.push(value, Op::Rbf(self.id, other.id, gamma), rg))
    }
}
