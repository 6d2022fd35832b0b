//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! Shapes are fixed when a node is created. [`Graph::backward`] walks the
//! tape once in reverse and returns gradients without touching forward
//! values.
//!
//! The graph also keeps a running signature of every discrete branch taken
//! during the forward pass (ReLU sign patterns, max-pool winners and any
//! decision registered with [`Graph::note_decision`]). Finite-difference
//! checks compare signatures to skip coordinates whose perturbation crosses
//! a kink.

pub mod checkpoint;
mod params;

use std::collections::HashMap;
use std::sync::Arc;

pub use params::{ParamId, ParamStore, Parameter};

use crate::error::{Error, Result};
use crate::sampling::IndexMatrix;
use crate::tensor::{self, axis_split, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Deliberately wrong backward rules, for negative-control tests of the
/// gradient checker.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// ReLU passes gradient through negative inputs.
    ReluLeaksNegative,
    /// Linear weight gradients are scaled by 1.01.
    LinearWeightGradScaled,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Option<Var> },
    MatMulNt { a: Var, b: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Softmax { a: Var, axis: usize },
    Gather { src: Var, idx: Arc<IndexMatrix> },
    SumAxis { a: Var, axis: usize },
    MaxAxis { a: Var, axis: usize, argmax: Vec<usize> },
    SumAll(Var),
    MeanAll(Var),
    Concat { parts: Vec<Var> },
    Slice { a: Var, start: usize, len: usize },
    Reshape(Var),
    BroadcastLast { a: Var, n: usize },
    L2Normalize { a: Var, eps: f64 },
    BceWithLogits { logits: Var, labels: Vec<f64> },
    SmoothL1 { pred: Var, target: Vec<f64>, mask: Vec<f64>, beta: f64 },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    signature: u64,
    fault: Option<Fault>,
}

impl Default for Graph {
    fn default() -> Self {
        Graph::new()
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn mix(mut h: u64, word: u64) -> u64 {
    for b in word.to_le_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn check_axis(op: &'static str, t: &Tensor, axis: usize) -> Result<()> {
    if axis >= t.rank() {
        return Err(Error::shape(
            op,
            format!("axis {axis} out of range for shape {:?}", t.shape()),
        ));
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn smooth_l1(d: f64, beta: f64) -> f64 {
    let a = d.abs();
    if a < beta {
        0.5 * d * d / beta
    } else {
        a - 0.5 * beta
    }
}

fn smooth_l1_grad(d: f64, beta: f64) -> f64 {
    if d.abs() < beta {
        d / beta
    } else {
        d.signum()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: HashMap::new(),
            signature: FNV_OFFSET,
            fault: None,
        }
    }

    pub fn with_fault(fault: Option<Fault>) -> Self {
        Graph {
            fault,
            ..Graph::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Hash of every discrete branch taken so far.
    pub fn signature(&self) -> u64 {
        self.signature
    }

    /// Folds an externally made discrete choice (sampled indices, argmax
    /// picks) into the signature.
    pub fn note_decision(&mut self, tag: &[usize]) {
        let mut h = mix(self.signature, tag.len() as u64);
        for &t in tag {
            h = mix(h, t as u64);
        }
        self.signature = h;
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, name: &'static str, op: Op, value: Tensor, requires_grad: bool) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite {
                locus: format!("{name} (node {})", self.nodes.len()),
            });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A value that never receives gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives gradient.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// The node holding parameter `id`, created on first use.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let p = store.get(id);
        self.nodes.push(Node {
            value: p.value.clone(),
            op: Op::Leaf,
            requires_grad: p.trainable,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    /// Parameters used by this graph and their nodes.
    pub fn param_vars(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.params.iter().map(|(&p, &v)| (p, v))
    }

    /// Affine map along the last axis: `x[.., In] · w[In, Out] + b[Out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xv = self.value(x);
        let wv = self.value(w);
        if wv.rank() != 2 || xv.rank() == 0 || xv.last_dim() != wv.shape()[0] {
            return Err(Error::shape(
                "linear",
                format!("input {:?} against weight {:?}", xv.shape(), wv.shape()),
            ));
        }
        let (din, dout) = (wv.shape()[0], wv.shape()[1]);
        if let Some(b) = b {
            if self.value(b).shape() != [dout] {
                return Err(Error::shape(
                    "linear",
                    format!("bias {:?} for {dout} outputs", self.value(b).shape()),
                ));
            }
        }
        let rows = xv.outer_rows();
        let mut y = tensor::matmul(xv.data(), wv.data(), rows, din, dout);
        if let Some(b) = b {
            let bv = self.value(b).data();
            for row in y.chunks_mut(dout) {
                for (o, &bb) in row.iter_mut().zip(bv) {
                    *o += bb;
                }
            }
        }
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = dout;
        let req = self.requires(x) || self.requires(w) || b.is_some_and(|b| self.requires(b));
        self.push("linear", Op::Linear { x, w, b }, Tensor::new(&shape, y)?, req)
    }

    /// `a[n, d] · b[m, d]^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[1] {
            return Err(Error::shape(
                "matmul_nt",
                format!("{:?} against {:?}", av.shape(), bv.shape()),
            ));
        }
        let (n, d, m) = (av.shape()[0], av.shape()[1], bv.shape()[0]);
        let y = tensor::matmul_nt(av.data(), bv.data(), n, d, m);
        let req = self.requires(a) || self.requires(b);
        self.push("matmul_nt", Op::MatMulNt { a, b }, Tensor::new(&[n, m], y)?, req)
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        same_shape(name, self.value(a), self.value(b))?;
        let av = self.value(a);
        let bv = self.value(b);
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(av.shape(), data)?;
        let req = self.requires(a) || self.requires(b);
        self.push(name, op, t, req)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let t = self.value(a).map(|v| v * s);
        let req = self.requires(a);
        self.push("scale", Op::Scale(a, s), t, req)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let mut sig = mix(self.signature, self.nodes.len() as u64);
        let mut word = 0u64;
        for (i, &v) in av.data().iter().enumerate() {
            if v > 0.0 {
                word |= 1 << (i % 64);
            }
            if i % 64 == 63 {
                sig = mix(sig, word);
                word = 0;
            }
        }
        let t = av.map(|v| if v > 0.0 { v } else { 0.0 });
        self.signature = mix(sig, word);
        let req = self.requires(a);
        self.push("relu", Op::Relu(a), t, req)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).map(sigmoid);
        let req = self.requires(a);
        self.push("sigmoid", Op::Sigmoid(a), t, req)
    }

    /// Max-stabilized softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let av = self.value(a);
        check_axis("softmax", av, axis)?;
        let (outer, n, inner) = axis_split(av.shape(), axis);
        let x = av.data();
        let mut y = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * n + j) * inner + i;
                let mx = (0..n).map(|j| x[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for j in 0..n {
                    let e = (x[at(j)] - mx).exp();
                    y[at(j)] = e;
                    sum += e;
                }
                for j in 0..n {
                    y[at(j)] /= sum;
                }
            }
        }
        let t = Tensor::new(av.shape(), y)?;
        let req = self.requires(a);
        self.push("softmax", Op::Softmax { a, axis }, t, req)
    }

    /// `src[N, C]` gathered by `idx[R, k]` into `[R, k, C]`.
    pub fn gather(&mut self, src: Var, idx: Arc<IndexMatrix>) -> Result<Var> {
        let sv = self.value(src);
        if sv.rank() != 2 {
            return Err(Error::shape(
                "gather",
                format!("source must be [N, C], got {:?}", sv.shape()),
            ));
        }
        let (n, c) = (sv.shape()[0], sv.shape()[1]);
        idx.check_bound(n, "gather")?;
        let mut out = Vec::with_capacity(idx.as_slice().len() * c);
        for &i in idx.as_slice() {
            out.extend_from_slice(sv.row(i));
        }
        let t = Tensor::new(&[idx.rows(), idx.cols(), c], out)?;
        let req = self.requires(src);
        self.push("gather", Op::Gather { src, idx }, t, req)
    }

    /// Sum along `axis`, removing it.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let av = self.value(a);
        check_axis("sum_axis", av, axis)?;
        let (outer, n, inner) = axis_split(av.shape(), axis);
        let x = av.data();
        let mut y = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..n {
                let src = &x[(o * n + j) * inner..(o * n + j + 1) * inner];
                for (d, &s) in y[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut shape = av.shape().to_vec();
        shape.remove(axis);
        let t = Tensor::new(&shape, y)?;
        let req = self.requires(a);
        self.push("sum_axis", Op::SumAxis { a, axis }, t, req)
    }

    /// Max along `axis`, removing it. Ties go to the first position.
    pub fn max_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let av = self.value(a);
        check_axis("max_axis", av, axis)?;
        let (outer, n, inner) = axis_split(av.shape(), axis);
        if n == 0 {
            return Err(Error::shape("max_axis", "empty reduction axis"));
        }
        let x = av.data();
        let mut y = vec![f64::NEG_INFINITY; outer * inner];
        let mut argmax = vec![0usize; outer * inner];
        for o in 0..outer {
            for j in 0..n {
                for i in 0..inner {
                    let v = x[(o * n + j) * inner + i];
                    let k = o * inner + i;
                    if v > y[k] || j == 0 {
                        y[k] = v;
                        argmax[k] = j;
                    }
                }
            }
        }
        let mut sig = mix(self.signature, self.nodes.len() as u64);
        for &j in &argmax {
            sig = mix(sig, j as u64);
        }
        let mut shape = av.shape().to_vec();
        shape.remove(axis);
        self.signature = sig;
        let t = Tensor::new(&shape, y)?;
        let req = self.requires(a);
        self.push("max_axis", Op::MaxAxis { a, axis, argmax }, t, req)
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let t = Tensor::scalar(self.value(a).sum());
        let req = self.requires(a);
        self.push("sum_all", Op::SumAll(a), t, req)
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.is_empty() {
            return Err(Error::shape("mean_all", "empty tensor"));
        }
        let t = Tensor::scalar(av.sum() / av.len() as f64);
        let req = self.requires(a);
        self.push("mean_all", Op::MeanAll(a), t, req)
    }

    /// Concatenation along the last axis; leading dimensions must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let lead = self.value(*first).shape();
        let lead = lead[..lead.len().saturating_sub(1)].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.value(p).shape();
            if s.is_empty() || s[..s.len() - 1] != lead[..] {
                return Err(Error::shape(
                    "concat",
                    format!("leading dims {:?} vs {:?}", &s[..s.len().saturating_sub(1)], lead),
                ));
            }
            widths.push(s[s.len() - 1]);
        }
        let rows: usize = lead.iter().product();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let t = Tensor::new(&shape, out)?;
        let req = parts.iter().any(|&p| self.requires(p));
        self.push(
            "concat",
            Op::Concat {
                parts: parts.to_vec(),
            },
            t,
            req,
        )
    }

    /// Columns `start..start + len` of the last axis.
    pub fn slice_last(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        let w = av.last_dim();
        if av.rank() == 0 || start + len > w || len == 0 {
            return Err(Error::shape(
                "slice_last",
                format!("columns {start}..{} of {:?}", start + len, av.shape()),
            ));
        }
        let mut out = Vec::with_capacity(av.outer_rows() * len);
        for row in av.data().chunks(w) {
            out.extend_from_slice(&row[start..start + len]);
        }
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let t = Tensor::new(&shape, out)?;
        let req = self.requires(a);
        self.push("slice_last", Op::Slice { a, start, len }, t, req)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).reshape(shape)?;
        let req = self.requires(a);
        self.push("reshape", Op::Reshape(a), t, req)
    }

    /// Repeats a trailing axis of size 1 `n` times.
    pub fn broadcast_last(&mut self, a: Var, n: usize) -> Result<Var> {
        let av = self.value(a);
        if av.last_dim() != 1 || av.rank() == 0 {
            return Err(Error::shape(
                "broadcast_last",
                format!("needs trailing axis of 1, got {:?}", av.shape()),
            ));
        }
        let out: Vec<f64> = av
            .data()
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, n))
            .collect();
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let t = Tensor::new(&shape, out)?;
        let req = self.requires(a);
        self.push("broadcast_last", Op::BroadcastLast { a, n }, t, req)
    }

    /// Rows scaled to unit length: `x / sqrt(|x|^2 + eps)`.
    pub fn l2_normalize(&mut self, a: Var, eps: f64) -> Result<Var> {
        let av = self.value(a);
        let w = av.last_dim();
        let mut out = av.data().to_vec();
        for row in out.chunks_mut(w) {
            let n = (row.iter().map(|v| v * v).sum::<f64>() + eps).sqrt();
            for v in row.iter_mut() {
                *v /= n;
            }
        }
        let t = Tensor::new(av.shape(), out)?;
        let req = self.requires(a);
        self.push("l2_normalize", Op::L2Normalize { a, eps }, t, req)
    }

    /// Mean binary cross-entropy of `logits` against `labels` in `{0, 1}`.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &[f64]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.len() != labels.len() || labels.is_empty() {
            return Err(Error::shape(
                "bce_with_logits",
                format!("{} logits, {} labels", lv.len(), labels.len()),
            ));
        }
        let sum: f64 = lv
            .data()
            .iter()
            .zip(labels)
            .map(|(&x, &t)| x.max(0.0) - x * t + (-x.abs()).exp().ln_1p())
            .sum();
        let t = Tensor::scalar(sum / labels.len() as f64);
        let req = self.requires(logits);
        self.push(
            "bce_with_logits",
            Op::BceWithLogits {
                logits,
                labels: labels.to_vec(),
            },
            t,
            req,
        )
    }

    /// Smooth-L1 between rows of `pred` and `target`, summed over the last
    /// axis and averaged over rows with nonzero `mask`. Zero when the mask
    /// is empty.
    pub fn smooth_l1_masked(&mut self, pred: Var, target: &[f64], mask: &[f64], beta: f64) -> Result<Var> {
        let pv = self.value(pred);
        let w = pv.last_dim();
        if pv.len() != target.len() || pv.outer_rows() != mask.len() {
            return Err(Error::shape(
                "smooth_l1_masked",
                format!(
                    "pred {:?}, {} targets, {} mask entries",
                    pv.shape(),
                    target.len(),
                    mask.len()
                ),
            ));
        }
        let denom: f64 = mask.iter().sum();
        let mut sum = 0.0;
        if denom > 0.0 {
            for (r, &m) in mask.iter().enumerate() {
                if m == 0.0 {
                    continue;
                }
                let row: f64 = (0..w)
                    .map(|c| smooth_l1(pv.data()[r * w + c] - target[r * w + c], beta))
                    .sum();
                sum += m * row;
            }
            sum /= denom;
        }
        let t = Tensor::scalar(sum);
        let req = self.requires(pred);
        self.push(
            "smooth_l1_masked",
            Op::SmoothL1 {
                pred,
                target: target.to_vec(),
                mask: mask.to_vec(),
                beta,
            },
            t,
            req,
        )
    }

    /// Gradients of the single-element node `loss` with respect to every
    /// node that requires them.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must hold one value, got {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| {
                g.filter(|_| n.requires_grad)
                    .map(|g| Tensor::new(n.value.shape(), g).expect("gradient shape"))
            })
            .collect();
        Ok(Gradients {
            grads,
            params: self.params.clone(),
        })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
            f(slot);
        };
        let val = |v: Var| &nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (xv, wv) = (val(*x), val(*w));
                let (din, dout) = (wv.shape()[0], wv.shape()[1]);
                let rows = xv.outer_rows();
                acc(*x, &mut |s| {
                    let gx = tensor::matmul_nt(g, wv.data(), rows, dout, din);
                    s.iter_mut().zip(gx).for_each(|(a, d)| *a += d);
                });
                let scale = if self.fault == Some(Fault::LinearWeightGradScaled) {
                    1.01
                } else {
                    1.0
                };
                acc(*w, &mut |s| {
                    let gw = tensor::matmul_tn(xv.data(), g, rows, din, dout);
                    s.iter_mut().zip(gw).for_each(|(a, d)| *a += d * scale);
                });
                if let Some(b) = b {
                    acc(*b, &mut |s| {
                        for row in g.chunks(dout) {
                            s.iter_mut().zip(row).for_each(|(a, d)| *a += d);
                        }
                    });
                }
            }
            Op::MatMulNt { a, b } => {
                let (av, bv) = (val(*a), val(*b));
                let (n, d, m) = (av.shape()[0], av.shape()[1], bv.shape()[0]);
                acc(*a, &mut |s| {
                    let ga = tensor::matmul(g, bv.data(), n, m, d);
                    s.iter_mut().zip(ga).for_each(|(x, y)| *x += y);
                });
                acc(*b, &mut |s| {
                    let gb = tensor::matmul_tn(g, av.data(), n, m, d);
                    s.iter_mut().zip(gb).for_each(|(x, y)| *x += y);
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(x, d)| *x += d));
                acc(*b, &mut |s| s.iter_mut().zip(g).for_each(|(x, d)| *x += d));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(x, d)| *x += d));
                acc(*b, &mut |s| s.iter_mut().zip(g).for_each(|(x, d)| *x -= d));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a).data(), val(*b).data());
                acc(*a, &mut |s| {
                    for ((x, d), y) in s.iter_mut().zip(g).zip(bv) {
                        *x += d * y;
                    }
                });
                acc(*b, &mut |s| {
                    for ((x, d), y) in s.iter_mut().zip(g).zip(av) {
                        *x += d * y;
                    }
                });
            }
            Op::Scale(a, k) => {
                acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(x, d)| *x += d * k));
            }
            Op::Relu(a) => {
                let leak = self.fault == Some(Fault::ReluLeaksNegative);
                let av = val(*a).data();
                acc(*a, &mut |s| {
                    for ((x, d), &v) in s.iter_mut().zip(g).zip(av) {
                        if v > 0.0 || leak {
                            *x += d;
                        }
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                acc(*a, &mut |s| {
                    for ((x, d), &yv) in s.iter_mut().zip(g).zip(y) {
                        *x += d * yv * (1.0 - yv);
                    }
                });
            }
            Op::Softmax { a, axis } => {
                let y = node.value.data();
                let (outer, n, inner) = axis_split(node.value.shape(), *axis);
                acc(*a, &mut |s| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| (o * n + j) * inner + i;
                            let dot: f64 = (0..n).map(|j| g[at(j)] * y[at(j)]).sum();
                            for j in 0..n {
                                s[at(j)] += y[at(j)] * (g[at(j)] - dot);
                            }
                        }
                    }
                });
            }
            Op::Gather { src, idx } => {
                let c = val(*src).shape()[1];
                acc(*src, &mut |s| {
                    for (r, &i) in idx.as_slice().iter().enumerate() {
                        let gr = &g[r * c..(r + 1) * c];
                        s[i * c..(i + 1) * c]
                            .iter_mut()
                            .zip(gr)
                            .for_each(|(x, d)| *x += d);
                    }
                });
            }
            Op::SumAxis { a, axis } => {
                let (outer, n, inner) = axis_split(val(*a).shape(), *axis);
                acc(*a, &mut |s| {
                    for o in 0..outer {
                        let go = &g[o * inner..(o + 1) * inner];
                        for j in 0..n {
                            s[(o * n + j) * inner..(o * n + j + 1) * inner]
                                .iter_mut()
                                .zip(go)
                                .for_each(|(x, d)| *x += d);
                        }
                    }
                });
            }
            Op::MaxAxis { a, axis, argmax } => {
                let (_, n, inner) = axis_split(val(*a).shape(), *axis);
                acc(*a, &mut |s| {
                    for (k, (&j, d)) in argmax.iter().zip(g).enumerate() {
                        let (o, i) = (k / inner, k % inner);
                        s[(o * n + j) * inner + i] += d;
                    }
                });
            }
            Op::SumAll(a) => {
                acc(*a, &mut |s| s.iter_mut().for_each(|x| *x += g[0]));
            }
            Op::MeanAll(a) => {
                let k = g[0] / val(*a).len() as f64;
                acc(*a, &mut |s| s.iter_mut().for_each(|x| *x += k));
            }
            Op::Concat { parts } => {
                let total = node.value.last_dim();
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).last_dim();
                    acc(p, &mut |s| {
                        for (dst, src) in s.chunks_mut(w).zip(g.chunks(total)) {
                            dst.iter_mut()
                                .zip(&src[offset..offset + w])
                                .for_each(|(x, d)| *x += d);
                        }
                    });
                    offset += w;
                }
            }
            Op::Slice { a, start, len } => {
                let w = val(*a).last_dim();
                acc(*a, &mut |s| {
                    for (dst, src) in s.chunks_mut(w).zip(g.chunks(*len)) {
                        dst[*start..start + len]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(x, d)| *x += d);
                    }
                });
            }
            Op::Reshape(a) => {
                acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(x, d)| *x += d));
            }
            Op::BroadcastLast { a, n } => {
                acc(*a, &mut |s| {
                    for (x, row) in s.iter_mut().zip(g.chunks(*n)) {
                        *x += row.iter().sum::<f64>();
                    }
                });
            }
            Op::L2Normalize { a, eps } => {
                let xv = val(*a);
                let w = xv.last_dim();
                let y = node.value.data();
                acc(*a, &mut |s| {
                    for (r, (sr, xr)) in s.chunks_mut(w).zip(xv.data().chunks(w)).enumerate() {
                        let n = (xr.iter().map(|v| v * v).sum::<f64>() + eps).sqrt();
                        let yr = &y[r * w..(r + 1) * w];
                        let gr = &g[r * w..(r + 1) * w];
                        let yg: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for c in 0..w {
                            sr[c] += (gr[c] - yr[c] * yg) / n;
                        }
                    }
                });
            }
            Op::BceWithLogits { logits, labels } => {
                let lv = val(*logits).data();
                let k = g[0] / labels.len() as f64;
                acc(*logits, &mut |s| {
                    for ((x, &z), &t) in s.iter_mut().zip(lv).zip(labels) {
                        *x += k * (sigmoid(z) - t);
                    }
                });
            }
            Op::SmoothL1 {
                pred,
                target,
                mask,
                beta,
            } => {
                let denom: f64 = mask.iter().sum();
                if denom > 0.0 {
                    let pv = val(*pred);
                    let w = pv.last_dim();
                    acc(*pred, &mut |s| {
                        for (r, &m) in mask.iter().enumerate() {
                            if m == 0.0 {
                                continue;
                            }
                            for c in 0..w {
                                let d = pv.data()[r * w + c] - target[r * w + c];
                                s[r * w + c] += g[0] * m / denom * smooth_l1_grad(d, *beta);
                            }
                        }
                    });
                }
            }
        }
    }
}

/// Result of [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: HashMap<ParamId, Var>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for a parameter, if the graph used it.
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id).and_then(|&v| self.wrt(v))
    }
}
