//! Reverse-mode automatic differentiation over a tape of op records.
//!
//! A `Graph` is rebuilt per step (define-by-run). Node order is insertion
//! order, which is a topological order by construction: an op can only
//! consume ids that already exist. `backward` walks the tape in reverse and
//! accumulates vector-Jacobian products per input.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::kernels::{matmul_acc, sigmoid, softmax_rows, softplus, transpose_2d};
use crate::tensor::{numel, strides, Scalar, Tensor};

/// Handle to a node on a specific graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

const LN_EPS: f64 = 1e-5;
/// Large negative fill for masked attention scores. Finite so that forward
/// outputs stay finite; softmax max-subtraction maps it to exactly zero mass.
const MASK_FILL: f64 = -1e9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    Scalar,
    /// b's shape is a suffix of a's; payload is b's element count.
    Suffix(usize),
}

fn broadcast_kind(a: &[usize], b: &[usize]) -> Result<Broadcast> {
    if a == b {
        return Ok(Broadcast::Same);
    }
    if numel(b) == 1 {
        return Ok(Broadcast::Scalar);
    }
    if b.len() < a.len() && a[a.len() - b.len()..] == *b {
        return Ok(Broadcast::Suffix(numel(b)));
    }
    Err(Error::Shape(format!(
        "cannot broadcast {b:?} against {a:?} (same shape, scalar, or suffix required)"
    )))
}

enum Op<E> {
    Leaf,
    Matmul {
        a: NodeId,
        b: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
        bcast: Broadcast,
    },
    Mul {
        a: NodeId,
        b: NodeId,
        bcast: Broadcast,
    },
    Scale {
        a: NodeId,
        c: E,
    },
    Shift {
        a: NodeId,
    },
    Concat {
        inputs: Vec<NodeId>,
        axis: usize,
    },
    Slice {
        a: NodeId,
        axis: usize,
        start: usize,
    },
    Reshape {
        a: NodeId,
    },
    Transpose {
        a: NodeId,
        perm: Vec<usize>,
    },
    Tanh {
        a: NodeId,
    },
    Sigmoid {
        a: NodeId,
    },
    Softplus {
        a: NodeId,
    },
    Relu {
        a: NodeId,
    },
    LayerNorm {
        a: NodeId,
        aux: Vec<(E, E)>,
    },
    Softmax {
        a: NodeId,
    },
    Embedding {
        table: NodeId,
        indices: Vec<usize>,
    },
    CausalMask {
        a: NodeId,
    },
    CrossEntropy {
        logits: NodeId,
        targets: Vec<usize>,
        mask: Vec<E>,
        probs: Vec<E>,
        mask_total: E,
    },
    Sum {
        a: NodeId,
    },
    Mean {
        a: NodeId,
    },
}

struct Node<E> {
    value: Tensor<E>,
    op: Op<E>,
}

/// Op selector for the generic dispatch entry point, used by property tests
/// that sweep the whole op set.
#[derive(Clone, Debug)]
pub enum OpKind {
    Matmul,
    Add,
    Mul,
    Concat { axis: usize },
    Slice { axis: usize, start: usize, len: usize },
    Reshape { shape: Vec<usize> },
    Transpose { perm: Vec<usize> },
    Tanh,
    Sigmoid,
    Softplus,
    Relu,
    LayerNorm,
    Softmax,
    EmbeddingLookup { indices: Vec<usize> },
    CausalMaskedFill,
}

/// Reverse-mode tape plus the named parameter leaves living on it.
pub struct Graph<E: Scalar> {
    nodes: Vec<Node<E>>,
    params: BTreeMap<String, NodeId>,
}

impl<E: Scalar> Default for Graph<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Scalar> Graph<E> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<E> {
        &self.nodes[id.0].value
    }

    pub fn param_ids(&self) -> &BTreeMap<String, NodeId> {
        &self.params
    }

    fn push(&mut self, value: Tensor<E>, op: Op<E>) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    fn push_checked(&mut self, value: Tensor<E>, op: Op<E>, what: &str) -> Result<NodeId> {
        value.check_finite(what)?;
        Ok(self.push(value, op))
    }

    /// Constant leaf; receives no gradient.
    pub fn constant(&mut self, t: Tensor<E>) -> NodeId {
        self.push(t, Op::Leaf)
    }

    /// Named parameter leaf. Names must be unique per graph.
    pub fn param(&mut self, name: &str, t: Tensor<E>) -> Result<NodeId> {
        if self.params.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name {name:?}")));
        }
        let id = self.push(t, Op::Leaf);
        self.params.insert(name.to_string(), id);
        Ok(id)
    }

    // ---- forward ops ------------------------------------------------------

    /// a @ b. Accepts [.., m, k] x [.., k, n] with equal leading dims, or a
    /// rank-2 b broadcast over a's leading dims.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ash, bsh) = (self.value(a).shape().to_vec(), self.value(b).shape().to_vec());
        if ash.len() < 2 || bsh.len() < 2 {
            return Err(Error::Shape(format!("matmul needs rank >= 2, got {ash:?} x {bsh:?}")));
        }
        let (m, k) = (ash[ash.len() - 2], ash[ash.len() - 1]);
        let (kb, n) = (bsh[bsh.len() - 2], bsh[bsh.len() - 1]);
        let a_batch = numel(&ash[..ash.len() - 2]);
        let b_batch = numel(&bsh[..bsh.len() - 2]);
        let broadcast_b = bsh.len() == 2 && ash.len() > 2;
        if k != kb || (!broadcast_b && (a_batch != b_batch || ash[..ash.len() - 2] != bsh[..bsh.len() - 2])) {
            return Err(Error::Shape(format!("matmul shape mismatch: {ash:?} x {bsh:?}")));
        }
        let mut out_shape = ash[..ash.len() - 2].to_vec();
        out_shape.push(m);
        out_shape.push(n);
        let mut out = vec![E::ZERO; a_batch * m * n];
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        for i in 0..a_batch {
            let bslice = if broadcast_b { bd } else { &bd[i * k * n..(i + 1) * k * n] };
            matmul_acc(
                &ad[i * m * k..(i + 1) * m * k],
                bslice,
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let t = Tensor::new(out_shape, out)?;
        self.push_checked(t, Op::Matmul { a, b }, "matmul")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let bcast = broadcast_kind(self.value(a).shape(), self.value(b).shape())?;
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let data: Vec<E> = match bcast {
            Broadcast::Same => ad.iter().zip(bd).map(|(&x, &y)| x + y).collect(),
            Broadcast::Scalar => {
                let s = bd[0];
                ad.iter().map(|&x| x + s).collect()
            }
            Broadcast::Suffix(bn) => ad
                .iter()
                .enumerate()
                .map(|(i, &x)| x + bd[i % bn])
                .collect(),
        };
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        self.push_checked(t, Op::Add { a, b, bcast }, "add")
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let bcast = broadcast_kind(self.value(a).shape(), self.value(b).shape())?;
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let data: Vec<E> = match bcast {
            Broadcast::Same => ad.iter().zip(bd).map(|(&x, &y)| x * y).collect(),
            Broadcast::Scalar => {
                let s = bd[0];
                ad.iter().map(|&x| x * s).collect()
            }
            Broadcast::Suffix(bn) => ad
                .iter()
                .enumerate()
                .map(|(i, &x)| x * bd[i % bn])
                .collect(),
        };
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        self.push_checked(t, Op::Mul { a, b, bcast }, "mul")
    }

    /// a * c for a compile-time constant c.
    pub fn scale(&mut self, a: NodeId, c: E) -> Result<NodeId> {
        let t = self.value(a).map(|x| x * c);
        self.push_checked(t, Op::Scale { a, c }, "scale")
    }

    /// a + c elementwise for a constant c.
    pub fn shift(&mut self, a: NodeId, c: E) -> Result<NodeId> {
        let t = self.value(a).map(|x| x + c);
        self.push_checked(t, Op::Shift { a }, "shift")
    }

    pub fn concat(&mut self, inputs: &[NodeId], axis: usize) -> Result<NodeId> {
        if inputs.is_empty() {
            return Err(Error::Shape("concat of zero tensors".into()));
        }
        let first = self.value(inputs[0]).shape().to_vec();
        if axis >= first.len() {
            return Err(Error::Shape(format!("concat axis {axis} out of range for {first:?}")));
        }
        let mut axis_total = 0usize;
        for &id in inputs {
            let sh = self.value(id).shape();
            if sh.len() != first.len()
                || sh
                    .iter()
                    .enumerate()
                    .any(|(i, &d)| i != axis && d != first[i])
            {
                return Err(Error::Shape(format!(
                    "concat shape mismatch: {sh:?} vs {first:?} on axis {axis}"
                )));
            }
            axis_total += sh[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut data = vec![E::ZERO; numel(&out_shape)];
        let row_out = axis_total * inner;
        let mut offset = 0usize;
        for &id in inputs {
            let sh = self.value(id).shape();
            let rows = sh[axis] * inner;
            let src = self.value(id).data();
            for o in 0..outer {
                data[o * row_out + offset..o * row_out + offset + rows]
                    .copy_from_slice(&src[o * rows..(o + 1) * rows]);
            }
            offset += rows;
        }
        let t = Tensor::new(out_shape, data)?;
        self.push_checked(
            t,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            "concat",
        )
    }

    pub fn slice(&mut self, a: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        let sh = self.value(a).shape().to_vec();
        if axis >= sh.len() || start + len > sh[axis] {
            return Err(Error::Shape(format!(
                "slice [{start}, {start}+{len}) on axis {axis} out of range for {sh:?}"
            )));
        }
        let outer: usize = sh[..axis].iter().product();
        let inner: usize = sh[axis + 1..].iter().product();
        let mut out_shape = sh.clone();
        out_shape[axis] = len;
        let mut data = vec![E::ZERO; numel(&out_shape)];
        let src = self.value(a).data();
        let src_row = sh[axis] * inner;
        let dst_row = len * inner;
        for o in 0..outer {
            data[o * dst_row..(o + 1) * dst_row]
                .copy_from_slice(&src[o * src_row + start * inner..o * src_row + (start + len) * inner]);
        }
        let t = Tensor::new(out_shape, data)?;
        self.push_checked(t, Op::Slice { a, axis, start }, "slice")
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let t = self.value(a).clone().reshaped(shape)?;
        self.push_checked(t, Op::Reshape { a }, "reshape")
    }

    pub fn transpose(&mut self, a: NodeId, perm: &[usize]) -> Result<NodeId> {
        let sh = self.value(a).shape().to_vec();
        if perm.len() != sh.len() {
            return Err(Error::Shape(format!("transpose perm {perm:?} vs shape {sh:?}")));
        }
        let mut seen = vec![false; perm.len()];
        for &p in perm {
            if p >= perm.len() || seen[p] {
                return Err(Error::Shape(format!("invalid permutation {perm:?}")));
            }
            seen[p] = true;
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| sh[p]).collect();
        let data = permute_copy(self.value(a).data(), &sh, perm);
        let t = Tensor::new(out_shape, data)?;
        self.push_checked(
            t,
            Op::Transpose {
                a,
                perm: perm.to_vec(),
            },
            "transpose",
        )
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.value(a).map(|x| x.tanh());
        self.push_checked(t, Op::Tanh { a }, "tanh")
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.value(a).map(sigmoid);
        self.push_checked(t, Op::Sigmoid { a }, "sigmoid")
    }

    pub fn softplus(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.value(a).map(softplus);
        self.push_checked(t, Op::Softplus { a }, "softplus")
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.value(a).map(|x| x.maximum(E::ZERO));
        self.push_checked(t, Op::Relu { a }, "relu")
    }

    /// Normalize the last axis to zero mean / unit variance (no affine).
    pub fn layer_norm(&mut self, a: NodeId) -> Result<NodeId> {
        let sh = self.value(a).shape().to_vec();
        let width = *sh.last().ok_or_else(|| Error::Shape("layer_norm on rank-0".into()))?;
        let mut t = self.value(a).clone();
        let aux = crate::kernels::layer_norm_rows(t.data_mut(), width, LN_EPS);
        t.check_finite("layer_norm")?;
        Ok(self.push(t, Op::LayerNorm { a, aux }))
    }

    /// Softmax over the last axis, max-subtracted.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let sh = self.value(a).shape().to_vec();
        let width = *sh.last().ok_or_else(|| Error::Shape("softmax on rank-0".into()))?;
        let mut t = self.value(a).clone();
        softmax_rows(t.data_mut(), width);
        t.check_finite("softmax")?;
        Ok(self.push(t, Op::Softmax { a }))
    }

    /// Gather rows of a [v, d] table: output shape [indices.len(), d].
    pub fn embedding_lookup(&mut self, table: NodeId, indices: &[usize]) -> Result<NodeId> {
        let sh = self.value(table).shape().to_vec();
        if sh.len() != 2 {
            return Err(Error::Shape(format!("embedding table must be rank 2, got {sh:?}")));
        }
        let (v, d) = (sh[0], sh[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= v) {
            return Err(Error::Shape(format!("embedding index {bad} out of range ({v} rows)")));
        }
        let src = self.value(table).data();
        let mut data = vec![E::ZERO; indices.len() * d];
        for (r, &i) in indices.iter().enumerate() {
            data[r * d..(r + 1) * d].copy_from_slice(&src[i * d..(i + 1) * d]);
        }
        let t = Tensor::new(vec![indices.len(), d], data)?;
        self.push_checked(
            t,
            Op::Embedding {
                table,
                indices: indices.to_vec(),
            },
            "embedding_lookup",
        )
    }

    /// Fill strictly-upper-triangular entries of the trailing [t, t] axes
    /// with a large negative constant, so softmax assigns them zero mass.
    pub fn causal_masked_fill(&mut self, a: NodeId) -> Result<NodeId> {
        let sh = self.value(a).shape().to_vec();
        if sh.len() < 2 || sh[sh.len() - 1] != sh[sh.len() - 2] {
            return Err(Error::Shape(format!(
                "causal_masked_fill needs trailing square axes, got {sh:?}"
            )));
        }
        let t = sh[sh.len() - 1];
        let mut out = self.value(a).clone();
        let fill = E::from_f64(MASK_FILL);
        for block in out.data_mut().chunks_mut(t * t) {
            for i in 0..t {
                for v in block[i * t + i + 1..(i + 1) * t].iter_mut() {
                    *v = fill;
                }
            }
        }
        out.check_finite("causal_masked_fill")?;
        Ok(self.push(out, Op::CausalMask { a }))
    }

    /// Mean over masked positions of -log softmax(logits)[target].
    /// `logits` has shape [.., c]; `targets` and `mask` run over the leading
    /// positions in row-major order.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize], mask: &[bool]) -> Result<NodeId> {
        let sh = self.value(logits).shape().to_vec();
        let c = *sh.last().ok_or_else(|| Error::Shape("cross_entropy on rank-0".into()))?;
        if c < 2 {
            return Err(Error::Shape(format!("cross_entropy needs >= 2 classes, got {c}")));
        }
        let rows = numel(&sh) / c;
        if targets.len() != rows || mask.len() != rows {
            return Err(Error::Shape(format!(
                "cross_entropy: {rows} positions, {} targets, {} mask entries",
                targets.len(),
                mask.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::Shape(format!("target {bad} out of range ({c} classes)")));
        }
        let mask_total = mask.iter().filter(|&&m| m).count();
        if mask_total == 0 {
            return Err(Error::EmptyBatch("cross_entropy: all positions masked out".into()));
        }
        let mut probs = self.value(logits).data().to_vec();
        softmax_rows(&mut probs, c);
        let data = self.value(logits).data();
        let mut total = E::ZERO;
        for r in 0..rows {
            if !mask[r] {
                continue;
            }
            let row = &data[r * c..(r + 1) * c];
            let mut mx = row[0];
            for &v in row {
                mx = mx.maximum(v);
            }
            let mut lse = E::ZERO;
            for &v in row {
                lse += (v - mx).exp();
            }
            total += mx + lse.ln() - row[targets[r]];
        }
        let loss = total / E::from_f64(mask_total as f64);
        if !loss.is_finite() {
            return Err(Error::Numerics("non-finite cross_entropy loss".into()));
        }
        let mask_e: Vec<E> = mask.iter().map(|&m| if m { E::ONE } else { E::ZERO }).collect();
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                mask: mask_e,
                probs,
                mask_total: E::from_f64(mask_total as f64),
            },
        ))
    }

    /// Sum of all elements, as a scalar node.
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let mut s = E::ZERO;
        for &v in self.value(a).data() {
            s += v;
        }
        self.push_checked(Tensor::scalar(s), Op::Sum { a }, "sum")
    }

    /// Mean of all elements, as a scalar node.
    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let n = self.value(a).numel();
        let mut s = E::ZERO;
        for &v in self.value(a).data() {
            s += v;
        }
        self.push_checked(Tensor::scalar(s / E::from_f64(n as f64)), Op::Mean { a }, "mean")
    }

    /// Generic dispatch over the op set. Parametrized kinds carry their
    /// configuration in the `OpKind`.
    pub fn apply(&mut self, op: &OpKind, inputs: &[NodeId]) -> Result<NodeId> {
        let need = |n: usize| -> Result<()> {
            if inputs.len() != n {
                Err(Error::Shape(format!("{op:?} expects {n} inputs, got {}", inputs.len())))
            } else {
                Ok(())
            }
        };
        match op {
            OpKind::Matmul => {
                need(2)?;
                self.matmul(inputs[0], inputs[1])
            }
            OpKind::Add => {
                need(2)?;
                self.add(inputs[0], inputs[1])
            }
            OpKind::Mul => {
                need(2)?;
                self.mul(inputs[0], inputs[1])
            }
            OpKind::Concat { axis } => self.concat(inputs, *axis),
            OpKind::Slice { axis, start, len } => {
                need(1)?;
                self.slice(inputs[0], *axis, *start, *len)
            }
            OpKind::Reshape { shape } => {
                need(1)?;
                self.reshape(inputs[0], shape)
            }
            OpKind::Transpose { perm } => {
                need(1)?;
                self.transpose(inputs[0], perm)
            }
            OpKind::Tanh => {
                need(1)?;
                self.tanh(inputs[0])
            }
            OpKind::Sigmoid => {
                need(1)?;
                self.sigmoid(inputs[0])
            }
            OpKind::Softplus => {
                need(1)?;
                self.softplus(inputs[0])
            }
            OpKind::Relu => {
                need(1)?;
                self.relu(inputs[0])
            }
            OpKind::LayerNorm => {
                need(1)?;
                self.layer_norm(inputs[0])
            }
            OpKind::Softmax => {
                need(1)?;
                self.softmax(inputs[0])
            }
            OpKind::EmbeddingLookup { indices } => {
                need(1)?;
                self.embedding_lookup(inputs[0], indices)
            }
            OpKind::CausalMaskedFill => {
                need(1)?;
                self.causal_masked_fill(inputs[0])
            }
        }
    }

    // ---- backward ---------------------------------------------------------

    /// Gradient of a scalar loss with respect to every named parameter.
    /// Parameters the loss does not depend on get zero gradients.
    pub fn backward(&self, loss: NodeId) -> Result<BTreeMap<String, Tensor<E>>> {
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<E>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(E::ONE));

        for i in (0..=loss.0).rev() {
            let Some(gout) = grads[i].take() else { continue };
            self.vjp(i, &gout, &mut grads);
            grads[i] = Some(gout);
        }

        let mut out = BTreeMap::new();
        for (name, id) in &self.params {
            let g = match grads[id.0].take() {
                Some(g) => g,
                None => Tensor::zeros(self.nodes[id.0].value.shape()),
            };
            out.insert(name.clone(), g);
        }
        Ok(out)
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<E>>], id: NodeId, delta: Tensor<E>) {
        match &mut grads[id.0] {
            Some(g) => {
                for (a, b) in g.data_mut().iter_mut().zip(delta.data()) {
                    *a += *b;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn vjp(&self, i: usize, gout: &Tensor<E>, grads: &mut [Option<Tensor<E>>]) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (ash, bsh) = (self.value(*a).shape().to_vec(), self.value(*b).shape().to_vec());
                let (m, k) = (ash[ash.len() - 2], ash[ash.len() - 1]);
                let n = bsh[bsh.len() - 1];
                let batch = numel(&ash[..ash.len() - 2]);
                let broadcast_b = bsh.len() == 2 && ash.len() > 2;
                let (ad, bd, gd) = (self.value(*a).data(), self.value(*b).data(), gout.data());
                // da = g @ b^T
                let mut da = vec![E::ZERO; ad.len()];
                let mut bt = vec![E::ZERO; k * n];
                for s in 0..batch {
                    let bslice = if broadcast_b { bd } else { &bd[s * k * n..(s + 1) * k * n] };
                    transpose_2d(bslice, &mut bt, k, n);
                    matmul_acc(
                        &gd[s * m * n..(s + 1) * m * n],
                        &bt,
                        &mut da[s * m * k..(s + 1) * m * k],
                        m,
                        n,
                        k,
                    );
                }
                // db = a^T @ g, accumulated over the batch when b is broadcast
                let mut db = vec![E::ZERO; bd.len()];
                let mut at = vec![E::ZERO; m * k];
                for s in 0..batch {
                    transpose_2d(&ad[s * m * k..(s + 1) * m * k], &mut at, m, k);
                    let dst = if broadcast_b { &mut db[..] } else { &mut db[s * k * n..(s + 1) * k * n] };
                    matmul_acc(&at, &gd[s * m * n..(s + 1) * m * n], dst, k, m, n);
                }
                self.accumulate(grads, *a, Tensor::new(ash, da).expect("da shape"));
                self.accumulate(grads, *b, Tensor::new(bsh, db).expect("db shape"));
            }
            Op::Add { a, b, bcast } => {
                self.accumulate(grads, *a, gout.clone());
                self.accumulate(grads, *b, reduce_broadcast(gout, self.value(*b).shape(), *bcast));
            }
            Op::Mul { a, b, bcast } => {
                let (ad, bd, gd) = (self.value(*a).data(), self.value(*b).data(), gout.data());
                let da: Vec<E> = match bcast {
                    Broadcast::Same => gd.iter().zip(bd).map(|(&g, &y)| g * y).collect(),
                    Broadcast::Scalar => {
                        let s = bd[0];
                        gd.iter().map(|&g| g * s).collect()
                    }
                    Broadcast::Suffix(bn) => {
                        gd.iter().enumerate().map(|(j, &g)| g * bd[j % bn]).collect()
                    }
                };
                let ga: Vec<E> = gd.iter().zip(ad).map(|(&g, &x)| g * x).collect();
                let ga = Tensor::new(self.value(*a).shape().to_vec(), ga).expect("mul grad");
                self.accumulate(grads, *a, Tensor::new(self.value(*a).shape().to_vec(), da).expect("mul grad"));
                self.accumulate(grads, *b, reduce_broadcast(&ga, self.value(*b).shape(), *bcast));
            }
            Op::Scale { a, c } => {
                self.accumulate(grads, *a, gout.map(|g| g * *c));
            }
            Op::Shift { a } => {
                self.accumulate(grads, *a, gout.clone());
            }
            Op::Concat { inputs, axis } => {
                let out_shape = self.nodes[i].value.shape().to_vec();
                let outer: usize = out_shape[..*axis].iter().product();
                let inner: usize = out_shape[*axis + 1..].iter().product();
                let row_out = out_shape[*axis] * inner;
                let mut offset = 0usize;
                for &id in inputs {
                    let sh = self.value(id).shape().to_vec();
                    let rows = sh[*axis] * inner;
                    let mut d = vec![E::ZERO; numel(&sh)];
                    for o in 0..outer {
                        d[o * rows..(o + 1) * rows].copy_from_slice(
                            &gout.data()[o * row_out + offset..o * row_out + offset + rows],
                        );
                    }
                    offset += rows;
                    self.accumulate(grads, id, Tensor::new(sh, d).expect("concat grad"));
                }
            }
            Op::Slice { a, axis, start } => {
                let in_shape = self.value(*a).shape().to_vec();
                let out_shape = self.nodes[i].value.shape();
                let outer: usize = in_shape[..*axis].iter().product();
                let inner: usize = in_shape[*axis + 1..].iter().product();
                let src_row = in_shape[*axis] * inner;
                let dst_row = out_shape[*axis] * inner;
                let mut d = vec![E::ZERO; numel(&in_shape)];
                for o in 0..outer {
                    d[o * src_row + start * inner..o * src_row + start * inner + dst_row]
                        .copy_from_slice(&gout.data()[o * dst_row..(o + 1) * dst_row]);
                }
                self.accumulate(grads, *a, Tensor::new(in_shape, d).expect("slice grad"));
            }
            Op::Reshape { a } => {
                let t = gout
                    .clone()
                    .reshaped(self.value(*a).shape())
                    .expect("reshape grad");
                self.accumulate(grads, *a, t);
            }
            Op::Transpose { a, perm } => {
                let mut inv = vec![0usize; perm.len()];
                for (j, &p) in perm.iter().enumerate() {
                    inv[p] = j;
                }
                let data = permute_copy(gout.data(), self.nodes[i].value.shape(), &inv);
                self.accumulate(
                    grads,
                    *a,
                    Tensor::new(self.value(*a).shape().to_vec(), data).expect("transpose grad"),
                );
            }
            Op::Tanh { a } => {
                let y = self.nodes[i].value.data();
                let d: Vec<E> = gout
                    .data()
                    .iter()
                    .zip(y)
                    .map(|(&g, &y)| g * (E::ONE - y * y))
                    .collect();
                self.accumulate(grads, *a, Tensor::new(self.value(*a).shape().to_vec(), d).expect("tanh grad"));
            }
            Op::Sigmoid { a } => {
                let y = self.nodes[i].value.data();
                let d: Vec<E> = gout
                    .data()
                    .iter()
                    .zip(y)
                    .map(|(&g, &y)| g * y * (E::ONE - y))
                    .collect();
                self.accumulate(grads, *a, Tensor::new(self.value(*a).shape().to_vec(), d).expect("sigmoid grad"));
            }
            Op::Softplus { a } => {
                let x = self.value(*a).data();
                let d: Vec<E> = gout
                    .data()
                    .iter()
                    .zip(x)
                    .map(|(&g, &x)| g * sigmoid(x))
                    .collect();
                self.accumulate(grads, *a, Tensor::new(self.value(*a).shape().to_vec(), d).expect("softplus grad"));
            }
            Op::Relu { a } => {
                let x = self.value(*a).data();
                let d: Vec<E> = gout
                    .data()
                    .iter()
                    .zip(x)
                    .map(|(&g, &x)| if x > E::ZERO { g } else { E::ZERO })
                    .collect();
                self.accumulate(grads, *a, Tensor::new(self.value(*a).shape().to_vec(), d).expect("relu grad"));
            }
            Op::LayerNorm { a, aux } => {
                let width = *self.nodes[i].value.shape().last().unwrap();
                let y = self.nodes[i].value.data();
                let g = gout.data();
                let mut d = vec![E::ZERO; g.len()];
                let inv_w = E::from_f64(1.0 / width as f64);
                for (r, &(_mean, rstd)) in aux.iter().enumerate() {
                    let ys = &y[r * width..(r + 1) * width];
                    let gs = &g[r * width..(r + 1) * width];
                    let mut gmean = E::ZERO;
                    let mut gymean = E::ZERO;
                    for (&gv, &yv) in gs.iter().zip(ys) {
                        gmean += gv;
                        gymean += gv * yv;
                    }
                    gmean = gmean * inv_w;
                    gymean = gymean * inv_w;
                    for ((dv, &gv), &yv) in d[r * width..(r + 1) * width].iter_mut().zip(gs).zip(ys) {
                        *dv = rstd * (gv - gmean - yv * gymean);
                    }
                }
                self.accumulate(grads, *a, Tensor::new(self.value(*a).shape().to_vec(), d).expect("ln grad"));
            }
            Op::Softmax { a } => {
                let width = *self.nodes[i].value.shape().last().unwrap();
                let y = self.nodes[i].value.data();
                let g = gout.data();
                let mut d = vec![E::ZERO; g.len()];
                for r in 0..g.len() / width {
                    let ys = &y[r * width..(r + 1) * width];
                    let gs = &g[r * width..(r + 1) * width];
                    let mut dot = E::ZERO;
                    for (&gv, &yv) in gs.iter().zip(ys) {
                        dot += gv * yv;
                    }
                    for ((dv, &gv), &yv) in d[r * width..(r + 1) * width].iter_mut().zip(gs).zip(ys) {
                        *dv = yv * (gv - dot);
                    }
                }
                self.accumulate(grads, *a, Tensor::new(self.value(*a).shape().to_vec(), d).expect("softmax grad"));
            }
            Op::Embedding { table, indices } => {
                let sh = self.value(*table).shape().to_vec();
                let d_model = sh[1];
                let mut d = vec![E::ZERO; numel(&sh)];
                for (r, &idx) in indices.iter().enumerate() {
                    let g = &gout.data()[r * d_model..(r + 1) * d_model];
                    for (dst, &gv) in d[idx * d_model..(idx + 1) * d_model].iter_mut().zip(g) {
                        *dst += gv;
                    }
                }
                self.accumulate(grads, *table, Tensor::new(sh, d).expect("embedding grad"));
            }
            Op::CausalMask { a } => {
                let sh = self.nodes[i].value.shape().to_vec();
                let t = sh[sh.len() - 1];
                let mut d = gout.data().to_vec();
                for block in d.chunks_mut(t * t) {
                    for r in 0..t {
                        for v in block[r * t + r + 1..(r + 1) * t].iter_mut() {
                            *v = E::ZERO;
                        }
                    }
                }
                self.accumulate(grads, *a, Tensor::new(sh, d).expect("mask grad"));
            }
            Op::CrossEntropy {
                logits,
                targets,
                mask,
                probs,
                mask_total,
            } => {
                let c = *self.value(*logits).shape().last().unwrap();
                let gscalar = gout.data()[0];
                let mut d = vec![E::ZERO; probs.len()];
                for r in 0..targets.len() {
                    if mask[r] == E::ZERO {
                        continue;
                    }
                    let w = gscalar / *mask_total;
                    let ps = &probs[r * c..(r + 1) * c];
                    let ds = &mut d[r * c..(r + 1) * c];
                    for (dv, &p) in ds.iter_mut().zip(ps) {
                        *dv = w * p;
                    }
                    ds[targets[r]] = ds[targets[r]] - w;
                }
                self.accumulate(
                    grads,
                    *logits,
                    Tensor::new(self.value(*logits).shape().to_vec(), d).expect("ce grad"),
                );
            }
            Op::Sum { a } => {
                let g = gout.data()[0];
                self.accumulate(grads, *a, Tensor::full(self.value(*a).shape(), g));
            }
            Op::Mean { a } => {
                let n = self.value(*a).numel();
                let g = gout.data()[0] / E::from_f64(n as f64);
                self.accumulate(grads, *a, Tensor::full(self.value(*a).shape(), g));
            }
        }
    }
}

fn reduce_broadcast<E: Scalar>(g: &Tensor<E>, b_shape: &[usize], bcast: Broadcast) -> Tensor<E> {
    match bcast {
        Broadcast::Same => g.clone(),
        Broadcast::Scalar => {
            let mut s = E::ZERO;
            for &v in g.data() {
                s += v;
            }
            Tensor::new(b_shape.to_vec(), vec![s]).expect("scalar grad")
        }
        Broadcast::Suffix(bn) => {
            let mut d = vec![E::ZERO; bn];
            for (j, &v) in g.data().iter().enumerate() {
                d[j % bn] += v;
            }
            Tensor::new(b_shape.to_vec(), d).expect("suffix grad")
        }
    }
}

fn permute_copy<E: Scalar>(src: &[E], shape: &[usize], perm: &[usize]) -> Vec<E> {
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let in_strides = strides(shape);
    let n = src.len();
    let mut out = vec![src[0]; n];
    // Walk output positions in order; map each back to its source index.
    let rank = shape.len();
    let mut idx = vec![0usize; rank];
    for slot in out.iter_mut() {
        let mut src_off = 0usize;
        for (d, &i) in idx.iter().enumerate() {
            src_off += i * in_strides[perm[d]];
        }
        *slot = src[src_off];
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    out
}
