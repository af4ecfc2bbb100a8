//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation executed through it, in execution
//! order, so the tape is topologically sorted by construction. Calling
//! [`Graph::backward`] on a scalar replays the tape in reverse.
//!
//! Parameters are borrowed from a [`ParamStore`] rather than copied; their
//! gradients come back as [`ParamGrads`] and are accumulated into the store
//! by the caller once the graph is dropped.

use std::collections::HashMap;
use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::params::{ParamGrads, ParamId, ParamStore};
use crate::tensor::{gemm, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    BatchMatMul,
    Transpose,
    Reshape,
    Add,
    AddBias,
    Mul,
    Scale,
    Sum,
    Gelu,
    LayerNorm,
    Softmax,
    MaskedFill,
    Embedding,
    SplitHeads,
    MergeHeads,
    CrossEntropy,
}

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
        trans_b: bool,
    },
    BatchMatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        trans_b: bool,
    },
    Transpose {
        a: Var,
    },
    Reshape {
        a: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    AddBias {
        a: Var,
        bias: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        a: Var,
        factor: f64,
    },
    Sum {
        a: Var,
    },
    Gelu {
        a: Var,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Softmax {
        a: Var,
    },
    MaskedFill {
        a: Var,
        mask: Rc<[bool]>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    SplitHeads {
        a: Var,
        batch: usize,
        seq: usize,
        heads: usize,
    },
    MergeHeads {
        a: Var,
        batch: usize,
        seq: usize,
        heads: usize,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<f64>,
        count: usize,
    },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul { .. } => OpKind::MatMul,
            Op::BatchMatMul { .. } => OpKind::BatchMatMul,
            Op::Transpose { .. } => OpKind::Transpose,
            Op::Reshape { .. } => OpKind::Reshape,
            Op::Add { .. } => OpKind::Add,
            Op::AddBias { .. } => OpKind::AddBias,
            Op::Mul { .. } => OpKind::Mul,
            Op::Scale { .. } => OpKind::Scale,
            Op::Sum { .. } => OpKind::Sum,
            Op::Gelu { .. } => OpKind::Gelu,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::Softmax { .. } => OpKind::Softmax,
            Op::MaskedFill { .. } => OpKind::MaskedFill,
            Op::Embedding { .. } => OpKind::Embedding,
            Op::SplitHeads { .. } => OpKind::SplitHeads,
            Op::MergeHeads { .. } => OpKind::MergeHeads,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
        }
    }
}

struct Node {
    value: Value,
    op: Op,
    requires_grad: bool,
}

pub struct Graph<'p> {
    store: Option<&'p ParamStore>,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
    leaf_grads: HashMap<usize, Vec<f64>>,
    grad_enabled: bool,
}

impl<'p> Graph<'p> {
    /// A graph that can read (and differentiate) parameters of `store`.
    pub fn new(store: &'p ParamStore) -> Self {
        Self {
            store: Some(store),
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            leaf_grads: HashMap::new(),
            grad_enabled: true,
        }
    }

    /// Like [`Graph::new`] but nothing requires a gradient.
    pub fn inference(store: &'p ParamStore) -> Self {
        Self {
            grad_enabled: false,
            ..Self::new(store)
        }
    }

    /// A graph with no parameter store, for free-standing leaves.
    pub fn standalone() -> Self {
        Self {
            store: None,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            leaf_grads: HashMap::new(),
            grad_enabled: true,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn op_count(&self, kind: OpKind) -> usize {
        self.nodes.iter().filter(|n| n.op.kind() == kind).count()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.store.expect("param node without store").get(*id),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.value(v).data()
    }

    fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a leaf; it is differentiated iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let requires_grad = self.grad_enabled && t.requires_grad();
        self.nodes.push(Node {
            value: Value::Owned(t),
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_requires_grad(false))
    }

    /// The graph node for a stored parameter. Repeated calls with the same
    /// id return the same node, so tied weights accumulate one gradient.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let store = self.store.expect("Graph::param needs a ParamStore");
        let requires_grad = self.grad_enabled && store.get(id).requires_grad();
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Leaf,
            requires_grad,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    /// Accumulated gradient of a non-parameter leaf.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.leaf_grads.get(&v.0).map(Vec::as_slice)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(format!("{:?}", op.kind())));
        }
        let requires_grad = self.grad_enabled && inputs.iter().any(|&v| self.needs_grad(v));
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    // ---- linear algebra -------------------------------------------------

    /// Plain 2-D matrix product.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a).len() != 2 || self.shape(b).len() != 2 {
            return Err(Error::Shape(format!(
                "matmul expects 2-D operands, got {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        self.matmul_rows(a, b, false)
    }

    /// `x[..., k] · w[k, n]`, or `x · wᵀ` for `w[n, k]` when `trans_b`.
    /// Leading dimensions of `x` are flattened into rows.
    pub fn matmul_rows(&mut self, x: Var, w: Var, trans_b: bool) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.is_empty() || ws.len() != 2 {
            return Err(Error::Shape(format!("matmul of {xs:?} by {ws:?}")));
        }
        let k = *xs.last().unwrap();
        let (wk, n) = if trans_b { (ws[1], ws[0]) } else { (ws[0], ws[1]) };
        if k != wk {
            return Err(Error::Shape(format!(
                "inner dimensions differ: {xs:?} x {ws:?}{}",
                if trans_b { "ᵀ" } else { "" }
            )));
        }
        let m = xs.iter().product::<usize>() / k;
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.data(x), false, self.data(w), trans_b, &mut out, 0.0);
        let mut shape = xs;
        *shape.last_mut().unwrap() = n;
        let t = Tensor::new(shape, out)?;
        self.push(
            t,
            Op::MatMul {
                a: x,
                b: w,
                m,
                k,
                n,
                trans_b,
            },
            &[x, w],
        )
    }

    /// Batched product `a[B, m, k] · b[B, k, n]` (or `b[B, n, k]ᵀ`).
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let as_ = self.shape(a).to_vec();
        let bs = self.shape(b).to_vec();
        if as_.len() != 3 || bs.len() != 3 || as_[0] != bs[0] {
            return Err(Error::Shape(format!("bmm of {as_:?} by {bs:?}")));
        }
        let (batch, m, k) = (as_[0], as_[1], as_[2]);
        let (bk, n) = if trans_b { (bs[2], bs[1]) } else { (bs[1], bs[2]) };
        if k != bk {
            return Err(Error::Shape(format!("bmm inner dims {as_:?} x {bs:?}")));
        }
        let mut out = vec![0.0; batch * m * n];
        {
            let ad = self.data(a);
            let bd = self.data(b);
            for i in 0..batch {
                gemm(
                    m,
                    k,
                    n,
                    &ad[i * m * k..(i + 1) * m * k],
                    false,
                    &bd[i * k * n..(i + 1) * k * n],
                    trans_b,
                    &mut out[i * m * n..(i + 1) * m * n],
                    0.0,
                );
            }
        }
        let t = Tensor::new(vec![batch, m, n], out)?;
        self.push(
            t,
            Op::BatchMatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                trans_b,
            },
            &[a, b],
        )
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 {
            return Err(Error::Shape(format!("transpose expects 2-D, got {s:?}")));
        }
        let out = transpose_data(self.data(a), s[0], s[1]);
        let t = Tensor::new(vec![s[1], s[0]], out)?;
        self.push(t, Op::Transpose { a }, &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = Tensor::new(shape.to_vec(), self.data(a).to_vec())?;
        self.push(t, Op::Reshape { a }, &[a])
    }

    // ---- elementwise ----------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), out)?;
        self.push(t, Op::Add { a, b }, &[a, b])
    }

    /// Adds a `[n]` vector to every row of `a[..., n]`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let n = *self.shape(a).last().unwrap_or(&0);
        if self.shape(bias) != [n] {
            return Err(Error::Shape(format!(
                "bias {:?} for input {:?}",
                self.shape(bias),
                self.shape(a)
            )));
        }
        let bd = self.data(bias);
        let out = self
            .data(a)
            .chunks_exact(n)
            .flat_map(|row| row.iter().zip(bd).map(|(x, b)| x + b))
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), out)?;
        self.push(t, Op::AddBias { a, bias }, &[a, bias])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), out)?;
        self.push(t, Op::Mul { a, b }, &[a, b])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let out = self.data(a).iter().map(|x| x * factor).collect();
        let t = Tensor::new(self.shape(a).to_vec(), out)?;
        self.push(t, Op::Scale { a, factor }, &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.data(a).iter().sum();
        self.push(Tensor::scalar(s), Op::Sum { a }, &[a])
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let out = self
            .data(a)
            .iter()
            .map(|&x| 0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2)))
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), out)?;
        self.push(t, Op::Gelu { a }, &[a])
    }

    // ---- normalization / attention helpers ------------------------------

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let d = match xs.last() {
            Some(&d) if d > 0 => d,
            _ => return Err(Error::Shape(format!("layer_norm on shape {xs:?}"))),
        };
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(Error::Shape(format!(
                "layer_norm affine {:?}/{:?} for last dim {d}",
                self.shape(gain),
                self.shape(bias)
            )));
        }
        if eps.is_nan() || eps <= 0.0 {
            return Err(Error::Domain(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let xd = self.data(x);
        let (g, b) = (self.data(gain), self.data(bias));
        let rows = xd.len() / d;
        let mut xhat = vec![0.0; xd.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; xd.len()];
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let t = Tensor::new(xs, out)?;
        self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            &[x, gain, bias],
        )
    }

    /// Softmax over the last axis, max-subtracted.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let d = *s.last().ok_or_else(|| Error::Shape("softmax of scalar".into()))?;
        let mut out = self.data(a).to_vec();
        for row in out.chunks_exact_mut(d) {
            softmax_in_place(row);
        }
        let t = Tensor::new(s, out)?;
        self.push(t, Op::Softmax { a }, &[a])
    }

    /// Replaces every element whose mask entry is `true` with `value`.
    pub fn masked_fill(&mut self, a: Var, mask: Rc<[bool]>, value: f64) -> Result<Var> {
        if mask.len() != self.value(a).numel() {
            return Err(Error::Shape(format!(
                "mask of length {} for shape {:?}",
                mask.len(),
                self.shape(a)
            )));
        }
        let out = self
            .data(a)
            .iter()
            .zip(mask.iter())
            .map(|(&x, &m)| if m { value } else { x })
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), out)?;
        self.push(t, Op::MaskedFill { a, mask }, &[a])
    }

    /// Gathers rows of `table[V, d]`; the result has shape `index_shape + [d]`.
    pub fn embedding(&mut self, table: Var, ids: &[u32], index_shape: &[usize]) -> Result<Var> {
        let ts = self.shape(table).to_vec();
        if ts.len() != 2 {
            return Err(Error::Shape(format!("embedding table {ts:?}")));
        }
        if index_shape.iter().product::<usize>() != ids.len() {
            return Err(Error::Shape(format!(
                "{} ids for index shape {index_shape:?}",
                ids.len()
            )));
        }
        let (v, d) = (ts[0], ts[1]);
        let mut idx = Vec::with_capacity(ids.len());
        for &id in ids {
            if id as usize >= v {
                return Err(Error::Vocabulary { id, vocab_size: v });
            }
            idx.push(id as usize);
        }
        let td = self.data(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in &idx {
            out.extend_from_slice(&td[i * d..(i + 1) * d]);
        }
        let mut shape = index_shape.to_vec();
        shape.push(d);
        let t = Tensor::new(shape, out)?;
        self.push(t, Op::Embedding { table, ids: idx }, &[table])
    }

    /// `[b, s, h·dh] -> [b·h, s, dh]`.
    pub fn split_heads(&mut self, a: Var, heads: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 3 || heads == 0 || s[2] % heads != 0 {
            return Err(Error::Shape(format!("split_heads({heads}) of {s:?}")));
        }
        let (batch, seq, d) = (s[0], s[1], s[2]);
        let dh = d / heads;
        let src = self.data(a);
        let mut out = vec![0.0; src.len()];
        for bi in 0..batch {
            for si in 0..seq {
                for hi in 0..heads {
                    let from = (bi * seq + si) * d + hi * dh;
                    let to = ((bi * heads + hi) * seq + si) * dh;
                    out[to..to + dh].copy_from_slice(&src[from..from + dh]);
                }
            }
        }
        let t = Tensor::new(vec![batch * heads, seq, dh], out)?;
        self.push(
            t,
            Op::SplitHeads {
                a,
                batch,
                seq,
                heads,
            },
            &[a],
        )
    }

    /// `[b·h, s, dh] -> [b, s, h·dh]`.
    pub fn merge_heads(&mut self, a: Var, heads: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 3 || heads == 0 || s[0] % heads != 0 {
            return Err(Error::Shape(format!("merge_heads({heads}) of {s:?}")));
        }
        let (batch, seq, dh) = (s[0] / heads, s[1], s[2]);
        let d = dh * heads;
        let src = self.data(a);
        let mut out = vec![0.0; src.len()];
        for bi in 0..batch {
            for si in 0..seq {
                for hi in 0..heads {
                    let to = (bi * seq + si) * d + hi * dh;
                    let from = ((bi * heads + hi) * seq + si) * dh;
                    out[to..to + dh].copy_from_slice(&src[from..from + dh]);
                }
            }
        }
        let t = Tensor::new(vec![batch, seq, d], out)?;
        self.push(
            t,
            Op::MergeHeads {
                a,
                batch,
                seq,
                heads,
            },
            &[a],
        )
    }

    // ---- loss -----------------------------------------------------------

    /// Mean negative log-softmax of `targets` over rows of `logits[.., v]`,
    /// skipping positions equal to `ignore_id`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[u32], ignore_id: u32) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        let v = *s.last().ok_or_else(|| Error::Shape("logits must have a class axis".into()))?;
        let rows = self.value(logits).numel() / v;
        if targets.len() != rows {
            return Err(Error::Shape(format!(
                "{} targets for {rows} logit rows",
                targets.len()
            )));
        }
        let mut probs = self.data(logits).to_vec();
        let mut tgt = Vec::with_capacity(rows);
        let mut total = 0.0;
        let mut count = 0;
        for (r, &t) in targets.iter().enumerate() {
            if t == ignore_id {
                tgt.push(None);
                continue;
            }
            if t as usize >= v {
                return Err(Error::Vocabulary { id: t, vocab_size: v });
            }
            let row = &mut probs[r * v..(r + 1) * v];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            total += lse - row[t as usize];
            softmax_in_place(row);
            tgt.push(Some(t as usize));
            count += 1;
        }
        if count == 0 {
            return Err(Error::EmptyLoss);
        }
        let loss = Tensor::scalar(total / count as f64);
        self.push(
            loss,
            Op::CrossEntropy {
                logits,
                targets: tgt,
                probs,
                count,
            },
            &[logits],
        )
    }

    fn same_shape(&self, what: &str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    // ---- reverse pass ---------------------------------------------------

    /// Propagates d(loss)/d(node) to every node that requires a gradient.
    /// Gradients of non-parameter leaves accumulate inside the graph across
    /// calls; parameter gradients are returned.
    pub fn backward(&mut self, loss: Var) -> Result<ParamGrads> {
        let root = self.value(loss);
        if root.numel() != 1 {
            return Err(Error::NonScalarRoot(root.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut param_grads = Vec::new();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                match self.nodes[i].value {
                    Value::Param(id) => param_grads.push((id, g)),
                    Value::Owned(_) => match self.leaf_grads.get_mut(&i) {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, x)| *a += x),
                        None => {
                            self.leaf_grads.insert(i, g);
                        }
                    },
                }
                continue;
            }
            self.backprop(i, &g, &mut grads);
        }
        param_grads.sort_by_key(|(id, _)| *id);
        Ok(ParamGrads(param_grads))
    }

    fn backprop(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul {
                a,
                b,
                m,
                k,
                n,
                trans_b,
            } => {
                if self.needs_grad(a) {
                    let da = self.grad_buf(grads, a);
                    gemm(m, n, k, g, false, self.data(b), !trans_b, da, 1.0);
                }
                if self.needs_grad(b) {
                    let ad = self.data(a);
                    let db = self.grad_buf(grads, b);
                    if trans_b {
                        gemm(n, m, k, g, true, ad, false, db, 1.0);
                    } else {
                        gemm(k, m, n, ad, true, g, false, db, 1.0);
                    }
                }
            }
            &Op::BatchMatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                trans_b,
            } => {
                let (sa, sb, sc) = (m * k, k * n, m * n);
                if self.needs_grad(a) {
                    let bd = self.data(b);
                    let da = self.grad_buf(grads, a);
                    for t in 0..batch {
                        gemm(
                            m,
                            n,
                            k,
                            &g[t * sc..(t + 1) * sc],
                            false,
                            &bd[t * sb..(t + 1) * sb],
                            !trans_b,
                            &mut da[t * sa..(t + 1) * sa],
                            1.0,
                        );
                    }
                }
                if self.needs_grad(b) {
                    let ad = self.data(a);
                    let db = self.grad_buf(grads, b);
                    for t in 0..batch {
                        let (gs, as_, ds) = (
                            &g[t * sc..(t + 1) * sc],
                            &ad[t * sa..(t + 1) * sa],
                            &mut db[t * sb..(t + 1) * sb],
                        );
                        if trans_b {
                            gemm(n, m, k, gs, true, as_, false, ds, 1.0);
                        } else {
                            gemm(k, m, n, as_, true, gs, false, ds, 1.0);
                        }
                    }
                }
            }
            &Op::Transpose { a } => {
                let s = self.shape(a);
                let gt = transpose_data(g, s[1], s[0]);
                add_into(self.grad_buf(grads, a), &gt);
            }
            &Op::Reshape { a } => {
                add_into(self.grad_buf(grads, a), g);
            }
            &Op::Sum { a } => {
                let buf = self.grad_buf(grads, a);
                buf.iter_mut().for_each(|x| *x += g[0]);
            }
            &Op::Add { a, b } => {
                if self.needs_grad(a) {
                    add_into(self.grad_buf(grads, a), g);
                }
                if self.needs_grad(b) {
                    add_into(self.grad_buf(grads, b), g);
                }
            }
            &Op::AddBias { a, bias } => {
                if self.needs_grad(a) {
                    add_into(self.grad_buf(grads, a), g);
                }
                if self.needs_grad(bias) {
                    let db = self.grad_buf(grads, bias);
                    let n = db.len();
                    for row in g.chunks_exact(n) {
                        add_into(db, row);
                    }
                }
            }
            &Op::Mul { a, b } => {
                if self.needs_grad(a) {
                    let bd = self.data(b);
                    let da = self.grad_buf(grads, a);
                    for ((d, gi), bi) in da.iter_mut().zip(g).zip(bd) {
                        *d += gi * bi;
                    }
                }
                if self.needs_grad(b) {
                    let ad = self.data(a);
                    let db = self.grad_buf(grads, b);
                    for ((d, gi), ai) in db.iter_mut().zip(g).zip(ad) {
                        *d += gi * ai;
                    }
                }
            }
            &Op::Scale { a, factor } => {
                let da = self.grad_buf(grads, a);
                for (d, gi) in da.iter_mut().zip(g) {
                    *d += gi * factor;
                }
            }
            &Op::Gelu { a } => {
                let ad = self.data(a);
                let da = self.grad_buf(grads, a);
                let inv_sqrt_2pi = 1.0 / (2.0 * PI).sqrt();
                for ((d, gi), &x) in da.iter_mut().zip(g).zip(ad) {
                    let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
                    let pdf = inv_sqrt_2pi * (-0.5 * x * x).exp();
                    *d += gi * (cdf + x * pdf);
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let (x, gain, bias) = (*x, *gain, *bias);
                let gd = self.data(gain);
                let d = gd.len();
                if self.needs_grad(x) {
                    let gd = gd.to_vec();
                    let dx = self.grad_buf(grads, x);
                    let mut dxhat = vec![0.0; d];
                    for (r, &rs) in rstd.iter().enumerate() {
                        let gr = &g[r * d..(r + 1) * d];
                        let hr = &xhat[r * d..(r + 1) * d];
                        let mut mean_d = 0.0;
                        let mut mean_dh = 0.0;
                        for j in 0..d {
                            dxhat[j] = gr[j] * gd[j];
                            mean_d += dxhat[j];
                            mean_dh += dxhat[j] * hr[j];
                        }
                        mean_d /= d as f64;
                        mean_dh /= d as f64;
                        let out = &mut dx[r * d..(r + 1) * d];
                        for j in 0..d {
                            out[j] += rs * (dxhat[j] - mean_d - hr[j] * mean_dh);
                        }
                    }
                }
                if self.needs_grad(gain) {
                    let dg = self.grad_buf(grads, gain);
                    for (gr, hr) in g.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                        for j in 0..d {
                            dg[j] += gr[j] * hr[j];
                        }
                    }
                }
                if self.needs_grad(bias) {
                    let db = self.grad_buf(grads, bias);
                    for gr in g.chunks_exact(d) {
                        add_into(db, gr);
                    }
                }
            }
            &Op::Softmax { a } => {
                let y = self.data(Var(i));
                let d = *self.shape(a).last().unwrap();
                let da = self.grad_buf(grads, a);
                for ((dr, gr), yr) in da
                    .chunks_exact_mut(d)
                    .zip(g.chunks_exact(d))
                    .zip(y.chunks_exact(d))
                {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for j in 0..d {
                        dr[j] += yr[j] * (gr[j] - dot);
                    }
                }
            }
            Op::MaskedFill { a, mask } => {
                let da = self.grad_buf(grads, *a);
                for ((d, gi), &m) in da.iter_mut().zip(g).zip(mask.iter()) {
                    if !m {
                        *d += gi;
                    }
                }
            }
            Op::Embedding { table, ids } => {
                let d = self.shape(*table)[1];
                let dt = self.grad_buf(grads, *table);
                for (r, &id) in ids.iter().enumerate() {
                    add_into(&mut dt[id * d..(id + 1) * d], &g[r * d..(r + 1) * d]);
                }
            }
            &Op::SplitHeads {
                a,
                batch,
                seq,
                heads,
            } => {
                let d = self.shape(a)[2];
                let dh = d / heads;
                let da = self.grad_buf(grads, a);
                for bi in 0..batch {
                    for si in 0..seq {
                        for hi in 0..heads {
                            let src = (bi * seq + si) * d + hi * dh;
                            let out = ((bi * heads + hi) * seq + si) * dh;
                            add_into(&mut da[src..src + dh], &g[out..out + dh]);
                        }
                    }
                }
            }
            &Op::MergeHeads {
                a,
                batch,
                seq,
                heads,
            } => {
                let dh = self.shape(a)[2];
                let d = dh * heads;
                let da = self.grad_buf(grads, a);
                for bi in 0..batch {
                    for si in 0..seq {
                        for hi in 0..heads {
                            let out = (bi * seq + si) * d + hi * dh;
                            let src = ((bi * heads + hi) * seq + si) * dh;
                            add_into(&mut da[src..src + dh], &g[out..out + dh]);
                        }
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                count,
            } => {
                let v = *self.shape(*logits).last().unwrap();
                let scale = g[0] / *count as f64;
                let dl = self.grad_buf(grads, *logits);
                for (r, t) in targets.iter().enumerate() {
                    let Some(t) = *t else { continue };
                    let row = &mut dl[r * v..(r + 1) * v];
                    let pr = &probs[r * v..(r + 1) * v];
                    for j in 0..v {
                        row[j] += scale * pr[j];
                    }
                    row[t] -= scale;
                }
            }
        }
    }

    fn grad_buf<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> &'g mut Vec<f64> {
        let n = self.value(v).numel();
        grads[v.0].get_or_insert_with(|| vec![0.0; n])
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

fn transpose_data(src: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        z += *x;
    }
    row.iter_mut().for_each(|x| *x /= z);
}
