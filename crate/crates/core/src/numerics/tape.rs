//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records every operation in execution order, so a single
//! reverse sweep visits nodes in a valid topological order. Rank-2 views
//! (`[rows, cols]`, leading dimensions flattened) are used throughout; the
//! only broadcasting is a row vector over the leading dimension.

use crate::error::{Error, Result};
use crate::numerics::attention::{self, AttnSegment, KeySelector, SavedAttention};
use crate::numerics::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Log(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    GatherRows {
        x: Var,
        rows: Vec<usize>,
    },
    Concat(Vec<Var>),
    MaskedFill {
        x: Var,
        mask: Vec<bool>,
    },
    Sum(Var),
    Mean(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        smoothing: f64,
        probs: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        saved: Box<SavedAttention>,
    },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Ordered record of executed operations.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    no_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn tensor(&self, v: Var) -> Option<Tensor> {
        let g = self.get(v)?;
        Tensor::new(self.shapes[v.0].clone(), g.to_vec()).ok()
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape {
        [] => (1, 1),
        [.., c] => {
            let n: usize = shape.iter().product();
            if *c == 0 {
                (0, 0)
            } else {
                (n / c, *c)
            }
        }
    }
}

fn slot<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> &'a mut Vec<f64> {
    let len = nodes[v.0].data.len();
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric { op })
    }
}

/// `c (+)= a · b` on row-major buffers with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    c: &mut [f64],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|x| *x = 0.0);
        }
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the callers size every buffer for the given dimensions and
    // strides; `c` is a distinct allocation from `a` and `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// A tape that computes values only; nothing is kept for backward.
    pub fn inference() -> Self {
        Tape {
            nodes: Vec::new(),
            no_grad: true,
        }
    }

    pub fn is_recording(&self) -> bool {
        !self.no_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node recorded after the first `len`. Vars below `len`
    /// stay valid, so parameters bound once can be reused across steps.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    /// Inserts a leaf. Gradients are tracked iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let needs_grad = t.requires_grad() && !self.no_grad;
        self.push_raw(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, needs_grad)
    }

    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push_raw(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, false)
    }

    pub fn constant_owned(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::dims("constant", &shape, &[data.len()]));
        }
        Ok(self.push_raw(shape, data, Op::Leaf, false))
    }

    /// Parameter leaf that always tracks gradients (unless the tape is in
    /// inference mode).
    pub fn param(&mut self, t: &Tensor) -> Var {
        let needs_grad = !self.no_grad;
        self.push_raw(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, needs_grad)
    }

    fn push_raw(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        let op = if self.no_grad && !matches!(op, Op::Leaf) {
            Op::Leaf
        } else {
            op
        };
        self.nodes.push(Node {
            shape,
            data,
            op,
            needs_grad: needs_grad && !self.no_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.push_raw(shape, data, op, needs_grad)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.data.clone()).expect("node shape is consistent")
    }

    pub fn scalar(&self, v: Var) -> Result<f64> {
        let n = &self.nodes[v.0];
        if n.data.len() != 1 {
            return Err(Error::Contract(format!("expected scalar, got shape {:?}", n.shape)));
        }
        Ok(n.data[0])
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Matrix product; `a` is `[.., k]` with leading dims flattened, `b` is `[k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.is_empty() || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(Error::dims("matmul", &sa, &sb));
        }
        let (m, k) = rows_cols(&sa);
        let n = sb[1];
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a),
            (k as isize, 1),
            self.value(b),
            (n as isize, 1),
            &mut out,
            false,
        );
        check_finite("matmul", &out)?;
        let mut shape = sa;
        *shape.last_mut().unwrap() = n;
        Ok(self.push(shape, out, Op::MatMul(a, b), &[a, b]))
    }

    /// `a · bᵀ` with `a: [m, k]`, `b: [n, k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.is_empty() || sb.len() != 2 || sa[sa.len() - 1] != sb[1] {
            return Err(Error::dims("matmul_nt", &sa, &sb));
        }
        let (m, k) = rows_cols(&sa);
        let n = sb[0];
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a),
            (k as isize, 1),
            self.value(b),
            (1, k as isize),
            &mut out,
            false,
        );
        check_finite("matmul_nt", &out)?;
        let mut shape = sa;
        *shape.last_mut().unwrap() = n;
        Ok(self.push(shape, out, Op::MatMulNt(a, b), &[a, b]))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dims(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        check_finite("add", &out)?;
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add(a, b), &[a, b]))
    }

    /// Adds a length-`cols` row vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (_, c) = rows_cols(self.shape(a));
        if self.shape(row) != [c] {
            return Err(Error::dims("add_row", self.shape(a), self.shape(row)));
        }
        let r = self.value(row);
        let out: Vec<f64> = self
            .value(a)
            .chunks(c.max(1))
            .flat_map(|chunk| chunk.iter().zip(r).map(|(x, y)| x + y))
            .collect();
        check_finite("add_row", &out)?;
        Ok(self.push(self.shape(a).to_vec(), out, Op::AddRow(a, row), &[a, row]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .collect();
        check_finite("mul", &out)?;
        Ok(self.push(self.shape(a).to_vec(), out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let out: Vec<f64> = self.value(a).iter().map(|x| x * s).collect();
        check_finite("scale", &out)?;
        Ok(self.push(self.shape(a).to_vec(), out, Op::Scale(a, s), &[a]))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out: Vec<f64> = self.value(a).iter().map(|&x| x.max(0.0)).collect();
        Ok(self.push(self.shape(a).to_vec(), out, Op::Relu(a), &[a]))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let out: Vec<f64> = self.value(a).iter().map(|x| x.ln()).collect();
        check_finite("log", &out)?;
        Ok(self.push(self.shape(a).to_vec(), out, Op::Log(a), &[a]))
    }

    /// Softmax over the last axis. `-inf` entries (from [`Tape::masked_fill`])
    /// receive zero probability; NaN, `+inf` or fully masked rows are errors.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let (_, c) = rows_cols(self.shape(a));
        let x = self.value(a);
        if x.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::Numeric { op: "softmax" });
        }
        let mut out = vec![0.0; x.len()];
        for (row, o) in x.chunks(c.max(1)).zip(out.chunks_mut(c.max(1))) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::Numeric { op: "softmax" });
            }
            let mut z = 0.0;
            for (oi, &xi) in o.iter_mut().zip(row) {
                *oi = (xi - max).exp();
                z += *oi;
            }
            o.iter_mut().for_each(|v| *v /= z);
        }
        Ok(self.push(self.shape(a).to_vec(), out, Op::Softmax(a), &[a]))
    }

    /// Layer normalisation over the last axis with affine parameters.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (r, c) = rows_cols(self.shape(x));
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::dims("layer_norm", self.shape(x), self.shape(gamma)));
        }
        let xs = self.value(x);
        let (g, b) = (self.value(gamma), self.value(beta));
        let mut out = vec![0.0; r * c];
        let mut xhat = vec![0.0; r * c];
        let mut rstd = vec![0.0; r];
        for i in 0..r {
            let row = &xs[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[i] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[i * c + j] = h;
                out[i * c + j] = h * g[j] + b[j];
            }
        }
        check_finite("layer_norm", &out)?;
        let op = if self.no_grad {
            Op::Leaf
        } else {
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            }
        };
        Ok(self.push(self.shape(x).to_vec(), out, op, &[x, gamma, beta]))
    }

    /// Row lookup into `table: [vocab, dim]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let st = self.shape(table).to_vec();
        if st.len() != 2 {
            return Err(Error::dims("embedding", &st, &[ids.len()]));
        }
        let (v, d) = (st[0], st[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::Input(format!("token id {bad} outside vocabulary of {v}")));
        }
        let t = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&t[i * d..(i + 1) * d]);
        }
        Ok(self.push(
            vec![ids.len(), d],
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    /// Selects rows of a `[rows, cols]` view.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let (r, c) = rows_cols(self.shape(x));
        if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
            return Err(Error::Input(format!("row {bad} outside {r} rows")));
        }
        let xs = self.value(x);
        let mut out = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            out.extend_from_slice(&xs[i * c..(i + 1) * c]);
        }
        Ok(self.push(
            vec![rows.len(), c],
            out,
            Op::GatherRows {
                x,
                rows: rows.to_vec(),
            },
            &[x],
        ))
    }

    /// Concatenation along the first axis of `[n_i, cols]` views.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let (_, c) = rows_cols(self.shape(*first));
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, pc) = rows_cols(self.shape(p));
            if pc != c {
                return Err(Error::dims("concat", self.shape(*first), self.shape(p)));
            }
            rows += r;
            out.extend_from_slice(self.value(p));
        }
        Ok(self.push(vec![rows, c], out, Op::Concat(parts.to_vec()), parts))
    }

    /// Replaces entries where `mask` is true with `value` (which may be `-inf`).
    pub fn masked_fill(&mut self, x: Var, mask: &[bool], value: f64) -> Result<Var> {
        if mask.len() != self.value(x).len() {
            return Err(Error::dims("masked_fill", self.shape(x), &[mask.len()]));
        }
        if value.is_nan() {
            return Err(Error::Numeric { op: "masked_fill" });
        }
        let out: Vec<f64> = self
            .value(x)
            .iter()
            .zip(mask)
            .map(|(&v, &m)| if m { value } else { v })
            .collect();
        Ok(self.push(
            self.shape(x).to_vec(),
            out,
            Op::MaskedFill {
                x,
                mask: mask.to_vec(),
            },
            &[x],
        ))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.value(x).iter().sum();
        check_finite("sum", &[s])?;
        Ok(self.push(Vec::new(), vec![s], Op::Sum(x), &[x]))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        if n == 0 {
            return Err(Error::Contract("mean of empty tensor".into()));
        }
        let s: f64 = self.value(x).iter().sum::<f64>() / n as f64;
        check_finite("mean", &[s])?;
        Ok(self.push(Vec::new(), vec![s], Op::Mean(x), &[x]))
    }

    /// Summed token cross-entropy of `logits: [n, vocab]` against `targets`,
    /// with uniform label smoothing `smoothing` (0 gives plain NLL).
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], smoothing: f64) -> Result<Var> {
        let (r, v) = rows_cols(self.shape(logits));
        if r != targets.len() || self.shape(logits).len() != 2 {
            return Err(Error::dims("cross_entropy", self.shape(logits), &[targets.len()]));
        }
        if !(0.0..1.0).contains(&smoothing) {
            return Err(Error::Config(format!("label smoothing {smoothing} outside [0,1)")));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
            return Err(Error::Input(format!("target {bad} outside vocabulary of {v}")));
        }
        let x = self.value(logits);
        check_finite("cross_entropy", x)?;
        let mut probs = vec![0.0; r * v];
        let mut loss = 0.0;
        for i in 0..r {
            let row = &x[i * v..(i + 1) * v];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|&l| (l - max).exp()).sum();
            let lse = max + z.ln();
            let nll = lse - row[targets[i]];
            let mut term = (1.0 - smoothing) * nll;
            if smoothing > 0.0 {
                let mean_nll = row.iter().map(|&l| lse - l).sum::<f64>() / v as f64;
                term += smoothing * mean_nll;
            }
            loss += term;
            for j in 0..v {
                probs[i * v + j] = (row[j] - lse).exp();
            }
        }
        check_finite("cross_entropy", &[loss])?;
        let op = if self.no_grad {
            Op::Leaf
        } else {
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                smoothing,
                probs,
            }
        };
        Ok(self.push(Vec::new(), vec![loss], op, &[logits]))
    }

    /// Multi-head scaled dot-product attention over packed sequences.
    ///
    /// `q: [Nq, d]`, `k, v: [Nk, d]`; each segment pairs a block of query rows
    /// with a block of key rows, and `selector` lists the keys visible to each
    /// query inside its segment.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        segments: &[AttnSegment],
        selector: &dyn KeySelector,
    ) -> Result<Var> {
        let (sq, sk, sv) = (self.shape(q), self.shape(k), self.shape(v));
        if sq.len() != 2 || sk.len() != 2 || sk != sv || sq[1] != sk[1] {
            return Err(Error::dims("attention", sq, sk));
        }
        let (nq, d) = (sq[0], sq[1]);
        let nk = sk[0];
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!("width {d} not divisible by {heads} heads")));
        }
        let (out, saved) = attention::forward(
            self.value(q),
            self.value(k),
            self.value(v),
            nq,
            nk,
            d,
            heads,
            segments,
            selector,
            !self.no_grad,
        )?;
        check_finite("attention", &out)?;
        let op = match saved {
            Some(saved) => Op::Attention {
                q,
                k,
                v,
                saved: Box::new(saved),
            },
            None => Op::Leaf,
        };
        Ok(self.push(vec![nq, d], out, op, &[q, k, v]))
    }

    /// Reverse sweep from a scalar `loss`. Every leaf that tracks gradients
    /// receives one, zero-filled when it does not reach the loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.no_grad {
            return Err(Error::Contract("backward on an inference tape".into()));
        }
        if self.nodes.is_empty() {
            return Err(Error::Contract("backward on an empty tape".into()));
        }
        if self.nodes[loss.0].data.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..n).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        for (idx, node) in self.nodes.iter().enumerate() {
            if node.needs_grad && matches!(node.op, Op::Leaf) && grads[idx].is_none() {
                grads[idx] = Some(vec![0.0; node.data.len()]);
            }
        }
        let shapes = self.nodes.iter().map(|n| n.shape.clone()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let wants = |v: Var| nodes[v.0].needs_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = rows_cols(&nodes[a.0].shape);
                let nn = nodes[b.0].shape[1];
                if wants(*a) {
                    let ga = slot(grads, nodes, *a);
                    gemm(
                        m,
                        nn,
                        k,
                        g,
                        (nn as isize, 1),
                        &nodes[b.0].data,
                        (1, nn as isize),
                        ga,
                        true,
                    );
                }
                if wants(*b) {
                    let gb = slot(grads, nodes, *b);
                    gemm(
                        k,
                        m,
                        nn,
                        &nodes[a.0].data,
                        (1, k as isize),
                        g,
                        (nn as isize, 1),
                        gb,
                        true,
                    );
                }
            }
            Op::MatMulNt(a, b) => {
                let (m, k) = rows_cols(&nodes[a.0].shape);
                let nn = nodes[b.0].shape[0];
                if wants(*a) {
                    let ga = slot(grads, nodes, *a);
                    gemm(
                        m,
                        nn,
                        k,
                        g,
                        (nn as isize, 1),
                        &nodes[b.0].data,
                        (k as isize, 1),
                        ga,
                        true,
                    );
                }
                if wants(*b) {
                    let gb = slot(grads, nodes, *b);
                    gemm(
                        nn,
                        m,
                        k,
                        g,
                        (1, nn as isize),
                        &nodes[a.0].data,
                        (k as isize, 1),
                        gb,
                        true,
                    );
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if wants(v) {
                        let gv = slot(grads, nodes, v);
                        gv.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::AddRow(a, row) => {
                if wants(*a) {
                    let ga = slot(grads, nodes, *a);
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if wants(*row) {
                    let gr = slot(grads, nodes, *row);
                    let c = gr.len().max(1);
                    for chunk in g.chunks(c) {
                        gr.iter_mut().zip(chunk).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let bd = &nodes[b.0].data;
                    let ga = slot(grads, nodes, *a);
                    for i in 0..g.len() {
                        ga[i] += g[i] * bd[i];
                    }
                }
                if wants(*b) {
                    let ad = &nodes[a.0].data;
                    let gb = slot(grads, nodes, *b);
                    for i in 0..g.len() {
                        gb[i] += g[i] * ad[i];
                    }
                }
            }
            Op::Scale(a, s) => {
                if wants(*a) {
                    let ga = slot(grads, nodes, *a);
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += s * y);
                }
            }
            Op::Relu(a) => {
                if wants(*a) {
                    let ad = &nodes[a.0].data;
                    let ga = slot(grads, nodes, *a);
                    for i in 0..g.len() {
                        if ad[i] > 0.0 {
                            ga[i] += g[i];
                        }
                    }
                }
            }
            Op::Log(a) => {
                if wants(*a) {
                    let ad = &nodes[a.0].data;
                    let ga = slot(grads, nodes, *a);
                    for i in 0..g.len() {
                        ga[i] += g[i] / ad[i];
                    }
                }
            }
            Op::Softmax(a) => {
                if wants(*a) {
                    let y = &node.data;
                    let (_, c) = rows_cols(&node.shape);
                    let ga = slot(grads, nodes, *a);
                    for ((yr, gr), out) in y.chunks(c).zip(g.chunks(c)).zip(ga.chunks_mut(c)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            out[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let (r, c) = rows_cols(&node.shape);
                if wants(*gamma) {
                    let gg = slot(grads, nodes, *gamma);
                    for i in 0..r {
                        for j in 0..c {
                            gg[j] += g[i * c + j] * xhat[i * c + j];
                        }
                    }
                }
                if wants(*beta) {
                    let gb = slot(grads, nodes, *beta);
                    for i in 0..r {
                        for j in 0..c {
                            gb[j] += g[i * c + j];
                        }
                    }
                }
                if wants(*x) {
                    let gam = &nodes[gamma.0].data;
                    let gx = slot(grads, nodes, *x);
                    let mut dxhat = vec![0.0; c];
                    for i in 0..r {
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for j in 0..c {
                            dxhat[j] = g[i * c + j] * gam[j];
                            m1 += dxhat[j];
                            m2 += dxhat[j] * xhat[i * c + j];
                        }
                        m1 /= c as f64;
                        m2 /= c as f64;
                        for j in 0..c {
                            gx[i * c + j] += rstd[i] * (dxhat[j] - m1 - xhat[i * c + j] * m2);
                        }
                    }
                }
            }
            Op::Embedding { table, ids } => {
                if wants(*table) {
                    let d = nodes[table.0].shape[1];
                    let gt = slot(grads, nodes, *table);
                    for (r, &id) in ids.iter().enumerate() {
                        let dst = &mut gt[id * d..(id + 1) * d];
                        dst.iter_mut()
                            .zip(&g[r * d..(r + 1) * d])
                            .for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::GatherRows { x, rows } => {
                if wants(*x) {
                    let (_, c) = rows_cols(&nodes[x.0].shape);
                    let gx = slot(grads, nodes, *x);
                    for (r, &src) in rows.iter().enumerate() {
                        let dst = &mut gx[src * c..(src + 1) * c];
                        dst.iter_mut()
                            .zip(&g[r * c..(r + 1) * c])
                            .for_each(|(a, b)| *a += b);
                    }
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = nodes[p.0].data.len();
                    if wants(p) {
                        let gp = slot(grads, nodes, p);
                        gp.iter_mut()
                            .zip(&g[off..off + len])
                            .for_each(|(a, b)| *a += b);
                    }
                    off += len;
                }
            }
            Op::MaskedFill { x, mask } => {
                if wants(*x) {
                    let gx = slot(grads, nodes, *x);
                    for i in 0..g.len() {
                        if !mask[i] {
                            gx[i] += g[i];
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if wants(*x) {
                    let gx = slot(grads, nodes, *x);
                    gx.iter_mut().for_each(|v| *v += g[0]);
                }
            }
            Op::Mean(x) => {
                if wants(*x) {
                    let gx = slot(grads, nodes, *x);
                    let s = g[0] / gx.len() as f64;
                    gx.iter_mut().for_each(|v| *v += s);
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                smoothing,
                probs,
            } => {
                if wants(*logits) {
                    let v = nodes[logits.0].shape[1];
                    let gl = slot(grads, nodes, *logits);
                    let uniform = smoothing / v as f64;
                    for (i, &t) in targets.iter().enumerate() {
                        for j in 0..v {
                            let mut q = uniform;
                            if j == t {
                                q += 1.0 - smoothing;
                            }
                            gl[i * v + j] += g[0] * (probs[i * v + j] - q);
                        }
                    }
                }
            }
            Op::Attention { q, k, v, saved } => {
                let d = nodes[q.0].shape[1];
                let mut gq = vec![0.0; nodes[q.0].data.len()];
                let mut gk = vec![0.0; nodes[k.0].data.len()];
                let mut gv = vec![0.0; nodes[v.0].data.len()];
                attention::backward(
                    &nodes[q.0].data,
                    &nodes[k.0].data,
                    &nodes[v.0].data,
                    d,
                    g,
                    saved,
                    &mut gq,
                    &mut gk,
                    &mut gv,
                );
                for (var, buf) in [(*q, gq), (*k, gk), (*v, gv)] {
                    if wants(var) {
                        let gx = slot(grads, nodes, var);
                        gx.iter_mut().zip(&buf).for_each(|(a, b)| *a += b);
                    }
                }
            }
        }
    }
}
