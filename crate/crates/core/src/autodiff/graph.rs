//! The tape: a flat list of nodes in creation order, each carrying its
//! forward value and the op that produced it.

use super::kernels::{dot, gemm_nn, gemm_nt, gemm_tn};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

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
    Sub(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Gelu(Var),
    Sigmoid(Var),
    Recip(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    ConcatRows(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        mask: Vec<bool>,
        probs: Vec<f64>,
        scale: f64,
    },
    SquaredError {
        pred: Var,
        target: Var,
        mask: Vec<bool>,
        scale: f64,
    },
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

impl Node {
    fn rows(&self) -> usize {
        if self.shape.len() < 2 {
            1
        } else {
            self.shape[0]
        }
    }

    fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }
}

/// Reverse-mode tape. Confined to the thread that builds it; one backward
/// pass per forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn dim_err(op: &str, detail: String) -> Error {
    Error::Dimension(format!("{op}: {detail}"))
}

fn gelu_parts(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const K: f64 = 0.044_715;
    let u = C * (x + K * x * x * x);
    let t = u.tanh();
    let y = 0.5 * x * (1.0 + t);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * K * x * x);
    (y, dy)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_row(x: &[f64], out: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

fn add_into(dst: &mut Option<Vec<f64>>, src: &[f64]) {
    match dst {
        Some(d) => {
            for (a, b) in d.iter_mut().zip(src) {
                *a += b;
            }
        }
        None => *dst = Some(src.to_vec()),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op_name: &'static str, shape: Vec<usize>, value: Vec<f64>, op: Op, rg: bool) -> Result<Var> {
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric { op: op_name });
        }
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad: rg,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Record a leaf. Gradients are tracked iff `t.requires_grad`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            value: t.data().to_vec(),
            op: Op::Leaf,
            requires_grad: t.requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that always tracks gradients.
    pub fn param(&mut self, t: &Tensor) -> Var {
        let v = self.leaf(t);
        self.nodes[v.0].requires_grad = true;
        v
    }

    pub fn constant(&mut self, t: &Tensor) -> Var {
        let v = self.leaf(t);
        self.nodes[v.0].requires_grad = false;
        v
    }

    /// Copy of `x` cut off from the tape (stop-gradient).
    pub fn detach(&mut self, x: Var) -> Var {
        let n = self.node(x);
        let (shape, value) = (n.shape.clone(), n.value.clone());
        self.nodes.push(Node {
            shape,
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn scalar(&self, v: Var) -> Result<f64> {
        let n = self.node(v);
        if n.value.len() != 1 {
            return Err(Error::NonScalar(n.shape.clone()));
        }
        Ok(n.value[0])
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        let mut t = Tensor::new(n.shape.clone(), n.value.clone()).expect("graph values are finite");
        t.requires_grad = n.requires_grad;
        t
    }

    /// Like [`Graph::tensor`], with `grad` filled from a backward pass.
    pub fn tensor_with_grad(&self, v: Var, grads: &Gradients) -> Tensor {
        let mut t = self.tensor(v);
        t.grad = grads.get(v).map(<[f64]>::to_vec);
        t
    }

    fn matrix_dims(&self, v: Var, op: &str) -> Result<(usize, usize)> {
        let s = &self.node(v).shape;
        if s.len() != 2 {
            return Err(dim_err(op, format!("expected a matrix, got shape {s:?}")));
        }
        Ok((s[0], s[1]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims(a, "matmul")?;
        let (k2, n) = self.matrix_dims(b, "matmul")?;
        if k != k2 {
            return Err(dim_err("matmul", format!("inner dimensions {k} and {k2} differ")));
        }
        let mut out = vec![0.0; m * n];
        gemm_nn(&self.node(a).value, &self.node(b).value, &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        self.push("matmul", vec![m, n], out, Op::MatMul(a, b), rg)
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims(a, "matmul_nt")?;
        let (n, k2) = self.matrix_dims(b, "matmul_nt")?;
        if k != k2 {
            return Err(dim_err("matmul_nt", format!("inner dimensions {k} and {k2} differ")));
        }
        let mut out = vec![0.0; m * n];
        gemm_nt(&self.node(a).value, &self.node(b).value, &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        self.push("matmul_nt", vec![m, n], out, Op::MatMulNt(a, b), rg)
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        if self.node(a).shape != self.node(b).shape {
            return Err(dim_err(
                op,
                format!("shapes {:?} and {:?} differ", self.node(a).shape, self.node(b).shape),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.node(a).value.iter().zip(&self.node(b).value).map(|(x, y)| x + y).collect();
        let rg = self.rg(a) || self.rg(b);
        let shape = self.node(a).shape.clone();
        self.push("add", shape, out, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = self.node(a).value.iter().zip(&self.node(b).value).map(|(x, y)| x - y).collect();
        let rg = self.rg(a) || self.rg(b);
        let shape = self.node(a).shape.clone();
        self.push("sub", shape, out, Op::Sub(a, b), rg)
    }

    /// Adds a bias vector to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let cols = self.node(x).cols();
        if self.node(bias).value.len() != cols {
            return Err(dim_err(
                "add_bias",
                format!("bias of length {} for rows of width {cols}", self.node(bias).value.len()),
            ));
        }
        let b = &self.node(bias).value;
        let out = self
            .node(x)
            .value
            .chunks(cols.max(1))
            .flat_map(|row| row.iter().zip(b).map(|(v, bv)| v + bv))
            .collect();
        let rg = self.rg(x) || self.rg(bias);
        let shape = self.node(x).shape.clone();
        self.push("add_bias", shape, out, Op::AddBias(x, bias), rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let out = self.node(x).value.iter().map(|v| v * c).collect();
        let rg = self.rg(x);
        let shape = self.node(x).shape.clone();
        self.push("scale", shape, out, Op::Scale(x, c), rg)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let out = self.node(x).value.iter().map(|v| v + c).collect();
        let rg = self.rg(x);
        let shape = self.node(x).shape.clone();
        self.push("add_scalar", shape, out, Op::AddScalar(x), rg)
    }

    /// Gaussian-error linear unit, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let out = self.node(x).value.iter().map(|&v| gelu_parts(v).0).collect();
        let rg = self.rg(x);
        let shape = self.node(x).shape.clone();
        self.push("gelu", shape, out, Op::Gelu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.node(x).value.iter().map(|&v| sigmoid(v)).collect();
        let rg = self.rg(x);
        let shape = self.node(x).shape.clone();
        self.push("sigmoid", shape, out, Op::Sigmoid(x), rg)
    }

    pub fn recip(&mut self, x: Var) -> Result<Var> {
        let out = self.node(x).value.iter().map(|&v| 1.0 / v).collect();
        let rg = self.rg(x);
        let shape = self.node(x).shape.clone();
        self.push("recip", shape, out, Op::Recip(x), rg)
    }

    /// Max-stabilized softmax over the last axis.
    pub fn softmax_lastdim(&mut self, x: Var) -> Result<Var> {
        let n = self.node(x);
        let cols = n.cols();
        if cols == 0 {
            return Err(dim_err("softmax", "last extent must be at least 1".into()));
        }
        let mut out = vec![0.0; n.value.len()];
        for (src, dst) in n.value.chunks(cols).zip(out.chunks_mut(cols)) {
            softmax_row(src, dst);
        }
        let rg = self.rg(x);
        let shape = n.shape.clone();
        self.push("softmax", shape, out, Op::Softmax(x), rg)
    }

    /// Row-wise softmax of a square score matrix restricted to columns
    /// `j <= i`; masked entries are exactly zero.
    pub fn causal_softmax(&mut self, x: Var) -> Result<Var> {
        let (t, t2) = self.matrix_dims(x, "causal_softmax")?;
        if t != t2 {
            return Err(dim_err("causal_softmax", format!("expected square scores, got {t}x{t2}")));
        }
        let n = self.node(x);
        let mut out = vec![0.0; t * t];
        for i in 0..t {
            softmax_row(&n.value[i * t..i * t + i + 1], &mut out[i * t..i * t + i + 1]);
        }
        let rg = self.rg(x);
        self.push("causal_softmax", vec![t, t], out, Op::Softmax(x), rg)
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let n = self.node(x);
        let cols = n.cols();
        if self.node(gain).value.len() != cols || self.node(bias).value.len() != cols {
            return Err(dim_err("layer_norm", format!("gain/bias must have length {cols}")));
        }
        let rows = if cols == 0 { 0 } else { n.value.len() / cols };
        let g = &self.node(gain).value;
        let b = &self.node(bias).value;
        let mut out = vec![0.0; n.value.len()];
        let mut xhat = vec![0.0; n.value.len()];
        let mut rstd = vec![0.0; rows];
        for r in 0..rows {
            let row = &n.value[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..cols {
                let h = (row[c] - mean) * rs;
                xhat[r * cols + c] = h;
                out[r * cols + c] = h * g[c] + b[c];
            }
        }
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        let shape = n.shape.clone();
        self.push(
            "layer_norm",
            shape,
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
        )
    }

    /// Row gather from a `V×d` table; backward scatter-adds into the table.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.matrix_dims(table, "embedding_lookup")?;
        let mut out = Vec::with_capacity(ids.len() * d);
        let tv = &self.node(table).value;
        for &id in ids {
            if id >= v {
                return Err(Error::Index { index: id, extent: v });
            }
            out.extend_from_slice(&tv[id * d..(id + 1) * d]);
        }
        let rg = self.rg(table);
        self.push(
            "embedding_lookup",
            vec![ids.len(), d],
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        )
    }

    /// Alias of [`Graph::embedding_lookup`] for selecting rows of any matrix.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        self.embedding_lookup(x, rows)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(dim_err("concat_rows", "no inputs".into()));
        };
        let (_, d) = self.matrix_dims(first, "concat_rows")?;
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.matrix_dims(p, "concat_rows")?;
            if c != d {
                return Err(dim_err("concat_rows", format!("width {c} differs from {d}")));
            }
            rows += r;
        }
        let mut out = Vec::with_capacity(rows * d);
        for &p in parts {
            out.extend_from_slice(&self.node(p).value);
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push("concat_rows", vec![rows, d], out, Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.matrix_dims(x, "slice_cols")?;
        if start + len > c {
            return Err(dim_err("slice_cols", format!("columns {start}..{} exceed width {c}", start + len)));
        }
        let xv = &self.node(x).value;
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&xv[i * c + start..i * c + start + len]);
        }
        let rg = self.rg(x);
        self.push("slice_cols", vec![r, len], out, Op::SliceCols { x, start }, rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(dim_err("concat_cols", "no inputs".into()));
        };
        let (r, _) = self.matrix_dims(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.matrix_dims(p, "concat_cols")?;
            if pr != r {
                return Err(dim_err("concat_cols", format!("row count {pr} differs from {r}")));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.node(p).value[i * w..(i + 1) * w]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push("concat_cols", vec![r, total], out, Op::ConcatCols(parts.to_vec()), rg)
    }

    fn check_mask(&self, x: Var, len: usize, op: &str) -> Result<(usize, usize)> {
        let (t, w) = self.matrix_dims(x, op)?;
        if len != t {
            return Err(dim_err(op, format!("mask/targets of length {len} for {t} rows")));
        }
        Ok((t, w))
    }

    /// Sum of negative log-likelihoods over enabled rows, multiplied by `scale`.
    pub fn cross_entropy_sum(&mut self, logits: Var, targets: &[usize], mask: &[bool], scale: f64) -> Result<Var> {
        let (t, v) = self.check_mask(logits, targets.len(), "cross_entropy")?;
        if mask.len() != t {
            return Err(dim_err("cross_entropy", format!("mask of length {} for {t} rows", mask.len())));
        }
        for &id in targets {
            if id >= v {
                return Err(Error::Index { index: id, extent: v });
            }
        }
        let lv = &self.node(logits).value;
        let mut probs = vec![0.0; t * v];
        let mut total = 0.0;
        for i in 0..t {
            if !mask[i] {
                continue;
            }
            let row = &lv[i * v..(i + 1) * v];
            softmax_row(row, &mut probs[i * v..(i + 1) * v]);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            total += lse - row[targets[i]];
        }
        let rg = self.rg(logits);
        self.push(
            "cross_entropy",
            vec![],
            vec![total * scale],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                probs,
                scale,
            },
            rg,
        )
    }

    /// Sum of squared differences over enabled rows, multiplied by `scale`.
    pub fn squared_error_sum(&mut self, pred: Var, target: Var, mask: &[bool], scale: f64) -> Result<Var> {
        self.same_shape(pred, target, "squared_error")?;
        let (t, d) = self.check_mask(pred, mask.len(), "squared_error")?;
        let pv = &self.node(pred).value;
        let tv = &self.node(target).value;
        let mut total = 0.0;
        for i in 0..t {
            if mask[i] {
                for c in 0..d {
                    let e = pv[i * d + c] - tv[i * d + c];
                    total += e * e;
                }
            }
        }
        let rg = self.rg(pred) || self.rg(target);
        self.push(
            "squared_error",
            vec![],
            vec![total * scale],
            Op::SquaredError {
                pred,
                target,
                mask: mask.to_vec(),
                scale,
            },
            rg,
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.node(x).value.iter().sum();
        let rg = self.rg(x);
        self.push("sum", vec![], vec![s], Op::Sum(x), rg)
    }

    /// Runs the reverse sweep from a scalar `loss`. Consumes the tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::StaleTape);
        }
        let ln = self.node(loss);
        if ln.value.len() != 1 {
            return Err(Error::NonScalar(ln.shape.clone()));
        }
        let tracked = ln.requires_grad;
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if !tracked {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &gout, &mut grads);
            grads[idx] = Some(gout);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.nodes[a.0].rows(), self.nodes[a.0].cols());
                let n = self.nodes[b.0].cols();
                if rg(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm_nt(g, &self.nodes[b.0].value, &mut da, m, n, k);
                    add_into(&mut grads[a.0], &da);
                }
                if rg(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm_tn(&self.nodes[a.0].value, g, &mut db, m, k, n);
                    add_into(&mut grads[b.0], &db);
                }
            }
            Op::MatMulNt(a, b) => {
                // c = a·bᵀ, a: m×k, b: n×k
                let (m, k) = (self.nodes[a.0].rows(), self.nodes[a.0].cols());
                let n = self.nodes[b.0].rows();
                if rg(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm_nn(g, &self.nodes[b.0].value, &mut da, m, n, k);
                    add_into(&mut grads[a.0], &da);
                }
                if rg(*b) {
                    let mut db = vec![0.0; n * k];
                    gemm_tn(g, &self.nodes[a.0].value, &mut db, m, n, k);
                    add_into(&mut grads[b.0], &db);
                }
            }
            Op::Add(a, b) => {
                if rg(*a) {
                    add_into(&mut grads[a.0], g);
                }
                if rg(*b) {
                    add_into(&mut grads[b.0], g);
                }
            }
            Op::Sub(a, b) => {
                if rg(*a) {
                    add_into(&mut grads[a.0], g);
                }
                if rg(*b) {
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    add_into(&mut grads[b.0], &neg);
                }
            }
            Op::AddBias(x, bias) => {
                if rg(*x) {
                    add_into(&mut grads[x.0], g);
                }
                if rg(*bias) {
                    let cols = self.nodes[bias.0].value.len();
                    let mut db = vec![0.0; cols];
                    for row in g.chunks(cols.max(1)) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    add_into(&mut grads[bias.0], &db);
                }
            }
            Op::Scale(x, c) => {
                let dx: Vec<f64> = g.iter().map(|v| v * c).collect();
                add_into(&mut grads[x.0], &dx);
            }
            Op::AddScalar(x) => add_into(&mut grads[x.0], g),
            Op::Gelu(x) => {
                let xv = &self.nodes[x.0].value;
                let dx: Vec<f64> = g.iter().zip(xv).map(|(gv, &v)| gv * gelu_parts(v).1).collect();
                add_into(&mut grads[x.0], &dx);
            }
            Op::Sigmoid(x) => {
                let dx: Vec<f64> = g.iter().zip(&node.value).map(|(gv, y)| gv * y * (1.0 - y)).collect();
                add_into(&mut grads[x.0], &dx);
            }
            Op::Recip(x) => {
                let dx: Vec<f64> = g.iter().zip(&node.value).map(|(gv, y)| -gv * y * y).collect();
                add_into(&mut grads[x.0], &dx);
            }
            Op::Softmax(x) => {
                let cols = node.cols();
                let mut dx = vec![0.0; g.len()];
                for ((y, gy), d) in node.value.chunks(cols).zip(g.chunks(cols)).zip(dx.chunks_mut(cols)) {
                    let s = dot(y, gy);
                    for c in 0..cols {
                        d[c] = y[c] * (gy[c] - s);
                    }
                }
                add_into(&mut grads[x.0], &dx);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let cols = node.cols();
                let gv = &self.nodes[gain.0].value;
                if rg(*gain) || rg(*bias) {
                    let mut dg = vec![0.0; cols];
                    let mut db = vec![0.0; cols];
                    for (gr, hr) in g.chunks(cols).zip(xhat.chunks(cols)) {
                        for c in 0..cols {
                            dg[c] += gr[c] * hr[c];
                            db[c] += gr[c];
                        }
                    }
                    if rg(*gain) {
                        add_into(&mut grads[gain.0], &dg);
                    }
                    if rg(*bias) {
                        add_into(&mut grads[bias.0], &db);
                    }
                }
                if rg(*x) {
                    let mut dx = vec![0.0; g.len()];
                    let n = cols as f64;
                    for (r, ((gr, hr), dr)) in g.chunks(cols).zip(xhat.chunks(cols)).zip(dx.chunks_mut(cols)).enumerate() {
                        let mut mean_dh = 0.0;
                        let mut mean_dh_h = 0.0;
                        for c in 0..cols {
                            let dh = gr[c] * gv[c];
                            mean_dh += dh;
                            mean_dh_h += dh * hr[c];
                        }
                        mean_dh /= n;
                        mean_dh_h /= n;
                        for c in 0..cols {
                            let dh = gr[c] * gv[c];
                            dr[c] = rstd[r] * (dh - mean_dh - hr[c] * mean_dh_h);
                        }
                    }
                    add_into(&mut grads[x.0], &dx);
                }
            }
            Op::Gather { table, ids } => {
                let tn = &self.nodes[table.0];
                let d = tn.cols();
                let mut dt = vec![0.0; tn.value.len()];
                for (r, &id) in ids.iter().enumerate() {
                    for c in 0..d {
                        dt[id * d + c] += g[r * d + c];
                    }
                }
                add_into(&mut grads[table.0], &dt);
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let len = self.nodes[p.0].value.len();
                    if rg(*p) {
                        add_into(&mut grads[p.0], &g[off..off + len]);
                    }
                    off += len;
                }
            }
            Op::SliceCols { x, start } => {
                let xn = &self.nodes[x.0];
                let (r, c) = (xn.rows(), xn.cols());
                let len = node.cols();
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    dx[i * c + start..i * c + start + len].copy_from_slice(&g[i * len..(i + 1) * len]);
                }
                add_into(&mut grads[x.0], &dx);
            }
            Op::ConcatCols(parts) => {
                let total = node.cols();
                let rows = node.rows();
                let mut off = 0;
                for p in parts {
                    let w = self.nodes[p.0].cols();
                    if rg(*p) {
                        let mut dp = Vec::with_capacity(rows * w);
                        for i in 0..rows {
                            dp.extend_from_slice(&g[i * total + off..i * total + off + w]);
                        }
                        add_into(&mut grads[p.0], &dp);
                    }
                    off += w;
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                mask,
                probs,
                scale,
            } => {
                let v = self.nodes[logits.0].cols();
                let mut dl = vec![0.0; probs.len()];
                let s = g[0] * scale;
                for (i, &on) in mask.iter().enumerate() {
                    if !on {
                        continue;
                    }
                    for c in 0..v {
                        dl[i * v + c] = s * probs[i * v + c];
                    }
                    dl[i * v + targets[i]] -= s;
                }
                add_into(&mut grads[logits.0], &dl);
            }
            Op::SquaredError {
                pred,
                target,
                mask,
                scale,
            } => {
                let d = self.nodes[pred.0].cols();
                let pv = &self.nodes[pred.0].value;
                let tv = &self.nodes[target.0].value;
                let s = 2.0 * g[0] * scale;
                let mut dp = vec![0.0; pv.len()];
                for (i, &on) in mask.iter().enumerate() {
                    if !on {
                        continue;
                    }
                    for c in 0..d {
                        dp[i * d + c] = s * (pv[i * d + c] - tv[i * d + c]);
                    }
                }
                if rg(*target) {
                    let dt: Vec<f64> = dp.iter().map(|v| -v).collect();
                    add_into(&mut grads[target.0], &dt);
                }
                if rg(*pred) {
                    add_into(&mut grads[pred.0], &dp);
                }
            }
            Op::Sum(x) => {
                let n = self.nodes[x.0].value.len();
                add_into(&mut grads[x.0], &vec![g[0]; n]);
            }
        }
    }
}
