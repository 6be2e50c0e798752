use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernels::{self, dot, mm_acc, mm_nt_acc, mm_tn_acc};
use super::{NumericsError, ParamId, ParamStore, Tensor};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Storage {
    Owned(Vec<f64>),
    Param(ParamId),
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Vec<f64>),
    Scale(Var, f64),
    Shift(Var),
    Sigmoid(Var),
    Tanh(Var),
    Gelu(Var),
    Exp(Var),
    Expm1(Var),
    Clamp(Var, f64, f64),
    LayerNorm(Var, f64),
    SoftmaxRows(Var),
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    Concat(Vec<Var>),
    GatherRows { table: Var, ids: Vec<usize> },
    SpanMeans { x: Var, spans: Vec<(usize, usize)> },
    BroadcastRows(Var),
    Reshape(Var),
    Index(Var, usize),
    ConvMaxPool { x: Var, kernel: Var, bias: Var, width: usize, argmax: Vec<usize> },
    CosineSim(Var, Var),
    LogSumExp(Var),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Storage,
    op: Op,
    requires_grad: bool,
}

/// A reverse-mode differentiation tape.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and `backward` is a single reverse sweep. Parameters are
/// borrowed from a [`ParamStore`] rather than copied; each parameter gets at
/// most one node per graph.
///
/// A graph is single-threaded. Build one per forward pass and drop it after
/// the gradients have been taken.
pub struct Graph<'p> {
    params: Option<&'p ParamStore>,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

/// Gradients produced by one call to [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    nodes: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, Vec<f64>)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`; `None` when the node does
    /// not require a gradient or the loss does not reach it.
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.nodes.get(var.0).and_then(|g| g.as_deref())
    }

    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params.iter().find(|(p, _)| *p == id).map(|(_, g)| g.as_slice())
    }

    pub fn param_mut(&mut self, id: ParamId) -> Option<&mut Vec<f64>> {
        self.params.iter_mut().find(|(p, _)| *p == id).map(|(_, g)| g)
    }

    /// Adds these gradients into the `grad` field of each parameter tensor.
    /// Parameters the loss never touched are left as they are, which for a
    /// zeroed store means a zero gradient. Calling this twice without
    /// [`ParamStore::zero_grad`] in between accumulates.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for (id, g) in &self.params {
            store.get_mut(*id).accumulate_grad(g);
        }
    }
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> NumericsError {
    NumericsError::Dimension { op, left: a.to_vec(), right: b.to_vec() }
}

/// (rows, cols) of a 1-D or 2-D shape, vectors read as one row.
fn as_matrix(shape: &[usize]) -> (usize, usize) {
    match shape {
        [] => (1, 1),
        [n] => (1, *n),
        [r, c] => (*r, *c),
        _ => (shape[..shape.len() - 1].iter().product(), shape[shape.len() - 1]),
    }
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Self { params: None, nodes: Vec::new(), param_vars: Vec::new() }
    }

    pub fn with_params(params: &'p ParamStore) -> Self {
        Self { params: Some(params), nodes: Vec::new(), param_vars: vec![None; params.len()] }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        match &self.nodes[v.0].value {
            Storage::Owned(d) => d,
            Storage::Param(id) => self.params.expect("param node without store").get(*id).data(),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec()).expect("node shape is consistent")
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.nodes.push(Node { shape, value: Storage::Owned(data), op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a leaf. Its gradient is reported iff `t.requires_grad`.
    pub fn input(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad;
        let (shape, data) = t.into_parts();
        self.push(shape, data, Op::Leaf, rg)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        let (shape, data) = t.into_parts();
        self.push(shape, data, Op::Leaf, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let shape = self.params.expect("graph built without a ParamStore").get(id).shape().to_vec();
        self.nodes.push(Node { shape, value: Storage::Param(id), op: Op::Param, requires_grad: true });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    /// Matrix product. A 1-D left operand is read as a single row and the
    /// result is 1-D.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sb.len() != 2 || sa.is_empty() || sa.len() > 2 {
            return Err(shape_err("matmul", &sa, &sb));
        }
        let (n, p) = as_matrix(&sa);
        let (p2, q) = (sb[0], sb[1]);
        if p != p2 {
            return Err(shape_err("matmul", &sa, &sb));
        }
        let mut out = vec![0.0; n * q];
        mm_acc(self.value(a), self.value(b), n, p, q, &mut out);
        let shape = if sa.len() == 1 { vec![q] } else { vec![n, q] };
        let rg = self.rg(&[a, b]);
        Ok(self.push(shape, out, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ` for a[n×p], b[m×p]. A 1-D `a` yields a 1-D result of length m.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sb.len() != 2 || sa.is_empty() || sa.len() > 2 {
            return Err(shape_err("matmul_nt", &sa, &sb));
        }
        let (n, p) = as_matrix(&sa);
        let (m, p2) = (sb[0], sb[1]);
        if p != p2 {
            return Err(shape_err("matmul_nt", &sa, &sb));
        }
        let mut out = vec![0.0; n * m];
        mm_nt_acc(self.value(a), self.value(b), n, p, m, &mut out);
        let shape = if sa.len() == 1 { vec![m] } else { vec![n, m] };
        let rg = self.rg(&[a, b]);
        Ok(self.push(shape, out, Op::MatMulNT(a, b), rg))
    }

    /// Adds a bias vector to every row of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var, NumericsError> {
        let sx = self.shape(x).to_vec();
        let sb = self.shape(b).to_vec();
        let (_, q) = as_matrix(&sx);
        if sb.len() != 1 || sb[0] != q {
            return Err(shape_err("add_bias", &sx, &sb));
        }
        let bias = self.value(b);
        let out: Vec<f64> =
            self.value(x).chunks(q).flat_map(|row| row.iter().zip(bias).map(|(a, c)| a + c)).collect();
        let rg = self.rg(&[x, b]);
        Ok(self.push(sx, out, Op::AddBias(x, b), rg))
    }

    /// `x · w + b`, recorded as a product followed by a bias add.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NumericsError> {
        let xw = self.matmul(x, w)?;
        self.add_bias(xw, b)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), NumericsError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_map(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| f(*x, *y)).collect();
        let rg = self.rg(&[a, b]);
        let shape = self.shape(a).to_vec();
        self.push(shape, out, op, rg)
    }

    fn map(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let out = self.value(x).iter().map(|v| f(*v)).collect();
        let rg = self.rg(&[x]);
        let shape = self.shape(x).to_vec();
        self.push(shape, out, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_map(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_map(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_map(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    /// Elementwise product with a constant (no gradient to `c`).
    pub fn mul_const(&mut self, x: Var, c: Vec<f64>) -> Result<Var, NumericsError> {
        if c.len() != self.value(x).len() {
            return Err(shape_err("mul_const", self.shape(x), &[c.len()]));
        }
        let out = self.value(x).iter().zip(&c).map(|(a, b)| a * b).collect();
        let rg = self.rg(&[x]);
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, out, Op::MulConst(x, c), rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.map(x, Op::Scale(x, c), |v| v * c)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.map(x, Op::Shift(x), |v| v + c)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, Op::Sigmoid(x), kernels::sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, Op::Tanh(x), f64::tanh)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.map(x, Op::Gelu(x), kernels::gelu)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.map(x, Op::Exp(x), f64::exp)
    }

    /// `exp(x) - 1`, accurate near zero.
    pub fn expm1(&mut self, x: Var) -> Var {
        self.map(x, Op::Expm1(x), f64::exp_m1)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where the clamp is active.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.map(x, Op::Clamp(x, lo, hi), |v| v.clamp(lo, hi))
    }

    /// Row-wise `(x - mean) / sqrt(var + eps)` without gain or bias.
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Result<Var, NumericsError> {
        if eps <= 0.0 {
            return Err(NumericsError::Domain { op: "layer_norm", detail: format!("eps = {eps}") });
        }
        let shape = self.shape(x).to_vec();
        let (_, d) = as_matrix(&shape);
        let mut out = Vec::with_capacity(self.value(x).len());
        for row in self.value(x).chunks(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            out.extend(row.iter().map(|v| (v - mean) * inv));
        }
        let rg = self.rg(&[x]);
        Ok(self.push(shape, out, Op::LayerNorm(x, eps), rg))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let (_, d) = as_matrix(&shape);
        let mut out = Vec::with_capacity(self.value(x).len());
        for row in self.value(x).chunks(d) {
            let lse = kernels::logsumexp(row);
            out.extend(row.iter().map(|v| (v - lse).exp()));
        }
        let rg = self.rg(&[x]);
        self.push(shape, out, Op::SoftmaxRows(x), rg)
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let shape = self.shape(x).to_vec();
        let (n, d) = as_matrix(&shape);
        if len == 0 || start + len > d {
            return Err(NumericsError::Domain {
                op: "slice_cols",
                detail: format!("columns {start}..{} of {shape:?}", start + len),
            });
        }
        let out: Vec<f64> =
            self.value(x).chunks(d).flat_map(|row| row[start..start + len].iter().copied()).collect();
        let rg = self.rg(&[x]);
        let out_shape = if shape.len() == 1 { vec![len] } else { vec![n, len] };
        Ok(self.push(out_shape, out, Op::SliceCols { x, start }, rg))
    }

    /// Concatenates matrices with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let first = *parts.first().ok_or(NumericsError::Domain {
            op: "concat_cols",
            detail: "no inputs".into(),
        })?;
        let (n, _) = as_matrix(self.shape(first));
        let one_d = self.shape(first).len() == 1;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = as_matrix(self.shape(p));
            if r != n || (self.shape(p).len() == 1) != one_d {
                return Err(shape_err("concat_cols", self.shape(first), self.shape(p)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for i in 0..n {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[i * w..(i + 1) * w]);
            }
        }
        let rg = self.rg(parts);
        let shape = if one_d { vec![total] } else { vec![n, total] };
        Ok(self.push(shape, out, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Flattens and concatenates the inputs into one vector. Scalars stack.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        if parts.is_empty() {
            return Err(NumericsError::Domain { op: "concat", detail: "no inputs".into() });
        }
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.value(p));
        }
        let rg = self.rg(parts);
        let n = out.len();
        Ok(self.push(vec![n], out, Op::Concat(parts.to_vec()), rg))
    }

    /// Rows `ids` of a matrix, in order, as a `[ids.len() × d]` matrix.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var, NumericsError> {
        let shape = self.shape(table).to_vec();
        if shape.len() != 2 {
            return Err(shape_err("gather_rows", &shape, &[ids.len()]));
        }
        let (v, d) = (shape[0], shape[1]);
        if ids.is_empty() {
            return Err(NumericsError::Domain { op: "gather_rows", detail: "no indices".into() });
        }
        if let Some(bad) = ids.iter().find(|&&i| i >= v) {
            return Err(NumericsError::Domain {
                op: "gather_rows",
                detail: format!("row {bad} out of range for {v} rows"),
            });
        }
        let src = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let rg = self.rg(&[table]);
        Ok(self.push(vec![ids.len(), d], out, Op::GatherRows { table, ids: ids.to_vec() }, rg))
    }

    /// One row of a matrix as a vector.
    pub fn row(&mut self, x: Var, i: usize) -> Result<Var, NumericsError> {
        let g = self.gather_rows(x, &[i])?;
        let d = self.shape(g)[1];
        self.reshape(g, vec![d])
    }

    /// Mean of the rows in each half-open span; one output row per span.
    pub fn span_means(&mut self, x: Var, spans: &[(usize, usize)]) -> Result<Var, NumericsError> {
        let shape = self.shape(x).to_vec();
        let (n, d) = as_matrix(&shape);
        if spans.is_empty() {
            return Err(NumericsError::Domain { op: "span_means", detail: "no spans".into() });
        }
        let src = self.value(x);
        let mut out = vec![0.0; spans.len() * d];
        for (k, &(s, e)) in spans.iter().enumerate() {
            if s >= e || e > n {
                return Err(NumericsError::Domain {
                    op: "span_means",
                    detail: format!("span {s}..{e} invalid for {n} rows"),
                });
            }
            let inv = 1.0 / (e - s) as f64;
            let dst = &mut out[k * d..(k + 1) * d];
            for r in s..e {
                for (o, v) in dst.iter_mut().zip(&src[r * d..(r + 1) * d]) {
                    *o += v * inv;
                }
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(vec![spans.len(), d], out, Op::SpanMeans { x, spans: spans.to_vec() }, rg))
    }

    /// Mean over all rows of a matrix, as a vector.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var, NumericsError> {
        let (n, d) = as_matrix(self.shape(x));
        let m = self.span_means(x, &[(0, n)])?;
        self.reshape(m, vec![d])
    }

    /// Repeats a vector as `n` identical rows.
    pub fn broadcast_rows(&mut self, v: Var, n: usize) -> Result<Var, NumericsError> {
        let shape = self.shape(v).to_vec();
        if shape.len() != 1 || n == 0 {
            return Err(shape_err("broadcast_rows", &shape, &[n]));
        }
        let out = self.value(v).repeat(n);
        let rg = self.rg(&[v]);
        Ok(self.push(vec![n, shape[0]], out, Op::BroadcastRows(v), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var, NumericsError> {
        if shape.iter().product::<usize>() != self.value(x).len() {
            return Err(shape_err("reshape", self.shape(x), &shape));
        }
        let out = self.value(x).to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(shape, out, Op::Reshape(x), rg))
    }

    /// Element `i` of the flattened tensor as a scalar.
    pub fn index(&mut self, x: Var, i: usize) -> Result<Var, NumericsError> {
        let n = self.value(x).len();
        if i >= n {
            return Err(NumericsError::Domain { op: "index", detail: format!("{i} of {n}") });
        }
        let v = self.value(x)[i];
        let rg = self.rg(&[x]);
        Ok(self.push(Vec::new(), vec![v], Op::Index(x, i), rg))
    }

    /// One-dimensional valid convolution of width `width` over the rows of
    /// `x[n×d]`, followed by max-over-time pooling.
    ///
    /// `kernel` is `[(width·d) × out]`: the window's rows are flattened in
    /// order before the product. Ties in the max go to the earliest position.
    pub fn conv_maxpool(
        &mut self,
        x: Var,
        kernel: Var,
        bias: Var,
        width: usize,
    ) -> Result<Var, NumericsError> {
        let sx = self.shape(x).to_vec();
        let sk = self.shape(kernel).to_vec();
        if sx.len() != 2 || sk.len() != 2 {
            return Err(shape_err("conv_maxpool", &sx, &sk));
        }
        let (n, d) = (sx[0], sx[1]);
        let (kin, o) = (sk[0], sk[1]);
        if width == 0 || kin != width * d {
            return Err(shape_err("conv_maxpool", &sx, &sk));
        }
        if self.shape(bias) != [o] {
            return Err(shape_err("conv_maxpool", &sk, self.shape(bias)));
        }
        if n < width {
            return Err(NumericsError::Domain {
                op: "conv_maxpool",
                detail: format!("sequence of {n} rows is shorter than window {width}"),
            });
        }
        let positions = n - width + 1;
        let xs = self.value(x);
        let mut conv = vec![0.0; positions * o];
        for p in 0..positions {
            let window = &xs[p * d..(p + width) * d];
            mm_acc(window, self.value(kernel), 1, kin, o, &mut conv[p * o..(p + 1) * o]);
        }
        let b = self.value(bias);
        let mut out = vec![f64::NEG_INFINITY; o];
        let mut argmax = vec![0usize; o];
        for p in 0..positions {
            for c in 0..o {
                let v = conv[p * o + c] + b[c];
                if v > out[c] {
                    out[c] = v;
                    argmax[c] = p;
                }
            }
        }
        let rg = self.rg(&[x, kernel, bias]);
        Ok(self.push(vec![o], out, Op::ConvMaxPool { x, kernel, bias, width, argmax }, rg))
    }

    /// Cosine similarity of two vectors. A zero-norm input is a domain error.
    pub fn cosine_sim(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.same_shape("cosine_sim", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let (na, nb) = (kernels::norm(va), kernels::norm(vb));
        if na == 0.0 || nb == 0.0 {
            return Err(NumericsError::Domain {
                op: "cosine_sim",
                detail: "zero-norm input (collapsed representation)".into(),
            });
        }
        let s = (dot(va, vb) / (na * nb)).clamp(-1.0, 1.0);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Vec::new(), vec![s], Op::CosineSim(a, b), rg))
    }

    /// `log Σ exp(x)` over all elements, shifted by the max for stability.
    pub fn logsumexp(&mut self, x: Var) -> Var {
        let v = kernels::logsumexp(self.value(x));
        let rg = self.rg(&[x]);
        self.push(Vec::new(), vec![v], Op::LogSumExp(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = self.value(x).iter().sum();
        let rg = self.rg(&[x]);
        self.push(Vec::new(), vec![v], Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let vals = self.value(x);
        let v = vals.iter().sum::<f64>() / vals.len() as f64;
        let rg = self.rg(&[x]);
        self.push(Vec::new(), vec![v], Op::Mean(x), rg)
    }

    /// Inverted dropout. Returns the output and the 0/1 keep mask.
    ///
    /// With `training == false` or `rate == 0` this is the identity and the
    /// mask is all ones. The mask depends only on `seed` and the element
    /// count.
    pub fn dropout(
        &mut self,
        x: Var,
        rate: f64,
        seed: u64,
        training: bool,
    ) -> Result<(Var, Vec<f64>), NumericsError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NumericsError::Domain { op: "dropout", detail: format!("rate {rate} not in [0, 1)") });
        }
        let n = self.value(x).len();
        if !training || rate == 0.0 {
            return Ok((x, vec![1.0; n]));
        }
        let mask = dropout_mask(n, rate, seed);
        let keep = 1.0 / (1.0 - rate);
        let scaled = mask.iter().map(|m| m * keep).collect();
        let y = self.mul_const(x, scaled)?;
        Ok((y, mask))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericsError> {
        if self.value(loss).len() != 1 {
            return Err(NumericsError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let mut params = Vec::new();
        for v in self.param_vars.iter().flatten() {
            let id = match self.nodes[v.0].value {
                Storage::Param(id) => id,
                Storage::Owned(_) => unreachable!("param var holds owned storage"),
            };
            let g = grads[v.0].clone().unwrap_or_else(|| vec![0.0; self.value(*v).len()]);
            params.push((id, g));
        }
        // Only nodes that requested gradients keep them.
        for (node, g) in self.nodes.iter().zip(grads.iter_mut()) {
            if !node.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { nodes: grads, params })
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let n = self.value(v).len();
        let g = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
        f(g);
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = match &node.value {
            Storage::Owned(d) => d.as_slice(),
            Storage::Param(_) => return,
        };
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (n, p) = as_matrix(self.shape(*a));
                let q = self.shape(*b)[1];
                let (va, vb) = (self.value(*a), self.value(*b));
                self.acc(grads, *a, |ga| mm_nt_acc(g, vb, n, q, p, ga));
                self.acc(grads, *b, |gb| mm_tn_acc(va, g, n, p, q, gb));
            }
            Op::MatMulNT(a, b) => {
                let (n, p) = as_matrix(self.shape(*a));
                let m = self.shape(*b)[0];
                let (va, vb) = (self.value(*a), self.value(*b));
                self.acc(grads, *a, |ga| mm_acc(g, vb, n, m, p, ga));
                self.acc(grads, *b, |gb| mm_tn_acc(g, va, n, m, p, gb));
            }
            Op::AddBias(x, b) => {
                let q = self.value(*b).len();
                self.acc(grads, *x, |gx| add_into(gx, g));
                self.acc(grads, *b, |gb| {
                    for row in g.chunks(q) {
                        add_into(gb, row);
                    }
                });
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, |ga| add_into(ga, g));
                self.acc(grads, *b, |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |ga| add_into(ga, g));
                self.acc(grads, *b, |gb| gb.iter_mut().zip(g).for_each(|(o, v)| *o -= v));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                self.acc(grads, *a, |ga| {
                    ga.iter_mut().zip(g.iter().zip(vb)).for_each(|(o, (gv, bv))| *o += gv * bv)
                });
                self.acc(grads, *b, |gb| {
                    gb.iter_mut().zip(g.iter().zip(va)).for_each(|(o, (gv, av))| *o += gv * av)
                });
            }
            Op::MulConst(x, c) => {
                self.acc(grads, *x, |gx| {
                    gx.iter_mut().zip(g.iter().zip(c)).for_each(|(o, (gv, cv))| *o += gv * cv)
                });
            }
            Op::Scale(x, c) => {
                self.acc(grads, *x, |gx| gx.iter_mut().zip(g).for_each(|(o, gv)| *o += gv * c));
            }
            Op::Shift(x) | Op::Reshape(x) => self.acc(grads, *x, |gx| add_into(gx, g)),
            Op::Sigmoid(x) => self.acc(grads, *x, |gx| {
                for ((o, gv), y) in gx.iter_mut().zip(g).zip(out) {
                    *o += gv * y * (1.0 - y);
                }
            }),
            Op::Tanh(x) => self.acc(grads, *x, |gx| {
                for ((o, gv), y) in gx.iter_mut().zip(g).zip(out) {
                    *o += gv * (1.0 - y * y);
                }
            }),
            Op::Gelu(x) => {
                let vx = self.value(*x);
                self.acc(grads, *x, |gx| {
                    for ((o, gv), xv) in gx.iter_mut().zip(g).zip(vx) {
                        *o += gv * kernels::gelu_grad(*xv);
                    }
                })
            }
            Op::Exp(x) => self.acc(grads, *x, |gx| {
                for ((o, gv), y) in gx.iter_mut().zip(g).zip(out) {
                    *o += gv * y;
                }
            }),
            Op::Expm1(x) => self.acc(grads, *x, |gx| {
                for ((o, gv), y) in gx.iter_mut().zip(g).zip(out) {
                    *o += gv * (y + 1.0);
                }
            }),
            Op::Clamp(x, lo, hi) => {
                let vx = self.value(*x);
                self.acc(grads, *x, |gx| {
                    for ((o, gv), xv) in gx.iter_mut().zip(g).zip(vx) {
                        if *xv >= *lo && *xv <= *hi {
                            *o += gv;
                        }
                    }
                })
            }
            Op::LayerNorm(x, eps) => {
                let vx = self.value(*x);
                let (_, d) = as_matrix(self.shape(*x));
                self.acc(grads, *x, |gx| {
                    for r in 0..vx.len() / d {
                        let xr = &vx[r * d..(r + 1) * d];
                        let yr = &out[r * d..(r + 1) * d];
                        let gr = &g[r * d..(r + 1) * d];
                        let mean = xr.iter().sum::<f64>() / d as f64;
                        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                        let inv = 1.0 / (var + eps).sqrt();
                        let g_mean = gr.iter().sum::<f64>() / d as f64;
                        let gy_mean = dot(gr, yr) / d as f64;
                        for k in 0..d {
                            gx[r * d + k] += inv * (gr[k] - g_mean - yr[k] * gy_mean);
                        }
                    }
                })
            }
            Op::SoftmaxRows(x) => {
                let (_, d) = as_matrix(self.shape(*x));
                self.acc(grads, *x, |gx| {
                    for ((gxr, gr), yr) in gx.chunks_mut(d).zip(g.chunks(d)).zip(out.chunks(d)) {
                        let s = dot(gr, yr);
                        for k in 0..d {
                            gxr[k] += yr[k] * (gr[k] - s);
                        }
                    }
                })
            }
            Op::SliceCols { x, start } => {
                let (_, d) = as_matrix(self.shape(*x));
                let (_, w) = as_matrix(&node.shape);
                self.acc(grads, *x, |gx| {
                    for (gxr, gr) in gx.chunks_mut(d).zip(g.chunks(w)) {
                        add_into(&mut gxr[*start..start + w], gr);
                    }
                })
            }
            Op::ConcatCols(parts) => {
                let (n, total) = as_matrix(&node.shape);
                let mut offset = 0;
                for p in parts {
                    let (_, w) = as_matrix(self.shape(*p));
                    self.acc(grads, *p, |gp| {
                        for r in 0..n {
                            add_into(&mut gp[r * w..(r + 1) * w], &g[r * total + offset..r * total + offset + w]);
                        }
                    });
                    offset += w;
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).len();
                    self.acc(grads, *p, |gp| add_into(gp, &g[offset..offset + w]));
                    offset += w;
                }
            }
            Op::GatherRows { table, ids } => {
                let d = node.shape[1];
                self.acc(grads, *table, |gt| {
                    for (k, &r) in ids.iter().enumerate() {
                        add_into(&mut gt[r * d..(r + 1) * d], &g[k * d..(k + 1) * d]);
                    }
                })
            }
            Op::SpanMeans { x, spans } => {
                let d = node.shape[1];
                self.acc(grads, *x, |gx| {
                    for (k, &(s, e)) in spans.iter().enumerate() {
                        let inv = 1.0 / (e - s) as f64;
                        let gk = &g[k * d..(k + 1) * d];
                        for r in s..e {
                            for (o, gv) in gx[r * d..(r + 1) * d].iter_mut().zip(gk) {
                                *o += gv * inv;
                            }
                        }
                    }
                })
            }
            Op::BroadcastRows(v) => {
                let d = self.value(*v).len();
                self.acc(grads, *v, |gv| {
                    for row in g.chunks(d) {
                        add_into(gv, row);
                    }
                })
            }
            Op::Index(x, k) => self.acc(grads, *x, |gx| gx[*k] += g[0]),
            Op::ConvMaxPool { x, kernel, bias, width, argmax } => {
                let d = self.shape(*x)[1];
                let o = node.shape[0];
                let kin = width * d;
                let (vx, vk) = (self.value(*x), self.value(*kernel));
                self.acc(grads, *bias, |gb| add_into(gb, g));
                self.acc(grads, *kernel, |gk| {
                    for c in 0..o {
                        let p = argmax[c];
                        let window = &vx[p * d..(p + width) * d];
                        for j in 0..kin {
                            gk[j * o + c] += window[j] * g[c];
                        }
                    }
                });
                self.acc(grads, *x, |gx| {
                    for c in 0..o {
                        let p = argmax[c];
                        for j in 0..kin {
                            gx[p * d + j] += vk[j * o + c] * g[c];
                        }
                    }
                });
            }
            Op::CosineSim(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (na, nb) = (kernels::norm(va), kernels::norm(vb));
                let s = out[0];
                let gs = g[0];
                self.acc(grads, *a, |ga| {
                    for ((o, av), bv) in ga.iter_mut().zip(va).zip(vb) {
                        *o += gs * (bv / (na * nb) - s * av / (na * na));
                    }
                });
                self.acc(grads, *b, |gb| {
                    for ((o, av), bv) in gb.iter_mut().zip(va).zip(vb) {
                        *o += gs * (av / (na * nb) - s * bv / (nb * nb));
                    }
                });
            }
            Op::LogSumExp(x) => {
                let vx = self.value(*x);
                let lse = out[0];
                self.acc(grads, *x, |gx| {
                    for (o, v) in gx.iter_mut().zip(vx) {
                        *o += g[0] * (v - lse).exp();
                    }
                })
            }
            Op::Sum(x) => self.acc(grads, *x, |gx| gx.iter_mut().for_each(|o| *o += g[0])),
            Op::Mean(x) => {
                let n = self.value(*x).len() as f64;
                self.acc(grads, *x, |gx| gx.iter_mut().for_each(|o| *o += g[0] / n))
            }
        }
    }
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Bernoulli keep-mask (1.0 = kept) drawn from a seeded ChaCha stream.
pub fn dropout_mask(n: usize, rate: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| if rng.random::<f64>() < rate { 0.0 } else { 1.0 }).collect()
}
