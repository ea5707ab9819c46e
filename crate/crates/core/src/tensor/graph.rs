use super::kernels;
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulNT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    /// Matrix plus a row vector broadcast over rows.
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Sum(Var),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    Select {
        src: Var,
        rows: Vec<usize>,
        cols: Vec<usize>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    MaskedSoftmax(Var),
    RowNormalize(Var),
    LayerNorm {
        src: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        inv: Vec<T>,
    },
    Gelu(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
    MeanRows(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Wengert-style tape. Operations append nodes in topological order, so a
/// reverse sweep over the node list is a valid backward schedule.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    backward_done: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients indexed by [`Var`]; nodes unreachable from the loss have none.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn dim_err(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::Dimension {
        op,
        left: a.to_vec(),
        right: b.to_vec(),
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded node so the tape can be reused.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.backward_done = false;
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dims2()
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(dim_err("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), ng))
    }

    /// `a · bᵀ` without materialising the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(dim_err("matmul_nt", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[0]);
        let out = kernels::matmul_nt(self.value(a).data(), self.value(b).data(), m, k, n);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMulNT(a, b), ng))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let t = self.value(a).transpose();
        let ng = self.needs(a);
        self.push(t, Op::Transpose(a), ng)
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(dim_err(name, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Ok(Tensor::from_parts(ta.shape().to_vec(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "add", |x, y| x + y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "sub", |x, y| x - y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "mul", |x, y| x * y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Mul(a, b), ng))
    }

    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.dims(x);
        if self.value(bias).numel() != c {
            return Err(dim_err("add_row", self.shape(x), self.shape(bias)));
        }
        let b = self.value(bias).data();
        let mut data = self.value(x).data().to_vec();
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] = data[i * c + j] + b[j];
            }
        }
        let shape = self.shape(x).to_vec();
        let ng = self.needs(x) || self.needs(bias);
        Ok(self.push(Tensor::from_parts(shape, data), Op::AddRow(x, bias), ng))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|v| *v * s).collect();
        let t = Tensor::from_parts(t.shape().to_vec(), data);
        let ng = self.needs(a);
        self.push(t, Op::Scale(a, s), ng)
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|v| *v + s).collect();
        let t = Tensor::from_parts(t.shape().to_vec(), data);
        let ng = self.needs(a);
        self.push(t, Op::AddScalar(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().fold(T::zero(), |s, v| s + *v);
        let ng = self.needs(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = T::from_usize(self.value(a).numel()).unwrap();
        let s = self.sum(a);
        self.scale(s, T::one() / n)
    }

    /// Row lookup into an embedding table.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.dims(table);
        let t = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::Index { index: id, len: v });
            }
            data.extend_from_slice(&t[id * d..(id + 1) * d]);
        }
        if ids.is_empty() {
            return Err(Error::Shape("gather with no ids".into()));
        }
        let ng = self.needs(table);
        Ok(self.push(
            Tensor::from_parts(vec![ids.len(), d], data),
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            ng,
        ))
    }

    /// Sub-matrix made of the listed rows and columns, in the listed order.
    pub fn select(&mut self, src: Var, rows: &[usize], cols: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(src);
        if rows.is_empty() || cols.is_empty() {
            return Err(Error::Shape("empty selection".into()));
        }
        if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
            return Err(Error::Index { index: bad, len: r });
        }
        if let Some(&bad) = cols.iter().find(|&&j| j >= c) {
            return Err(Error::Index { index: bad, len: c });
        }
        let s = self.value(src).data();
        let mut data = Vec::with_capacity(rows.len() * cols.len());
        for &i in rows {
            for &j in cols {
                data.push(s[i * c + j]);
            }
        }
        let ng = self.needs(src);
        Ok(self.push(
            Tensor::from_parts(vec![rows.len(), cols.len()], data),
            Op::Select {
                src,
                rows: rows.to_vec(),
                cols: cols.to_vec(),
            },
            ng,
        ))
    }

    pub fn select_rows(&mut self, src: Var, rows: &[usize]) -> Result<Var> {
        let (_, c) = self.dims(src);
        let cols: Vec<usize> = (0..c).collect();
        self.select(src, rows, &cols)
    }

    pub fn slice_cols(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        let (r, _) = self.dims(src);
        let rows: Vec<usize> = (0..r).collect();
        let cols: Vec<usize> = (start..start + len).collect();
        self.select(src, &rows, &cols)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = self.dims(parts[0]).0;
        let widths: Vec<usize> = parts.iter().map(|p| self.dims(*p).1).collect();
        if parts.iter().any(|p| self.dims(*p).0 != r) {
            return Err(Error::Shape("concat_cols with unequal row counts".into()));
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![T::zero(); r * total];
        let mut off = 0;
        for (p, w) in parts.iter().zip(&widths) {
            let src = self.value(*p).data();
            for i in 0..r {
                data[i * total + off..i * total + off + w].copy_from_slice(&src[i * w..(i + 1) * w]);
            }
            off += w;
        }
        let ng = parts.iter().any(|p| self.needs(*p));
        Ok(self.push(
            Tensor::from_parts(vec![r, total], data),
            Op::ConcatCols(parts.to_vec()),
            ng,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c = self.dims(parts[0]).1;
        if parts.iter().any(|p| self.dims(*p).1 != c) {
            return Err(Error::Shape("concat_rows with unequal column counts".into()));
        }
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            data.extend_from_slice(self.value(*p).data());
            rows += self.dims(*p).0;
        }
        let ng = parts.iter().any(|p| self.needs(*p));
        Ok(self.push(
            Tensor::from_parts(vec![rows, c], data),
            Op::ConcatRows(parts.to_vec()),
            ng,
        ))
    }

    /// Row-wise softmax restricted to `allow` (row-major, same size as `x`).
    pub fn masked_softmax_rows(&mut self, x: Var, allow: &[bool]) -> Result<Var> {
        let (r, c) = self.dims(x);
        if allow.len() != r * c {
            return Err(dim_err("masked_softmax", self.shape(x), &[allow.len()]));
        }
        let src = self.value(x).data();
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            let ok = kernels::masked_softmax_row(
                &src[i * c..(i + 1) * c],
                &allow[i * c..(i + 1) * c],
                &mut out[i * c..(i + 1) * c],
            );
            if !ok {
                return Err(Error::Mask(format!("row {i} has no allowed column")));
            }
        }
        let shape = self.shape(x).to_vec();
        let ng = self.needs(x);
        Ok(self.push(Tensor::from_parts(shape, out), Op::MaskedSoftmax(x), ng))
    }

    /// Divides each row by its sum. Rows must have a positive sum.
    pub fn row_normalize(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims(x);
        let mut data = self.value(x).data().to_vec();
        for i in 0..r {
            let row = &mut data[i * c..(i + 1) * c];
            let s = row.iter().fold(T::zero(), |s, v| s + *v);
            if !(s > T::zero()) {
                return Err(Error::Mask(format!("row {i} has no mass to renormalise")));
            }
            row.iter_mut().for_each(|v| *v = *v / s);
        }
        let shape = self.shape(x).to_vec();
        let ng = self.needs(x);
        Ok(self.push(Tensor::from_parts(shape, data), Op::RowNormalize(x), ng))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let (r, d) = self.dims(x);
        if self.value(gain).numel() != d || self.value(bias).numel() != d {
            return Err(dim_err("layer_norm", self.shape(x), self.shape(gain)));
        }
        let src = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = Vec::with_capacity(r * d);
        let mut inv = Vec::with_capacity(r);
        let mut out = Vec::with_capacity(r * d);
        for i in 0..r {
            let (h, s) = kernels::normalize_row(&src[i * d..(i + 1) * d], eps);
            for j in 0..d {
                out.push(h[j] * g[j] + b[j]);
            }
            xhat.extend(h);
            inv.push(s);
        }
        let shape = self.shape(x).to_vec();
        let ng = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::LayerNorm {
                src: x,
                gain,
                bias,
                xhat,
                inv,
            },
            ng,
        ))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|v| kernels::gelu(*v)).collect();
        let t = Tensor::from_parts(t.shape().to_vec(), data);
        let ng = self.needs(x);
        self.push(t, Op::Gelu(x), ng)
    }

    /// Mean over rows of `-log softmax(logits[r])[targets[r]]`.
    pub fn cross_entropy_rows(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (r, v) = self.dims(logits);
        if targets.len() != r {
            return Err(dim_err("cross_entropy", self.shape(logits), &[targets.len()]));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
            return Err(Error::Index { index: bad, len: v });
        }
        let src = self.value(logits).data();
        let mut probs = vec![T::zero(); r * v];
        let mut total = T::zero();
        let all = vec![true; v];
        for i in 0..r {
            let row = &src[i * v..(i + 1) * v];
            total = total + kernels::log_sum_exp(row) - row[targets[i]];
            kernels::masked_softmax_row(row, &all, &mut probs[i * v..(i + 1) * v]);
        }
        let loss = total / T::from_usize(r).unwrap();
        let ng = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            ng,
        ))
    }

    /// Column-wise mean, producing a `1×d` row.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let src = self.value(x).data();
        let n = T::from_usize(r).unwrap();
        let mut out = vec![T::zero(); c];
        for i in 0..r {
            for j in 0..c {
                out[j] = out[j] + src[i * c + j];
            }
        }
        out.iter_mut().for_each(|v| *v = *v / n);
        let ng = self.needs(x);
        self.push(Tensor::from_parts(vec![1, c], out), Op::MeanRows(x), ng)
    }

    /// Reverse sweep from a scalar `loss`. Allowed once per recorded tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if self.backward_done {
            return Err(Error::AlreadyBackpropagated);
        }
        self.backward_done = true;

        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.needs_grad {
                self.propagate(idx, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| g.map(|g| Tensor::from_parts(n.value.shape().to_vec(), g)))
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).1;
                if self.needs(*a) {
                    let da = kernels::matmul_nt(g, self.value(*b).data(), m, n, k);
                    self.acc(grads, *a, |buf| add_into(buf, &da));
                }
                if self.needs(*b) {
                    let av = self.value(*a).data();
                    self.acc(grads, *b, |buf| kernels::matmul_tn_acc(av, g, m, k, n, buf));
                }
            }
            Op::MatMulNT(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).0;
                if self.needs(*a) {
                    let da = kernels::matmul(g, self.value(*b).data(), m, n, k);
                    self.acc(grads, *a, |buf| add_into(buf, &da));
                }
                if self.needs(*b) {
                    let av = self.value(*a).data();
                    self.acc(grads, *b, |buf| kernels::matmul_tn_acc(g, av, m, n, k, buf));
                }
            }
            Op::Transpose(a) => {
                let (r, c) = out.dims2();
                let dt = kernels::transpose(g, r, c);
                self.acc(grads, *a, |buf| add_into(buf, &dt));
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.needs(*v) {
                        self.acc(grads, *v, |buf| add_into(buf, g));
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    self.acc(grads, *a, |buf| add_into(buf, g));
                }
                if self.needs(*b) {
                    self.acc(grads, *b, |buf| {
                        buf.iter_mut().zip(g).for_each(|(o, v)| *o = *o - *v)
                    });
                }
            }
            Op::AddRow(x, bias) => {
                if self.needs(*x) {
                    self.acc(grads, *x, |buf| add_into(buf, g));
                }
                if self.needs(*bias) {
                    let c = out.dims2().1;
                    self.acc(grads, *bias, |buf| {
                        for (i, v) in g.iter().enumerate() {
                            buf[i % c] = buf[i % c] + *v;
                        }
                    });
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let bv = self.value(*b).data();
                    self.acc(grads, *a, |buf| {
                        for i in 0..buf.len() {
                            buf[i] = buf[i] + g[i] * bv[i];
                        }
                    });
                }
                if self.needs(*b) {
                    let av = self.value(*a).data();
                    self.acc(grads, *b, |buf| {
                        for i in 0..buf.len() {
                            buf[i] = buf[i] + g[i] * av[i];
                        }
                    });
                }
            }
            Op::Scale(a, s) => {
                self.acc(grads, *a, |buf| {
                    buf.iter_mut().zip(g).for_each(|(o, v)| *o = *o + *v * *s)
                });
            }
            Op::AddScalar(a) => self.acc(grads, *a, |buf| add_into(buf, g)),
            Op::Sum(a) => {
                let g0 = g[0];
                self.acc(grads, *a, |buf| buf.iter_mut().for_each(|o| *o = *o + g0));
            }
            Op::Gather { table, ids } => {
                let d = out.dims2().1;
                self.acc(grads, *table, |buf| {
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut buf[id * d..(id + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                });
            }
            Op::Select { src, rows, cols } => {
                let c = self.dims(*src).1;
                self.acc(grads, *src, |buf| {
                    let mut k = 0;
                    for &i in rows {
                        for &j in cols {
                            buf[i * c + j] = buf[i * c + j] + g[k];
                            k += 1;
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let (r, total) = out.dims2();
                let mut off = 0;
                for p in parts {
                    let w = self.dims(*p).1;
                    if self.needs(*p) {
                        self.acc(grads, *p, |buf| {
                            for i in 0..r {
                                add_into(
                                    &mut buf[i * w..(i + 1) * w],
                                    &g[i * total + off..i * total + off + w],
                                );
                            }
                        });
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = self.value(*p).numel();
                    if self.needs(*p) {
                        self.acc(grads, *p, |buf| add_into(buf, &g[off..off + n]));
                    }
                    off += n;
                }
            }
            Op::MaskedSoftmax(x) => {
                let (r, c) = out.dims2();
                let y = out.data();
                self.acc(grads, *x, |buf| {
                    for i in 0..r {
                        let yr = &y[i * c..(i + 1) * c];
                        let gr = &g[i * c..(i + 1) * c];
                        let dotp = kernels::dot(yr, gr);
                        for j in 0..c {
                            buf[i * c + j] = buf[i * c + j] + yr[j] * (gr[j] - dotp);
                        }
                    }
                });
            }
            Op::RowNormalize(x) => {
                let (r, c) = out.dims2();
                let y = out.data();
                let xv = self.value(*x).data();
                self.acc(grads, *x, |buf| {
                    for i in 0..r {
                        let s = xv[i * c..(i + 1) * c].iter().fold(T::zero(), |s, v| s + *v);
                        let yr = &y[i * c..(i + 1) * c];
                        let gr = &g[i * c..(i + 1) * c];
                        let dotp = kernels::dot(yr, gr);
                        for j in 0..c {
                            buf[i * c + j] = buf[i * c + j] + (gr[j] - dotp) / s;
                        }
                    }
                });
            }
            Op::LayerNorm {
                src,
                gain,
                bias,
                xhat,
                inv,
            } => {
                let (r, d) = out.dims2();
                if self.needs(*gain) {
                    self.acc(grads, *gain, |buf| {
                        for k in 0..r * d {
                            buf[k % d] = buf[k % d] + g[k] * xhat[k];
                        }
                    });
                }
                if self.needs(*bias) {
                    self.acc(grads, *bias, |buf| {
                        for k in 0..r * d {
                            buf[k % d] = buf[k % d] + g[k];
                        }
                    });
                }
                if self.needs(*src) {
                    let gv = self.value(*gain).data();
                    let dn = T::from_usize(d).unwrap();
                    self.acc(grads, *src, |buf| {
                        for i in 0..r {
                            let xh = &xhat[i * d..(i + 1) * d];
                            let gr = &g[i * d..(i + 1) * d];
                            let mut m1 = T::zero();
                            let mut m2 = T::zero();
                            for j in 0..d {
                                let dxh = gr[j] * gv[j];
                                m1 = m1 + dxh;
                                m2 = m2 + dxh * xh[j];
                            }
                            m1 = m1 / dn;
                            m2 = m2 / dn;
                            for j in 0..d {
                                let dxh = gr[j] * gv[j];
                                buf[i * d + j] = buf[i * d + j] + inv[i] * (dxh - m1 - xh[j] * m2);
                            }
                        }
                    });
                }
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                self.acc(grads, *x, |buf| {
                    for i in 0..buf.len() {
                        buf[i] = buf[i] + g[i] * kernels::gelu_grad(xv[i]);
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let (r, v) = self.dims(*logits);
                let scale = g[0] / T::from_usize(r).unwrap();
                self.acc(grads, *logits, |buf| {
                    for i in 0..r {
                        for j in 0..v {
                            let mut p = probs[i * v + j];
                            if j == targets[i] {
                                p = p - T::one();
                            }
                            buf[i * v + j] = buf[i * v + j] + p * scale;
                        }
                    }
                });
            }
            Op::MeanRows(x) => {
                let (r, c) = self.dims(*x);
                let n = T::from_usize(r).unwrap();
                self.acc(grads, *x, |buf| {
                    for i in 0..r {
                        for j in 0..c {
                            buf[i * c + j] = buf[i * c + j] + g[j] / n;
                        }
                    }
                });
            }
        }
    }

    fn acc(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if !self.needs(v) {
            return;
        }
        let n = self.nodes[v.0].value.numel();
        let buf = grads[v.0].get_or_insert_with(|| vec![T::zero(); n]);
        f(buf);
    }
}

fn add_into<T: Scalar>(buf: &mut [T], g: &[T]) {
    buf.iter_mut().zip(g).for_each(|(o, v)| *o = *o + *v);
}
