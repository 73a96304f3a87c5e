//! Gradient tape.
//!
//! Every operation computes its value eagerly and records what the backward
//! pass needs. Nodes are appended in evaluation order, so walking them in
//! reverse is a valid topological order.

use rand::Rng;

use crate::kernels::{self, AttnLayout};
use crate::param::{ParamId, ParamStore};
use crate::{NumError, Scalar, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Value<T> {
    Owned(Tensor<T>),
    Param(ParamId),
}

enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var, trans_b: bool },
    Add(Var, Var),
    AddRow { x: Var, bias: Var },
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Softmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, mean: Vec<T>, rstd: Vec<T> },
    Gather { table: Var, ids: Vec<usize> },
    Scatter { src: Var, rows: Vec<usize> },
    Concat(Vec<Var>),
    SliceRows { x: Var, start: usize },
    Transpose(Var),
    Sum(Var),
    Attention { q: Var, k: Var, v: Var, layout: AttnLayout, probs: Vec<T> },
    SmoothedCe { logits: Var, targets: Vec<usize>, valid: Vec<bool>, eps: T, probs: Vec<T>, count: usize },
}

struct Node<T> {
    value: Value<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// A single forward pass over a borrowed parameter store.
pub struct Graph<'p, T: Scalar> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
}

fn shape_err(op: &'static str, detail: String) -> NumError {
    NumError::Shape { op, detail }
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Graph { params, nodes: Vec::new(), param_vars: vec![None; params.len()] }
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value: Value::Owned(value), op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.params.value(*id),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn mat(&self, v: Var, op: &'static str) -> Result<(usize, usize), NumError> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => Err(shape_err(op, format!("expected a matrix, got {:?}", s))),
        }
    }

    /// The parameter as a graph node; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node { value: Value::Param(id), op: Op::Leaf, needs_grad: true });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    /// Constant input; no gradient flows into it.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf whose gradient is reported by [`Graph::backward`].
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// `a · b`, or `a · bᵀ` with `trans_b`.
    pub fn matmul_t(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var, NumError> {
        let (m, k) = self.mat(a, "matmul")?;
        let (br, bc) = self.mat(b, "matmul")?;
        let (kb, n) = if trans_b { (bc, br) } else { (br, bc) };
        if k != kb {
            return Err(shape_err(
                "matmul",
                format!("{:?} x {:?}{}", self.shape(a), self.shape(b), if trans_b { "ᵀ" } else { "" }),
            ));
        }
        let mut out = vec![T::zero(); m * n];
        kernels::gemm(self.value(a).data(), false, self.value(b).data(), trans_b, &mut out, m, k, n, T::one(), T::zero());
        let g = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::MatMul { a, b, trans_b }, g))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.matmul_t(a, b, false)
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<(), NumError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.same_shape(a, b, "add")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x + y).collect();
        let t = Tensor::new(self.shape(a), data)?;
        let g = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Add(a, b), g))
    }

    /// Adds a bias vector to every row of a matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var, NumError> {
        let (_, c) = self.mat(x, "add_row")?;
        if self.value(bias).len() != c {
            return Err(shape_err("add_row", format!("{:?} + row {:?}", self.shape(x), self.shape(bias))));
        }
        let b = self.value(bias).data();
        let mut data = self.value(x).data().to_vec();
        for r in data.chunks_mut(c) {
            r.iter_mut().zip(b).for_each(|(v, &w)| *v = *v + w);
        }
        let t = Tensor::new(self.shape(x), data)?;
        let g = self.needs(x) || self.needs(bias);
        Ok(self.push(t, Op::AddRow { x, bias }, g))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.same_shape(a, b, "mul")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x * y).collect();
        let t = Tensor::new(self.shape(a), data)?;
        let g = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Mul(a, b), g))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let t = self.value(x).map(|v| v * c);
        let g = self.needs(x);
        self.push(t, Op::Scale(x, c), g)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| v.max(T::zero()));
        let g = self.needs(x);
        self.push(t, Op::Relu(x), g)
    }

    /// Softmax over the last dimension.
    pub fn softmax(&mut self, x: Var) -> Var {
        let mut t = self.value(x).clone();
        let (_, c) = t.dims2();
        kernels::softmax_rows(t.data_mut(), c);
        let g = self.needs(x);
        self.push(t, Op::Softmax(x), g)
    }

    /// Layer normalization over the last dimension with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, NumError> {
        let (_, c) = self.mat(x, "layer_norm")?;
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(shape_err(
                "layer_norm",
                format!("{:?} with gamma {:?} beta {:?}", self.shape(x), self.shape(gamma), self.shape(beta)),
            ));
        }
        let mut out = vec![T::zero(); self.value(x).len()];
        let (mean, rstd) =
            kernels::layer_norm_forward(self.value(x).data(), self.value(gamma).data(), self.value(beta).data(), c, &mut out);
        let t = Tensor::new(self.shape(x), out)?;
        let g = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(t, Op::LayerNorm { x, gamma, beta, mean, rstd }, g))
    }

    /// Row lookup `table[ids]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, NumError> {
        let (v, d) = self.mat(table, "embedding_lookup")?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(shape_err("embedding_lookup", format!("id {} out of range for table {:?}", bad, [v, d])));
        }
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let t = Tensor::new(&[ids.len(), d], out)?;
        let g = self.needs(table);
        Ok(self.push(t, Op::Gather { table, ids: ids.to_vec() }, g))
    }

    /// Places the rows of `src` at `rows` of a zero matrix with `total` rows.
    pub fn scatter_rows(&mut self, src: Var, rows: &[usize], total: usize) -> Result<Var, NumError> {
        let (n, d) = self.mat(src, "scatter_rows")?;
        if rows.len() != n || rows.iter().any(|&r| r >= total) {
            return Err(shape_err("scatter_rows", format!("{} rows into {} for {:?}", rows.len(), total, [n, d])));
        }
        let mut out = vec![T::zero(); total * d];
        let s = self.value(src).data();
        for (i, &r) in rows.iter().enumerate() {
            for (o, &x) in out[r * d..(r + 1) * d].iter_mut().zip(&s[i * d..(i + 1) * d]) {
                *o += x;
            }
        }
        let t = Tensor::new(&[total, d], out)?;
        let g = self.needs(src);
        Ok(self.push(t, Op::Scatter { src, rows: rows.to_vec() }, g))
    }

    /// Multiplies by a fresh inverted-dropout mask drawn from `rng`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R) -> Result<Var, NumError> {
        if rate <= 0.0 {
            return Ok(x);
        }
        let mask = dropout_mask(rng, self.shape(x), rate);
        let m = self.input(mask);
        self.mul(x, m)
    }

    /// Stacks matrices with equal column counts along rows.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumError> {
        let cols = match parts.first() {
            Some(&p) => self.mat(p, "concat")?.1,
            None => return Err(shape_err("concat", "no inputs".into())),
        };
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, c) = self.mat(p, "concat")?;
            if c != cols {
                return Err(shape_err("concat", format!("column mismatch {} vs {}", c, cols)));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        let g = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Tensor::new(&[rows, cols], data)?, Op::Concat(parts.to_vec()), g))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var, NumError> {
        let (r, c) = self.mat(x, "slice")?;
        if start + len > r {
            return Err(shape_err("slice", format!("rows {}..{} of {:?}", start, start + len, [r, c])));
        }
        let data = self.value(x).data()[start * c..(start + len) * c].to_vec();
        let g = self.needs(x);
        Ok(self.push(Tensor::new(&[len, c], data)?, Op::SliceRows { x, start }, g))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, NumError> {
        let (r, c) = self.mat(x, "transpose")?;
        let src = self.value(x).data();
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let g = self.needs(x);
        Ok(self.push(Tensor::new(&[c, r], out)?, Op::Transpose(x), g))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        let g = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum(x), g)
    }

    /// Fused multi-head scaled dot-product attention; see [`AttnLayout`].
    pub fn attention(&mut self, q: Var, k: Var, v: Var, layout: AttnLayout) -> Result<Var, NumError> {
        let (qr, d) = self.mat(q, "attention")?;
        let (kr, kd) = self.mat(k, "attention")?;
        let (vr, vd) = self.mat(v, "attention")?;
        let kv_rows = layout.kv_groups() * layout.tk;
        if qr != layout.batch * layout.tq
            || kd != d
            || vd != d
            || kr != vr
            || kr < kv_rows
            || layout.heads == 0
            || d % layout.heads != 0
            || (layout.causal && layout.tq != layout.tk)
            || layout.key_valid.as_ref().is_some_and(|m| m.len() != kr)
        {
            return Err(shape_err(
                "attention",
                format!("q {:?} k {:?} v {:?} with {:?}", self.shape(q), self.shape(k), self.shape(v), layout),
            ));
        }
        let (out, probs) =
            kernels::attention_forward(self.value(q).data(), self.value(k).data(), self.value(v).data(), d, &layout);
        let g = self.needs(q) || self.needs(k) || self.needs(v);
        Ok(self.push(Tensor::new(&[qr, d], out)?, Op::Attention { q, k, v, layout, probs }, g))
    }

    /// Mean label-smoothed cross-entropy over the rows marked valid.
    ///
    /// The target distribution puts `1 - eps` on the gold class and
    /// `eps / (V - 1)` on every other class.
    pub fn smoothed_cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        valid: &[bool],
        eps: f64,
    ) -> Result<Var, NumError> {
        let (n, vocab) = self.mat(logits, "label_smoothed_ce")?;
        if targets.len() != n || valid.len() != n {
            return Err(shape_err(
                "label_smoothed_ce",
                format!("{} targets / {} mask for logits {:?}", targets.len(), valid.len(), [n, vocab]),
            ));
        }
        if let Some(t) = targets.iter().zip(valid).find(|(&t, &ok)| ok && t >= vocab) {
            return Err(shape_err("label_smoothed_ce", format!("target {} outside vocabulary {}", t.0, vocab)));
        }
        let count = valid.iter().filter(|&&ok| ok).count();
        if count == 0 {
            return Err(NumError::AllPadded);
        }
        let (on, off) = smoothing_weights::<T>(eps, vocab);
        let mut logp = self.value(logits).data().to_vec();
        kernels::log_softmax_rows(&mut logp, vocab);
        let mut total = T::zero();
        for (r, row) in logp.chunks(vocab).enumerate() {
            if !valid[r] {
                continue;
            }
            for (c, &lp) in row.iter().enumerate() {
                let q = if c == targets[r] { on } else { off };
                total -= q * lp;
            }
        }
        let loss = total / T::lit(count as f64);
        let probs = logp.into_iter().map(|x| x.exp()).collect();
        let g = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SmoothedCe { logits, targets: targets.to_vec(), valid: valid.to_vec(), eps: T::lit(eps), probs, count },
            g,
        ))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>, NumError> {
        if self.value(root).len() != 1 {
            return Err(shape_err("backward", format!("root must be scalar, got {:?}", self.shape(root))));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(self.shape(root), T::one()));
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else { continue };
            self.backprop_node(idx, &dy, &mut grads);
            grads[idx] = Some(dy);
        }
        let params = self
            .param_vars
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (ParamId(i), v)))
            .collect();
        Ok(Gradients { by_node: grads, params })
    }

    fn grad_buf<'g>(&self, grads: &'g mut [Option<Tensor<T>>], v: Var) -> Option<&'g mut [T]> {
        if !self.needs(v) {
            return None;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.shape(v)));
        }
        slot.as_mut().map(|t| t.data_mut())
    }

    fn backprop_node(&self, idx: usize, dy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let dyd = dy.data();
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul { a, b, trans_b } => {
                let (m, k) = self.value(*a).dims2();
                let n = dy.dims2().1;
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.grad_buf(grads, *a) {
                    // dA = dC · op(B)ᵀ
                    kernels::gemm(dyd, false, bv, !*trans_b, ga, m, n, k, T::one(), T::one());
                }
                if let Some(gb) = self.grad_buf(grads, *b) {
                    if *trans_b {
                        // B is [n,k]: dB = dCᵀ · A
                        kernels::gemm(dyd, true, av, false, gb, n, m, k, T::one(), T::one());
                    } else {
                        // dB = Aᵀ · dC
                        kernels::gemm(av, true, dyd, false, gb, k, m, n, T::one(), T::one());
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(g) = self.grad_buf(grads, v) {
                        g.iter_mut().zip(dyd).for_each(|(g, &d)| *g += d);
                    }
                }
            }
            Op::AddRow { x, bias } => {
                if let Some(g) = self.grad_buf(grads, *x) {
                    g.iter_mut().zip(dyd).for_each(|(g, &d)| *g += d);
                }
                let c = self.value(*bias).len();
                if let Some(g) = self.grad_buf(grads, *bias) {
                    for row in dyd.chunks(c) {
                        g.iter_mut().zip(row).for_each(|(g, &d)| *g += d);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(g) = self.grad_buf(grads, *a) {
                    for ((g, &d), &o) in g.iter_mut().zip(dyd).zip(bv) {
                        *g += d * o;
                    }
                }
                if let Some(g) = self.grad_buf(grads, *b) {
                    for ((g, &d), &o) in g.iter_mut().zip(dyd).zip(av) {
                        *g += d * o;
                    }
                }
            }
            Op::Scale(x, c) => {
                if let Some(g) = self.grad_buf(grads, *x) {
                    g.iter_mut().zip(dyd).for_each(|(g, &d)| *g += d * *c);
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                if let Some(g) = self.grad_buf(grads, *x) {
                    for ((g, &d), &v) in g.iter_mut().zip(dyd).zip(xv) {
                        if v > T::zero() {
                            *g += d;
                        }
                    }
                }
            }
            Op::Softmax(x) => {
                let p = match &self.nodes[idx].value {
                    Value::Owned(t) => t,
                    Value::Param(_) => unreachable!("softmax output is owned"),
                };
                let c = p.dims2().1;
                if let Some(g) = self.grad_buf(grads, *x) {
                    for ((gr, dr), pr) in g.chunks_mut(c).zip(dyd.chunks(c)).zip(p.data().chunks(c)) {
                        let dot: T = dr.iter().zip(pr).map(|(&d, &p)| d * p).sum();
                        for ((g, &d), &p) in gr.iter_mut().zip(dr).zip(pr) {
                            *g += p * (d - dot);
                        }
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, mean, rstd } => {
                let xv = self.value(*x).data();
                let gv = self.value(*gamma).data();
                let c = gv.len();
                let n = T::lit(c as f64);
                let xhat = |r: usize, j: usize| (xv[r * c + j] - mean[r]) * rstd[r];
                if let Some(g) = self.grad_buf(grads, *gamma) {
                    for r in 0..mean.len() {
                        for j in 0..c {
                            g[j] += dyd[r * c + j] * xhat(r, j);
                        }
                    }
                }
                if let Some(g) = self.grad_buf(grads, *beta) {
                    for row in dyd.chunks(c) {
                        g.iter_mut().zip(row).for_each(|(g, &d)| *g += d);
                    }
                }
                if let Some(g) = self.grad_buf(grads, *x) {
                    for r in 0..mean.len() {
                        let mut m1 = T::zero();
                        let mut m2 = T::zero();
                        for j in 0..c {
                            let dxh = dyd[r * c + j] * gv[j];
                            m1 += dxh;
                            m2 += dxh * xhat(r, j);
                        }
                        m1 /= n;
                        m2 /= n;
                        for j in 0..c {
                            let dxh = dyd[r * c + j] * gv[j];
                            g[r * c + j] += rstd[r] * (dxh - m1 - xhat(r, j) * m2);
                        }
                    }
                }
            }
            Op::Gather { table, ids } => {
                let d = self.value(*table).dims2().1;
                if let Some(g) = self.grad_buf(grads, *table) {
                    for (i, &id) in ids.iter().enumerate() {
                        for (g, &x) in g[id * d..(id + 1) * d].iter_mut().zip(&dyd[i * d..(i + 1) * d]) {
                            *g += x;
                        }
                    }
                }
            }
            Op::Scatter { src, rows } => {
                let d = self.value(*src).dims2().1;
                if let Some(g) = self.grad_buf(grads, *src) {
                    for (i, &r) in rows.iter().enumerate() {
                        for (g, &x) in g[i * d..(i + 1) * d].iter_mut().zip(&dyd[r * d..(r + 1) * d]) {
                            *g += x;
                        }
                    }
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if let Some(g) = self.grad_buf(grads, p) {
                        g.iter_mut().zip(&dyd[off..off + len]).for_each(|(g, &d)| *g += d);
                    }
                    off += len;
                }
            }
            Op::SliceRows { x, start } => {
                let c = self.value(*x).dims2().1;
                if let Some(g) = self.grad_buf(grads, *x) {
                    g[start * c..start * c + dyd.len()].iter_mut().zip(dyd).for_each(|(g, &d)| *g += d);
                }
            }
            Op::Transpose(x) => {
                let (r, c) = self.value(*x).dims2();
                if let Some(g) = self.grad_buf(grads, *x) {
                    for i in 0..r {
                        for j in 0..c {
                            g[i * c + j] += dyd[j * r + i];
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(g) = self.grad_buf(grads, *x) {
                    g.iter_mut().for_each(|g| *g += dyd[0]);
                }
            }
            Op::Attention { q, k, v, layout, probs } => {
                let d = self.value(*q).dims2().1;
                let mut dq = vec![T::zero(); self.value(*q).len()];
                let mut dk = vec![T::zero(); self.value(*k).len()];
                let mut dv = vec![T::zero(); self.value(*v).len()];
                kernels::attention_backward(
                    self.value(*q).data(),
                    self.value(*k).data(),
                    self.value(*v).data(),
                    probs,
                    dyd,
                    d,
                    layout,
                    &mut dq,
                    &mut dk,
                    &mut dv,
                );
                for (var, part) in [(*q, dq), (*k, dk), (*v, dv)] {
                    if let Some(g) = self.grad_buf(grads, var) {
                        g.iter_mut().zip(&part).for_each(|(g, &d)| *g += d);
                    }
                }
            }
            Op::SmoothedCe { logits, targets, valid, eps, probs, count } => {
                let vocab = self.value(*logits).dims2().1;
                let (on, off) = smoothing_weights::<T>(eps.to_f64().unwrap_or(0.0), vocab);
                let scale = dyd[0] / T::lit(*count as f64);
                if let Some(g) = self.grad_buf(grads, *logits) {
                    for (r, (gr, pr)) in g.chunks_mut(vocab).zip(probs.chunks(vocab)).enumerate() {
                        if !valid[r] {
                            continue;
                        }
                        for (c, (g, &p)) in gr.iter_mut().zip(pr).enumerate() {
                            let q = if c == targets[r] { on } else { off };
                            *g += (p - q) * scale;
                        }
                    }
                }
            }
        }
    }
}

fn smoothing_weights<T: Scalar>(eps: f64, vocab: usize) -> (T, T) {
    let off = if vocab > 1 { eps / (vocab - 1) as f64 } else { 0.0 };
    (T::lit(1.0 - eps), T::lit(off))
}

/// Inverted dropout mask: each entry is `0` with probability `rate`, else
/// `1 / (1 - rate)`.
pub fn dropout_mask<T: Scalar, R: Rng + ?Sized>(rng: &mut R, shape: &[usize], rate: f64) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let keep = T::lit(1.0 / (1.0 - rate));
    let data = (0..n).map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep }).collect();
    Tensor::new(shape, data).expect("shape product matches")
}

/// Result of a backward pass.
pub struct Gradients<T> {
    by_node: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, Var)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to any node that required one.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.by_node.get(v.0).and_then(Option::as_ref)
    }

    /// Gradients of every parameter that took part in the pass.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.params.iter().filter_map(|&(id, v)| self.wrt(v).map(|g| (id, g)))
    }
}
