//! Reverse-mode differentiation over small dense tensors.
//!
//! A [`Tape`] records every operation of one forward pass. Leaves are either
//! registered parameters (gradients wanted) or constants. Calling
//! [`Tape::backward`] on a scalar node propagates adjoints back to every leaf;
//! nodes that do not depend on any parameter are skipped entirely, which is
//! what makes attacking a frozen model cheap: only the path from the attack
//! logits to the loss is differentiated.

use super::ops::softmax_in_place;
use super::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatVec(Var, Var),
    VecMat(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Slice(Var, usize),
    Concat(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    StackRows(Vec<Var>),
    Softmax(Var, f64),
    CrossEntropy(Var, Vec<f64>),
    /// Scalar node whose partial derivatives w.r.t. its inputs were computed
    /// during the forward evaluation.
    Scalar(Vec<(Var, Vec<f64>)>),
    ConvMaxPool {
        input: Var,
        kernel: Var,
        bias: Var,
        width: usize,
        argmax: Vec<usize>,
    },
    Sum(Vec<Var>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation graph for one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<Var>,
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient w.r.t. `var`; exactly zero when `var` is not on a path to the loss.
    pub fn wrt(&self, var: Var) -> Tensor {
        let shape = self.shapes[var.0].clone();
        match &self.grads[var.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Registers a trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        let v = self.push(value, Op::Leaf, true);
        self.params.push(v);
        v
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Every leaf registered with [`Tape::param`], in registration order.
    pub fn registered_params(&self) -> &[Var] {
        &self.params
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    /// `m` is `[r, c]`, `x` is `[c]`; returns `[r]`.
    pub fn matvec(&mut self, m: Var, x: Var) -> Var {
        let (mv, xv) = (&self.nodes[m.0].value, &self.nodes[x.0].value);
        let (r, c) = (mv.rows(), mv.cols());
        assert_eq!(c, xv.len(), "matvec width");
        let md = mv.data();
        let xd = xv.data();
        let out: Vec<f64> = (0..r)
            .map(|i| {
                md[i * c..(i + 1) * c]
                    .iter()
                    .zip(xd)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        let rg = self.rg(m) || self.rg(x);
        self.push(Tensor::vector(out), Op::MatVec(m, x), rg)
    }

    /// `a` is `[r]`, `m` is `[r, c]`; returns `a^T m` of shape `[c]`.
    pub fn vecmat(&mut self, a: Var, m: Var) -> Var {
        let (av, mv) = (&self.nodes[a.0].value, &self.nodes[m.0].value);
        let (r, c) = (mv.rows(), mv.cols());
        assert_eq!(r, av.len(), "vecmat height");
        let mut out = vec![0.0; c];
        for (i, &w) in av.data().iter().enumerate() {
            for (o, &x) in out.iter_mut().zip(mv.row(i)) {
                *o += w * x;
            }
        }
        let rg = self.rg(a) || self.rg(m);
        self.push(Tensor::vector(out), Op::VecMat(a, m), rg)
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(av.len(), bv.len(), "elementwise length");
        let out: Vec<f64> = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(av.shape().to_vec(), out).expect("same shape");
        let rg = self.rg(a) || self.rg(b);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let av = &self.nodes[a.0].value;
        let out: Vec<f64> = av.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(av.shape().to_vec(), out).expect("same shape");
        let rg = self.rg(a);
        self.push(value, op, rg)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.map(a, |x| x * k, Op::Scale(a, k))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    /// Contiguous slice `[start, start + len)` of a vector.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.nodes[a.0].value.data()[start..start + len].to_vec();
        let rg = self.rg(a);
        self.push(Tensor::vector(out), Op::Slice(a, start), rg)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut out = Vec::new();
        for p in parts {
            out.extend_from_slice(self.nodes[p.0].value.data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Tensor::vector(out), Op::Concat(parts.to_vec()), rg)
    }

    /// Selects rows of a matrix into a new `[rows.len(), c]` matrix.
    pub fn gather_rows(&mut self, m: Var, rows: &[usize]) -> Var {
        let mv = &self.nodes[m.0].value;
        let c = mv.cols();
        let mut out = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            out.extend_from_slice(mv.row(r));
        }
        let rg = self.rg(m);
        self.push(
            Tensor::matrix(rows.len(), c, out),
            Op::GatherRows(m, rows.to_vec()),
            rg,
        )
    }

    /// Single row of a matrix as a vector.
    pub fn row(&mut self, m: Var, index: usize) -> Var {
        let mv = &self.nodes[m.0].value;
        let out = mv.row(index).to_vec();
        let rg = self.rg(m);
        self.push(Tensor::vector(out), Op::GatherRows(m, vec![index]), rg)
    }

    /// Stacks equal-length vectors into a matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Var {
        assert!(!rows.is_empty(), "stack of nothing");
        let c = self.nodes[rows[0].0].value.len();
        let mut out = Vec::with_capacity(rows.len() * c);
        for r in rows {
            let d = self.nodes[r.0].value.data();
            assert_eq!(d.len(), c, "ragged stack");
            out.extend_from_slice(d);
        }
        let rg = rows.iter().any(|&r| self.rg(r));
        self.push(
            Tensor::matrix(rows.len(), c, out),
            Op::StackRows(rows.to_vec()),
            rg,
        )
    }

    /// Softmax of `a / temperature`. Callers validate the temperature.
    pub fn softmax(&mut self, a: Var, temperature: f64) -> Var {
        let mut out: Vec<f64> = self.nodes[a.0].value.data().to_vec();
        softmax_in_place(&mut out, temperature);
        let rg = self.rg(a);
        self.push(Tensor::vector(out), Op::Softmax(a, temperature), rg)
    }

    /// Negative log-likelihood of `target` under `softmax(logits)`.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Var {
        let mut probs = self.nodes[logits.0].value.data().to_vec();
        assert!(target < probs.len(), "cross-entropy target out of range");
        let lse = super::ops::log_sum_exp_unchecked(&probs);
        let loss = lse - probs[target];
        for p in probs.iter_mut() {
            *p = (*p - lse).exp();
        }
        probs[target] -= 1.0;
        let rg = self.rg(logits);
        self.push(Tensor::scalar(loss), Op::CrossEntropy(logits, probs), rg)
    }

    /// Scalar node with caller-supplied value and partial derivatives.
    pub fn custom_scalar(&mut self, value: f64, partials: Vec<(Var, Vec<f64>)>) -> Var {
        for (v, g) in &partials {
            assert_eq!(self.nodes[v.0].value.len(), g.len(), "partial length");
        }
        let rg = partials.iter().any(|(v, _)| self.rg(*v));
        self.push(Tensor::scalar(value), Op::Scalar(partials), rg)
    }

    /// Zero-padded 1-D convolution over the rows of `input` (`[len, c]`),
    /// followed by max pooling over positions.
    ///
    /// `kernel` is `[filters, width * c]`, `bias` is `[filters]`. Output has
    /// one entry per filter. Padding is `(width - 1) / 2` on the left and the
    /// remainder on the right, so there is one window per input row.
    pub fn conv_max_pool(&mut self, input: Var, kernel: Var, bias: Var, width: usize) -> Var {
        let iv = &self.nodes[input.0].value;
        let kv = &self.nodes[kernel.0].value;
        let bv = &self.nodes[bias.0].value;
        let (len, c) = (iv.rows(), iv.cols());
        let filters = kv.rows();
        assert_eq!(kv.cols(), width * c, "kernel width");
        assert_eq!(bv.len(), filters, "bias length");
        let left = (width - 1) / 2;
        let mut best = vec![f64::NEG_INFINITY; filters];
        let mut argmax = vec![0usize; filters];
        for pos in 0..len {
            for f in 0..filters {
                let krow = kv.row(f);
                let mut acc = bv.data()[f];
                for k in 0..width {
                    let src = pos as isize + k as isize - left as isize;
                    if src < 0 || src as usize >= len {
                        continue;
                    }
                    let x = iv.row(src as usize);
                    acc += krow[k * c..(k + 1) * c]
                        .iter()
                        .zip(x)
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
                }
                if acc > best[f] {
                    best[f] = acc;
                    argmax[f] = pos;
                }
            }
        }
        let rg = self.rg(input) || self.rg(kernel) || self.rg(bias);
        self.push(
            Tensor::vector(best),
            Op::ConvMaxPool {
                input,
                kernel,
                bias,
                width,
                argmax,
            },
            rg,
        )
    }

    /// Sum of scalar nodes.
    pub fn sum(&mut self, terms: &[Var]) -> Var {
        let total = terms.iter().map(|t| self.nodes[t.0].value.item()).sum();
        let rg = terms.iter().any(|&t| self.rg(t));
        self.push(Tensor::scalar(total), Op::Sum(terms.to_vec()), rg)
    }

    /// Propagates adjoints from the scalar node `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        assert_eq!(self.nodes[loss.0].value.len(), 1, "backward from non-scalar");
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        }
    }

    fn accumulate<'a>(&self, grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let len = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatVec(m, x) => {
                let mv = &self.nodes[m.0].value;
                let xv = self.nodes[x.0].value.data();
                let c = mv.cols();
                if let Some(gm) = self.accumulate(grads, *m) {
                    for (i, &gi) in g.iter().enumerate() {
                        if gi == 0.0 {
                            continue;
                        }
                        for (o, &xj) in gm[i * c..(i + 1) * c].iter_mut().zip(xv) {
                            *o += gi * xj;
                        }
                    }
                }
                if let Some(gx) = self.accumulate(grads, *x) {
                    for (i, &gi) in g.iter().enumerate() {
                        for (o, &mij) in gx.iter_mut().zip(mv.row(i)) {
                            *o += gi * mij;
                        }
                    }
                }
            }
            Op::VecMat(a, m) => {
                let av = self.nodes[a.0].value.data();
                let mv = &self.nodes[m.0].value;
                let c = mv.cols();
                if let Some(ga) = self.accumulate(grads, *a) {
                    for (i, o) in ga.iter_mut().enumerate() {
                        *o += mv.row(i).iter().zip(g).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
                if let Some(gm) = self.accumulate(grads, *m) {
                    for (i, &ai) in av.iter().enumerate() {
                        for (o, &gj) in gm[i * c..(i + 1) * c].iter_mut().zip(g) {
                            *o += ai * gj;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(gv) = self.accumulate(grads, v) {
                        add_into(gv, g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.accumulate(grads, *a) {
                    add_into(ga, g);
                }
                if let Some(gb) = self.accumulate(grads, *b) {
                    for (o, &x) in gb.iter_mut().zip(g) {
                        *o -= x;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.nodes[a.0].value.data(), self.nodes[b.0].value.data());
                if let Some(ga) = self.accumulate(grads, *a) {
                    for ((o, &x), &y) in ga.iter_mut().zip(g).zip(bv) {
                        *o += x * y;
                    }
                }
                if let Some(gb) = self.accumulate(grads, *b) {
                    for ((o, &x), &y) in gb.iter_mut().zip(g).zip(av) {
                        *o += x * y;
                    }
                }
            }
            Op::Scale(a, k) => {
                if let Some(ga) = self.accumulate(grads, *a) {
                    for (o, &x) in ga.iter_mut().zip(g) {
                        *o += x * k;
                    }
                }
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                if let Some(ga) = self.accumulate(grads, *a) {
                    for ((o, &x), &s) in ga.iter_mut().zip(g).zip(y) {
                        *o += x * s * (1.0 - s);
                    }
                }
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                if let Some(ga) = self.accumulate(grads, *a) {
                    for ((o, &x), &t) in ga.iter_mut().zip(g).zip(y) {
                        *o += x * (1.0 - t * t);
                    }
                }
            }
            Op::Slice(a, start) => {
                if let Some(ga) = self.accumulate(grads, *a) {
                    add_into(&mut ga[*start..*start + g.len()], g);
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let len = self.nodes[p.0].value.len();
                    if let Some(gp) = self.accumulate(grads, *p) {
                        add_into(gp, &g[off..off + len]);
                    }
                    off += len;
                }
            }
            Op::GatherRows(m, rows) => {
                let c = self.nodes[m.0].value.cols();
                if let Some(gm) = self.accumulate(grads, *m) {
                    for (k, &r) in rows.iter().enumerate() {
                        add_into(&mut gm[r * c..(r + 1) * c], &g[k * c..(k + 1) * c]);
                    }
                }
            }
            Op::StackRows(rows) => {
                let c = node.value.cols();
                for (k, r) in rows.iter().enumerate() {
                    if let Some(gr) = self.accumulate(grads, *r) {
                        add_into(gr, &g[k * c..(k + 1) * c]);
                    }
                }
            }
            Op::Softmax(a, t) => {
                let y = node.value.data();
                let dot: f64 = y.iter().zip(g).map(|(p, x)| p * x).sum();
                if let Some(ga) = self.accumulate(grads, *a) {
                    for ((o, &p), &x) in ga.iter_mut().zip(y).zip(g) {
                        *o += p * (x - dot) / t;
                    }
                }
            }
            Op::CrossEntropy(logits, local) => {
                if let Some(gl) = self.accumulate(grads, *logits) {
                    for (o, &d) in gl.iter_mut().zip(local) {
                        *o += g[0] * d;
                    }
                }
            }
            Op::Scalar(partials) => {
                for (v, d) in partials {
                    if let Some(gv) = self.accumulate(grads, *v) {
                        for (o, &x) in gv.iter_mut().zip(d) {
                            *o += g[0] * x;
                        }
                    }
                }
            }
            Op::ConvMaxPool {
                input,
                kernel,
                bias,
                width,
                argmax,
            } => {
                let iv = &self.nodes[input.0].value;
                let kv = &self.nodes[kernel.0].value;
                let (len, c) = (iv.rows(), iv.cols());
                let left = (*width - 1) / 2;
                let wc = width * c;
                if let Some(gb) = self.accumulate(grads, *bias) {
                    add_into(gb, g);
                }
                if let Some(gk) = self.accumulate(grads, *kernel) {
                    for (f, &pos) in argmax.iter().enumerate() {
                        for k in 0..*width {
                            let src = pos as isize + k as isize - left as isize;
                            if src < 0 || src as usize >= len {
                                continue;
                            }
                            let x = iv.row(src as usize);
                            for (o, &xv) in gk[f * wc + k * c..f * wc + (k + 1) * c]
                                .iter_mut()
                                .zip(x)
                            {
                                *o += g[f] * xv;
                            }
                        }
                    }
                }
                if let Some(gi) = self.accumulate(grads, *input) {
                    for (f, &pos) in argmax.iter().enumerate() {
                        let krow = kv.row(f);
                        for k in 0..*width {
                            let src = pos as isize + k as isize - left as isize;
                            if src < 0 || src as usize >= len {
                                continue;
                            }
                            let s = src as usize;
                            for (o, &kw) in gi[s * c..(s + 1) * c]
                                .iter_mut()
                                .zip(&krow[k * c..(k + 1) * c])
                            {
                                *o += g[f] * kw;
                            }
                        }
                    }
                }
            }
            Op::Sum(terms) => {
                for t in terms {
                    if let Some(gt) = self.accumulate(grads, *t) {
                        gt[0] += g[0];
                    }
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (o, &x) in dst.iter_mut().zip(src) {
        *o += x;
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
