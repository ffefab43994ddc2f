//! Reverse-mode automatic differentiation on a flat tape.
//!
//! Values are dense tensors; every operation pushes one node whose parents
//! are earlier nodes, so insertion order is already a topological order and
//! the backward pass is a single reverse sweep. Gradients are only
//! materialized for nodes on a path from a trainable leaf to the loss.

use crate::scalar::Real;
use crate::tensor::{matmul_acc, matmul_nt_acc, matmul_tn_acc, Tensor};

pub const SELU_LAMBDA: f64 = 1.0507009873554805;
pub const SELU_ALPHA: f64 = 1.6732632423543772;

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub usize);

/// Linear gather: each output entry is `w0*src[i0] + w1*src[i1]`.
#[derive(Debug, Clone)]
pub struct LincombTerm<F> {
    pub i0: usize,
    pub w0: F,
    pub i1: usize,
    pub w1: F,
}

#[derive(Debug)]
enum Op<F> {
    Leaf,
    Add(Var, Var),
    AddBroadcastRow(Var, Var),
    AddScalar(Var, F),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    Matmul(Var, Var),
    MatmulNT(Var, Var),
    ConcatCols(Var, Var),
    SliceCols(Var, usize, usize),
    SliceRows(Var, usize, usize),
    StackRows(Vec<Var>),
    RepeatRow(Var, usize),
    Sigmoid(Var),
    Tanh(Var),
    Selu(Var),
    Exp(Var),
    Sin(Var),
    Abs(Var),
    Clamp(Var, F, F),
    SoftmaxRows(Var),
    SumAll(Var),
    CumTrapz(Var, F),
    Lincomb(Var, Vec<LincombTerm<F>>),
}

struct Node<F> {
    value: Tensor<F>,
    grad: Option<Tensor<F>>,
    op: Op<F>,
    needs_grad: bool,
}

pub struct Tape<F: Real> {
    nodes: Vec<Node<F>>,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` target with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor<F>> {
        self.nodes[v.0].grad.as_ref()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, grad: None, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable leaf: gradients are accumulated for it.
    pub fn leaf(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Constant leaf: no gradient is tracked through it.
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(av.shape, bv.shape, "add: shape mismatch");
        let data = av.data.iter().zip(&bv.data).map(|(&x, &y)| x + y).collect();
        let shape = av.shape.clone();
        let ng = self.ng(a) || self.ng(b);
        self.push(Tensor::new(data, shape), Op::Add(a, b), ng)
    }

    /// `a: [m,n]` plus row vector `b: [n]` added to every row.
    pub fn add_broadcast_row(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (m, n) = (av.rows(), av.cols());
        assert_eq!(bv.len(), n, "add_broadcast_row: width mismatch");
        let mut data = av.data.clone();
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] += bv.data[j];
            }
        }
        let shape = av.shape.clone();
        let ng = self.ng(a) || self.ng(b);
        self.push(Tensor::new(data, shape), Op::AddBroadcastRow(a, b), ng)
    }

    pub fn add_scalar(&mut self, a: Var, c: F) -> Var {
        let av = &self.nodes[a.0].value;
        let data = av.data.iter().map(|&x| x + c).collect();
        let shape = av.shape.clone();
        let ng = self.ng(a);
        self.push(Tensor::new(data, shape), Op::AddScalar(a, c), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(av.shape, bv.shape, "sub: shape mismatch");
        let data = av.data.iter().zip(&bv.data).map(|(&x, &y)| x - y).collect();
        let shape = av.shape.clone();
        let ng = self.ng(a) || self.ng(b);
        self.push(Tensor::new(data, shape), Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(av.shape, bv.shape, "mul: shape mismatch");
        let data = av.data.iter().zip(&bv.data).map(|(&x, &y)| x * y).collect();
        let shape = av.shape.clone();
        let ng = self.ng(a) || self.ng(b);
        self.push(Tensor::new(data, shape), Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, c: F) -> Var {
        let av = &self.nodes[a.0].value;
        let data = av.data.iter().map(|&x| x * c).collect();
        let shape = av.shape.clone();
        let ng = self.ng(a);
        self.push(Tensor::new(data, shape), Op::Scale(a, c), ng)
    }

    /// `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        assert_eq!(bv.rows(), k, "matmul: inner dimension mismatch");
        let mut data = vec![F::zero(); m * n];
        matmul_acc(&mut data, &av.data, &bv.data, m, k, n);
        let ng = self.ng(a) || self.ng(b);
        self.push(Tensor::matrix(m, n, data), Op::Matmul(a, b), ng)
    }

    /// `a x b^T`: `[m,k] x [n,k]^T -> [m,n]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (m, k, n) = (av.rows(), av.cols(), bv.rows());
        assert_eq!(bv.cols(), k, "matmul_nt: inner dimension mismatch");
        let mut data = vec![F::zero(); m * n];
        matmul_nt_acc(&mut data, &av.data, &bv.data, m, k, n);
        let ng = self.ng(a) || self.ng(b);
        self.push(Tensor::matrix(m, n, data), Op::MatmulNT(a, b), ng)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let m = av.rows();
        assert_eq!(bv.rows(), m, "concat_cols: row mismatch");
        let (na, nb) = (av.cols(), bv.cols());
        let mut data = Vec::with_capacity(m * (na + nb));
        for i in 0..m {
            data.extend_from_slice(&av.data[i * na..(i + 1) * na]);
            data.extend_from_slice(&bv.data[i * nb..(i + 1) * nb]);
        }
        let ng = self.ng(a) || self.ng(b);
        self.push(Tensor::matrix(m, na + nb, data), Op::ConcatCols(a, b), ng)
    }

    pub fn slice_cols(&mut self, a: Var, lo: usize, hi: usize) -> Var {
        let av = &self.nodes[a.0].value;
        let (m, n) = (av.rows(), av.cols());
        assert!(lo < hi && hi <= n, "slice_cols: bad range");
        let mut data = Vec::with_capacity(m * (hi - lo));
        for i in 0..m {
            data.extend_from_slice(&av.data[i * n + lo..i * n + hi]);
        }
        let ng = self.ng(a);
        self.push(Tensor::matrix(m, hi - lo, data), Op::SliceCols(a, lo, hi), ng)
    }

    pub fn slice_rows(&mut self, a: Var, lo: usize, hi: usize) -> Var {
        let av = &self.nodes[a.0].value;
        let (m, n) = (av.rows(), av.cols());
        assert!(lo < hi && hi <= m, "slice_rows: bad range");
        let data = av.data[lo * n..hi * n].to_vec();
        let ng = self.ng(a);
        self.push(Tensor::matrix(hi - lo, n, data), Op::SliceRows(a, lo, hi), ng)
    }

    pub fn row(&mut self, a: Var, i: usize) -> Var {
        self.slice_rows(a, i, i + 1)
    }

    /// Stack `[1,n]` (or `[n]`) rows into `[m,n]`.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Var {
        assert!(!rows.is_empty(), "stack_rows: empty");
        let n = self.nodes[rows[0].0].value.cols();
        let mut data = Vec::with_capacity(rows.len() * n);
        let mut ng = false;
        for &r in rows {
            let rv = &self.nodes[r.0].value;
            assert_eq!(rv.len(), n, "stack_rows: width mismatch");
            data.extend_from_slice(&rv.data);
            ng |= self.ng(r);
        }
        self.push(Tensor::matrix(rows.len(), n, data), Op::StackRows(rows.to_vec()), ng)
    }

    /// Repeat a single row `m` times.
    pub fn repeat_row(&mut self, a: Var, m: usize) -> Var {
        let av = &self.nodes[a.0].value;
        assert_eq!(av.rows(), 1, "repeat_row: expected a single row");
        let n = av.cols();
        let mut data = Vec::with_capacity(m * n);
        for _ in 0..m {
            data.extend_from_slice(&av.data);
        }
        let ng = self.ng(a);
        self.push(Tensor::matrix(m, n, data), Op::RepeatRow(a, m), ng)
    }

    fn unary(&mut self, a: Var, f: impl Fn(F) -> F, op: Op<F>) -> Var {
        let av = &self.nodes[a.0].value;
        let data = av.data.iter().map(|&x| f(x)).collect();
        let shape = av.shape.clone();
        let ng = self.ng(a);
        self.push(Tensor::new(data, shape), op, ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, |x| F::one() / (F::one() + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn selu(&mut self, a: Var) -> Var {
        let lam = F::of(SELU_LAMBDA);
        let alp = F::of(SELU_ALPHA);
        self.unary(
            a,
            move |x| {
                if x > F::zero() {
                    lam * x
                } else {
                    lam * alp * (x.exp() - F::one())
                }
            },
            Op::Selu(a),
        )
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.exp(), Op::Exp(a))
    }

    pub fn sin(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.sin(), Op::Sin(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.abs(), Op::Abs(a))
    }

    pub fn clamp(&mut self, a: Var, lo: F, hi: F) -> Var {
        self.unary(
            a,
            move |x| {
                if x < lo {
                    lo
                } else if x > hi {
                    hi
                } else {
                    x
                }
            },
            Op::Clamp(a, lo, hi),
        )
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let av = &self.nodes[a.0].value;
        let (m, n) = (av.rows(), av.cols());
        let mut data = vec![F::zero(); m * n];
        for i in 0..m {
            let row = &av.data[i * n..(i + 1) * n];
            let mx = row.iter().fold(F::neg_infinity(), |acc, &x| acc.max(x));
            let mut sum = F::zero();
            for j in 0..n {
                let e = (row[j] - mx).exp();
                data[i * n + j] = e;
                sum += e;
            }
            for j in 0..n {
                data[i * n + j] /= sum;
            }
        }
        let ng = self.ng(a);
        self.push(Tensor::matrix(m, n, data), Op::SoftmaxRows(a), ng)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: F = self.nodes[a.0].value.data.iter().copied().sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::SumAll(a), ng)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.nodes[a.0].value.len();
        let s = self.sum_all(a);
        self.scale(s, F::one() / F::of_usize(n))
    }

    /// Cumulative trapezoid over a vector with uniform spacing `dt`;
    /// `out[0] = 0`.
    pub fn cumtrapz(&mut self, a: Var, dt: F) -> Var {
        let av = &self.nodes[a.0].value;
        let n = av.len();
        let half = F::of(0.5);
        let mut data = vec![F::zero(); n];
        for i in 1..n {
            data[i] = data[i - 1] + (av.data[i - 1] + av.data[i]) * half * dt;
        }
        let shape = av.shape.clone();
        let ng = self.ng(a);
        self.push(Tensor::new(data, shape), Op::CumTrapz(a, dt), ng)
    }

    /// Linear gather producing a vector with one entry per term.
    pub fn lincomb(&mut self, a: Var, terms: Vec<LincombTerm<F>>) -> Var {
        let av = &self.nodes[a.0].value;
        let data = terms
            .iter()
            .map(|t| av.data[t.i0] * t.w0 + av.data[t.i1] * t.w1)
            .collect();
        let n = terms.len();
        let ng = self.ng(a);
        self.push(Tensor::new(data, vec![n]), Op::Lincomb(a, terms), ng)
    }

    fn grad_buf(&mut self, v: Var) -> &mut Tensor<F> {
        if self.nodes[v.0].grad.is_none() {
            let shape = self.nodes[v.0].value.shape.clone();
            self.nodes[v.0].grad = Some(Tensor::zeros(&shape));
        }
        self.nodes[v.0].grad.as_mut().unwrap()
    }

    /// Accumulate `d loss / d node` for every node that needs a gradient.
    /// `loss` must be a scalar.
    pub fn backward(&mut self, loss: Var) {
        assert_eq!(self.nodes[loss.0].value.len(), 1, "backward: non-scalar loss");
        self.grad_buf(loss).data[0] = F::one();
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad || self.nodes[idx].grad.is_none() {
                continue;
            }
            let g = self.nodes[idx].grad.take().unwrap();
            self.propagate(idx, &g);
            self.nodes[idx].grad = Some(g);
        }
    }

    fn propagate(&mut self, idx: usize, g: &Tensor<F>) {
        // Values needed from parents are read before grad buffers are
        // borrowed; ops are matched by moving out copies of the metadata.
        let half = F::of(0.5);
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                let (a, b) = (*a, *b);
                if self.ng(a) {
                    let ga = self.grad_buf(a);
                    for (gd, &gv) in ga.data.iter_mut().zip(&g.data) {
                        *gd += gv;
                    }
                }
                if self.ng(b) {
                    let gb = self.grad_buf(b);
                    for (gd, &gv) in gb.data.iter_mut().zip(&g.data) {
                        *gd += gv;
                    }
                }
            }
            Op::AddBroadcastRow(a, b) => {
                let (a, b) = (*a, *b);
                let (m, n) = (g.rows(), g.cols());
                if self.ng(a) {
                    let ga = self.grad_buf(a);
                    for (gd, &gv) in ga.data.iter_mut().zip(&g.data) {
                        *gd += gv;
                    }
                }
                if self.ng(b) {
                    let gb = self.grad_buf(b);
                    for i in 0..m {
                        for j in 0..n {
                            gb.data[j] += g.data[i * n + j];
                        }
                    }
                }
            }
            Op::AddScalar(a, _) => {
                let a = *a;
                if self.ng(a) {
                    let ga = self.grad_buf(a);
                    for (gd, &gv) in ga.data.iter_mut().zip(&g.data) {
                        *gd += gv;
                    }
                }
            }
            Op::Sub(a, b) => {
                let (a, b) = (*a, *b);
                if self.ng(a) {
                    let ga = self.grad_buf(a);
                    for (gd, &gv) in ga.data.iter_mut().zip(&g.data) {
                        *gd += gv;
                    }
                }
                if self.ng(b) {
                    let gb = self.grad_buf(b);
                    for (gd, &gv) in gb.data.iter_mut().zip(&g.data) {
                        *gd -= gv;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                if self.ng(a) {
                    let bdata = self.nodes[b.0].value.data.clone();
                    let ga = self.grad_buf(a);
                    for ((gd, &gv), &bv) in ga.data.iter_mut().zip(&g.data).zip(&bdata) {
                        *gd += gv * bv;
                    }
                }
                if self.ng(b) {
                    let adata = self.nodes[a.0].value.data.clone();
                    let gb = self.grad_buf(b);
                    for ((gd, &gv), &av) in gb.data.iter_mut().zip(&g.data).zip(&adata) {
                        *gd += gv * av;
                    }
                }
            }
            Op::Scale(a, c) => {
                let (a, c) = (*a, *c);
                if self.ng(a) {
                    let ga = self.grad_buf(a);
                    for (gd, &gv) in ga.data.iter_mut().zip(&g.data) {
                        *gd += gv * c;
                    }
                }
            }
            Op::Matmul(a, b) => {
                let (a, b) = (*a, *b);
                let m = self.nodes[a.0].value.rows();
                let k = self.nodes[a.0].value.cols();
                let n = self.nodes[b.0].value.cols();
                if self.ng(a) {
                    let bdata = self.nodes[b.0].value.data.clone();
                    let ga = self.grad_buf(a);
                    matmul_nt_acc(&mut ga.data, &g.data, &bdata, m, n, k);
                }
                if self.ng(b) {
                    let adata = self.nodes[a.0].value.data.clone();
                    let gb = self.grad_buf(b);
                    matmul_tn_acc(&mut gb.data, &adata, &g.data, k, m, n);
                }
            }
            Op::MatmulNT(a, b) => {
                let (a, b) = (*a, *b);
                let m = self.nodes[a.0].value.rows();
                let k = self.nodes[a.0].value.cols();
                let n = self.nodes[b.0].value.rows();
                if self.ng(a) {
                    // dA = dC x B : [m,n] x [n,k]
                    let bdata = self.nodes[b.0].value.data.clone();
                    let ga = self.grad_buf(a);
                    matmul_acc(&mut ga.data, &g.data, &bdata, m, n, k);
                }
                if self.ng(b) {
                    // dB = dC^T x A : [n,m] x [m,k]
                    let adata = self.nodes[a.0].value.data.clone();
                    let gb = self.grad_buf(b);
                    matmul_tn_acc(&mut gb.data, &g.data, &adata, n, m, k);
                }
            }
            Op::ConcatCols(a, b) => {
                let (a, b) = (*a, *b);
                let na = self.nodes[a.0].value.cols();
                let nb = self.nodes[b.0].value.cols();
                let m = g.rows();
                let n = na + nb;
                if self.ng(a) {
                    let ga = self.grad_buf(a);
                    for i in 0..m {
                        for j in 0..na {
                            ga.data[i * na + j] += g.data[i * n + j];
                        }
                    }
                }
                if self.ng(b) {
                    let gb = self.grad_buf(b);
                    for i in 0..m {
                        for j in 0..nb {
                            gb.data[i * nb + j] += g.data[i * n + na + j];
                        }
                    }
                }
            }
            Op::SliceCols(a, lo, hi) => {
                let (a, lo, hi) = (*a, *lo, *hi);
                if self.ng(a) {
                    let n = self.nodes[a.0].value.cols();
                    let m = g.rows();
                    let w = hi - lo;
                    let ga = self.grad_buf(a);
                    for i in 0..m {
                        for j in 0..w {
                            ga.data[i * n + lo + j] += g.data[i * w + j];
                        }
                    }
                }
            }
            Op::SliceRows(a, lo, _hi) => {
                let (a, lo) = (*a, *lo);
                if self.ng(a) {
                    let n = self.nodes[a.0].value.cols();
                    let ga = self.grad_buf(a);
                    for (off, &gv) in g.data.iter().enumerate() {
                        ga.data[lo * n + off] += gv;
                    }
                }
            }
            Op::StackRows(rows) => {
                let rows = rows.clone();
                let n = g.cols();
                for (i, r) in rows.iter().enumerate() {
                    if self.ng(*r) {
                        let gr = self.grad_buf(*r);
                        for j in 0..n {
                            gr.data[j] += g.data[i * n + j];
                        }
                    }
                }
            }
            Op::RepeatRow(a, m) => {
                let (a, m) = (*a, *m);
                if self.ng(a) {
                    let n = g.cols();
                    let ga = self.grad_buf(a);
                    for i in 0..m {
                        for j in 0..n {
                            ga.data[j] += g.data[i * n + j];
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                let a = *a;
                if self.ng(a) {
                    let out = self.nodes[idx].value.data.clone();
                    let ga = self.grad_buf(a);
                    for ((gd, &gv), &s) in ga.data.iter_mut().zip(&g.data).zip(&out) {
                        *gd += gv * s * (F::one() - s);
                    }
                }
            }
            Op::Tanh(a) => {
                let a = *a;
                if self.ng(a) {
                    let out = self.nodes[idx].value.data.clone();
                    let ga = self.grad_buf(a);
                    for ((gd, &gv), &t) in ga.data.iter_mut().zip(&g.data).zip(&out) {
                        *gd += gv * (F::one() - t * t);
                    }
                }
            }
            Op::Selu(a) => {
                let a = *a;
                if self.ng(a) {
                    let lam = F::of(SELU_LAMBDA);
                    let alp = F::of(SELU_ALPHA);
                    let input = self.nodes[a.0].value.data.clone();
                    let ga = self.grad_buf(a);
                    for ((gd, &gv), &x) in ga.data.iter_mut().zip(&g.data).zip(&input) {
                        let d = if x > F::zero() { lam } else { lam * alp * x.exp() };
                        *gd += gv * d;
                    }
                }
            }
            Op::Exp(a) => {
                let a = *a;
                if self.ng(a) {
                    let out = self.nodes[idx].value.data.clone();
                    let ga = self.grad_buf(a);
                    for ((gd, &gv), &e) in ga.data.iter_mut().zip(&g.data).zip(&out) {
                        *gd += gv * e;
                    }
                }
            }
            Op::Sin(a) => {
                let a = *a;
                if self.ng(a) {
                    let input = self.nodes[a.0].value.data.clone();
                    let ga = self.grad_buf(a);
                    for ((gd, &gv), &x) in ga.data.iter_mut().zip(&g.data).zip(&input) {
                        *gd += gv * x.cos();
                    }
                }
            }
            Op::Abs(a) => {
                let a = *a;
                if self.ng(a) {
                    let input = self.nodes[a.0].value.data.clone();
                    let ga = self.grad_buf(a);
                    for ((gd, &gv), &x) in ga.data.iter_mut().zip(&g.data).zip(&input) {
                        let s = if x > F::zero() {
                            F::one()
                        } else if x < F::zero() {
                            -F::one()
                        } else {
                            F::zero()
                        };
                        *gd += gv * s;
                    }
                }
            }
            Op::Clamp(a, lo, hi) => {
                let (a, lo, hi) = (*a, *lo, *hi);
                if self.ng(a) {
                    let input = self.nodes[a.0].value.data.clone();
                    let ga = self.grad_buf(a);
                    for ((gd, &gv), &x) in ga.data.iter_mut().zip(&g.data).zip(&input) {
                        if x >= lo && x <= hi {
                            *gd += gv;
                        }
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                let a = *a;
                if self.ng(a) {
                    let out = self.nodes[idx].value.data.clone();
                    let (m, n) = (g.rows(), g.cols());
                    let ga = self.grad_buf(a);
                    for i in 0..m {
                        let srow = &out[i * n..(i + 1) * n];
                        let grow = &g.data[i * n..(i + 1) * n];
                        let dot: F = srow.iter().zip(grow).map(|(&s, &gv)| s * gv).sum();
                        for j in 0..n {
                            ga.data[i * n + j] += srow[j] * (grow[j] - dot);
                        }
                    }
                }
            }
            Op::SumAll(a) => {
                let a = *a;
                if self.ng(a) {
                    let gv = g.data[0];
                    let ga = self.grad_buf(a);
                    for gd in ga.data.iter_mut() {
                        *gd += gv;
                    }
                }
            }
            Op::CumTrapz(a, dt) => {
                let (a, dt) = (*a, *dt);
                if self.ng(a) {
                    let n = g.len();
                    // suffix[j] = sum_{i >= j} g[i]
                    let mut suffix = vec![F::zero(); n + 1];
                    for j in (0..n).rev() {
                        suffix[j] = suffix[j + 1] + g.data[j];
                    }
                    let ga = self.grad_buf(a);
                    if n > 0 {
                        ga.data[0] += half * dt * suffix[1];
                        for j in 1..n {
                            ga.data[j] += half * dt * (suffix[j] + suffix[j + 1]);
                        }
                    }
                }
            }
            Op::Lincomb(a, terms) => {
                let a = *a;
                let terms = terms.clone();
                if self.ng(a) {
                    let ga = self.grad_buf(a);
                    for (j, t) in terms.iter().enumerate() {
                        ga.data[t.i0] += g.data[j] * t.w0;
                        ga.data[t.i1] += g.data[j] * t.w1;
                    }
                }
            }
        }
    }
}
