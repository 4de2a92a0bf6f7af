//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation eagerly; [`Graph::backward`] walks the
//! tape in reverse and returns gradients for parameters and tracked inputs.

use std::collections::BTreeMap;

use crate::error::Result;
use crate::kernels::{self, ConvSpec};
use crate::params::ParamStore;
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<S> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, S),
    BiasAdd(Var, Var),
    MulChannel(Var, Var),
    Linear(Var, Var, Option<Var>),
    Conv(Var, Var, Option<Var>, ConvSpec),
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Relu(Var),
    Sigmoid(Var),
    Log(Var),
    Clamp(Var, S, S),
    Softmax(Var),
    LogSoftmax(Var),
    Reshape(Var),
    Concat(Vec<Var>),
    SliceLast(Var, usize),
    SpatialMean(Var),
    SpatialBroadcast(Var),
    UpsampleNearest(Var, usize),
    Bilinear(Var),
    AvgPool(Var, usize),
    SelectFrames(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

pub struct Graph<'p, S: Real> {
    params: Option<&'p ParamStore<S>>,
    nodes: Vec<Node<S>>,
    param_vars: BTreeMap<String, Var>,
    frozen: Vec<String>,
}

impl<S: Real> Default for Graph<'_, S> {
    fn default() -> Self {
        Self::new()
    }
}

/// `C = op(A) * op(B)` for row-major matrices; `ta`/`tb` transpose the operand.
fn matmul<S: Real>(a: &[S], ar: usize, ac: usize, ta: bool, b: &[S], br: usize, bc: usize, tb: bool) -> Tensor<S> {
    let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
    let (k2, n) = if tb { (bc, br) } else { (br, bc) };
    assert_eq!(k, k2, "matmul inner dimensions");
    let (rsa, csa) = if ta { (1, ac as isize) } else { (ac as isize, 1) };
    let (rsb, csb) = if tb { (1, bc as isize) } else { (bc as isize, 1) };
    let mut out = Tensor::zeros(&[m, n]);
    S::gemm(m, k, n, S::one(), a, rsa, csa, b, rsb, csb, S::zero(), out.data_mut(), n as isize, 1);
    out
}

fn sum_rows<S: Real>(g: &Tensor<S>) -> Tensor<S> {
    let c = g.last_dim();
    let mut out = Tensor::zeros(&[c]);
    for row in g.data().chunks_exact(c) {
        for (o, &v) in out.data_mut().iter_mut().zip(row) {
            *o += v;
        }
    }
    out
}

impl<'p, S: Real> Graph<'p, S> {
    pub fn new() -> Self {
        Self { params: None, nodes: Vec::new(), param_vars: BTreeMap::new(), frozen: Vec::new() }
    }

    pub fn with_params(params: &'p ParamStore<S>) -> Self {
        Self { params: Some(params), ..Self::new() }
    }

    /// Parameters whose name starts with `prefix` receive no gradient.
    pub fn freeze(&mut self, prefix: impl Into<String>) {
        self.frozen.push(prefix.into());
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf whose gradient is reported by [`Graph::backward`].
    pub fn input(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.param_vars.get(name) {
            return Ok(v);
        }
        let store = self
            .params
            .ok_or_else(|| crate::error::AvsError::MissingParam(name.to_string()))?;
        let value = store.get(name)?.clone();
        let trainable = !self.frozen.iter().any(|p| name.starts_with(p.as_str()));
        let v = self.push(value, Op::Leaf, trainable);
        self.param_vars.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn unary(&mut self, x: Var, value: Tensor<S>, op: Op<S>) -> Var {
        let rg = self.rg(x);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shapes");
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub shapes");
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shapes");
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Mul(a, b), rg)
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: S, shift: S) -> Var {
        let v = self.value(x).map(|e| scale * e + shift);
        self.unary(x, v, Op::Affine(x, scale))
    }

    pub fn scale(&mut self, x: Var, scale: S) -> Var {
        self.affine(x, scale, S::zero())
    }

    /// Adds a `[C]` vector to every row of a `[..., C]` tensor.
    pub fn bias_add(&mut self, x: Var, bias: Var) -> Var {
        let c = self.value(x).last_dim();
        assert_eq!(self.value(bias).len(), c, "bias length");
        let mut v = self.value(x).clone();
        let b = self.value(bias).data().to_vec();
        for row in v.data_mut().chunks_exact_mut(c) {
            for (o, &bb) in row.iter_mut().zip(&b) {
                *o += bb;
            }
        }
        let rg = self.rg(x) || self.rg(bias);
        self.push(v, Op::BiasAdd(x, bias), rg)
    }

    /// `x[..., c] * m[..., 0]`: multiplies every channel by a per-position scalar.
    pub fn mul_channel(&mut self, x: Var, m: Var) -> Var {
        let xs = self.shape(x).to_vec();
        let ms = self.shape(m);
        assert_eq!(ms[..ms.len() - 1], xs[..xs.len() - 1], "mul_channel leading shape");
        assert_eq!(*ms.last().unwrap(), 1, "mul_channel mask must have one channel");
        let c = *xs.last().unwrap();
        let mut v = self.value(x).clone();
        let md = self.value(m).data().to_vec();
        for (row, &mm) in v.data_mut().chunks_exact_mut(c).zip(&md) {
            for o in row {
                *o *= mm;
            }
        }
        let rg = self.rg(x) || self.rg(m);
        self.push(v, Op::MulChannel(x, m), rg)
    }

    /// Position-wise linear map over the last axis: `[..., Cin] -> [..., Cout]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let xv = self.value(x);
        let (cin, cout) = self.value(w).dims2().expect("linear weight must be [Cin, Cout]");
        assert_eq!(xv.last_dim(), cin, "linear input channels");
        let rows = xv.rows();
        let mut out = matmul(xv.data(), rows, cin, false, self.value(w).data(), cin, cout, false);
        if let Some(b) = b {
            let bd = self.value(b).data();
            for row in out.data_mut().chunks_exact_mut(cout) {
                for (o, &bb) in row.iter_mut().zip(bd) {
                    *o += bb;
                }
            }
        }
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = cout;
        let out = out.reshape(&shape).expect("linear reshape");
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push(out, Op::Linear(x, w, b), rg)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Var {
        let out = kernels::conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), spec);
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push(out, Op::Conv(x, w, b, spec), rg)
    }

    /// 2-D matrix product `op(a) * op(b)`.
    pub fn matmul(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Var {
        let (ar, ac) = self.value(a).dims2().expect("matmul lhs rank 2");
        let (br, bc) = self.value(b).dims2().expect("matmul rhs rank 2");
        let out = matmul(self.value(a).data(), ar, ac, ta, self.value(b).data(), br, bc, tb);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::MatMul { a, b, ta, tb }, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|e| e.max(S::zero()));
        self.unary(x, v, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).map(sigmoid);
        self.unary(x, v, Op::Sigmoid(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|e| e.ln());
        self.unary(x, v, Op::Log(x))
    }

    pub fn clamp(&mut self, x: Var, lo: S, hi: S) -> Var {
        let v = self.value(x).map(|e| e.max(lo).min(hi));
        self.unary(x, v, Op::Clamp(x, lo, hi))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let v = softmax_last(self.value(x));
        self.unary(x, v, Op::Softmax(x))
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let c = xv.last_dim();
        let mut v = xv.clone();
        for row in v.data_mut().chunks_exact_mut(c) {
            let m = row.iter().fold(S::neg_infinity(), |a, &b| a.max(b));
            let lse = m + row.iter().map(|&e| (e - m).exp()).sum::<S>().ln();
            for e in row {
                *e -= lse;
            }
        }
        self.unary(x, v, Op::LogSoftmax(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let v = self.value(x).clone().reshape(shape).expect("reshape element count");
        self.unary(x, v, Op::Reshape(x))
    }

    /// Concatenation along the last axis.
    pub fn concat(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty());
        let rows = self.value(xs[0]).rows();
        let widths: Vec<usize> = xs.iter().map(|&v| self.value(v).last_dim()).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&v, &w) in xs.iter().zip(&widths) {
                let vd = self.value(v);
                assert_eq!(vd.rows(), rows, "concat leading shape");
                data.extend_from_slice(&vd.data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = self.shape(xs[0]).to_vec();
        *shape.last_mut().unwrap() = total;
        let rg = xs.iter().any(|&v| self.rg(v));
        self.push(Tensor::new(&shape, data).expect("concat"), Op::Concat(xs.to_vec()), rg)
    }

    /// Channels `[start, start + len)` of the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        let c = xv.last_dim();
        assert!(start + len <= c, "slice out of range");
        let data: Vec<S> = xv.data().chunks_exact(c).flat_map(|r| r[start..start + len].iter().copied()).collect();
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let v = Tensor::new(&shape, data).expect("slice");
        self.unary(x, v, Op::SliceLast(x, start))
    }

    /// `[T, H, W, C] -> [T, C]` mean over the spatial axes.
    pub fn spatial_mean(&mut self, x: Var) -> Var {
        let (t, h, w, c) = self.value(x).dims4().expect("spatial_mean rank 4");
        let inv = S::lit(1.0 / (h * w) as f64);
        let mut out = Tensor::zeros(&[t, c]);
        let xd = self.value(x).data();
        for b in 0..t {
            let dst = &mut out.data_mut()[b * c..(b + 1) * c];
            for px in xd[b * h * w * c..(b + 1) * h * w * c].chunks_exact(c) {
                for (o, &v) in dst.iter_mut().zip(px) {
                    *o += v;
                }
            }
            for o in dst {
                *o *= inv;
            }
        }
        self.unary(x, out, Op::SpatialMean(x))
    }

    /// `[T, C] -> [T, h, w, C]`, duplicating each row over every position.
    pub fn spatial_broadcast(&mut self, x: Var, h: usize, w: usize) -> Var {
        let (t, c) = self.value(x).dims2().expect("spatial_broadcast rank 2");
        let xd = self.value(x).data();
        let mut data = Vec::with_capacity(t * h * w * c);
        for b in 0..t {
            for _ in 0..h * w {
                data.extend_from_slice(&xd[b * c..(b + 1) * c]);
            }
        }
        let v = Tensor::new(&[t, h, w, c], data).expect("broadcast");
        self.unary(x, v, Op::SpatialBroadcast(x))
    }

    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Var {
        let v = kernels::upsample_nearest_forward(self.value(x), factor);
        self.unary(x, v, Op::UpsampleNearest(x, factor))
    }

    /// Bilinear resize with half-pixel centers.
    pub fn bilinear(&mut self, x: Var, oh: usize, ow: usize) -> Var {
        let v = kernels::bilinear_forward(self.value(x), oh, ow);
        self.unary(x, v, Op::Bilinear(x))
    }

    pub fn avg_pool(&mut self, x: Var, factor: usize) -> Var {
        let v = kernels::avg_pool_forward(self.value(x), factor);
        self.unary(x, v, Op::AvgPool(x, factor))
    }

    /// Gathers entries of the leading axis.
    pub fn select_frames(&mut self, x: Var, idx: &[usize]) -> Var {
        let xv = self.value(x);
        let per = xv.len() / xv.shape()[0];
        let mut data = Vec::with_capacity(per * idx.len());
        for &i in idx {
            data.extend_from_slice(&xv.data()[i * per..(i + 1) * per]);
        }
        let mut shape = xv.shape().to_vec();
        shape[0] = idx.len();
        let v = Tensor::new(&shape, data).expect("select");
        self.unary(x, v, Op::SelectFrames(x, idx.to_vec()))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        self.unary(x, v, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let v = Tensor::scalar(xv.sum() / S::lit(xv.len() as f64));
        self.unary(x, v, Op::Mean(x))
    }

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Gradients<S> {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), S::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads, params: self.param_vars.clone() }
    }

    fn acc(&self, grads: &mut [Option<Tensor<S>>], v: Var, g: Tensor<S>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backward_node(&self, node: &Node<S>, g: &Tensor<S>, grads: &mut [Option<Tensor<S>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.map(|e| -e));
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    self.acc(grads, *a, g.zip_map(val(*b), |x, y| x * y));
                }
                if self.rg(*b) {
                    self.acc(grads, *b, g.zip_map(val(*a), |x, y| x * y));
                }
            }
            Op::Affine(x, s) => self.acc(grads, *x, g.map(|e| e * *s)),
            Op::BiasAdd(x, b) => {
                self.acc(grads, *x, g.clone());
                if self.rg(*b) {
                    self.acc(grads, *b, sum_rows(g));
                }
            }
            Op::MulChannel(x, m) => {
                let c = g.last_dim();
                if self.rg(*x) {
                    let mut gx = g.clone();
                    for (row, &mm) in gx.data_mut().chunks_exact_mut(c).zip(val(*m).data()) {
                        for e in row {
                            *e *= mm;
                        }
                    }
                    self.acc(grads, *x, gx);
                }
                if self.rg(*m) {
                    let data = g
                        .data()
                        .chunks_exact(c)
                        .zip(val(*x).data().chunks_exact(c))
                        .map(|(gr, xr)| gr.iter().zip(xr).map(|(&a, &b)| a * b).sum())
                        .collect();
                    self.acc(grads, *m, Tensor::new(val(*m).shape(), data).expect("mul_channel grad"));
                }
            }
            Op::Linear(x, w, b) => {
                let (cin, cout) = val(*w).dims2().expect("rank 2");
                let rows = g.rows();
                if self.rg(*x) {
                    let gx = matmul(g.data(), rows, cout, false, val(*w).data(), cin, cout, true);
                    self.acc(grads, *x, gx.reshape(val(*x).shape()).expect("linear grad"));
                }
                if self.rg(*w) {
                    let gw = matmul(val(*x).data(), rows, cin, true, g.data(), rows, cout, false);
                    self.acc(grads, *w, gw);
                }
                if let Some(b) = b {
                    if self.rg(*b) {
                        self.acc(grads, *b, sum_rows(g));
                    }
                }
            }
            Op::Conv(x, w, b, spec) => {
                let need_b = b.is_some_and(|b| self.rg(b));
                let cg = kernels::conv2d_backward(val(*x), val(*w), g, *spec, (self.rg(*x), self.rg(*w), need_b));
                if let Some(gx) = cg.input {
                    self.acc(grads, *x, gx);
                }
                if let Some(gw) = cg.weight {
                    self.acc(grads, *w, gw);
                }
                if let (Some(b), Some(gb)) = (b, cg.bias) {
                    self.acc(grads, *b, gb);
                }
            }
            Op::MatMul { a, b, ta, tb } => {
                let (ar, ac) = val(*a).dims2().expect("rank 2");
                let (br, bc) = val(*b).dims2().expect("rank 2");
                let (gr, gc) = g.dims2().expect("rank 2");
                let (ad, bd) = (val(*a).data(), val(*b).data());
                if self.rg(*a) {
                    // op(A) = G op(B)^T
                    let ga = if *ta {
                        matmul(bd, br, bc, *tb, g.data(), gr, gc, true)
                    } else {
                        matmul(g.data(), gr, gc, false, bd, br, bc, !*tb)
                    };
                    self.acc(grads, *a, ga);
                }
                if self.rg(*b) {
                    // op(B) = op(A)^T G
                    let gb = if *tb {
                        matmul(g.data(), gr, gc, true, ad, ar, ac, *ta)
                    } else {
                        matmul(ad, ar, ac, !*ta, g.data(), gr, gc, false)
                    };
                    self.acc(grads, *b, gb);
                }
            }
            Op::Relu(x) => {
                let gx = g.zip_map(val(*x), |gg, xx| if xx > S::zero() { gg } else { S::zero() });
                self.acc(grads, *x, gx);
            }
            Op::Sigmoid(x) => {
                let gx = g.zip_map(&node.value, |gg, y| gg * y * (S::one() - y));
                self.acc(grads, *x, gx);
            }
            Op::Log(x) => self.acc(grads, *x, g.zip_map(val(*x), |gg, xx| gg / xx)),
            Op::Clamp(x, lo, hi) => {
                let gx = g.zip_map(val(*x), |gg, xx| if xx >= *lo && xx <= *hi { gg } else { S::zero() });
                self.acc(grads, *x, gx);
            }
            Op::Softmax(x) => {
                let c = g.last_dim();
                let mut gx = g.clone();
                for (gr, yr) in gx.data_mut().chunks_exact_mut(c).zip(node.value.data().chunks_exact(c)) {
                    let dot: S = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    for (e, &y) in gr.iter_mut().zip(yr) {
                        *e = y * (*e - dot);
                    }
                }
                self.acc(grads, *x, gx);
            }
            Op::LogSoftmax(x) => {
                let c = g.last_dim();
                let mut gx = g.clone();
                for (gr, yr) in gx.data_mut().chunks_exact_mut(c).zip(node.value.data().chunks_exact(c)) {
                    let total: S = gr.iter().copied().sum();
                    for (e, &y) in gr.iter_mut().zip(yr) {
                        *e -= y.exp() * total;
                    }
                }
                self.acc(grads, *x, gx);
            }
            Op::Reshape(x) => self.acc(grads, *x, g.clone().reshape(val(*x).shape()).expect("reshape grad")),
            Op::Concat(xs) => {
                let total = g.last_dim();
                let rows = g.rows();
                let mut off = 0;
                for &v in xs {
                    let w = val(v).last_dim();
                    if self.rg(v) {
                        let data: Vec<S> =
                            (0..rows).flat_map(|r| g.data()[r * total + off..r * total + off + w].iter().copied()).collect();
                        self.acc(grads, v, Tensor::new(val(v).shape(), data).expect("concat grad"));
                    }
                    off += w;
                }
            }
            Op::SliceLast(x, start) => {
                let c = val(*x).last_dim();
                let len = g.last_dim();
                let mut gx = Tensor::zeros(val(*x).shape());
                for (dst, src) in gx.data_mut().chunks_exact_mut(c).zip(g.data().chunks_exact(len)) {
                    dst[*start..*start + len].copy_from_slice(src);
                }
                self.acc(grads, *x, gx);
            }
            Op::SpatialMean(x) => {
                let (t, h, w, c) = val(*x).dims4().expect("rank 4");
                let inv = S::lit(1.0 / (h * w) as f64);
                let mut gx = Tensor::zeros(val(*x).shape());
                for b in 0..t {
                    let src: Vec<S> = g.data()[b * c..(b + 1) * c].iter().map(|&e| e * inv).collect();
                    for px in gx.data_mut()[b * h * w * c..(b + 1) * h * w * c].chunks_exact_mut(c) {
                        px.copy_from_slice(&src);
                    }
                }
                self.acc(grads, *x, gx);
            }
            Op::SpatialBroadcast(x) => {
                let (t, h, w, c) = g.dims4().expect("rank 4");
                let mut gx = Tensor::zeros(&[t, c]);
                for b in 0..t {
                    let dst = &mut gx.data_mut()[b * c..(b + 1) * c];
                    for px in g.data()[b * h * w * c..(b + 1) * h * w * c].chunks_exact(c) {
                        for (o, &v) in dst.iter_mut().zip(px) {
                            *o += v;
                        }
                    }
                }
                self.acc(grads, *x, gx);
            }
            Op::UpsampleNearest(x, f) => self.acc(grads, *x, kernels::upsample_nearest_backward(g, *f)),
            Op::Bilinear(x) => self.acc(grads, *x, kernels::bilinear_backward(val(*x).shape(), g)),
            Op::AvgPool(x, f) => self.acc(grads, *x, kernels::avg_pool_backward(val(*x).shape(), g, *f)),
            Op::SelectFrames(x, idx) => {
                let xv = val(*x);
                let per = xv.len() / xv.shape()[0];
                let mut gx = Tensor::zeros(xv.shape());
                for (j, &i) in idx.iter().enumerate() {
                    for (o, &v) in gx.data_mut()[i * per..(i + 1) * per].iter_mut().zip(&g.data()[j * per..(j + 1) * per]) {
                        *o += v;
                    }
                }
                self.acc(grads, *x, gx);
            }
            Op::Sum(x) => self.acc(grads, *x, Tensor::full(val(*x).shape(), g.data()[0])),
            Op::Mean(x) => {
                let n = S::lit(val(*x).len() as f64);
                self.acc(grads, *x, Tensor::full(val(*x).shape(), g.data()[0] / n));
            }
        }
    }
}

#[inline]
pub fn sigmoid<S: Real>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

pub fn softmax_last<S: Real>(x: &Tensor<S>) -> Tensor<S> {
    let c = x.last_dim();
    let mut v = x.clone();
    for row in v.data_mut().chunks_exact_mut(c) {
        let m = row.iter().fold(S::neg_infinity(), |a, &b| a.max(b));
        let mut total = S::zero();
        for e in row.iter_mut() {
            *e = (*e - m).exp();
            total += *e;
        }
        for e in row {
            *e /= total;
        }
    }
    v
}

/// Result of [`Graph::backward`].
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
    params: BTreeMap<String, Var>,
}

impl<S: Real> Gradients<S> {
    pub fn wrt(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads[v.0].as_ref()
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<S>> {
        self.params.get(name).and_then(|v| self.wrt(*v))
    }

    /// Gradients of every parameter that received one.
    pub fn into_params(mut self) -> BTreeMap<String, Tensor<S>> {
        let params = std::mem::take(&mut self.params);
        params.into_iter().filter_map(|(name, v)| self.grads[v.0].take().map(|g| (name, g))).collect()
    }
}
