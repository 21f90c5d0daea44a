//! Tape-based reverse-mode differentiation.
//!
//! Every op appends a node holding its forward value. Nodes are appended in
//! evaluation order, so walking the tape backwards is a valid topological
//! order for backpropagation.

use super::tensor::{matmul_into, matmul_nt_into, matmul_tn_into, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    Concat(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        pad: usize,
    },
    GridSample {
        fmap: Var,
        taps: Vec<[(usize, f64); 4]>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of one scalar with respect to every node that needs them.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape {
        op,
        left: a.to_vec(),
        right: b.to_vec(),
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2("matmul")?;
        let (k2, n) = self.value(b).dims2("matmul")?;
        if k != k2 {
            return Err(shape_err("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![T::zero(); m * n];
        matmul_into(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), ng))
    }

    fn zip_same(&mut self, a: Var, b: Var, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, self.shape(a), self.shape(b)));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        Tensor::new(self.shape(a).to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "add", |x, y| x + y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Add(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "mul", |x, y| x * y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Mul(a, b), ng))
    }

    /// Adds a length-`n` bias to every row of an `m x n` matrix.
    pub fn add_bias(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2("add_bias")?;
        if self.shape(b) != [n] {
            return Err(shape_err("add_bias", self.shape(a), self.shape(b)));
        }
        let bias = self.value(b).data();
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(n) {
            for (x, y) in row.iter_mut().zip(bias) {
                *x += *y;
            }
        }
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::AddBias(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let s = T::of(s);
        let v = self.value(a);
        let t = Tensor::new(v.shape().to_vec(), v.data().iter().map(|x| *x * s).collect()).unwrap();
        let ng = self.ng(a);
        self.push(t, Op::Scale(a, s), ng)
    }

    fn map(&mut self, a: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let v = self.value(a);
        let t = Tensor::new(v.shape().to_vec(), v.data().iter().map(|x| f(*x)).collect()).unwrap();
        let ng = self.ng(a);
        self.push(t, op, ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, Op::Relu(a), |x| if x > T::zero() { x } else { T::zero() })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid(a), |x| T::one() / (T::one() + (-x).exp()))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh(a), |x| x.tanh())
    }

    /// Row-wise softmax of a 2-D tensor.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2("softmax")?;
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(n) {
            softmax_in_place(row);
        }
        let ng = self.ng(a);
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::Softmax(a), ng))
    }

    /// Column-wise concatenation of 2-D tensors with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Usage("concat of nothing".into()))?;
        let (m, _) = self.value(first).dims2("concat")?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (r, c) = self.value(*p).dims2("concat")?;
            if r != m {
                return Err(shape_err("concat", self.shape(first), self.shape(*p)));
            }
            widths.push(c);
        }
        let n: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            for (p, w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(*p).data()[i * w..(i + 1) * w]);
            }
        }
        let ng = parts.iter().any(|p| self.ng(*p));
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::Concat(parts.to_vec()), ng))
    }

    /// Columns `[start, end)` of a 2-D tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.value(a).dims2("slice_cols")?;
        if start >= end || end > n {
            return Err(shape_err("slice_cols", self.shape(a), &[start, end]));
        }
        let w = end - start;
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(m * w);
        for i in 0..m {
            data.extend_from_slice(&src[i * n + start..i * n + end]);
        }
        let ng = self.ng(a);
        Ok(self.push(Tensor::new(vec![m, w], data)?, Op::SliceCols(a, start), ng))
    }

    /// Picks rows of a 2-D tensor; gradients scatter back into them.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (m, n) = self.value(a).dims2("gather_rows")?;
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            if i >= m {
                return Err(Error::Index {
                    what: "gather_rows",
                    index: i,
                    size: m,
                });
            }
            data.extend_from_slice(&src[i * n..(i + 1) * n]);
        }
        let ng = self.ng(a);
        Ok(self.push(
            Tensor::new(vec![idx.len(), n], data)?,
            Op::GatherRows(a, idx.to_vec()),
            ng,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: T = self.value(a).data().iter().copied().sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s: T = v.data().iter().copied().sum::<T>() / T::of(v.numel() as f64);
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Mean(a), ng)
    }

    /// 2-D convolution of a `C x H x W` input with `O x C x kh x kw` weights.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        let (c, h, w) = match self.shape(input) {
            [c, h, w] => (*c, *h, *w),
            s => return Err(shape_err("conv2d", s, self.shape(weight))),
        };
        let (o, kh, kw) = match self.shape(weight) {
            [o, c2, kh, kw] if *c2 == c => (*o, *kh, *kw),
            s => return Err(shape_err("conv2d", self.shape(input), s)),
        };
        if self.shape(bias) != [o] {
            return Err(shape_err("conv2d", self.shape(weight), self.shape(bias)));
        }
        if stride == 0 || h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(shape_err("conv2d", self.shape(input), self.shape(weight)));
        }
        let geo = ConvGeom {
            c,
            h,
            w,
            o,
            kh,
            kw,
            stride,
            pad,
            ho: (h + 2 * pad - kh) / stride + 1,
            wo: (w + 2 * pad - kw) / stride + 1,
        };
        let out = conv_forward(&geo, self.value(input).data(), self.value(weight).data(), self.value(bias).data());
        let ng = self.ng(input) || self.ng(weight) || self.ng(bias);
        Ok(self.push(
            Tensor::new(vec![o, geo.ho, geo.wo], out)?,
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
            },
            ng,
        ))
    }

    /// Align-corners bilinear sampling of a `C x H x W` map at normalized
    /// points `(u, v)`; points outside `[0, 1]^2` are clamped to the border.
    /// Output is `P x C`. Differentiable with respect to the map only.
    pub fn grid_sample(&mut self, fmap: Var, points: &[(f64, f64)]) -> Result<Var> {
        let (c, h, w) = match self.shape(fmap) {
            [c, h, w] if *h >= 1 && *w >= 1 => (*c, *h, *w),
            s => return Err(shape_err("grid_sample", s, &[points.len(), 2])),
        };
        let taps: Vec<[(usize, f64); 4]> = points.iter().map(|&(u, v)| bilinear_taps(u, v, w, h)).collect();
        let src = self.value(fmap).data();
        let plane = h * w;
        let mut out = Vec::with_capacity(points.len() * c);
        for t in &taps {
            for ch in 0..c {
                let base = ch * plane;
                let mut s = T::zero();
                for (idx, wt) in t {
                    s += src[base + idx] * T::of(*wt);
                }
                out.push(s);
            }
        }
        let ng = self.ng(fmap);
        Ok(self.push(
            Tensor::new(vec![points.len(), c], out)?,
            Op::GridSample { fmap, taps },
            ng,
        ))
    }

    /// Weighted mean softmax cross-entropy over the rows of `m x c` logits.
    /// `weights` default to uniform.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], weights: Option<&[f64]>) -> Result<Var> {
        let (m, c) = self.value(logits).dims2("cross_entropy")?;
        if targets.len() != m || m == 0 {
            return Err(shape_err("cross_entropy", self.shape(logits), &[targets.len()]));
        }
        if let Some(&bad) = targets.iter().find(|t| **t >= c) {
            return Err(Error::Index {
                what: "cross_entropy target",
                index: bad,
                size: c,
            });
        }
        let raw: Vec<f64> = match weights {
            Some(w) if w.len() == m => w.to_vec(),
            Some(w) => return Err(shape_err("cross_entropy", &[m], &[w.len()])),
            None => vec![1.0; m],
        };
        let total: f64 = raw.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Numeric("cross_entropy weights sum to zero".into()));
        }
        let weights: Vec<T> = raw.iter().map(|w| T::of(w / total)).collect();
        let x = self.value(logits).data();
        let mut loss = T::zero();
        for i in 0..m {
            let row = &x[i * c..(i + 1) * c];
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = mx + row.iter().map(|v| (*v - mx).exp()).sum::<T>().ln();
            loss += weights[i] * (lse - row[targets[i]]);
        }
        let ng = self.ng(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights,
            },
            ng,
        ))
    }

    /// Backpropagates from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(shape_err("backward", self.shape(loss), &[]));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss).to_vec(), T::one()));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gout) = grads[id].take() else { continue };
            for (var, g) in self.local_grads(node, &gout)? {
                if !self.ng(var) {
                    continue;
                }
                match &mut grads[var.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
            // keep intermediate grads out of the result to bound memory
        }
        Ok(Gradients { grads })
    }

    fn local_grads(&self, node: &Node<T>, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let gd = g.data();
        let like = |v: Var, data: Vec<T>| Tensor::new(self.shape(v).to_vec(), data);
        let out = match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2("matmul")?;
                let n = self.shape(*b)[1];
                let mut res = Vec::new();
                if self.ng(*a) {
                    let mut da = vec![T::zero(); m * k];
                    matmul_nt_into(gd, self.value(*b).data(), &mut da, m, n, k);
                    res.push((*a, like(*a, da)?));
                }
                if self.ng(*b) {
                    let mut db = vec![T::zero(); k * n];
                    matmul_tn_into(self.value(*a).data(), gd, &mut db, m, k, n);
                    res.push((*b, like(*b, db)?));
                }
                res
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::AddBias(a, b) => {
                let n = self.shape(*b)[0];
                let mut db = vec![T::zero(); n];
                for row in gd.chunks(n) {
                    for (d, x) in db.iter_mut().zip(row) {
                        *d += *x;
                    }
                }
                vec![(*a, g.clone()), (*b, like(*b, db)?)]
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let da = gd.iter().zip(bv).map(|(x, y)| *x * *y).collect();
                let db = gd.iter().zip(av).map(|(x, y)| *x * *y).collect();
                vec![(*a, like(*a, da)?), (*b, like(*b, db)?)]
            }
            Op::Scale(a, s) => vec![(*a, like(*a, gd.iter().map(|x| *x * *s).collect())?)],
            Op::Relu(a) => {
                let x = self.value(*a).data();
                let d = gd
                    .iter()
                    .zip(x)
                    .map(|(g, x)| if *x > T::zero() { *g } else { T::zero() })
                    .collect();
                vec![(*a, like(*a, d)?)]
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                let d = gd.iter().zip(y).map(|(g, y)| *g * *y * (T::one() - *y)).collect();
                vec![(*a, like(*a, d)?)]
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                let d = gd.iter().zip(y).map(|(g, y)| *g * (T::one() - *y * *y)).collect();
                vec![(*a, like(*a, d)?)]
            }
            Op::Softmax(a) => {
                let n = node.value.shape()[1];
                let y = node.value.data();
                let mut d = Vec::with_capacity(y.len());
                for (yr, gr) in y.chunks(n).zip(gd.chunks(n)) {
                    let dot: T = yr.iter().zip(gr).map(|(a, b)| *a * *b).sum();
                    d.extend(yr.iter().zip(gr).map(|(y, g)| *y * (*g - dot)));
                }
                vec![(*a, like(*a, d)?)]
            }
            Op::Concat(parts) => {
                let n = node.value.shape()[1];
                let m = node.value.shape()[0];
                let mut res = Vec::with_capacity(parts.len());
                let mut off = 0;
                for p in parts {
                    let w = self.shape(*p)[1];
                    if self.ng(*p) {
                        let mut d = Vec::with_capacity(m * w);
                        for i in 0..m {
                            d.extend_from_slice(&gd[i * n + off..i * n + off + w]);
                        }
                        res.push((*p, like(*p, d)?));
                    }
                    off += w;
                }
                res
            }
            Op::SliceCols(a, start) => {
                let (m, n) = self.value(*a).dims2("slice_cols")?;
                let w = node.value.shape()[1];
                let mut d = vec![T::zero(); m * n];
                for i in 0..m {
                    d[i * n + start..i * n + start + w].copy_from_slice(&gd[i * w..(i + 1) * w]);
                }
                vec![(*a, like(*a, d)?)]
            }
            Op::GatherRows(a, idx) => {
                let n = self.shape(*a)[1];
                let mut d = vec![T::zero(); self.value(*a).numel()];
                for (r, &i) in idx.iter().enumerate() {
                    for (dst, src) in d[i * n..(i + 1) * n].iter_mut().zip(&gd[r * n..(r + 1) * n]) {
                        *dst += *src;
                    }
                }
                vec![(*a, like(*a, d)?)]
            }
            Op::Sum(a) => vec![(*a, Tensor::full(self.shape(*a).to_vec(), gd[0]))],
            Op::Mean(a) => {
                let n = T::of(self.value(*a).numel() as f64);
                vec![(*a, Tensor::full(self.shape(*a).to_vec(), gd[0] / n))]
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
            } => {
                let s = self.shape(*input);
                let ws = self.shape(*weight);
                let os = node.value.shape();
                let geo = ConvGeom {
                    c: s[0],
                    h: s[1],
                    w: s[2],
                    o: ws[0],
                    kh: ws[2],
                    kw: ws[3],
                    stride: *stride,
                    pad: *pad,
                    ho: os[1],
                    wo: os[2],
                };
                let (dx, dw, db) = conv_backward(
                    &geo,
                    self.value(*input).data(),
                    self.value(*weight).data(),
                    gd,
                    self.ng(*input),
                );
                let mut res = vec![(*weight, like(*weight, dw)?), (*bias, like(*bias, db)?)];
                if let Some(dx) = dx {
                    res.push((*input, like(*input, dx)?));
                }
                res
            }
            Op::GridSample { fmap, taps } => {
                let s = self.shape(*fmap);
                let (c, plane) = (s[0], s[1] * s[2]);
                let mut d = vec![T::zero(); c * plane];
                for (p, t) in taps.iter().enumerate() {
                    for ch in 0..c {
                        let gv = gd[p * c + ch];
                        for (idx, wt) in t {
                            d[ch * plane + idx] += gv * T::of(*wt);
                        }
                    }
                }
                vec![(*fmap, like(*fmap, d)?)]
            }
            Op::CrossEntropy {
                logits,
                targets,
                weights,
            } => {
                let c = self.shape(*logits)[1];
                let x = self.value(*logits).data();
                let mut d = Vec::with_capacity(x.len());
                for (i, row) in x.chunks(c).enumerate() {
                    let mut p = row.to_vec();
                    softmax_in_place(&mut p);
                    p[targets[i]] -= T::one();
                    d.extend(p.into_iter().map(|v| v * weights[i] * gd[0]));
                }
                vec![(*logits, like(*logits, d)?)]
            }
        };
        Ok(out)
    }
}

pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for v in row.iter_mut() {
        *v = (*v - mx).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v = *v / s;
    }
}

/// Flat indices and weights of the four bilinear taps for a normalized point.
pub(crate) fn bilinear_taps(u: f64, v: f64, w: usize, h: usize) -> [(usize, f64); 4] {
    let coord = |t: f64, n: usize| {
        let t = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
        let p = t * (n - 1) as f64;
        let i0 = (p.floor() as usize).min(n - 1);
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, p - i0 as f64)
    };
    let (x0, x1, fx) = coord(u, w);
    let (y0, y1, fy) = coord(v, h);
    [
        (y0 * w + x0, (1.0 - fx) * (1.0 - fy)),
        (y0 * w + x1, fx * (1.0 - fy)),
        (y1 * w + x0, (1.0 - fx) * fy),
        (y1 * w + x1, fx * fy),
    ]
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    /// Output positions along one axis whose input index `o*stride + k - pad`
    /// is in range, with that input index for the first one.
    fn valid(&self, k: usize, out_len: usize, in_len: usize) -> std::ops::Range<usize> {
        let s = self.stride;
        // smallest o with o*s + k >= pad
        let lo = if k >= self.pad { 0 } else { (self.pad - k).div_ceil(s) };
        // largest o with o*s + k - pad < in_len
        let hi = if in_len + self.pad > k {
            ((in_len + self.pad - k - 1) / s + 1).min(out_len)
        } else {
            0
        };
        lo..hi.max(lo)
    }
}

impl ConvGeom {
    fn patch_len(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }

    /// Unfolds the input into a `patch_len x positions` matrix; padded
    /// taps stay zero.
    fn im2col<T: Real>(&self, x: &[T]) -> Vec<T> {
        let p = self.positions();
        let mut col = vec![T::zero(); self.patch_len() * p];
        self.for_each_tap(|k, src, dst| col[k * p + dst] = x[src]);
        col
    }

    /// Calls `f(patch_row, input_index, position)` for every in-range tap.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        for c in 0..self.c {
            for ki in 0..self.kh {
                let rows = self.valid(ki, self.ho, self.h);
                for kj in 0..self.kw {
                    let k = (c * self.kh + ki) * self.kw + kj;
                    let cols = self.valid(kj, self.wo, self.w);
                    for oy in rows.clone() {
                        let base = c * self.h * self.w + (oy * self.stride + ki - self.pad) * self.w;
                        for ox in cols.clone() {
                            f(k, base + ox * self.stride + kj - self.pad, oy * self.wo + ox);
                        }
                    }
                }
            }
        }
    }
}

fn conv_forward<T: Real>(g: &ConvGeom, x: &[T], w: &[T], b: &[T]) -> Vec<T> {
    let (kl, p) = (g.patch_len(), g.positions());
    let col = g.im2col(x);
    let mut out = vec![T::zero(); g.o * p];
    for (o, orow) in out.chunks_exact_mut(p).enumerate() {
        orow.fill(b[o]);
    }
    matmul_into(w, &col, &mut out, g.o, kl, p);
    out
}

fn conv_backward<T: Real>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    gout: &[T],
    want_dx: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let (kl, p) = (g.patch_len(), g.positions());
    let col = g.im2col(x);
    let db = gout.chunks_exact(p).map(|r| r.iter().copied().sum()).collect();
    let mut dw = vec![T::zero(); w.len()];
    matmul_nt_into(gout, &col, &mut dw, g.o, p, kl);
    let dx = want_dx.then(|| {
        let mut dcol = col;
        dcol.fill(T::zero());
        matmul_tn_into(w, gout, &mut dcol, g.o, kl, p);
        let mut dx = vec![T::zero(); x.len()];
        g.for_each_tap(|k, src, dst| dx[src] += dcol[k * p + dst]);
        dx
    });
    (dx, dw, db)
}
