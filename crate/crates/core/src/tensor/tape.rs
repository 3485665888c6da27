//! Reverse-mode tape.
//!
//! Nodes are appended in evaluation order, so walking the node list backwards
//! is a reverse topological traversal. Every kernel that performs
//! multiply-accumulates bumps the graph's MAC counter by the exact number it
//! executes; additions without a paired multiply are not counted.

use super::value::{matmul_at_into, matmul_bt_into, matmul_into, strides, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Maximum(Var, Var),
    Minimum(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Abs(Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Sin(Var),
    Cos(Var),
    Sum(Var),
    ChannelBias { x: Var, b: Var, inner: usize },
    MatMul { a: Var, b: Var, m: usize, k: usize, p: usize },
    Bmm { a: Var, b: Var, g: usize, m: usize, k: usize, p: usize },
    Linear { x: Var, w: Var, b: Option<Var>, rows: usize, k: usize, p: usize },
    Reshape(Var),
    Permute { a: Var, axes: Vec<usize> },
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { a: Var, axis: usize, start: usize },
    IndexRows { a: Var, idx: Vec<usize> },
    Pick { a: Var, idx: Vec<usize> },
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Conv2d { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    Depthwise { x: Var, k: Var, b: Option<Var> },
    Butterfly { x: Var, w: Var, stage_inputs: Vec<Vec<f64>> },
    MaxPool { a: Var, argmax: Vec<usize> },
    AvgPool { a: Var, out_h: usize, out_w: usize },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// A single computation graph. Owned by one thread at a time.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    macs: u64,
    /// Smallest distance of any relu/abs/max/min input to its kink.
    kink: Option<f64>,
    backward_done: bool,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

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

    /// Multiply-accumulates executed by forward kernels so far.
    pub fn macs(&self) -> u64 {
        self.macs
    }

    /// How close any input of `relu`, `abs`, `maximum` or `minimum` came to
    /// the point where the op is not differentiable (infinite if none ran).
    /// Central differences with step `eps` are only valid when this exceeds
    /// `eps`.
    pub fn kink_margin(&self) -> f64 {
        self.kink.unwrap_or(f64::INFINITY)
    }

    fn note_kink(&mut self, margin: f64) {
        self.kink = Some(self.kink.map_or(margin, |k| k.min(margin)));
    }

    fn note_kinks(&mut self, v: Var) {
        let m = self.value(v).data().iter().fold(f64::INFINITY, |m, x| m.min(x.abs()));
        self.note_kink(m);
    }

    fn note_gap(&mut self, a: Var, b: Var) {
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let m = av.iter().zip(bv).fold(f64::INFINITY, |m, (x, y)| m.min((x - y).abs()));
        self.note_kink(m);
    }

    pub fn reset_macs(&mut self) {
        self.macs = 0;
    }

    /// Run `f` without adding its multiply-accumulates to the counter.
    pub fn uncounted<T>(&mut self, f: impl FnOnce(&mut Self) -> T) -> T {
        let saved = self.macs;
        let out = f(self);
        self.macs = saved;
        out
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of `v`, if backward reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    pub fn param(&mut self, t: Tensor) -> Var {
        self.leaf(t, true)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t, false)
    }

    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: t,
            grad: None,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Copy of `v` that does not propagate gradients.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(format!(
                "{what}: shapes {:?} and {:?} differ (no broadcasting)",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let av = self.value(a);
        let bv = self.value(b);
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(out, op, &[a, b]))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| f(x)).collect();
        let out = Tensor::new(av.shape().to_vec(), data).expect("unary shape");
        self.push(out, op, &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "maximum", f64::max, Op::Maximum(a, b))
            .inspect(|_| self.note_gap(a, b))
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "minimum", f64::min, Op::Minimum(a, b))
            .inspect(|_| self.note_gap(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x + s, Op::AddScalar(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.note_kinks(a);
        self.unary(a, f64::abs, Op::Abs(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.note_kinks(a);
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn sin(&mut self, a: Var) -> Var {
        self.unary(a, f64::sin, Op::Sin(a))
    }

    pub fn cos(&mut self, a: Var) -> Var {
        self.unary(a, f64::cos, Op::Cos(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// `x[B×C×…] + b[C]`, the bias broadcast over batch and trailing axes.
    pub fn add_channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 || self.shape(b) != [xs[1]] {
            return Err(Error::dim(format!("channel bias {:?} does not fit input {xs:?}", self.shape(b))));
        }
        let c = xs[1];
        let inner: usize = xs[2..].iter().product();
        let bd = self.value(b).data();
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + bd[(i / inner) % c])
            .collect();
        let t = Tensor::new(xs, data)?;
        Ok(self.push(t, Op::ChannelBias { x, b, inner }, &[x, b]))
    }

    /// `sum(a ⊙ w)` for a same-shape weight tensor.
    pub fn weighted_sum(&mut self, a: Var, w: Var) -> Result<Var> {
        let p = self.mul(a, w)?;
        Ok(self.sum(p))
    }

    /// Matrix product of two 2-D tensors.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = match self.shape(a) {
            [m, k] => (*m, *k),
            s => return Err(Error::dim(format!("matmul lhs must be 2-D, got {s:?}"))),
        };
        let (k2, p) = match self.shape(b) {
            [k2, p] => (*k2, *p),
            s => return Err(Error::dim(format!("matmul rhs must be 2-D, got {s:?}"))),
        };
        if k != k2 {
            return Err(Error::dim(format!("matmul inner dimensions {k} and {k2} differ")));
        }
        let mut out = vec![0.0; m * p];
        matmul_into(self.value(a).data(), self.value(b).data(), &mut out, m, k, p);
        self.macs += (m * k * p) as u64;
        let t = Tensor::new(vec![m, p], out)?;
        Ok(self.push(t, Op::MatMul { a, b, m, k, p }, &[a, b]))
    }

    /// Batched product `[G×M×K] · [G×K×P] → [G×M×P]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (g, m, k) = match self.shape(a) {
            [g, m, k] => (*g, *m, *k),
            s => return Err(Error::dim(format!("bmm lhs must be 3-D, got {s:?}"))),
        };
        let (g2, k2, p) = match self.shape(b) {
            [g2, k2, p] => (*g2, *k2, *p),
            s => return Err(Error::dim(format!("bmm rhs must be 3-D, got {s:?}"))),
        };
        if g != g2 || k != k2 {
            return Err(Error::dim(format!(
                "bmm shapes {:?} and {:?} are incompatible",
                self.shape(a),
                self.shape(b)
            )));
        }
        let mut out = vec![0.0; g * m * p];
        {
            let ad = self.value(a).data();
            let bd = self.value(b).data();
            for gi in 0..g {
                matmul_into(
                    &ad[gi * m * k..(gi + 1) * m * k],
                    &bd[gi * k * p..(gi + 1) * k * p],
                    &mut out[gi * m * p..(gi + 1) * m * p],
                    m,
                    k,
                    p,
                );
            }
        }
        self.macs += (g * m * k * p) as u64;
        let t = Tensor::new(vec![g, m, p], out)?;
        Ok(self.push(t, Op::Bmm { a, b, g, m, k, p }, &[a, b]))
    }

    /// `x[..., K] · w[K, P] (+ b[P])`: every leading index is an independent row.
    /// The bias is the only broadcast this tape performs.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let k = *xs.last().expect("non-empty shape");
        let (k2, p) = match self.shape(w) {
            [k2, p] => (*k2, *p),
            s => return Err(Error::dim(format!("linear weight must be 2-D, got {s:?}"))),
        };
        if k != k2 {
            return Err(Error::dim(format!("linear input width {k} != weight rows {k2}")));
        }
        if let Some(b) = b {
            if self.shape(b) != [p] {
                return Err(Error::dim(format!("linear bias shape {:?} != [{p}]", self.shape(b))));
            }
        }
        let rows = self.value(x).numel() / k;
        let mut out = vec![0.0; rows * p];
        if let Some(b) = b {
            let bd = self.value(b).data();
            for r in 0..rows {
                out[r * p..(r + 1) * p].copy_from_slice(bd);
            }
        }
        matmul_into(self.value(x).data(), self.value(w).data(), &mut out, rows, k, p);
        self.macs += (rows * k * p) as u64;
        let mut shape = xs;
        *shape.last_mut().expect("non-empty") = p;
        let t = Tensor::new(shape, out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(t, Op::Linear { x, w, b, rows, k, p }, &inputs))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        Ok(self.push(t, Op::Reshape(a), &[a]))
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&ax| ax >= shape.len() || std::mem::replace(&mut seen[ax], true)) {
            return Err(Error::dim(format!("invalid permutation {axes:?} for shape {shape:?}")));
        }
        let (new_shape, data) = permute_data(self.value(a).data(), &shape, axes);
        let t = Tensor::new(new_shape, data)?;
        Ok(self.push(t, Op::Permute { a, axes: axes.to_vec() }, &[a]))
    }

    /// Swap the last two axes.
    pub fn transpose_last(&mut self, a: Var) -> Result<Var> {
        let n = self.shape(a).len();
        if n < 2 {
            return Err(Error::dim("transpose needs at least two axes"));
        }
        let mut axes: Vec<usize> = (0..n).collect();
        axes.swap(n - 1, n - 2);
        self.permute(a, &axes)
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs.first().ok_or_else(|| Error::dim("concat of nothing"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::dim(format!("concat axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != base.len() || s.iter().zip(&base).enumerate().any(|(i, (x, y))| i != axis && x != y) {
                return Err(Error::dim(format!("concat shapes {base:?} and {s:?} disagree off axis {axis}")));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let len = self.shape(v)[axis] * inner;
                data.extend_from_slice(&self.value(v).data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t, Op::Concat { inputs: inputs.to_vec(), axis }, inputs))
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::dim(format!("slice {start}..{} on axis {axis} of {shape:?}", start + len)));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * shape[axis] + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let t = Tensor::new(out_shape, data)?;
        Ok(self.push(t, Op::Slice { a, axis, start }, &[a]))
    }

    /// Gather along the first axis.
    pub fn index_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if idx.is_empty() || idx.iter().any(|&i| i >= shape[0]) {
            return Err(Error::dim(format!("row indices {idx:?} invalid for shape {shape:?}")));
        }
        let inner: usize = shape[1..].iter().product();
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(idx.len() * inner);
        for &i in idx {
            data.extend_from_slice(&src[i * inner..(i + 1) * inner]);
        }
        let mut out_shape = shape;
        out_shape[0] = idx.len();
        let t = Tensor::new(out_shape, data)?;
        Ok(self.push(t, Op::IndexRows { a, idx: idx.to_vec() }, &[a]))
    }

    /// `out[r] = a[r, idx[r]]` for a 2-D input.
    pub fn pick(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (r, k) = match self.shape(a) {
            [r, k] => (*r, *k),
            s => return Err(Error::dim(format!("pick expects 2-D input, got {s:?}"))),
        };
        if idx.len() != r || idx.iter().any(|&i| i >= k) {
            return Err(Error::dim(format!("pick indices {idx:?} invalid for [{r}, {k}]")));
        }
        let src = self.value(a).data();
        let data = idx.iter().enumerate().map(|(row, &c)| src[row * k + c]).collect();
        let t = Tensor::new(vec![r], data)?;
        Ok(self.push(t, Op::Pick { a, idx: idx.to_vec() }, &[a]))
    }

    /// Softmax over the trailing axis, stabilized by subtracting the row max.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let d = *av.shape().last().expect("non-empty");
        let mut data = av.data().to_vec();
        for row in data.chunks_mut(d) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        let t = Tensor::new(av.shape().to_vec(), data).expect("softmax shape");
        self.push(t, Op::Softmax(a), &[a])
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let d = *av.shape().last().expect("non-empty");
        let mut data = av.data().to_vec();
        for row in data.chunks_mut(d) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let t = Tensor::new(av.shape().to_vec(), data).expect("log-softmax shape");
        self.push(t, Op::LogSoftmax(a), &[a])
    }

    /// Layer normalization over the trailing axis with epsilon [`LAYER_NORM_EPS`].
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let c = *xs.last().expect("non-empty");
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::dim(format!(
                "layer_norm params {:?}/{:?} do not match width {c}",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let xd = self.value(x).data();
        let gd = self.value(gamma).data();
        let bd = self.value(beta).data();
        let rows = xd.len() / c;
        let mut xhat = vec![0.0; xd.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; xd.len()];
        for r in 0..rows {
            let row = &xd[r * c..(r + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[r] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[r * c + j] = h;
                out[r * c + j] = h * gd[j] + bd[j];
            }
        }
        let t = Tensor::new(xs, out)?;
        Ok(self.push(t, Op::LayerNorm { x, gamma, beta, xhat, rstd }, &[x, gamma, beta]))
    }

    /// Dense 2-D convolution `x[B×Ci×H×W] ⊛ w[Co×Ci×k×k]` with zero padding.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let [bsz, ci, h, wd] = dims4(self.shape(x), "conv2d input")?;
        let [co, ci2, kh, kw] = dims4(self.shape(w), "conv2d weight")?;
        if ci != ci2 || kh != kw {
            return Err(Error::dim(format!(
                "conv2d weight {:?} incompatible with input {:?}",
                self.shape(w),
                self.shape(x)
            )));
        }
        if stride == 0 {
            return Err(Error::Unsupported("conv2d stride must be positive".into()));
        }
        if let Some(b) = b {
            if self.shape(b) != [co] {
                return Err(Error::dim(format!("conv2d bias {:?} != [{co}]", self.shape(b))));
            }
        }
        let k = kh;
        if h + 2 * pad < k || wd + 2 * pad < k {
            return Err(Error::dim(format!("conv2d kernel {k} larger than padded input {h}x{wd}")));
        }
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        let xd = self.value(x).data();
        let wdat = self.value(w).data();
        let mut out = vec![0.0; bsz * co * ho * wo];
        for bi in 0..bsz {
            for o in 0..co {
                let base = (bi * co + o) * ho * wo;
                if let Some(b) = b {
                    let bv = self.value(b).data()[o];
                    out[base..base + ho * wo].iter_mut().for_each(|v| *v = bv);
                }
                for c in 0..ci {
                    let xin = &xd[(bi * ci + c) * h * wd..(bi * ci + c + 1) * h * wd];
                    let wk = &wdat[(o * ci + c) * k * k..(o * ci + c + 1) * k * k];
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let mut acc = 0.0;
                            for ky in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..k {
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if ix < 0 || ix >= wd as isize {
                                        continue;
                                    }
                                    acc += wk[ky * k + kx] * xin[iy as usize * wd + ix as usize];
                                }
                            }
                            out[base + oy * wo + ox] += acc;
                        }
                    }
                }
            }
        }
        // Padded taps count as executed so the tally matches k²·Ci·Co·Ho·Wo.
        self.macs += (bsz * co * ho * wo * ci * k * k) as u64;
        let t = Tensor::new(vec![bsz, co, ho, wo], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(t, Op::Conv2d { x, w, b, stride, pad }, &inputs))
    }

    /// Depthwise convolution with an odd `k×k` kernel and zero same-padding.
    pub fn conv2d_depthwise(&mut self, x: Var, kernel: Var, b: Option<Var>) -> Result<Var> {
        let [bsz, c, h, w] = dims4(self.shape(x), "depthwise input")?;
        let (c2, k, k2) = match self.shape(kernel) {
            [c2, k, k2] => (*c2, *k, *k2),
            s => return Err(Error::dim(format!("depthwise kernel must be C×k×k, got {s:?}"))),
        };
        if c2 != c || k != k2 {
            return Err(Error::dim(format!(
                "depthwise kernel {:?} incompatible with input {:?}",
                self.shape(kernel),
                self.shape(x)
            )));
        }
        if k % 2 == 0 {
            return Err(Error::Unsupported(format!("depthwise kernel size {k} must be odd")));
        }
        if let Some(b) = b {
            if self.shape(b) != [c] {
                return Err(Error::dim(format!("depthwise bias {:?} != [{c}]", self.shape(b))));
            }
        }
        let r = (k / 2) as isize;
        let xd = self.value(x).data();
        let kd = self.value(kernel).data();
        let mut out = vec![0.0; xd.len()];
        for bi in 0..bsz {
            for ch in 0..c {
                let plane = (bi * c + ch) * h * w;
                let kk = &kd[ch * k * k..(ch + 1) * k * k];
                let bias = b.map_or(0.0, |b| self.value(b).data()[ch]);
                for y in 0..h {
                    for xx in 0..w {
                        let mut acc = bias;
                        for ky in 0..k {
                            let iy = y as isize + ky as isize - r;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = xx as isize + kx as isize - r;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += kk[ky * k + kx] * xd[plane + iy as usize * w + ix as usize];
                            }
                        }
                        out[plane + y * w + xx] = acc;
                    }
                }
            }
        }
        self.macs += (bsz * c * h * w * k * k) as u64;
        let t = Tensor::new(vec![bsz, c, h, w], out)?;
        let mut inputs = vec![x, kernel];
        inputs.extend(b);
        Ok(self.push(t, Op::Depthwise { x, k: kernel, b }, &inputs))
    }

    /// Butterfly channel mixing over axis 1 of `x[B×N×H×W]` with stage
    /// weights `w[S×N×2]`, S = log₂N. At stage s output i reads input i
    /// (weight `[s,i,0]`) and input `i ^ 2^s` (weight `[s,i,1]`).
    pub fn butterfly(&mut self, x: Var, w: Var) -> Result<Var> {
        let [bsz, n, h, wd] = dims4(self.shape(x), "butterfly input")?;
        if !n.is_power_of_two() || n < 2 {
            return Err(Error::Unsupported(format!("butterfly needs a power-of-two channel count >= 2, got {n}")));
        }
        let stages = n.trailing_zeros() as usize;
        if self.shape(w) != [stages, n, 2] {
            return Err(Error::dim(format!(
                "butterfly weights {:?} != [{stages}, {n}, 2]",
                self.shape(w)
            )));
        }
        let (out, stage_inputs) = butterfly_kernel(self.value(x).data(), self.value(w).data(), bsz, n, h * wd);
        self.macs += (2 * bsz * n * h * wd * stages) as u64;
        let t = Tensor::new(vec![bsz, n, h, wd], out)?;
        Ok(self.push(t, Op::Butterfly { x, w, stage_inputs }, &[x, w]))
    }

    /// Max pooling with a `k×k` window; no multiply-accumulates.
    pub fn max_pool2d(&mut self, a: Var, k: usize, stride: usize, pad: usize) -> Result<Var> {
        let [bsz, c, h, w] = dims4(self.shape(a), "max_pool input")?;
        if k == 0 || stride == 0 || pad >= k || h + 2 * pad < k || w + 2 * pad < k {
            return Err(Error::Unsupported(format!("max_pool k={k} stride={stride} pad={pad} on {h}x{w}")));
        }
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(bsz * c * ho * wo);
        let mut argmax = Vec::with_capacity(bsz * c * ho * wo);
        for plane in 0..bsz * c {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = f64::NEG_INFINITY;
                    let mut at = usize::MAX;
                    for ky in 0..k {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let off = base + iy as usize * w + ix as usize;
                            if src[off] > best {
                                best = src[off];
                                at = off;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(at);
                }
            }
        }
        let t = Tensor::new(vec![bsz, c, ho, wo], out)?;
        Ok(self.push(t, Op::MaxPool { a, argmax }, &[a]))
    }

    /// Adaptive average pooling to `out_h×out_w`; no multiply-accumulates.
    pub fn adaptive_avg_pool2d(&mut self, a: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let [bsz, c, h, w] = dims4(self.shape(a), "avg_pool input")?;
        if out_h == 0 || out_w == 0 {
            return Err(Error::dim("adaptive pool output must be non-empty"));
        }
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(bsz * c * out_h * out_w);
        for plane in 0..bsz * c {
            let base = plane * h * w;
            for oy in 0..out_h {
                let (y0, y1) = pool_bin(oy, h, out_h);
                for ox in 0..out_w {
                    let (x0, x1) = pool_bin(ox, w, out_w);
                    let mut s = 0.0;
                    for y in y0..y1 {
                        for x in x0..x1 {
                            s += src[base + y * w + x];
                        }
                    }
                    out.push(s / ((y1 - y0) * (x1 - x0)) as f64);
                }
            }
        }
        let t = Tensor::new(vec![bsz, c, out_h, out_w], out)?;
        Ok(self.push(t, Op::AvgPool { a, out_h, out_w }, &[a]))
    }

    /// Clear gradients so that backward may run again.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.backward_done = false;
    }

    /// Reverse-mode sweep from a single-element output.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::dim(format!("backward needs a scalar, got {:?}", self.shape(loss))));
        }
        self.backward_done = true;
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.nodes[i].grad.take() else { continue };
            let contributions = self.local_grads(i, &g);
            self.nodes[i].grad = Some(g);
            for (v, dg) in contributions {
                let node = &mut self.nodes[v.0];
                if !node.requires_grad {
                    continue;
                }
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&dg).for_each(|(a, d)| *a += d),
                    None => node.grad = Some(dg),
                }
            }
        }
        Ok(())
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn local_grads(&self, i: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[i];
        let y = node.value.data();
        let map = |v: Var, f: &dyn Fn(usize) -> f64| -> (Var, Vec<f64>) { (v, (0..g.len()).map(f).collect()) };
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                out.push((*a, g.to_vec()));
                out.push((*b, g.to_vec()));
            }
            Op::Sub(a, b) => {
                out.push((*a, g.to_vec()));
                out.push((*b, g.iter().map(|v| -v).collect()));
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.data(*a), self.data(*b));
                out.push(map(*a, &|j| g[j] * bd[j]));
                out.push(map(*b, &|j| g[j] * ad[j]));
            }
            Op::Div(a, b) => {
                let (ad, bd) = (self.data(*a), self.data(*b));
                out.push(map(*a, &|j| g[j] / bd[j]));
                out.push(map(*b, &|j| -g[j] * ad[j] / (bd[j] * bd[j])));
            }
            Op::Maximum(a, b) => {
                let (ad, bd) = (self.data(*a), self.data(*b));
                out.push(map(*a, &|j| if ad[j] >= bd[j] { g[j] } else { 0.0 }));
                out.push(map(*b, &|j| if ad[j] >= bd[j] { 0.0 } else { g[j] }));
            }
            Op::Minimum(a, b) => {
                let (ad, bd) = (self.data(*a), self.data(*b));
                out.push(map(*a, &|j| if ad[j] <= bd[j] { g[j] } else { 0.0 }));
                out.push(map(*b, &|j| if ad[j] <= bd[j] { 0.0 } else { g[j] }));
            }
            Op::Scale(a, s) => out.push(map(*a, &|j| g[j] * s)),
            Op::AddScalar(a) => out.push((*a, g.to_vec())),
            Op::Abs(a) => {
                let ad = self.data(*a);
                out.push(map(*a, &|j| g[j] * sign(ad[j])));
            }
            Op::Relu(a) => {
                let ad = self.data(*a);
                out.push(map(*a, &|j| if ad[j] > 0.0 { g[j] } else { 0.0 }));
            }
            Op::Sigmoid(a) => out.push(map(*a, &|j| g[j] * y[j] * (1.0 - y[j]))),
            Op::Exp(a) => out.push(map(*a, &|j| g[j] * y[j])),
            Op::Log(a) => {
                let ad = self.data(*a);
                out.push(map(*a, &|j| g[j] / ad[j]));
            }
            Op::Sin(a) => {
                let ad = self.data(*a);
                out.push(map(*a, &|j| g[j] * ad[j].cos()));
            }
            Op::Cos(a) => {
                let ad = self.data(*a);
                out.push(map(*a, &|j| -g[j] * ad[j].sin()));
            }
            Op::Sum(a) => {
                let n = self.data(*a).len();
                out.push((*a, vec![g[0]; n]));
            }
            Op::ChannelBias { x, b, inner } => {
                let c = self.data(*b).len();
                let mut gb = vec![0.0; c];
                for (i, v) in g.iter().enumerate() {
                    gb[(i / inner) % c] += v;
                }
                out.push((*x, g.to_vec()));
                out.push((*b, gb));
            }
            Op::MatMul { a, b, m, k, p } => {
                if self.rg(*a) {
                    let mut ga = vec![0.0; m * k];
                    matmul_bt_into(g, self.data(*b), &mut ga, *m, *k, *p);
                    out.push((*a, ga));
                }
                if self.rg(*b) {
                    let mut gb = vec![0.0; k * p];
                    matmul_at_into(self.data(*a), g, &mut gb, *m, *k, *p);
                    out.push((*b, gb));
                }
            }
            Op::Bmm { a, b, g: groups, m, k, p } => {
                let (ad, bd) = (self.data(*a), self.data(*b));
                let (mk, kp, mp) = (m * k, k * p, m * p);
                if self.rg(*a) {
                    let mut ga = vec![0.0; groups * mk];
                    for gi in 0..*groups {
                        matmul_bt_into(
                            &g[gi * mp..(gi + 1) * mp],
                            &bd[gi * kp..(gi + 1) * kp],
                            &mut ga[gi * mk..(gi + 1) * mk],
                            *m,
                            *k,
                            *p,
                        );
                    }
                    out.push((*a, ga));
                }
                if self.rg(*b) {
                    let mut gb = vec![0.0; groups * kp];
                    for gi in 0..*groups {
                        matmul_at_into(
                            &ad[gi * mk..(gi + 1) * mk],
                            &g[gi * mp..(gi + 1) * mp],
                            &mut gb[gi * kp..(gi + 1) * kp],
                            *m,
                            *k,
                            *p,
                        );
                    }
                    out.push((*b, gb));
                }
            }
            Op::Linear { x, w, b, rows, k, p } => {
                if self.rg(*x) {
                    let mut gx = vec![0.0; rows * k];
                    matmul_bt_into(g, self.data(*w), &mut gx, *rows, *k, *p);
                    out.push((*x, gx));
                }
                if self.rg(*w) {
                    let mut gw = vec![0.0; k * p];
                    matmul_at_into(self.data(*x), g, &mut gw, *rows, *k, *p);
                    out.push((*w, gw));
                }
                if let Some(b) = b {
                    let mut gb = vec![0.0; *p];
                    for row in g.chunks(*p) {
                        gb.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                    }
                    out.push((*b, gb));
                }
            }
            Op::Reshape(a) => out.push((*a, g.to_vec())),
            Op::Permute { a, axes } => {
                let mut inv = vec![0; axes.len()];
                for (i, &ax) in axes.iter().enumerate() {
                    inv[ax] = i;
                }
                let (_, gd) = permute_data(g, node.value.shape(), &inv);
                out.push((*a, gd));
            }
            Op::Concat { inputs, axis } => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis] * inner;
                let mut offset = 0;
                for &v in inputs {
                    let len = self.nodes[v.0].value.shape()[*axis] * inner;
                    let mut gv = Vec::with_capacity(outer * len);
                    for o in 0..outer {
                        gv.extend_from_slice(&g[o * total + offset..o * total + offset + len]);
                    }
                    offset += len;
                    out.push((v, gv));
                }
            }
            Op::Slice { a, axis, start } => {
                let src_shape = self.nodes[a.0].value.shape();
                let len = node.value.shape()[*axis];
                let outer: usize = src_shape[..*axis].iter().product();
                let inner: usize = src_shape[axis + 1..].iter().product();
                let mut ga = vec![0.0; self.data(*a).len()];
                for o in 0..outer {
                    let dst = (o * src_shape[*axis] + start) * inner;
                    ga[dst..dst + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                out.push((*a, ga));
            }
            Op::IndexRows { a, idx } => {
                let inner = g.len() / idx.len();
                let mut ga = vec![0.0; self.data(*a).len()];
                for (r, &i) in idx.iter().enumerate() {
                    ga[i * inner..(i + 1) * inner]
                        .iter_mut()
                        .zip(&g[r * inner..(r + 1) * inner])
                        .for_each(|(d, s)| *d += s);
                }
                out.push((*a, ga));
            }
            Op::Pick { a, idx } => {
                let k = self.nodes[a.0].value.shape()[1];
                let mut ga = vec![0.0; self.data(*a).len()];
                for (r, &c) in idx.iter().enumerate() {
                    ga[r * k + c] += g[r];
                }
                out.push((*a, ga));
            }
            Op::Softmax(a) => {
                let d = *node.value.shape().last().expect("non-empty");
                let mut ga = vec![0.0; g.len()];
                for ((gr, yr), dst) in g.chunks(d).zip(y.chunks(d)).zip(ga.chunks_mut(d)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for j in 0..d {
                        dst[j] = yr[j] * (gr[j] - dot);
                    }
                }
                out.push((*a, ga));
            }
            Op::LogSoftmax(a) => {
                let d = *node.value.shape().last().expect("non-empty");
                let mut ga = vec![0.0; g.len()];
                for ((gr, yr), dst) in g.chunks(d).zip(y.chunks(d)).zip(ga.chunks_mut(d)) {
                    let s: f64 = gr.iter().sum();
                    for j in 0..d {
                        dst[j] = gr[j] - yr[j].exp() * s;
                    }
                }
                out.push((*a, ga));
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let c = *node.value.shape().last().expect("non-empty");
                let gd = self.data(*gamma);
                let mut gx = vec![0.0; g.len()];
                let mut gg = vec![0.0; c];
                let mut gb = vec![0.0; c];
                for (r, &rs) in rstd.iter().enumerate() {
                    let gr = &g[r * c..(r + 1) * c];
                    let hr = &xhat[r * c..(r + 1) * c];
                    let mut mean_d = 0.0;
                    let mut mean_dh = 0.0;
                    for j in 0..c {
                        let d = gr[j] * gd[j];
                        mean_d += d;
                        mean_dh += d * hr[j];
                        gg[j] += gr[j] * hr[j];
                        gb[j] += gr[j];
                    }
                    mean_d /= c as f64;
                    mean_dh /= c as f64;
                    for j in 0..c {
                        gx[r * c + j] = rs * (gr[j] * gd[j] - mean_d - hr[j] * mean_dh);
                    }
                }
                out.push((*x, gx));
                out.push((*gamma, gg));
                out.push((*beta, gb));
            }
            Op::Conv2d { x, w, b, stride, pad } => {
                let (gx, gw, gb) = self.conv2d_backward(node, *x, *w, b.is_some(), *stride, *pad, g);
                out.push((*x, gx));
                out.push((*w, gw));
                if let Some(b) = b {
                    out.push((*b, gb));
                }
            }
            Op::Depthwise { x, k, b } => {
                let [bsz, c, h, w] = dims4(node.value.shape(), "").expect("4-D");
                let kk = self.nodes[k.0].value.shape()[1];
                let r = (kk / 2) as isize;
                let xd = self.data(*x);
                let kd = self.data(*k);
                let mut gx = vec![0.0; xd.len()];
                let mut gk = vec![0.0; kd.len()];
                let mut gb = vec![0.0; c];
                for bi in 0..bsz {
                    for ch in 0..c {
                        let plane = (bi * c + ch) * h * w;
                        for yy in 0..h {
                            for xx in 0..w {
                                let go = g[plane + yy * w + xx];
                                gb[ch] += go;
                                for ky in 0..kk {
                                    let iy = yy as isize + ky as isize - r;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    for kx in 0..kk {
                                        let ix = xx as isize + kx as isize - r;
                                        if ix < 0 || ix >= w as isize {
                                            continue;
                                        }
                                        let off = plane + iy as usize * w + ix as usize;
                                        let ki = ch * kk * kk + ky * kk + kx;
                                        gx[off] += go * kd[ki];
                                        gk[ki] += go * xd[off];
                                    }
                                }
                            }
                        }
                    }
                }
                out.push((*x, gx));
                out.push((*k, gk));
                if let Some(b) = b {
                    out.push((*b, gb));
                }
            }
            Op::Butterfly { x, w, stage_inputs } => {
                let [bsz, n, h, wd] = dims4(node.value.shape(), "").expect("4-D");
                let hw = h * wd;
                let wdat = self.data(*w);
                let mut gw = vec![0.0; wdat.len()];
                let mut cur = g.to_vec();
                for (s, xin) in stage_inputs.iter().enumerate().rev() {
                    let stride = 1 << s;
                    let mut prev = vec![0.0; cur.len()];
                    for bi in 0..bsz {
                        for i in 0..n {
                            let j = i ^ stride;
                            let w_self = wdat[(s * n + i) * 2];
                            let w_cross = wdat[(s * n + i) * 2 + 1];
                            let orow = (bi * n + i) * hw;
                            let srow = (bi * n + j) * hw;
                            let mut acc_self = 0.0;
                            let mut acc_cross = 0.0;
                            for p in 0..hw {
                                let go = cur[orow + p];
                                acc_self += go * xin[orow + p];
                                acc_cross += go * xin[srow + p];
                                prev[orow + p] += w_self * go;
                                prev[srow + p] += w_cross * go;
                            }
                            gw[(s * n + i) * 2] += acc_self;
                            gw[(s * n + i) * 2 + 1] += acc_cross;
                        }
                    }
                    cur = prev;
                }
                out.push((*x, cur));
                out.push((*w, gw));
            }
            Op::MaxPool { a, argmax } => {
                let mut ga = vec![0.0; self.data(*a).len()];
                for (&at, &go) in argmax.iter().zip(g) {
                    ga[at] += go;
                }
                out.push((*a, ga));
            }
            Op::AvgPool { a, out_h, out_w } => {
                let [bsz, c, h, w] = dims4(self.nodes[a.0].value.shape(), "").expect("4-D");
                let mut ga = vec![0.0; bsz * c * h * w];
                for plane in 0..bsz * c {
                    for oy in 0..*out_h {
                        let (y0, y1) = pool_bin(oy, h, *out_h);
                        for ox in 0..*out_w {
                            let (x0, x1) = pool_bin(ox, w, *out_w);
                            let go = g[(plane * out_h + oy) * out_w + ox] / ((y1 - y0) * (x1 - x0)) as f64;
                            for yy in y0..y1 {
                                for xx in x0..x1 {
                                    ga[plane * h * w + yy * w + xx] += go;
                                }
                            }
                        }
                    }
                }
                out.push((*a, ga));
            }
        }
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn conv2d_backward(
        &self,
        node: &Node,
        x: Var,
        w: Var,
        has_bias: bool,
        stride: usize,
        pad: usize,
        g: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let [bsz, ci, h, wd] = dims4(self.nodes[x.0].value.shape(), "").expect("4-D");
        let [co, _, k, _] = dims4(self.nodes[w.0].value.shape(), "").expect("4-D");
        let [_, _, ho, wo] = dims4(node.value.shape(), "").expect("4-D");
        let xd = self.data(x);
        let wdat = self.data(w);
        let mut gx = vec![0.0; xd.len()];
        let mut gw = vec![0.0; wdat.len()];
        let mut gb = vec![0.0; if has_bias { co } else { 0 }];
        for bi in 0..bsz {
            for o in 0..co {
                let gplane = &g[(bi * co + o) * ho * wo..(bi * co + o + 1) * ho * wo];
                if has_bias {
                    gb[o] += gplane.iter().sum::<f64>();
                }
                for c in 0..ci {
                    let xoff = (bi * ci + c) * h * wd;
                    let woff = (o * ci + c) * k * k;
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let go = gplane[oy * wo + ox];
                            if go == 0.0 {
                                continue;
                            }
                            for ky in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..k {
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if ix < 0 || ix >= wd as isize {
                                        continue;
                                    }
                                    let xi = xoff + iy as usize * wd + ix as usize;
                                    let wi = woff + ky * k + kx;
                                    gx[xi] += go * wdat[wi];
                                    gw[wi] += go * xd[xi];
                                }
                            }
                        }
                    }
                }
            }
        }
        (gx, gw, gb)
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

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn dims4(shape: &[usize], what: &str) -> Result<[usize; 4]> {
    match shape {
        [a, b, c, d] => Ok([*a, *b, *c, *d]),
        s => Err(Error::dim(format!("{what} must be 4-D, got {s:?}"))),
    }
}

fn pool_bin(i: usize, size: usize, out: usize) -> (usize, usize) {
    let start = i * size / out;
    let end = ((i + 1) * size).div_ceil(out);
    (start, end)
}

pub(crate) fn permute_data(data: &[f64], shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<f64>) {
    let src_strides = strides(shape);
    let new_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let perm_strides: Vec<usize> = axes.iter().map(|&a| src_strides[a]).collect();
    let n = data.len();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; shape.len()];
    let mut off = 0usize;
    for _ in 0..n {
        out.push(data[off]);
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            off += perm_strides[d];
            if idx[d] < new_shape[d] {
                break;
            }
            off -= perm_strides[d] * new_shape[d];
            idx[d] = 0;
        }
    }
    (new_shape, out)
}

/// Butterfly forward over `[B×N×P]` data. Returns the output and the input
/// seen by each stage (needed for the weight gradients).
pub(crate) fn butterfly_kernel(x: &[f64], w: &[f64], bsz: usize, n: usize, positions: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let stages = n.trailing_zeros() as usize;
    let mut cur = x.to_vec();
    let mut stage_inputs = Vec::with_capacity(stages);
    for s in 0..stages {
        let stride = 1 << s;
        let mut next = vec![0.0; cur.len()];
        for bi in 0..bsz {
            for i in 0..n {
                let j = i ^ stride;
                let w_self = w[(s * n + i) * 2];
                let w_cross = w[(s * n + i) * 2 + 1];
                let orow = (bi * n + i) * positions;
                let srow = (bi * n + j) * positions;
                for p in 0..positions {
                    next[orow + p] = w_self * cur[orow + p] + w_cross * cur[srow + p];
                }
            }
        }
        stage_inputs.push(cur);
        cur = next;
    }
    (cur, stage_inputs)
}
