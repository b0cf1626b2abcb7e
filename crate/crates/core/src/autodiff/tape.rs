use super::kernels::{self, gemm};
use super::{AutodiffError, ParameterStore, Tensor};

type Result<T> = std::result::Result<T, AutodiffError>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, trans_b: bool },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, s: f32 },
    AddScalar { a: Var },
    Reshape { a: Var },
    Permute { a: Var, perm: Vec<usize> },
    Concat { parts: Vec<Var>, axis: usize },
    Slice { a: Var, axis: usize, start: usize },
    Softmax { a: Var },
    Sigmoid { a: Var },
    Gelu { a: Var },
    Relu { a: Var },
    LayerNorm { x: Var, gain: Var, bias: Var },
    Conv2d { x: Var, w: Var, b: Var },
    AvgPool2 { a: Var },
    CrossEntropy { probs: Var, targets: Vec<usize> },
    Mse { a: Var, b: Var },
    Bce { pred: Var, target: Var },
    Sum { a: Var },
    Mean { a: Var },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Vec<f32>>,
    op: Op,
    requires_grad: bool,
    /// Double-precision copy of a scalar produced by a reduction.
    wide: Option<f64>,
}

/// Probability floor used by the cross-entropy op.
pub const CE_CLAMP: f32 = 1e-9;
/// Prediction clamp used by the binary cross-entropy op.
pub const BCE_CLAMP: f32 = 1e-6;
const LN_EPS: f32 = 1e-5;

/// Append-only record of operations, replayed in reverse by [`Tape::backward`].
///
/// Gradients are kept for leaves only. A tape supports one backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bindings: Vec<(String, Var)>,
    backward_done: bool,
}

fn mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> AutodiffError {
    AutodiffError::ShapeMismatch { op, lhs: lhs.to_vec(), rhs: rhs.to_vec() }
}

fn add_into(dst: &mut Option<Vec<f32>>, src: Vec<f32>) {
    match dst {
        Some(d) => d.iter_mut().zip(&src).for_each(|(a, b)| *a += b),
        None => *dst = Some(src),
    }
}

/// Sums `g` (shape `big`) over leading blocks into a buffer of `small_len`.
fn reduce_leading(g: &[f32], small_len: usize) -> Vec<f32> {
    let mut out = vec![0.0; small_len];
    if small_len == 0 {
        return out;
    }
    for block in g.chunks_exact(small_len) {
        out.iter_mut().zip(block).for_each(|(o, v)| *o += v);
    }
    out
}

struct MatMulDims {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    shared_b: bool,
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
        self.nodes.push(Node { value, grad: None, op, requires_grad, wide: None });
        Var(self.nodes.len() - 1)
    }

    fn push_scalar(&mut self, value: f64, op: Op, requires_grad: bool) -> Var {
        let v = self.push(Tensor::scalar(value as f32), op, requires_grad);
        self.nodes[v.0].wide = Some(value);
        v
    }

    /// Scalar value in double precision. Reductions and scalar arithmetic on
    /// their results keep an f64 copy, which finite-difference checks need.
    pub fn scalar_f64(&self, v: Var) -> f64 {
        let n = &self.nodes[v.0];
        n.wide.unwrap_or_else(|| f64::from(n.value.item()))
    }

    fn wide_pair(&self, a: Var, b: Var) -> Option<(f64, f64)> {
        if self.value(a).rank() != 0 || self.value(b).rank() != 0 {
            return None;
        }
        Some((self.scalar_f64(a), self.scalar_f64(b)))
    }

    fn set_wide(&mut self, v: Var, w: Option<f64>) -> Var {
        if self.nodes[v.0].value.rank() == 0 {
            self.nodes[v.0].wide = w;
        }
        v
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of a leaf after [`Tape::backward`]; `None` if nothing reached it.
    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Var {
        self.push(t, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t, false)
    }

    /// Records a trainable parameter; its gradient is collected by
    /// [`ParameterStore::accumulate`].
    pub fn param(&mut self, store: &ParameterStore, name: &str) -> Result<Var> {
        let t = store.value(name)?.clone();
        let v = self.leaf(t, true);
        self.bindings.push((name.to_string(), v));
        Ok(v)
    }

    /// Records a parameter as a constant: gradients flow through it but are
    /// never computed for it.
    pub fn frozen_param(&mut self, store: &ParameterStore, name: &str) -> Result<Var> {
        Ok(self.constant(store.value(name)?.clone()))
    }

    pub(crate) fn bindings(&self) -> &[(String, Var)] {
        &self.bindings
    }

    // ---------------------------------------------------------------- ops

    fn matmul_dims(&self, a: Var, b: Var, trans_b: bool) -> Result<(MatMulDims, Vec<usize>)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let err = || mismatch("matmul", sa, sb);
        if sa.len() < 2 || sb.len() < 2 {
            return Err(err());
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = if trans_b {
            (sb[sb.len() - 1], sb[sb.len() - 2])
        } else {
            (sb[sb.len() - 2], sb[sb.len() - 1])
        };
        if k != kb {
            return Err(err());
        }
        let lead_a = &sa[..sa.len() - 2];
        let shared_b = sb.len() == 2;
        if !shared_b && sb[..sb.len() - 2] != *lead_a {
            return Err(err());
        }
        let batch = lead_a.iter().product();
        let mut out = lead_a.to_vec();
        out.extend([m, n]);
        Ok((MatMulDims { batch, m, k, n, shared_b }, out))
    }

    /// `a·b` over the last two axes. `b` is either a matrix shared across the
    /// leading axes of `a`, or has the same leading axes.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a·bᵀ` over the last two axes.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    /// Embedding lookup for one-hot or probability rows, expressed as a matmul.
    pub fn embed(&mut self, rows: Var, table: Var) -> Result<Var> {
        self.matmul(rows, table)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (d, out_shape) = self.matmul_dims(a, b, trans_b)?;
        let mut out = vec![0.0; d.batch * d.m * d.n];
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let bs = if trans_b { (1, d.k) } else { (d.n, 1) };
        if d.shared_b {
            gemm(d.batch * d.m, d.k, d.n, av, (d.k, 1), bv, bs, &mut out, 0.0);
        } else {
            for i in 0..d.batch {
                gemm(
                    d.m,
                    d.k,
                    d.n,
                    &av[i * d.m * d.k..],
                    (d.k, 1),
                    &bv[i * d.k * d.n..],
                    bs,
                    &mut out[i * d.m * d.n..],
                    0.0,
                );
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(&out_shape, out)?, Op::MatMul { a, b, trans_b }, rg))
    }

    fn check_suffix(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(mismatch(op, sa, sb));
        }
        Ok(())
    }

    fn binary_broadcast(&mut self, a: Var, b: Var, op: Op, name: &'static str, f: impl Fn(f32, f32) -> f32) -> Result<Var> {
        self.check_suffix(name, a, b)?;
        let av = self.value(a);
        let bv = self.value(b).data();
        let nb = bv.len().max(1);
        let mut out = av.data().to_vec();
        for block in out.chunks_exact_mut(nb) {
            block.iter_mut().zip(bv).for_each(|(x, &y)| *x = f(*x, y));
        }
        let shape = av.shape().to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(&shape, out)?, op, rg))
    }

    /// Elementwise `a + b`; `b`'s shape must be a suffix of `a`'s (broadcast over leading axes).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let w = self.wide_pair(a, b).map(|(x, y)| x + y);
        let v = self.binary_broadcast(a, b, Op::Add { a, b }, "add", |x, y| x + y)?;
        Ok(self.set_wide(v, w))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let w = self.wide_pair(a, b).map(|(x, y)| x - y);
        let v = self.binary_broadcast(a, b, Op::Sub { a, b }, "sub", |x, y| x - y)?;
        Ok(self.set_wide(v, w))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let w = self.wide_pair(a, b).map(|(x, y)| x * y);
        let v = self.binary_broadcast(a, b, Op::Mul { a, b }, "mul", |x, y| x * y)?;
        Ok(self.set_wide(v, w))
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f32) -> f32) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| f(x)).collect();
        let t = Tensor::new(t.shape(), data).expect("same shape");
        let rg = self.rg(a);
        self.push(t, op, rg)
    }

    pub fn scale(&mut self, a: Var, s: f32) -> Var {
        let w = self.scalar_wide(a).map(|x| x * f64::from(s));
        let v = self.unary(a, Op::Scale { a, s }, |x| x * s);
        self.set_wide(v, w)
    }

    pub fn add_scalar(&mut self, a: Var, s: f32) -> Var {
        let w = self.scalar_wide(a).map(|x| x + f64::from(s));
        let v = self.unary(a, Op::AddScalar { a }, |x| x + s);
        self.set_wide(v, w)
    }

    fn scalar_wide(&self, a: Var) -> Option<f64> {
        (self.value(a).rank() == 0).then(|| self.scalar_f64(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid { a }, kernels::sigmoid)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Gelu { a }, kernels::gelu)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu { a }, |x| x.max(0.0))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if shape.iter().product::<usize>() != t.numel() {
            return Err(mismatch("reshape", t.shape(), shape));
        }
        let t = t.clone().reshaped(shape);
        let rg = self.rg(a);
        Ok(self.push(t, Op::Reshape { a }, rg))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let mut seen = vec![false; t.rank()];
        if perm.len() != t.rank() || perm.iter().any(|&p| p >= t.rank() || std::mem::replace(&mut seen[p], true)) {
            return Err(mismatch("permute", t.shape(), perm));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| t.shape()[p]).collect();
        let mut out = vec![0.0; t.numel()];
        kernels::permute(t.data(), t.shape(), perm, &mut out);
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(&out_shape, out)?, Op::Permute { a, perm: perm.to_vec() }, rg))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let r = self.value(a).rank();
        if r < 2 {
            return Err(mismatch("transpose", self.shape(a), &[]));
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(a, &perm)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(*parts.first().ok_or_else(|| mismatch("concat", &[], &[]))?).to_vec();
        if axis >= first.len() {
            return Err(mismatch("concat", &first, &[axis]));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len() || s[..axis] != first[..axis] || s[axis + 1..] != first[axis + 1..] {
                return Err(mismatch("concat", &first, s));
            }
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis] * inner;
                out.extend_from_slice(&self.value(p).data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(&shape, out)?, Op::Concat { parts: parts.to_vec(), axis }, rg))
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() || start + len > s[axis] {
            return Err(mismatch("slice", &s, &[axis, start, len]));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * s[axis] + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(&shape, out)?, Op::Slice { a, axis, start }, rg))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut out = vec![0.0; t.numel()];
        kernels::softmax_rows(t.data(), t.last_dim(), &mut out);
        let t = Tensor::new(t.shape(), out).expect("same shape");
        let rg = self.rg(a);
        self.push(t, Op::Softmax { a }, rg)
    }

    /// Layer normalization over the last axis with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let d = self.value(x).last_dim();
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(mismatch("layer_norm", self.shape(x), self.shape(gain)));
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let t = self.value(x);
        let mut out = vec![0.0; t.numel()];
        for (row, o) in t.data().chunks_exact(d).zip(out.chunks_exact_mut(d)) {
            let (mean, rstd) = row_stats(row);
            for i in 0..d {
                o[i] = ((f64::from(row[i]) - mean) * rstd) as f32 * g[i] + b[i];
            }
        }
        let t = Tensor::new(t.shape(), out)?;
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(t, Op::LayerNorm { x, gain, bias }, rg))
    }

    /// Stride-1 same-padding 2-D convolution: `x [B,C,H,W]`, `w [O,C,K,K]` (K odd), `b [O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sx.len() != 4 || sw.len() != 4 || sw[1] != sx[1] || sw[2] != sw[3] || sw[2] % 2 == 0 || sb != [sw[0]] {
            return Err(mismatch("conv2d", sx, sw));
        }
        let (bn, c, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
        let (o, k) = (sw[0], sw[2]);
        let hw = h * wd;
        let ckk = c * k * k;
        let (xv, wv, bv) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        let mut out = vec![0.0; bn * o * hw];
        let mut col = vec![0.0; ckk * hw];
        for i in 0..bn {
            kernels::im2col(&xv[i * c * hw..(i + 1) * c * hw], c, h, wd, k, &mut col);
            let dst = &mut out[i * o * hw..(i + 1) * o * hw];
            for (oc, row) in dst.chunks_exact_mut(hw).enumerate() {
                row.fill(bv[oc]);
            }
            gemm(o, ckk, hw, wv, (ckk, 1), &col, (hw, 1), dst, 1.0);
        }
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(Tensor::new(&[bn, o, h, wd], out)?, Op::Conv2d { x, w, b }, rg))
    }

    /// 2x2 mean pooling over the last two axes.
    pub fn avg_pool2(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let r = s.len();
        if r < 2 || !s[r - 1].is_multiple_of(2) || !s[r - 2].is_multiple_of(2) {
            return Err(mismatch("avg_pool2", &s, &[2, 2]));
        }
        let (h, w) = (s[r - 2], s[r - 1]);
        let planes: usize = s[..r - 2].iter().product();
        let src = self.value(a).data();
        let (oh, ow) = (h / 2, w / 2);
        let mut out = vec![0.0; planes * oh * ow];
        for p in 0..planes {
            let inp = &src[p * h * w..];
            let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
            for y in 0..oh {
                for x in 0..ow {
                    let i = 2 * y * w + 2 * x;
                    dst[y * ow + x] = 0.25 * (inp[i] + inp[i + 1] + inp[i + w] + inp[i + w + 1]);
                }
            }
        }
        let mut shape = s;
        shape[r - 2] = oh;
        shape[r - 1] = ow;
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(&shape, out)?, Op::AvgPool2 { a }, rg))
    }

    /// Mean over rows of `-ln(max(p[target], 1e-9))`; `probs` rows lie on the last axis.
    pub fn cross_entropy(&mut self, probs: Var, targets: &[usize]) -> Result<Var> {
        let t = self.value(probs);
        let c = t.last_dim();
        let rows = t.numel() / c.max(1);
        if targets.len() != rows || targets.iter().any(|&k| k >= c) {
            return Err(mismatch("cross_entropy", t.shape(), &[targets.len()]));
        }
        let p = t.data();
        let sum: f64 = targets
            .iter()
            .enumerate()
            .map(|(i, &k)| -f64::from(p[i * c + k].max(CE_CLAMP)).ln())
            .sum();
        let loss = sum / rows as f64;
        let rg = self.rg(probs);
        Ok(self.push_scalar(loss, Op::CrossEntropy { probs, targets: targets.to_vec() }, rg))
    }

    /// Mean squared difference.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch("mse", self.shape(a), self.shape(b)));
        }
        let (x, y) = (self.value(a).data(), self.value(b).data());
        let sum: f64 = x.iter().zip(y).map(|(&p, &q)| (f64::from(p) - f64::from(q)).powi(2)).sum();
        let loss = sum / x.len() as f64;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push_scalar(loss, Op::Mse { a, b }, rg))
    }

    /// Mean binary cross-entropy with the prediction clamped to `[1e-6, 1 - 1e-6]`.
    pub fn bce(&mut self, pred: Var, target: Var) -> Result<Var> {
        if self.shape(pred) != self.shape(target) {
            return Err(mismatch("bce", self.shape(pred), self.shape(target)));
        }
        let (p, t) = (self.value(pred).data(), self.value(target).data());
        let sum: f64 = p
            .iter()
            .zip(t)
            .map(|(&p, &t)| {
                let p = f64::from(p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP));
                let t = f64::from(t);
                -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
            })
            .sum();
        let loss = sum / p.len() as f64;
        let rg = self.rg(pred) || self.rg(target);
        Ok(self.push_scalar(loss, Op::Bce { pred, target }, rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().map(|&v| f64::from(v)).sum();
        let rg = self.rg(a);
        self.push_scalar(s, Op::Sum { a }, rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s: f64 = t.data().iter().map(|&v| f64::from(v)).sum();
        let n = t.numel().max(1) as f64;
        let rg = self.rg(a);
        self.push_scalar(s / n, Op::Mean { a }, rg)
    }

    // ----------------------------------------------------------- backward

    /// Propagates `∂loss/∂·` to every leaf that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(AutodiffError::BackwardTwice);
        }
        if self.value(loss).rank() != 0 {
            return Err(AutodiffError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        self.backward_done = true;
        if !self.rg(loss) {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else { continue };
            if matches!(self.nodes[i].op, Op::Leaf) {
                self.nodes[i].grad = Some(g);
                continue;
            }
            for (target, contrib) in self.local_grads(i, &g) {
                if self.nodes[target.0].requires_grad {
                    add_into(&mut self.nodes[target.0].grad, contrib);
                }
            }
        }
        Ok(())
    }

    fn local_grads(&self, i: usize, g: &[f32]) -> Vec<(Var, Vec<f32>)> {
        let node = &self.nodes[i];
        let out = node.value.data();
        let mut res = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, trans_b } => {
                let (d, _) = self.matmul_dims(*a, *b, *trans_b).expect("validated in forward");
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.rg(*a) {
                    let mut da = vec![0.0; d.batch * d.m * d.k];
                    // dA = dC · Bᵀ (or dC · B when b is stored transposed)
                    let bs = if *trans_b { (d.k, 1) } else { (1, d.n) };
                    if d.shared_b {
                        gemm(d.batch * d.m, d.n, d.k, g, (d.n, 1), bv, bs, &mut da, 0.0);
                    } else {
                        for j in 0..d.batch {
                            gemm(d.m, d.n, d.k, &g[j * d.m * d.n..], (d.n, 1), &bv[j * d.k * d.n..], bs, &mut da[j * d.m * d.k..], 0.0);
                        }
                    }
                    res.push((*a, da));
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; self.value(*b).numel()];
                    let (rows, inner) = if d.shared_b { (d.batch * d.m, 1) } else { (d.m, d.batch) };
                    for j in 0..inner {
                        let (ga, aa) = (&g[j * d.m * d.n..], &av[j * d.m * d.k..]);
                        let dst = if d.shared_b { &mut db[..] } else { &mut db[j * d.k * d.n..] };
                        if *trans_b {
                            // dB[n,k] = dCᵀ · A
                            gemm(d.n, rows, d.k, ga, (1, d.n), aa, (d.k, 1), dst, 0.0);
                        } else {
                            // dB[k,n] = Aᵀ · dC
                            gemm(d.k, rows, d.n, aa, (1, d.k), ga, (d.n, 1), dst, 0.0);
                        }
                    }
                    res.push((*b, db));
                }
            }
            Op::Add { a, b } | Op::Sub { a, b } => {
                let sign = if matches!(node.op, Op::Sub { .. }) { -1.0 } else { 1.0 };
                if self.rg(*a) {
                    res.push((*a, g.to_vec()));
                }
                if self.rg(*b) {
                    let mut gb = reduce_leading(g, self.value(*b).numel());
                    if sign < 0.0 {
                        gb.iter_mut().for_each(|v| *v = -*v);
                    }
                    res.push((*b, gb));
                }
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let nb = bv.len().max(1);
                if self.rg(*a) {
                    let mut ga = g.to_vec();
                    for block in ga.chunks_exact_mut(nb) {
                        block.iter_mut().zip(bv).for_each(|(x, &y)| *x *= y);
                    }
                    res.push((*a, ga));
                }
                if self.rg(*b) {
                    let mut gb = vec![0.0; bv.len()];
                    for (gblk, ablk) in g.chunks_exact(nb).zip(av.chunks_exact(nb)) {
                        for ((o, &gg), &aa) in gb.iter_mut().zip(gblk).zip(ablk) {
                            *o += gg * aa;
                        }
                    }
                    res.push((*b, gb));
                }
            }
            Op::Scale { a, s } => res.push((*a, g.iter().map(|v| v * s).collect())),
            Op::AddScalar { a } | Op::Reshape { a } => res.push((*a, g.to_vec())),
            Op::Permute { a, perm } => {
                let mut ga = vec![0.0; g.len()];
                kernels::permute(g, node.value.shape(), &kernels::inverse_perm(perm), &mut ga);
                res.push((*a, ga));
            }
            Op::Concat { parts, axis } => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let mut offset = 0;
                for &p in parts {
                    let len = self.shape(p)[*axis] * inner;
                    if self.rg(p) {
                        let mut gp = Vec::with_capacity(outer * len);
                        for o in 0..outer {
                            let base = o * shape[*axis] * inner + offset;
                            gp.extend_from_slice(&g[base..base + len]);
                        }
                        res.push((p, gp));
                    }
                    offset += len;
                }
            }
            Op::Slice { a, axis, start } => {
                let s = self.shape(*a);
                let outer: usize = s[..*axis].iter().product();
                let inner: usize = s[axis + 1..].iter().product();
                let len = node.value.shape()[*axis] * inner;
                let mut ga = vec![0.0; self.value(*a).numel()];
                for o in 0..outer {
                    let base = (o * s[*axis] + start) * inner;
                    ga[base..base + len].copy_from_slice(&g[o * len..(o + 1) * len]);
                }
                res.push((*a, ga));
            }
            Op::Softmax { a } => {
                let c = node.value.last_dim();
                let mut ga = vec![0.0; g.len()];
                for ((y, gr), o) in out.chunks_exact(c).zip(g.chunks_exact(c)).zip(ga.chunks_exact_mut(c)) {
                    let dot: f32 = y.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for j in 0..c {
                        o[j] = y[j] * (gr[j] - dot);
                    }
                }
                res.push((*a, ga));
            }
            Op::Sigmoid { a } => {
                res.push((*a, out.iter().zip(g).map(|(y, gg)| gg * y * (1.0 - y)).collect()));
            }
            Op::Gelu { a } => {
                let x = self.value(*a).data();
                res.push((*a, x.iter().zip(g).map(|(&x, gg)| gg * kernels::gelu_grad(x)).collect()));
            }
            Op::Relu { a } => {
                let x = self.value(*a).data();
                res.push((*a, x.iter().zip(g).map(|(&x, &gg)| if x > 0.0 { gg } else { 0.0 }).collect()));
            }
            Op::LayerNorm { x, gain, bias } => {
                let d = node.value.last_dim();
                let xv = self.value(*x).data();
                let gv = self.value(*gain).data();
                let mut dx = vec![0.0; xv.len()];
                let mut dg = vec![0.0; d];
                let mut db = vec![0.0; d];
                let mut xhat = vec![0.0; d];
                let mut gy = vec![0.0; d];
                for ((row, gr), dxr) in xv.chunks_exact(d).zip(g.chunks_exact(d)).zip(dx.chunks_exact_mut(d)) {
                    let (mean, rstd) = row_stats(row);
                    let (mut m1, mut m2) = (0.0f32, 0.0f32);
                    for j in 0..d {
                        xhat[j] = ((f64::from(row[j]) - mean) * rstd) as f32;
                        gy[j] = gr[j] * gv[j];
                        dg[j] += gr[j] * xhat[j];
                        db[j] += gr[j];
                        m1 += gy[j];
                        m2 += gy[j] * xhat[j];
                    }
                    m1 /= d as f32;
                    m2 /= d as f32;
                    for j in 0..d {
                        dxr[j] = rstd as f32 * (gy[j] - m1 - xhat[j] * m2);
                    }
                }
                if self.rg(*x) {
                    res.push((*x, dx));
                }
                if self.rg(*gain) {
                    res.push((*gain, dg));
                }
                if self.rg(*bias) {
                    res.push((*bias, db));
                }
            }
            Op::Conv2d { x, w, b } => {
                let sx = self.shape(*x);
                let (bn, c, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
                let sw = self.shape(*w);
                let (o, k) = (sw[0], sw[2]);
                let (hw, ckk) = (h * wd, c * k * k);
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                let mut col = vec![0.0; ckk * hw];
                let mut dcol = vec![0.0; ckk * hw];
                let mut dx = self.rg(*x).then(|| vec![0.0; xv.len()]);
                let mut dw = self.rg(*w).then(|| vec![0.0; wv.len()]);
                let mut db = self.rg(*b).then(|| vec![0.0; o]);
                for i in 0..bn {
                    let gi = &g[i * o * hw..(i + 1) * o * hw];
                    if let Some(db) = db.as_mut() {
                        for (oc, row) in gi.chunks_exact(hw).enumerate() {
                            db[oc] += row.iter().sum::<f32>();
                        }
                    }
                    if let Some(dw) = dw.as_mut() {
                        kernels::im2col(&xv[i * c * hw..(i + 1) * c * hw], c, h, wd, k, &mut col);
                        gemm(o, hw, ckk, gi, (hw, 1), &col, (1, hw), dw, 1.0);
                    }
                    if let Some(dx) = dx.as_mut() {
                        gemm(ckk, o, hw, wv, (1, ckk), gi, (hw, 1), &mut dcol, 0.0);
                        kernels::col2im(&dcol, c, h, wd, k, &mut dx[i * c * hw..(i + 1) * c * hw]);
                    }
                }
                res.extend(dx.map(|v| (*x, v)));
                res.extend(dw.map(|v| (*w, v)));
                res.extend(db.map(|v| (*b, v)));
            }
            Op::AvgPool2 { a } => {
                let s = self.shape(*a);
                let r = s.len();
                let (h, w) = (s[r - 2], s[r - 1]);
                let (oh, ow) = (h / 2, w / 2);
                let mut ga = vec![0.0; self.value(*a).numel()];
                for (p, gp) in g.chunks_exact(oh * ow).enumerate() {
                    let dst = &mut ga[p * h * w..(p + 1) * h * w];
                    for y in 0..oh {
                        for x in 0..ow {
                            let v = 0.25 * gp[y * ow + x];
                            let i = 2 * y * w + 2 * x;
                            dst[i] = v;
                            dst[i + 1] = v;
                            dst[i + w] = v;
                            dst[i + w + 1] = v;
                        }
                    }
                }
                res.push((*a, ga));
            }
            Op::CrossEntropy { probs, targets } => {
                let t = self.value(*probs);
                let c = t.last_dim();
                let scale = g[0] / targets.len() as f32;
                let mut gp = vec![0.0; t.numel()];
                for (i, &k) in targets.iter().enumerate() {
                    let p = t.data()[i * c + k];
                    if p >= CE_CLAMP {
                        gp[i * c + k] = -scale / p;
                    }
                }
                res.push((*probs, gp));
            }
            Op::Mse { a, b } => {
                let (x, y) = (self.value(*a).data(), self.value(*b).data());
                let scale = 2.0 * g[0] / x.len() as f32;
                let diff: Vec<f32> = x.iter().zip(y).map(|(p, q)| scale * (p - q)).collect();
                if self.rg(*b) {
                    res.push((*b, diff.iter().map(|v| -v).collect()));
                }
                if self.rg(*a) {
                    res.push((*a, diff));
                }
            }
            Op::Bce { pred, target } => {
                let (p, t) = (self.value(*pred).data(), self.value(*target).data());
                let scale = g[0] / p.len() as f32;
                if self.rg(*pred) {
                    let gp = p
                        .iter()
                        .zip(t)
                        .map(|(&p, &t)| {
                            if (BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&p) {
                                scale * (-t / p + (1.0 - t) / (1.0 - p))
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    res.push((*pred, gp));
                }
                if self.rg(*target) {
                    let gt = p
                        .iter()
                        .map(|&p| {
                            let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                            -scale * (p.ln() - (1.0 - p).ln())
                        })
                        .collect();
                    res.push((*target, gt));
                }
            }
            Op::Sum { a } => res.push((*a, vec![g[0]; self.value(*a).numel()])),
            Op::Mean { a } => {
                let n = self.value(*a).numel();
                res.push((*a, vec![g[0] / n.max(1) as f32; n]));
            }
        }
        res
    }
}

/// Row mean and reciprocal standard deviation, accumulated in f64.
fn row_stats(row: &[f32]) -> (f64, f64) {
    let d = row.len() as f64;
    let mean = row.iter().map(|&v| f64::from(v)).sum::<f64>() / d;
    let var = row.iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / d;
    (mean, 1.0 / (var + f64::from(LN_EPS)).sqrt())
}
