//! Forward evaluation of every primitive.

use super::{Graph, Op, Var};
use crate::error::{Error, Result};
use crate::kernels::{self, Operand};
use crate::tensor::{numel, Real};

pub(crate) const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
pub(crate) const GELU_A: f64 = 0.044_715;

pub(crate) fn gelu<T: Real>(x: T) -> T {
    let (c, a) = (T::lit(GELU_C), T::lit(GELU_A));
    T::lit(0.5) * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

pub(crate) fn gelu_grad<T: Real>(x: T) -> T {
    let (c, a) = (T::lit(GELU_C), T::lit(GELU_A));
    let t = (c * (x + a * x * x * x)).tanh();
    let half = T::lit(0.5);
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::lit(3.0) * a * x * x)
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn last(shape: &[usize]) -> usize {
    *shape.last().expect("non-empty shape")
}

/// Numerically stable softmax of one row, written into `out`.
pub(crate) fn softmax_row<T: Real>(row: &[T], out: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for (o, &x) in out.iter_mut().zip(row) {
        *o = (x - max).exp();
        sum = sum + *o;
    }
    for o in out.iter_mut() {
        *o = *o / sum;
    }
}

/// Broadcast operands, output shape, output values and whether the result needs a gradient.
type Binary<T> = (Var, Var, Vec<usize>, Vec<T>, bool);

impl<T: Real> Graph<T> {
    fn map_unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let n = self.node(a);
        let shape = n.shape.clone();
        let value = n.value.iter().map(|&x| f(x)).collect();
        let ng = n.needs_grad;
        self.push(shape, value, op, ng)
    }

    fn broadcast_rhs(&self, a: Var, b: Var, what: &str) -> Result<(Var, Var)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let fits =
            |big: &[usize], small: &[usize]| numel(small) == 1 || (small.len() <= big.len() && big.ends_with(small));
        if fits(sa, sb) {
            Ok((a, b))
        } else if fits(sb, sa) {
            Ok((b, a))
        } else {
            Err(Error::dim(format!("{what}: shapes {sa:?} and {sb:?} are not broadcast-compatible")))
        }
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, what: &str) -> Result<Binary<T>> {
        let (a, b) = self.broadcast_rhs(a, b, what)?;
        let (na, nb) = (self.node(a), self.node(b));
        let period = nb.value.len();
        let value = na.value.iter().enumerate().map(|(i, &x)| f(x, nb.value[i % period])).collect();
        Ok((a, b, na.shape.clone(), value, na.needs_grad || nb.needs_grad))
    }

    /// Elementwise sum. The smaller operand may be a scalar or a trailing
    /// suffix of the larger operand's shape and is broadcast over it.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b, shape, value, ng) = self.binary(a, b, |x, y| x + y, "add")?;
        Ok(self.push(shape, value, Op::Add(a, b), ng))
    }

    /// Elementwise product with the same broadcasting rule as [`Graph::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b, shape, value, ng) = self.binary(a, b, |x, y| x * y, "mul")?;
        Ok(self.push(shape, value, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        self.map_unary(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        self.map_unary(a, |x| x + c, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map_unary(a, |x| if x > T::zero() || x.is_nan() { x } else { T::zero() }, Op::Relu(a))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        self.map_unary(a, gelu, Op::Gelu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map_unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map_unary(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map_unary(a, |x| x.exp(), Op::Exp(a))
    }

    /// Natural log; every input must be strictly positive.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(pos) = self.value(a).iter().position(|&x| x <= T::zero()) {
            return Err(Error::Domain(format!("log of non-positive value {:?} at index {pos}", self.value(a)[pos])));
        }
        Ok(self.map_unary(a, |x| x.ln(), Op::Log(a)))
    }

    /// `x^e` for non-negative `x`.
    pub fn powf(&mut self, a: Var, e: T) -> Result<Var> {
        if self.value(a).iter().any(|&x| x < T::zero()) {
            return Err(Error::Domain("powf of a negative base".into()));
        }
        Ok(self.map_unary(a, |x| x.powf(e), Op::Pow(a, e)))
    }

    /// Clamps into `[lo, hi]`; gradient passes only inside the interval.
    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Var {
        self.map_unary(a, |x| if x.is_nan() { x } else { x.max(lo).min(hi) }, Op::Clamp(a, lo, hi))
    }

    /// Softmax over the last dimension.
    pub fn softmax(&mut self, a: Var) -> Var {
        let n = self.node(a);
        let w = last(&n.shape);
        let mut out = vec![T::zero(); n.value.len()];
        for (row, o) in n.value.chunks(w).zip(out.chunks_mut(w)) {
            softmax_row(row, o);
        }
        let (shape, ng) = (n.shape.clone(), n.needs_grad);
        self.push(shape, out, Op::Softmax(a), ng)
    }

    /// Log-softmax over the last dimension.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let n = self.node(a);
        let w = last(&n.shape);
        let mut out = vec![T::zero(); n.value.len()];
        for (row, o) in n.value.chunks(w).zip(out.chunks_mut(w)) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<T>().ln();
            for (o, &x) in o.iter_mut().zip(row) {
                *o = x - lse;
            }
        }
        let (shape, ng) = (n.shape.clone(), n.needs_grad);
        self.push(shape, out, Op::LogSoftmax(a), ng)
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, a: Var) -> Var {
        let n = self.node(a);
        let s = n.value.iter().copied().sum();
        let ng = n.needs_grad;
        self.push(vec![1], vec![s], Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.node(a);
        let s: T = n.value.iter().copied().sum();
        let m = s / T::lit(n.value.len() as f64);
        let ng = n.needs_grad;
        self.push(vec![1], vec![m], Op::Mean(a), ng)
    }

    /// Sums the last dimension away (`[.., n] -> [..]`, `[n] -> [1]`).
    pub fn sum_last(&mut self, a: Var) -> Var {
        let n = self.node(a);
        let w = last(&n.shape);
        let value: Vec<T> = n.value.chunks(w).map(|r| r.iter().copied().sum()).collect();
        let mut shape = n.shape[..n.shape.len() - 1].to_vec();
        if shape.is_empty() {
            shape.push(1);
        }
        let ng = n.needs_grad;
        self.push(shape, value, Op::SumLast(a), ng)
    }

    /// Reinterprets the buffer with a new shape of equal size (no copy).
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let n = self.node(a);
        if numel(shape) != n.value.len() || shape.contains(&0) {
            return Err(Error::dim(format!("cannot reshape {:?} into {shape:?}", n.shape)));
        }
        let (value, ng) = (n.value.clone(), n.needs_grad);
        Ok(self.push_shared(shape.to_vec(), value, Op::Reshape(a), ng))
    }

    /// Concatenation along the last dimension.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::contract("concat of zero tensors"))?;
        let lead = self.shape(*first)[..self.shape(*first).len() - 1].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s[..s.len() - 1] != lead[..] {
                return Err(Error::dim(format!("concat: leading extents {:?} and {:?} differ", self.shape(*first), s)));
            }
            widths.push(last(s));
        }
        let total: usize = widths.iter().sum();
        let rows = numel(&lead);
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let ng = parts.iter().any(|&p| self.requires_grad(p));
        Ok(self.push(shape, out, Op::Concat(parts.to_vec()), ng))
    }

    /// Columns `start..start + len` of the last dimension.
    pub fn slice_last(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let n = self.node(a);
        let w = last(&n.shape);
        if len == 0 || start + len > w {
            return Err(Error::dim(format!("slice {start}..{} out of range for {:?}", start + len, n.shape)));
        }
        let value: Vec<T> = n.value.chunks(w).flat_map(|r| r[start..start + len].iter().copied()).collect();
        let mut shape = n.shape.clone();
        *shape.last_mut().unwrap() = len;
        let ng = n.needs_grad;
        Ok(self.push(shape, value, Op::SliceLast { src: a, start }, ng))
    }

    /// `a[m x k] . b[k x n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim(format!("matmul: cannot multiply {sa:?} by {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        kernels::gemm(m, k, n, Operand::new(self.value(a)), Operand::new(self.value(b)), T::zero(), &mut out);
        let ng = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), ng))
    }

    /// Zero-mean unit-variance normalization over the last dimension
    /// (population variance), without affine parameters.
    pub fn layer_norm(&mut self, a: Var, eps: T) -> Var {
        let n = self.node(a);
        let w = last(&n.shape);
        let wt = T::lit(w as f64);
        let mut out = vec![T::zero(); n.value.len()];
        let mut inv_std = Vec::with_capacity(n.value.len() / w);
        for (row, o) in n.value.chunks(w).zip(out.chunks_mut(w)) {
            let mean = row.iter().copied().sum::<T>() / wt;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / wt;
            let is = T::one() / (var + eps).sqrt();
            for (o, &x) in o.iter_mut().zip(row) {
                *o = (x - mean) * is;
            }
            inv_std.push(is);
        }
        let (shape, ng) = (n.shape.clone(), n.needs_grad);
        self.push(shape, out, Op::LayerNorm { src: a, inv_std }, ng)
    }

    /// Division by the root-mean-square over the last dimension, no scale.
    pub fn rms_norm(&mut self, a: Var, eps: T) -> Var {
        let n = self.node(a);
        let w = last(&n.shape);
        let wt = T::lit(w as f64);
        let mut out = vec![T::zero(); n.value.len()];
        let mut inv_rms = Vec::with_capacity(n.value.len() / w);
        for (row, o) in n.value.chunks(w).zip(out.chunks_mut(w)) {
            let ms = row.iter().map(|&x| x * x).sum::<T>() / wt;
            let r = T::one() / (ms + eps).sqrt();
            for (o, &x) in o.iter_mut().zip(row) {
                *o = x * r;
            }
            inv_rms.push(r);
        }
        let (shape, ng) = (n.shape.clone(), n.needs_grad);
        self.push(shape, out, Op::RmsNorm { src: a, inv_rms }, ng)
    }

    /// Per-channel batch normalization with affine `gamma`, `beta` for
    /// `[B, C]` or `[B, C, L]` input. With `stats = None` the batch
    /// statistics are used and returned as `(mean, biased variance)`;
    /// otherwise the given `(mean, var)` are applied as constants.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: Option<(&[T], &[T])>,
        eps: T,
    ) -> Result<(Var, Vec<T>, Vec<T>)> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 && s.len() != 3 {
            return Err(Error::dim(format!("batch_norm expects [B, C] or [B, C, L], got {s:?}")));
        }
        let (b, c, l) = (s[0], s[1], if s.len() == 3 { s[2] } else { 1 });
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::dim(format!(
                "batch_norm affine shapes {:?}/{:?} do not match {c} channels",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let xv = self.value(x);
        let count = T::lit((b * l) as f64);
        let (mean, var, batch_stats) = match stats {
            Some((m, v)) => (m.to_vec(), v.to_vec(), false),
            None => {
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for bi in 0..b {
                    for ci in 0..c {
                        for li in 0..l {
                            mean[ci] = mean[ci] + xv[(bi * c + ci) * l + li];
                        }
                    }
                }
                mean.iter_mut().for_each(|m| *m = *m / count);
                for bi in 0..b {
                    for ci in 0..c {
                        for li in 0..l {
                            let d = xv[(bi * c + ci) * l + li] - mean[ci];
                            var[ci] = var[ci] + d * d;
                        }
                    }
                }
                var.iter_mut().for_each(|v| *v = *v / count);
                (mean, var, true)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (g, be) = (self.value(gamma), self.value(beta));
        let mut out = vec![T::zero(); xv.len()];
        for bi in 0..b {
            for ci in 0..c {
                for li in 0..l {
                    let i = (bi * c + ci) * l + li;
                    out[i] = (xv[i] - mean[ci]) * inv_std[ci] * g[ci] + be[ci];
                }
            }
        }
        let ng = self.requires_grad(x) || self.requires_grad(gamma) || self.requires_grad(beta);
        let v = self.push(s, out, Op::BatchNorm { x, gamma, beta, mean: mean.clone(), inv_std, batch_stats }, ng);
        Ok((v, mean, var))
    }

    /// Multiplies by a precomputed mask (zeros and keep-scale factors).
    pub(crate) fn apply_mask(&mut self, a: Var, mask: Vec<T>) -> Var {
        let n = self.node(a);
        debug_assert_eq!(mask.len(), n.value.len());
        let value = n.value.iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let (shape, ng) = (n.shape.clone(), n.needs_grad);
        self.push(shape, value, Op::Dropout { src: a, mask }, ng)
    }

    /// Cross-correlation of `x[B, Cin, L]` with `w[Cout, Cin, K]` plus bias
    /// `b[Cout]`, zero padding `pad` on both sides.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, pad: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 3 || sw.len() != 3 {
            return Err(Error::dim(format!("conv1d expects x[B,C,L] and w[O,C,K], got {sx:?} and {sw:?}")));
        }
        let (bsz, cin, len) = (sx[0], sx[1], sx[2]);
        let (cout, wcin, k) = (sw[0], sw[1], sw[2]);
        if wcin != cin {
            return Err(Error::dim(format!("conv1d: input has {cin} channels, kernel {sw:?} expects {wcin}")));
        }
        if self.shape(b) != [cout] {
            return Err(Error::dim(format!("conv1d: bias {:?} does not match {cout} channels", self.shape(b))));
        }
        if len + 2 * pad < k {
            return Err(Error::dim("conv1d: kernel longer than padded input".to_string()));
        }
        let lout = len + 2 * pad - k + 1;
        let ck = cin * k;
        let mut out = vec![T::zero(); bsz * cout * lout];
        let mut cols = vec![T::zero(); ck * lout];
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        for bi in 0..bsz {
            im2col(&xv[bi * cin * len..(bi + 1) * cin * len], cin, len, k, pad, lout, &mut cols);
            let o = &mut out[bi * cout * lout..(bi + 1) * cout * lout];
            for (co, row) in o.chunks_mut(lout).enumerate() {
                row.iter_mut().for_each(|v| *v = bv[co]);
            }
            kernels::gemm(cout, ck, lout, Operand::new(wv), Operand::new(&cols[..]), T::one(), o);
        }
        let ng = self.requires_grad(x) || self.requires_grad(w) || self.requires_grad(b);
        Ok(self.push(vec![bsz, cout, lout], out, Op::Conv1d { x, w, b, pad }, ng))
    }

    /// Per-feature scalar embedding: `out[b, f, e] = x[b, f] * w[f, e]`.
    pub fn feature_embed(&mut self, x: Var, w: Var) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[0] {
            return Err(Error::dim(format!("feature_embed: x {sx:?} incompatible with table {sw:?}")));
        }
        let (bsz, f, e) = (sx[0], sx[1], sw[1]);
        let (xv, wv) = (self.value(x), self.value(w));
        let mut out = Vec::with_capacity(bsz * f * e);
        for bi in 0..bsz {
            for fi in 0..f {
                let s = xv[bi * f + fi];
                out.extend(wv[fi * e..(fi + 1) * e].iter().map(|&w| s * w));
            }
        }
        let ng = self.requires_grad(x) || self.requires_grad(w);
        Ok(self.push(vec![bsz, f, e], out, Op::FeatureEmbed { x, w }, ng))
    }

    /// Causal scaled dot-product attention with grouped key/value heads.
    /// `q: [B, S, heads*head_dim]`, `k, v: [B, S, kv_heads*head_dim]`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, kv_heads: usize) -> Result<Var> {
        let (sq, sk, sv) = (self.shape(q).to_vec(), self.shape(k).to_vec(), self.shape(v).to_vec());
        if sq.len() != 3 || sk != sv || sk.len() != 3 || sq[..2] != sk[..2] {
            return Err(Error::dim(format!("attention: incompatible q {sq:?}, k {sk:?}, v {sv:?}")));
        }
        if heads == 0 || kv_heads == 0 || !heads.is_multiple_of(kv_heads) || sq[2] % heads != 0 {
            return Err(Error::dim(format!(
                "attention: {heads} heads / {kv_heads} kv heads invalid for width {}",
                sq[2]
            )));
        }
        let head_dim = sq[2] / heads;
        if sk[2] != kv_heads * head_dim {
            return Err(Error::dim(format!(
                "attention: kv width {} != {kv_heads} kv heads x head_dim {head_dim}",
                sk[2]
            )));
        }
        let (out, probs) =
            attention_forward(self.value(q), self.value(k), self.value(v), sq[0], sq[1], heads, kv_heads, head_dim);
        let ng = self.requires_grad(q) || self.requires_grad(k) || self.requires_grad(v);
        Ok(self.push(sq, out, Op::Attention { q, k, v, heads, kv_heads, head_dim, probs }, ng))
    }
}

pub(crate) fn im2col<T: Real>(x: &[T], cin: usize, len: usize, k: usize, pad: usize, lout: usize, cols: &mut [T]) {
    for ci in 0..cin {
        for t in 0..k {
            let row = &mut cols[(ci * k + t) * lout..(ci * k + t + 1) * lout];
            for (l, c) in row.iter_mut().enumerate() {
                let src = l as isize + t as isize - pad as isize;
                *c = if src >= 0 && (src as usize) < len { x[ci * len + src as usize] } else { T::zero() };
            }
        }
    }
}

/// Returns the attention output and the probability tensor `[B, heads, S, S]`
/// (zeros above the diagonal).
#[allow(clippy::too_many_arguments)]
pub fn attention_forward<T: Real>(
    q: &[T],
    k: &[T],
    v: &[T],
    bsz: usize,
    seq: usize,
    heads: usize,
    kv_heads: usize,
    head_dim: usize,
) -> (Vec<T>, Vec<T>) {
    let group = heads / kv_heads;
    let scale = T::one() / T::lit(head_dim as f64).sqrt();
    let qw = heads * head_dim;
    let kw = kv_heads * head_dim;
    let mut out = vec![T::zero(); bsz * seq * qw];
    let mut probs = vec![T::zero(); bsz * heads * seq * seq];
    let mut scores = vec![T::zero(); seq];
    for b in 0..bsz {
        for h in 0..heads {
            let g = h / group;
            for i in 0..seq {
                let qi = &q[(b * seq + i) * qw + h * head_dim..][..head_dim];
                for (j, s) in scores.iter_mut().enumerate().take(i + 1) {
                    let kj = &k[(b * seq + j) * kw + g * head_dim..][..head_dim];
                    *s = qi.iter().zip(kj).map(|(&a, &c)| a * c).sum::<T>() * scale;
                }
                let p = &mut probs[((b * heads + h) * seq + i) * seq..][..seq];
                softmax_row(&scores[..=i], &mut p[..=i]);
                let o = &mut out[(b * seq + i) * qw + h * head_dim..][..head_dim];
                for (j, &pj) in p.iter().enumerate().take(i + 1) {
                    let vj = &v[(b * seq + j) * kw + g * head_dim..][..head_dim];
                    for (od, &vd) in o.iter_mut().zip(vj) {
                        *od = *od + pj * vd;
                    }
                }
            }
        }
    }
    (out, probs)
}
