//! Vector-Jacobian products, replayed in reverse tape order.

use super::ops::{gelu_grad, im2col};
use super::{Graph, Op, Var};
use crate::error::{Error, Result};
use crate::kernels::{self, Operand};
use crate::tensor::Real;

/// Gradients of a scalar with respect to every leaf that requires grad.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn slot<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut Vec<T> {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

impl<T: Real> Graph<T> {
    /// Reverse sweep from `loss`. Intermediate gradients are released as
    /// soon as they have been propagated; leaf gradients are kept.
    pub fn gradients(&self, loss: Var) -> Result<Gradients<T>> {
        if self.is_empty() || loss.0 >= self.len() {
            return Err(Error::contract("backward on an empty tape or foreign variable"));
        }
        if self.node(loss).value.len() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.node(loss).shape
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        if !self.node(loss).needs_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes()[i];
            if matches!(node.op, Op::Input | Op::Param { .. }) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.vjp(Var(i), &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.node(v).needs_grad
    }

    fn vjp(&self, out: Var, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = self.node(out);
        let y = &node.value[..];
        let unary = |grads: &mut [Option<Vec<T>>], a: Var, f: &dyn Fn(usize) -> T| {
            if self.wants(a) {
                let dst = slot(grads, a, self.value(a).len());
                for (i, d) in dst.iter_mut().enumerate() {
                    *d = *d + f(i);
                }
            }
        };
        match &node.op {
            Op::Input | Op::Param { .. } => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.wants(*a) {
                    let da = slot(grads, *a, m * k);
                    kernels::gemm(m, n, k, Operand::new(g), Operand::t(self.value(*b)), T::one(), da);
                }
                if self.wants(*b) {
                    let db = slot(grads, *b, k * n);
                    kernels::gemm(k, m, n, Operand::t(self.value(*a)), Operand::new(g), T::one(), db);
                }
            }
            Op::Add(a, b) => {
                unary(grads, *a, &|i| g[i]);
                if self.wants(*b) {
                    let period = self.value(*b).len();
                    let db = slot(grads, *b, period);
                    for (i, &gi) in g.iter().enumerate() {
                        db[i % period] = db[i % period] + gi;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let period = bv.len();
                unary(grads, *a, &|i| g[i] * bv[i % period]);
                if self.wants(*b) {
                    let db = slot(grads, *b, period);
                    for (i, &gi) in g.iter().enumerate() {
                        db[i % period] = db[i % period] + gi * av[i];
                    }
                }
            }
            Op::Scale(a, c) => unary(grads, *a, &|i| g[i] * *c),
            Op::AddScalar(a) | Op::Reshape(a) => unary(grads, *a, &|i| g[i]),
            Op::Relu(a) => {
                let x = self.value(*a);
                unary(grads, *a, &|i| if x[i] > T::zero() { g[i] } else { T::zero() })
            }
            Op::Gelu(a) => {
                let x = self.value(*a);
                unary(grads, *a, &|i| g[i] * gelu_grad(x[i]))
            }
            Op::Sigmoid(a) => unary(grads, *a, &|i| g[i] * y[i] * (T::one() - y[i])),
            Op::Tanh(a) => unary(grads, *a, &|i| g[i] * (T::one() - y[i] * y[i])),
            Op::Exp(a) => unary(grads, *a, &|i| g[i] * y[i]),
            Op::Log(a) => {
                let x = self.value(*a);
                unary(grads, *a, &|i| g[i] / x[i])
            }
            Op::Pow(a, e) => {
                let x = self.value(*a);
                unary(grads, *a, &|i| g[i] * *e * x[i].powf(*e - T::one()))
            }
            Op::Clamp(a, lo, hi) => {
                let x = self.value(*a);
                unary(grads, *a, &|i| if x[i] >= *lo && x[i] <= *hi { g[i] } else { T::zero() })
            }
            Op::Softmax(a) => {
                if self.wants(*a) {
                    let w = *node.shape.last().unwrap();
                    let da = slot(grads, *a, g.len());
                    for ((gr, yr), dr) in g.chunks(w).zip(y.chunks(w)).zip(da.chunks_mut(w)) {
                        let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        for ((d, &gi), &yi) in dr.iter_mut().zip(gr).zip(yr) {
                            *d = *d + yi * (gi - dot);
                        }
                    }
                }
            }
            Op::LogSoftmax(a) => {
                if self.wants(*a) {
                    let w = *node.shape.last().unwrap();
                    let da = slot(grads, *a, g.len());
                    for ((gr, yr), dr) in g.chunks(w).zip(y.chunks(w)).zip(da.chunks_mut(w)) {
                        let gs: T = gr.iter().copied().sum();
                        for ((d, &gi), &yi) in dr.iter_mut().zip(gr).zip(yr) {
                            *d = *d + gi - yi.exp() * gs;
                        }
                    }
                }
            }
            Op::Sum(a) => unary(grads, *a, &|_| g[0]),
            Op::Mean(a) => {
                let n = T::lit(self.value(*a).len() as f64);
                unary(grads, *a, &|_| g[0] / n)
            }
            Op::SumLast(a) => {
                let w = *self.shape(*a).last().unwrap();
                if self.wants(*a) {
                    let da = slot(grads, *a, g.len() * w);
                    for (i, d) in da.iter_mut().enumerate() {
                        *d = *d + g[i / w];
                    }
                }
            }
            Op::Concat(parts) => {
                let widths: Vec<usize> = parts.iter().map(|p| *self.shape(*p).last().unwrap()).collect();
                let total: usize = widths.iter().sum();
                let rows = g.len() / total;
                let mut off = 0;
                for (p, &w) in parts.iter().zip(&widths) {
                    if self.wants(*p) {
                        let dp = slot(grads, *p, rows * w);
                        for r in 0..rows {
                            for j in 0..w {
                                dp[r * w + j] = dp[r * w + j] + g[r * total + off + j];
                            }
                        }
                    }
                    off += w;
                }
            }
            Op::SliceLast { src, start } => {
                if self.wants(*src) {
                    let w = *self.shape(*src).last().unwrap();
                    let len = *node.shape.last().unwrap();
                    let rows = g.len() / len;
                    let ds = slot(grads, *src, rows * w);
                    for r in 0..rows {
                        for j in 0..len {
                            let d = &mut ds[r * w + start + j];
                            *d = *d + g[r * len + j];
                        }
                    }
                }
            }
            Op::LayerNorm { src, inv_std } => {
                if self.wants(*src) {
                    let w = *node.shape.last().unwrap();
                    let wt = T::lit(w as f64);
                    let ds = slot(grads, *src, g.len());
                    for (r, ((gr, xh), dr)) in g.chunks(w).zip(y.chunks(w)).zip(ds.chunks_mut(w)).enumerate() {
                        let mg = gr.iter().copied().sum::<T>() / wt;
                        let mgx = gr.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>() / wt;
                        for ((d, &gi), &xi) in dr.iter_mut().zip(gr).zip(xh) {
                            *d = *d + inv_std[r] * (gi - mg - xi * mgx);
                        }
                    }
                }
            }
            Op::RmsNorm { src, inv_rms } => {
                if self.wants(*src) {
                    let w = *node.shape.last().unwrap();
                    let wt = T::lit(w as f64);
                    let x = self.value(*src);
                    let ds = slot(grads, *src, g.len());
                    for (r, ((gr, xr), dr)) in g.chunks(w).zip(x.chunks(w)).zip(ds.chunks_mut(w)).enumerate() {
                        let ir = inv_rms[r];
                        let mgx = gr.iter().zip(xr).map(|(&a, &b)| a * b).sum::<T>() / wt;
                        for ((d, &gi), &xi) in dr.iter_mut().zip(gr).zip(xr) {
                            *d = *d + ir * gi - ir * ir * ir * xi * mgx;
                        }
                    }
                }
            }
            Op::BatchNorm { x, gamma, beta, mean, inv_std, batch_stats } => {
                let s = self.shape(*x);
                let (b, c, l) = (s[0], s[1], if s.len() == 3 { s[2] } else { 1 });
                let xv = self.value(*x);
                let gv = self.value(*gamma);
                let idx = |bi: usize, ci: usize, li: usize| (bi * c + ci) * l + li;
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gx = vec![T::zero(); c];
                for bi in 0..b {
                    for ci in 0..c {
                        for li in 0..l {
                            let i = idx(bi, ci, li);
                            let xh = (xv[i] - mean[ci]) * inv_std[ci];
                            sum_g[ci] = sum_g[ci] + g[i];
                            sum_gx[ci] = sum_gx[ci] + g[i] * xh;
                        }
                    }
                }
                if self.wants(*gamma) {
                    let dg = slot(grads, *gamma, c);
                    for ci in 0..c {
                        dg[ci] = dg[ci] + sum_gx[ci];
                    }
                }
                if self.wants(*beta) {
                    let db = slot(grads, *beta, c);
                    for ci in 0..c {
                        db[ci] = db[ci] + sum_g[ci];
                    }
                }
                if self.wants(*x) {
                    let n = T::lit((b * l) as f64);
                    let dx = slot(grads, *x, xv.len());
                    for bi in 0..b {
                        for ci in 0..c {
                            for li in 0..l {
                                let i = idx(bi, ci, li);
                                let d = if *batch_stats {
                                    let xh = (xv[i] - mean[ci]) * inv_std[ci];
                                    gv[ci] * inv_std[ci] / n * (n * g[i] - sum_g[ci] - xh * sum_gx[ci])
                                } else {
                                    g[i] * gv[ci] * inv_std[ci]
                                };
                                dx[i] = dx[i] + d;
                            }
                        }
                    }
                }
            }
            Op::Dropout { src, mask } => unary(grads, *src, &|i| g[i] * mask[i]),
            Op::Conv1d { x, w, b, pad } => {
                let (sx, sw) = (self.shape(*x), self.shape(*w));
                let (bsz, cin, len) = (sx[0], sx[1], sx[2]);
                let (cout, k) = (sw[0], sw[2]);
                let lout = node.shape[2];
                let ck = cin * k;
                if self.wants(*b) {
                    let db = slot(grads, *b, cout);
                    for (i, &gi) in g.iter().enumerate() {
                        let co = (i / lout) % cout;
                        db[co] = db[co] + gi;
                    }
                }
                let mut cols = vec![T::zero(); ck * lout];
                let xv = self.value(*x);
                let wv = self.value(*w);
                if self.wants(*w) {
                    let mut dw = std::mem::take(slot(grads, *w, cout * ck));
                    for bi in 0..bsz {
                        im2col(&xv[bi * cin * len..(bi + 1) * cin * len], cin, len, k, *pad, lout, &mut cols);
                        let gb = &g[bi * cout * lout..(bi + 1) * cout * lout];
                        kernels::gemm(cout, lout, ck, Operand::new(gb), Operand::t(&cols[..]), T::one(), &mut dw);
                    }
                    grads[w.0] = Some(dw);
                }
                if self.wants(*x) {
                    let dx = slot(grads, *x, bsz * cin * len);
                    for bi in 0..bsz {
                        let gb = &g[bi * cout * lout..(bi + 1) * cout * lout];
                        kernels::gemm(ck, cout, lout, Operand::t(wv), Operand::new(gb), T::zero(), &mut cols);
                        let dxb = &mut dx[bi * cin * len..(bi + 1) * cin * len];
                        for ci in 0..cin {
                            for t in 0..k {
                                let row = &cols[(ci * k + t) * lout..(ci * k + t + 1) * lout];
                                for (l, &cv) in row.iter().enumerate() {
                                    let src = l as isize + t as isize - *pad as isize;
                                    if src >= 0 && (src as usize) < len {
                                        let d = &mut dxb[ci * len + src as usize];
                                        *d = *d + cv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::FeatureEmbed { x, w } => {
                let sw = self.shape(*w);
                let (f, e) = (sw[0], sw[1]);
                let bsz = self.shape(*x)[0];
                let (xv, wv) = (self.value(*x), self.value(*w));
                if self.wants(*x) {
                    let dx = slot(grads, *x, bsz * f);
                    for bi in 0..bsz {
                        for fi in 0..f {
                            let gr = &g[(bi * f + fi) * e..][..e];
                            let s: T = gr.iter().zip(&wv[fi * e..(fi + 1) * e]).map(|(&a, &b)| a * b).sum();
                            dx[bi * f + fi] = dx[bi * f + fi] + s;
                        }
                    }
                }
                if self.wants(*w) {
                    let dw = slot(grads, *w, f * e);
                    for bi in 0..bsz {
                        for fi in 0..f {
                            let s = xv[bi * f + fi];
                            let gr = &g[(bi * f + fi) * e..][..e];
                            for (d, &gi) in dw[fi * e..(fi + 1) * e].iter_mut().zip(gr) {
                                *d = *d + gi * s;
                            }
                        }
                    }
                }
            }
            Op::Attention { q, k, v, heads, kv_heads, head_dim, probs } => {
                let sq = self.shape(*q);
                let (bsz, seq) = (sq[0], sq[1]);
                let (heads, kv_heads, hd) = (*heads, *kv_heads, *head_dim);
                let group = heads / kv_heads;
                let scale = T::one() / T::lit(hd as f64).sqrt();
                let (qw, kw) = (heads * hd, kv_heads * hd);
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let mut dq = vec![T::zero(); qv.len()];
                let mut dk = vec![T::zero(); kv.len()];
                let mut dv = vec![T::zero(); vv.len()];
                let mut dp = vec![T::zero(); seq];
                for b in 0..bsz {
                    for h in 0..heads {
                        let gi = h / group;
                        for i in 0..seq {
                            let go = &g[(b * seq + i) * qw + h * hd..][..hd];
                            let p = &probs[((b * heads + h) * seq + i) * seq..][..seq];
                            for j in 0..=i {
                                let voff = (b * seq + j) * kw + gi * hd;
                                dp[j] = go.iter().zip(&vv[voff..voff + hd]).map(|(&a, &c)| a * c).sum();
                                for (d, &o) in dv[voff..voff + hd].iter_mut().zip(go) {
                                    *d = *d + p[j] * o;
                                }
                            }
                            let dot: T = (0..=i).map(|j| p[j] * dp[j]).sum();
                            let qoff = (b * seq + i) * qw + h * hd;
                            for j in 0..=i {
                                let ds = p[j] * (dp[j] - dot) * scale;
                                let koff = (b * seq + j) * kw + gi * hd;
                                for d in 0..hd {
                                    dq[qoff + d] = dq[qoff + d] + ds * kv[koff + d];
                                    dk[koff + d] = dk[koff + d] + ds * qv[qoff + d];
                                }
                            }
                        }
                    }
                }
                for (var, d) in [(*q, dq), (*k, dk), (*v, dv)] {
                    if self.wants(var) {
                        let dst = slot(grads, var, d.len());
                        for (a, b) in dst.iter_mut().zip(d) {
                            *a = *a + b;
                        }
                    }
                }
            }
        }
    }
}
