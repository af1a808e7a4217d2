//! Teacher-forced forward pass with activation caches, and its exact
//! reverse-mode backward pass.

use rayon::prelude::*;

use super::linalg::{add_assign, gemm, matmul, matmul_backward, Mat, Real};
use super::{AttnOffsets, FfnOffsets, Model, SeqPair, NORM_EPS};
use crate::error::{Error, Result};

/// Row-wise RMSNorm with gain; returns the output and per-row `1/rms`.
pub(super) fn rms_forward<T: Real>(x: &[T], g: &[T], w: usize) -> (Vec<T>, Vec<T>) {
    let rows = x.len() / w;
    let mut y = vec![T::zero(); x.len()];
    let mut inv = Vec::with_capacity(rows);
    let eps = T::of(NORM_EPS);
    let wt = T::of(w as f64);
    for (xr, yr) in x.chunks_exact(w).zip(y.chunks_exact_mut(w)) {
        let ms = xr.iter().map(|&v| v * v).sum::<T>() / wt;
        let r = (ms + eps).sqrt().recip();
        for ((o, &v), &gi) in yr.iter_mut().zip(xr).zip(g) {
            *o = v * r * gi;
        }
        inv.push(r);
    }
    (y, inv)
}

/// Accumulates `dx` and `dg` for `y = g ⊙ x / rms(x)`.
pub(super) fn rms_backward<T: Real>(x: &[T], g: &[T], inv: &[T], dy: &[T], w: usize, dx: &mut [T], dg: &mut [T]) {
    let wt = T::of(w as f64);
    for (((xr, dyr), dxr), &r) in x
        .chunks_exact(w)
        .zip(dy.chunks_exact(w))
        .zip(dx.chunks_exact_mut(w))
        .zip(inv)
    {
        let mut dot = T::zero();
        for i in 0..w {
            dg[i] += dyr[i] * xr[i] * r;
            dot += g[i] * dyr[i] * xr[i];
        }
        let c = dot * r * r * r / wt;
        for i in 0..w {
            dxr[i] += r * g[i] * dyr[i] - xr[i] * c;
        }
    }
}

pub(super) fn sigmoid<T: Real>(x: T) -> T {
    (T::one() + (-x).exp()).recip()
}

/// In-place softmax of a score row over its first `len` entries; the rest
/// are zeroed (masked).
pub(super) fn softmax_prefix<T: Real>(row: &mut [T], len: usize) {
    let max = row[..len].iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in &mut row[..len] {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = sum.recip();
    for v in &mut row[..len] {
        *v *= inv;
    }
    for v in &mut row[len..] {
        *v = T::zero();
    }
}

pub(super) struct AttnShape {
    pub heads: usize,
    pub dh: usize,
    pub w: usize,
}

impl AttnShape {
    fn scale<T: Real>(&self) -> T {
        T::of(1.0 / (self.dh as f64).sqrt())
    }
}

/// Multi-head attention on post-projection `q[tq×w]`, `k,v[tk×w]`; query
/// `i` sees keys `0..=i` when `causal`. Returns probabilities
/// `[heads×tq×tk]` and the concatenated head outputs `[tq×w]`.
pub(super) fn attention<T: Real>(
    s: &AttnShape,
    q: &[T],
    k: &[T],
    v: &[T],
    tq: usize,
    tk: usize,
    causal: bool,
) -> (Vec<T>, Vec<T>) {
    let mut p = vec![T::zero(); s.heads * tq * tk];
    let mut o = vec![T::zero(); tq * s.w];
    for h in 0..s.heads {
        let c = h * s.dh;
        let ph = &mut p[h * tq * tk..(h + 1) * tq * tk];
        gemm(
            tq,
            s.dh,
            tk,
            s.scale(),
            Mat::strided(&q[c..], s.w),
            Mat::strided_t(&k[c..], s.w),
            T::zero(),
            ph,
            tk,
        );
        for (i, row) in ph.chunks_exact_mut(tk).enumerate() {
            softmax_prefix(row, if causal { i + 1 } else { tk });
        }
        gemm(tq, tk, s.dh, T::one(), Mat::rows(ph, tk), Mat::strided(&v[c..], s.w), T::zero(), &mut o[c..], s.w);
    }
    (p, o)
}

/// Backward of [`attention`]; accumulates into `dq`, `dk`, `dv`.
#[allow(clippy::too_many_arguments)]
pub(super) fn attention_backward<T: Real>(
    s: &AttnShape,
    q: &[T],
    k: &[T],
    v: &[T],
    p: &[T],
    d_o: &[T],
    tq: usize,
    tk: usize,
    dq: &mut [T],
    dk: &mut [T],
    dv: &mut [T],
) {
    let mut dp = vec![T::zero(); tq * tk];
    for h in 0..s.heads {
        let c = h * s.dh;
        let ph = &p[h * tq * tk..(h + 1) * tq * tk];
        gemm(tq, s.dh, tk, T::one(), Mat::strided(&d_o[c..], s.w), Mat::strided_t(&v[c..], s.w), T::zero(), &mut dp, tk);
        gemm(tk, tq, s.dh, T::one(), Mat::t(ph, tk), Mat::strided(&d_o[c..], s.w), T::one(), &mut dv[c..], s.w);
        let scale = s.scale::<T>();
        for (prow, drow) in ph.chunks_exact(tk).zip(dp.chunks_exact_mut(tk)) {
            let dot: T = prow.iter().zip(drow.iter()).map(|(&a, &b)| a * b).sum();
            for (d, &pv) in drow.iter_mut().zip(prow) {
                *d = pv * (*d - dot) * scale;
            }
        }
        gemm(tq, tk, s.dh, T::one(), Mat::rows(&dp, tk), Mat::strided(&k[c..], s.w), T::one(), &mut dq[c..], s.w);
        gemm(tk, tq, s.dh, T::one(), Mat::t(&dp, tk), Mat::strided(&q[c..], s.w), T::one(), &mut dk[c..], s.w);
    }
}

struct AttnCache<T> {
    x: Vec<T>,
    a: Vec<T>,
    inv: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    p: Vec<T>,
    o: Vec<T>,
    tk: usize,
}

struct FfnCache<T> {
    x: Vec<T>,
    a: Vec<T>,
    inv: Vec<T>,
    u: Vec<T>,
    t: Vec<T>,
    s: Vec<T>,
}

struct EncCache<T> {
    attn: AttnCache<T>,
    ffn: FfnCache<T>,
}

struct DecCache<T> {
    self_attn: AttnCache<T>,
    cross: AttnCache<T>,
    ffn: FfnCache<T>,
}

/// Everything the backward pass of one example needs.
struct Forward<T> {
    enc: Vec<EncCache<T>>,
    enc_h: Vec<T>,
    enc_inv: Vec<T>,
    enc_out: Vec<T>,
    dec: Vec<DecCache<T>>,
    dec_h: Vec<T>,
    dec_inv: Vec<T>,
    dec_z: Vec<T>,
    logits: Vec<T>,
}

impl<T: Real> Model<T> {
    pub(super) fn param(&self, off: usize, len: usize) -> &[T] {
        &self.params[off..off + len]
    }

    pub(super) fn shape(&self) -> AttnShape {
        AttnShape {
            heads: self.config.heads,
            dh: self.config.head_dim,
            w: self.width(),
        }
    }

    pub(super) fn embed(&self, ids: &[u32]) -> Vec<T> {
        let w = self.width();
        let mut h = Vec::with_capacity(ids.len() * w);
        for &id in ids {
            h.extend_from_slice(self.param(self.layout.embed + id as usize * w, w));
        }
        h
    }

    /// Attention block on residual input `x[tq×w]`. With `kv == None` keys
    /// and values come from the normalized `x` itself.
    fn attn_forward(&self, o: &AttnOffsets, x: &[T], kv: Option<&[T]>, causal: bool) -> (AttnCache<T>, Vec<T>) {
        let w = self.width();
        let tq = x.len() / w;
        let (a, inv) = rms_forward(x, self.param(o.norm, w), w);
        let src = kv.unwrap_or(&a);
        let tk = src.len() / w;
        let mut q = matmul(&a, tq, w, self.param(o.wq, w * w), w);
        let mut k = matmul(src, tk, w, self.param(o.wk, w * w), w);
        let v = matmul(src, tk, w, self.param(o.wv, w * w), w);
        self.rope.apply_rows(&mut q, w, 0, false);
        self.rope.apply_rows(&mut k, w, 0, false);
        let (p, att) = attention(&self.shape(), &q, &k, &v, tq, tk, causal);
        let delta = matmul(&att, tq, w, self.param(o.wo, w * w), w);
        let cache = AttnCache {
            x: x.to_vec(),
            a,
            inv,
            q,
            k,
            v,
            p,
            o: att,
            tk,
        };
        (cache, delta)
    }

    /// Accumulates the residual-input gradient into `dx` and, for
    /// cross-attention, the key/value source gradient into `d_kv`.
    fn attn_backward(
        &self,
        o: &AttnOffsets,
        c: &AttnCache<T>,
        kv: Option<&[T]>,
        d_delta: &[T],
        dx: &mut [T],
        d_kv: Option<&mut [T]>,
        grad: &mut [T],
    ) {
        let w = self.width();
        let ww = w * w;
        let tq = c.x.len() / w;
        let tk = c.tk;
        let mut d_att = vec![T::zero(); tq * w];
        matmul_backward(&c.o, tq, w, self.param(o.wo, ww), w, d_delta, Some(&mut d_att), &mut grad[o.wo..o.wo + ww]);
        let mut dq = vec![T::zero(); tq * w];
        let mut dk = vec![T::zero(); tk * w];
        let mut dv = vec![T::zero(); tk * w];
        attention_backward(&self.shape(), &c.q, &c.k, &c.v, &c.p, &d_att, tq, tk, &mut dq, &mut dk, &mut dv);
        self.rope.apply_rows(&mut dq, w, 0, true);
        self.rope.apply_rows(&mut dk, w, 0, true);
        let mut da = vec![T::zero(); tq * w];
        matmul_backward(&c.a, tq, w, self.param(o.wq, ww), w, &dq, Some(&mut da), &mut grad[o.wq..o.wq + ww]);
        match (kv, d_kv) {
            (Some(src), Some(d_src)) => {
                matmul_backward(src, tk, w, self.param(o.wk, ww), w, &dk, Some(&mut *d_src), &mut grad[o.wk..o.wk + ww]);
                matmul_backward(src, tk, w, self.param(o.wv, ww), w, &dv, Some(d_src), &mut grad[o.wv..o.wv + ww]);
            }
            _ => {
                matmul_backward(&c.a, tk, w, self.param(o.wk, ww), w, &dk, Some(&mut da), &mut grad[o.wk..o.wk + ww]);
                matmul_backward(&c.a, tk, w, self.param(o.wv, ww), w, &dv, Some(&mut da), &mut grad[o.wv..o.wv + ww]);
            }
        }
        rms_backward(&c.x, self.param(o.norm, w), &c.inv, &da, w, dx, &mut grad[o.norm..o.norm + w]);
    }

    fn ffn_forward(&self, o: &FfnOffsets, x: &[T]) -> (FfnCache<T>, Vec<T>) {
        let w = self.width();
        let f = self.config.ffn_width();
        let rows = x.len() / w;
        let (a, inv) = rms_forward(x, self.param(o.norm, w), w);
        let u = matmul(&a, rows, w, self.param(o.gate, w * f), f);
        let t = matmul(&a, rows, w, self.param(o.up, w * f), f);
        let s: Vec<T> = u.iter().zip(&t).map(|(&u, &t)| u * sigmoid(u) * t).collect();
        let delta = matmul(&s, rows, f, self.param(o.down, f * w), w);
        (
            FfnCache {
                x: x.to_vec(),
                a,
                inv,
                u,
                t,
                s,
            },
            delta,
        )
    }

    fn ffn_backward(&self, o: &FfnOffsets, c: &FfnCache<T>, d_delta: &[T], dx: &mut [T], grad: &mut [T]) {
        let w = self.width();
        let f = self.config.ffn_width();
        let rows = c.x.len() / w;
        let mut ds = vec![T::zero(); rows * f];
        matmul_backward(&c.s, rows, f, self.param(o.down, f * w), w, d_delta, Some(&mut ds), &mut grad[o.down..o.down + f * w]);
        let mut du = vec![T::zero(); rows * f];
        let mut dt = vec![T::zero(); rows * f];
        for i in 0..rows * f {
            let (u, t) = (c.u[i], c.t[i]);
            let sg = sigmoid(u);
            let silu = u * sg;
            dt[i] = ds[i] * silu;
            du[i] = ds[i] * t * sg * (T::one() + u * (T::one() - sg));
        }
        let mut da = vec![T::zero(); rows * w];
        matmul_backward(&c.a, rows, w, self.param(o.gate, w * f), f, &du, Some(&mut da), &mut grad[o.gate..o.gate + w * f]);
        matmul_backward(&c.a, rows, w, self.param(o.up, w * f), f, &dt, Some(&mut da), &mut grad[o.up..o.up + w * f]);
        rms_backward(&c.x, self.param(o.norm, w), &c.inv, &da, w, dx, &mut grad[o.norm..o.norm + w]);
    }

    fn encode_cached(&self, prompt: &[u32]) -> (Vec<EncCache<T>>, Vec<T>, Vec<T>, Vec<T>) {
        let w = self.width();
        let mut h = self.embed(prompt);
        let mut caches = Vec::with_capacity(self.config.layers);
        for layer in &self.layout.encoder {
            let (attn, d) = self.attn_forward(&layer.attn, &h, None, false);
            add_assign(&mut h, &d);
            let (ffn, d) = self.ffn_forward(&layer.ffn, &h);
            add_assign(&mut h, &d);
            caches.push(EncCache { attn, ffn });
        }
        let (out, inv) = rms_forward(&h, self.param(self.layout.enc_norm, w), w);
        (caches, h, inv, out)
    }

    fn forward_cached(&self, prompt: &[u32], input: &[u32]) -> Forward<T> {
        let w = self.width();
        let (enc, enc_h, enc_inv, enc_out) = self.encode_cached(prompt);
        let mut h = self.embed(input);
        let mut dec = Vec::with_capacity(self.config.layers);
        for layer in &self.layout.decoder {
            let (self_attn, d) = self.attn_forward(&layer.self_attn, &h, None, true);
            add_assign(&mut h, &d);
            let (cross, d) = self.attn_forward(&layer.cross_attn, &h, Some(&enc_out), false);
            add_assign(&mut h, &d);
            let (ffn, d) = self.ffn_forward(&layer.ffn, &h);
            add_assign(&mut h, &d);
            dec.push(DecCache { self_attn, cross, ffn });
        }
        let (z, dec_inv) = rms_forward(&h, self.param(self.layout.dec_norm, w), w);
        let v = self.vocab_size();
        let logits = matmul(&z, input.len(), w, self.param(self.layout.out, w * v), v);
        Forward {
            enc,
            enc_h,
            enc_inv,
            enc_out,
            dec,
            dec_h: h,
            dec_inv,
            dec_z: z,
            logits,
        }
    }

    /// Encoder output, one `width`-vector per prompt token.
    pub fn encode(&self, prompt: &[u32]) -> Result<Vec<T>> {
        self.check_ids(prompt, "prompt")?;
        Ok(self.encode_cached(prompt).3)
    }

    /// Next-token logits `[prefix.len() × vocab]` under causal masking.
    pub fn decode(&self, enc_out: &[T], prefix: &[u32]) -> Result<Vec<T>> {
        self.check_ids(prefix, "decoder prefix")?;
        if enc_out.is_empty() || enc_out.len() % self.width() != 0 {
            return Err(Error::Shape(format!("encoder output of {} values", enc_out.len())));
        }
        let w = self.width();
        let mut h = self.embed(prefix);
        for layer in &self.layout.decoder {
            let d = self.attn_forward(&layer.self_attn, &h, None, true).1;
            add_assign(&mut h, &d);
            let d = self.attn_forward(&layer.cross_attn, &h, Some(enc_out), false).1;
            add_assign(&mut h, &d);
            let d = self.ffn_forward(&layer.ffn, &h).1;
            add_assign(&mut h, &d);
        }
        let z = rms_forward(&h, self.param(self.layout.dec_norm, w), w).0;
        let v = self.vocab_size();
        Ok(matmul(&z, prefix.len(), w, self.param(self.layout.out, w * v), v))
    }

    fn check_pair(&self, pair: &SeqPair) -> Result<()> {
        self.check_ids(&pair.prompt, "prompt")?;
        self.check_ids(&pair.response, "response")?;
        if pair.response.len() < 2 {
            return Err(Error::Shape("response needs at least bos and eos".into()));
        }
        Ok(())
    }

    /// `(1/(m−1)) Σ_i −log p(response[i+1] | prompt, response[..=i])`.
    pub fn example_loss(&self, pair: &SeqPair) -> Result<f64> {
        self.check_pair(pair)?;
        let m = pair.response.len();
        let f = self.forward_cached(&pair.prompt, &pair.response[..m - 1]);
        Ok(nll(&f.logits, &pair.response[1..], self.vocab_size()).0 / (m - 1) as f64)
    }

    /// Mean example loss over the batch and its gradient. Per-example
    /// gradients are summed in batch order, so the result does not depend on
    /// the number of worker threads.
    pub fn loss_and_grad(&self, batch: &[SeqPair], batch_id: usize) -> Result<(f64, Vec<T>)> {
        if batch.is_empty() {
            return Err(Error::Shape("empty batch".into()));
        }
        for pair in batch {
            self.check_pair(pair)?;
        }
        let weight = 1.0 / batch.len() as f64;
        let parts: Vec<(f64, Vec<T>)> = batch.par_iter().map(|pair| self.example_grad(pair, weight)).collect();
        let mut loss = 0.0;
        let mut grad = vec![T::zero(); self.params.len()];
        for (l, g) in parts {
            loss += l * weight;
            add_assign(&mut grad, &g);
        }
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite { batch: batch_id });
        }
        Ok((loss, grad))
    }

    /// Example loss and the gradient of `weight × loss`.
    fn example_grad(&self, pair: &SeqPair, weight: f64) -> (f64, Vec<T>) {
        let w = self.width();
        let v = self.vocab_size();
        let m = pair.response.len();
        let input = &pair.response[..m - 1];
        let targets = &pair.response[1..];
        let f = self.forward_cached(&pair.prompt, input);
        let scale = weight / (m - 1) as f64;
        let (total, mut d_logits) = nll(&f.logits, targets, v);
        let st = T::of(scale);
        d_logits.iter_mut().for_each(|d| *d *= st);

        let mut grad = vec![T::zero(); self.params.len()];
        let l = &self.layout;
        let rows = input.len();
        let mut dz = vec![T::zero(); rows * w];
        matmul_backward(&f.dec_z, rows, w, self.param(l.out, w * v), v, &d_logits, Some(&mut dz), &mut grad[l.out..l.out + w * v]);
        let mut dh = vec![T::zero(); rows * w];
        rms_backward(&f.dec_h, self.param(l.dec_norm, w), &f.dec_inv, &dz, w, &mut dh, &mut grad[l.dec_norm..l.dec_norm + w]);

        let n = pair.prompt.len();
        let mut d_enc = vec![T::zero(); n * w];
        for (layer, c) in l.decoder.iter().zip(&f.dec).rev() {
            let dd = dh.clone();
            self.ffn_backward(&layer.ffn, &c.ffn, &dd, &mut dh, &mut grad);
            let dd = dh.clone();
            self.attn_backward(&layer.cross_attn, &c.cross, Some(&f.enc_out), &dd, &mut dh, Some(&mut d_enc), &mut grad);
            let dd = dh.clone();
            self.attn_backward(&layer.self_attn, &c.self_attn, None, &dd, &mut dh, None, &mut grad);
        }
        self.embed_backward(input, &dh, &mut grad);

        let mut dx = vec![T::zero(); n * w];
        rms_backward(&f.enc_h, self.param(l.enc_norm, w), &f.enc_inv, &d_enc, w, &mut dx, &mut grad[l.enc_norm..l.enc_norm + w]);
        for (layer, c) in l.encoder.iter().zip(&f.enc).rev() {
            let dd = dx.clone();
            self.ffn_backward(&layer.ffn, &c.ffn, &dd, &mut dx, &mut grad);
            let dd = dx.clone();
            self.attn_backward(&layer.attn, &c.attn, None, &dd, &mut dx, None, &mut grad);
        }
        self.embed_backward(&pair.prompt, &dx, &mut grad);
        (total / (m - 1) as f64, grad)
    }

    fn embed_backward(&self, ids: &[u32], dh: &[T], grad: &mut [T]) {
        let w = self.width();
        for (&id, row) in ids.iter().zip(dh.chunks_exact(w)) {
            let off = self.layout.embed + id as usize * w;
            add_assign(&mut grad[off..off + w], row);
        }
    }
}

/// Summed negative log-likelihood of `targets` and its gradient with
/// respect to the logits (`softmax − onehot`).
pub(super) fn nll<T: Real>(logits: &[T], targets: &[u32], v: usize) -> (f64, Vec<T>) {
    let mut grad = vec![T::zero(); logits.len()];
    let mut total = 0.0;
    for ((row, g), &t) in logits.chunks_exact(v).zip(grad.chunks_exact_mut(v)).zip(targets) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let sum: T = row.iter().map(|&z| (z - max).exp()).sum();
        let lse = max + sum.ln();
        total += (lse - row[t as usize]).f64();
        for (gi, &z) in g.iter_mut().zip(row) {
            *gi = (z - lse).exp();
        }
        g[t as usize] -= T::one();
    }
    (total, grad)
}
