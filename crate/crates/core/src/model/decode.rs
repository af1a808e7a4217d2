//! Incremental decoding with key/value caches. Several streams that share
//! one encoder output advance together so that projections run as one
//! matrix product per step.

use super::linalg::{add_assign, gemm, matmul, Mat, Real};
use super::net::{attention, rms_forward, sigmoid, softmax_prefix};
use super::Model;
use crate::error::{Error, Result};

/// Cross-attention keys (rotated) and values per decoder layer.
#[derive(Clone, Debug)]
pub struct CrossCache<T> {
    k: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    n: usize,
}

/// Self-attention keys and values of one decoding stream.
#[derive(Clone, Debug)]
pub struct StreamState<T> {
    k: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    len: usize,
}

impl<T> StreamState<T> {
    /// Tokens consumed so far.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

impl<T: Real> Model<T> {
    pub fn cross_cache(&self, enc_out: &[T]) -> CrossCache<T> {
        let w = self.width();
        let n = enc_out.len() / w;
        let mut ks = Vec::with_capacity(self.config.layers);
        let mut vs = Vec::with_capacity(self.config.layers);
        for layer in &self.layout.decoder {
            let o = &layer.cross_attn;
            let mut k = matmul(enc_out, n, w, self.param(o.wk, w * w), w);
            self.rope.apply_rows(&mut k, w, 0, false);
            ks.push(k);
            vs.push(matmul(enc_out, n, w, self.param(o.wv, w * w), w));
        }
        CrossCache { k: ks, v: vs, n }
    }

    pub fn new_stream(&self) -> StreamState<T> {
        StreamState {
            k: vec![Vec::new(); self.config.layers],
            v: vec![Vec::new(); self.config.layers],
            len: 0,
        }
    }

    /// Feeds `tokens[s]` to `streams[s]` and returns next-token logits
    /// `[streams.len() × vocab]`.
    pub fn step(&self, cross: &CrossCache<T>, streams: &mut [StreamState<T>], tokens: &[u32]) -> Result<Vec<T>> {
        assert_eq!(streams.len(), tokens.len(), "one token per stream");
        self.check_ids(tokens, "step tokens")?;
        if let Some(s) = streams.iter().find(|s| s.len >= self.config.max_seq_len) {
            return Err(Error::Shape(format!("stream length {} reaches max_seq_len", s.len)));
        }
        let w = self.width();
        let sh = self.shape();
        let rows = tokens.len();
        let scale = T::of(1.0 / (sh.dh as f64).sqrt());
        let mut x = self.embed(tokens);
        let mut scores = Vec::new();
        for (li, layer) in self.layout.decoder.iter().enumerate() {
            let o = &layer.self_attn;
            let a = rms_forward(&x, self.param(o.norm, w), w).0;
            let mut q = matmul(&a, rows, w, self.param(o.wq, w * w), w);
            let mut k = matmul(&a, rows, w, self.param(o.wk, w * w), w);
            let v = matmul(&a, rows, w, self.param(o.wv, w * w), w);
            let mut att = vec![T::zero(); rows * w];
            for (r, st) in streams.iter_mut().enumerate() {
                let pos = st.len;
                let qr = &mut q[r * w..(r + 1) * w];
                self.rope.apply_rows(qr, w, pos, false);
                let kr = &mut k[r * w..(r + 1) * w];
                self.rope.apply_rows(kr, w, pos, false);
                st.k[li].extend_from_slice(kr);
                st.v[li].extend_from_slice(&v[r * w..(r + 1) * w]);
                let t = pos + 1;
                scores.resize(t, T::zero());
                for h in 0..sh.heads {
                    let c = h * sh.dh;
                    gemm(1, sh.dh, t, scale, Mat::rows(&qr[c..], sh.dh), Mat::strided_t(&st.k[li][c..], w), T::zero(), &mut scores, t);
                    softmax_prefix(&mut scores, t);
                    gemm(1, t, sh.dh, T::one(), Mat::rows(&scores, t), Mat::strided(&st.v[li][c..], w), T::zero(), &mut att[r * w + c..], w);
                }
            }
            add_assign(&mut x, &matmul(&att, rows, w, self.param(o.wo, w * w), w));

            let o = &layer.cross_attn;
            let a = rms_forward(&x, self.param(o.norm, w), w).0;
            let mut q = matmul(&a, rows, w, self.param(o.wq, w * w), w);
            for (r, st) in streams.iter().enumerate() {
                self.rope.apply_rows(&mut q[r * w..(r + 1) * w], w, st.len, false);
            }
            let (_, att) = attention(&sh, &q, &cross.k[li], &cross.v[li], rows, cross.n, false);
            add_assign(&mut x, &matmul(&att, rows, w, self.param(o.wo, w * w), w));

            let o = &layer.ffn;
            let f = self.config.ffn_width();
            let a = rms_forward(&x, self.param(o.norm, w), w).0;
            let u = matmul(&a, rows, w, self.param(o.gate, w * f), f);
            let t = matmul(&a, rows, w, self.param(o.up, w * f), f);
            let s: Vec<T> = u.iter().zip(&t).map(|(&u, &t)| u * sigmoid(u) * t).collect();
            add_assign(&mut x, &matmul(&s, rows, f, self.param(o.down, f * w), w));
        }
        for st in streams.iter_mut() {
            st.len += 1;
        }
        let z = rms_forward(&x, self.param(self.layout.dec_norm, w), w).0;
        let v = self.vocab_size();
        Ok(matmul(&z, rows, w, self.param(self.layout.out, w * v), v))
    }
}
