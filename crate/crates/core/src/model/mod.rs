//! Encoder-decoder Transformer with rotary position embeddings and a
//! hand-written reverse-mode backward pass.
//!
//! Architecture, fixed here in one place:
//!
//! - one token embedding table shared by encoder and decoder inputs, and a
//!   separate `width × vocab` output projection;
//! - pre-normalization with RMSNorm (learned gain, eps 1e-6) before every
//!   attention and feed-forward block, plus a final norm on each stack;
//! - SwiGLU feed-forward, `silu(x·W_gate) ⊙ (x·W_up) · W_down`, hidden
//!   width `4 × width`;
//! - rotary embeddings on queries and keys of every attention map; in
//!   cross-attention, key positions are encoder positions;
//! - bidirectional encoder self-attention, causal decoder self-attention;
//! - no dropout, no biases.
//!
//! Vectors are rows and weights multiply from the right (`y = x·W`).
//! Parameters live in one flat vector; [`ParamLayout`] lists the offsets in
//! storage order: embedding, encoder layers (attn norm, Wq, Wk, Wv, Wo,
//! ffn norm, W_gate, W_up, W_down), encoder final norm, decoder layers (self
//! norm, Wq, Wk, Wv, Wo, cross norm, Wq, Wk, Wv, Wo, ffn norm, W_gate, W_up,
//! W_down), decoder final norm, output projection.

mod decode;
pub mod linalg;
mod net;
pub mod rope;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use decode::{CrossCache, StreamState};
pub use linalg::Real;
pub use rope::{apply_rope, RopeTable};

pub const DEFAULT_ROPE_BASE: f64 = 10_000.0;
pub const DEFAULT_MAX_SEQ_LEN: usize = 10_240;
pub const FFN_MULT: usize = 4;
pub(crate) const NORM_EPS: f64 = 1e-6;

fn default_rope_base() -> f64 {
    DEFAULT_ROPE_BASE
}

fn default_max_seq_len() -> usize {
    DEFAULT_MAX_SEQ_LEN
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Layers in each of the encoder and the decoder.
    pub layers: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub vocab_size: usize,
    #[serde(default = "default_rope_base")]
    pub rope_base: f64,
    #[serde(default = "default_max_seq_len")]
    pub max_seq_len: usize,
    /// Optional declared model width; must equal `heads × head_dim`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
}

impl ModelConfig {
    pub fn new(layers: usize, heads: usize, head_dim: usize, vocab_size: usize) -> Self {
        ModelConfig {
            layers,
            heads,
            head_dim,
            vocab_size,
            rope_base: DEFAULT_ROPE_BASE,
            max_seq_len: DEFAULT_MAX_SEQ_LEN,
            width: None,
        }
    }

    /// Desk-scale default: 2 layers, 2 heads of width 16.
    pub fn tiny(vocab_size: usize) -> Self {
        ModelConfig::new(2, 2, 16, vocab_size)
    }

    /// Named architecture sizes: `15M`, `46M`, `175M`, `747M`.
    pub fn preset(name: &str, vocab_size: usize) -> Result<Self> {
        let (layers, heads, head_dim) = match name {
            "15M" => (6, 3, 64),
            "46M" => (8, 4, 96),
            "175M" => (9, 4, 192),
            "747M" => (16, 12, 96),
            "tiny" => (2, 2, 16),
            _ => return Err(Error::Config(format!("unknown preset {name:?}"))),
        };
        Ok(ModelConfig::new(layers, heads, head_dim, vocab_size))
    }

    pub fn model_width(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn ffn_width(&self) -> usize {
        FFN_MULT * self.model_width()
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("layers", self.layers),
            ("heads", self.heads),
            ("head_dim", self.head_dim),
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.head_dim % 2 != 0 {
            return Err(Error::Config(format!("head_dim {} must be even", self.head_dim)));
        }
        if let Some(w) = self.width {
            if w != self.model_width() {
                return Err(Error::Config(format!(
                    "width {w} != heads {} x head_dim {}",
                    self.heads, self.head_dim
                )));
            }
        }
        if !(self.rope_base.is_finite() && self.rope_base > 1.0) {
            return Err(Error::Config(format!("rope_base {} must exceed 1", self.rope_base)));
        }
        Ok(())
    }
}

/// Offsets of one attention block's parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttnOffsets {
    pub norm: usize,
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FfnOffsets {
    pub norm: usize,
    pub gate: usize,
    pub up: usize,
    pub down: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderLayer {
    pub attn: AttnOffsets,
    pub ffn: FfnOffsets,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecoderLayer {
    pub self_attn: AttnOffsets,
    pub cross_attn: AttnOffsets,
    pub ffn: FfnOffsets,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    pub embed: usize,
    pub encoder: Vec<EncoderLayer>,
    pub enc_norm: usize,
    pub decoder: Vec<DecoderLayer>,
    pub dec_norm: usize,
    pub out: usize,
    pub total: usize,
    /// Norm gain ranges, initialised to one.
    gains: Vec<(usize, usize)>,
}

struct Cursor {
    at: usize,
    gains: Vec<(usize, usize)>,
}

impl Cursor {
    fn take(&mut self, n: usize) -> usize {
        let off = self.at;
        self.at += n;
        off
    }

    fn gain(&mut self, w: usize) -> usize {
        let off = self.take(w);
        self.gains.push((off, w));
        off
    }

    fn attn(&mut self, w: usize) -> AttnOffsets {
        AttnOffsets {
            norm: self.gain(w),
            wq: self.take(w * w),
            wk: self.take(w * w),
            wv: self.take(w * w),
            wo: self.take(w * w),
        }
    }

    fn ffn(&mut self, w: usize, f: usize) -> FfnOffsets {
        FfnOffsets {
            norm: self.gain(w),
            gate: self.take(w * f),
            up: self.take(w * f),
            down: self.take(f * w),
        }
    }
}

impl ParamLayout {
    pub fn new(config: &ModelConfig) -> Self {
        let (w, f, v) = (config.model_width(), config.ffn_width(), config.vocab_size);
        let mut c = Cursor { at: 0, gains: Vec::new() };
        let embed = c.take(v * w);
        let encoder = (0..config.layers)
            .map(|_| EncoderLayer {
                attn: c.attn(w),
                ffn: c.ffn(w, f),
            })
            .collect();
        let enc_norm = c.gain(w);
        let decoder = (0..config.layers)
            .map(|_| DecoderLayer {
                self_attn: c.attn(w),
                cross_attn: c.attn(w),
                ffn: c.ffn(w, f),
            })
            .collect();
        let dec_norm = c.gain(w);
        let out = c.take(w * v);
        ParamLayout {
            embed,
            encoder,
            enc_norm,
            decoder,
            dec_norm,
            out,
            total: c.at,
            gains: c.gains,
        }
    }
}

/// Closed-form parameter count: `2·V·w + 2w` for embeddings, output and
/// final norms, `4w² + 3·w·4w + 2w` per encoder layer and
/// `8w² + 3·w·4w + 3w` per decoder layer.
pub fn param_count(config: &ModelConfig) -> usize {
    let (w, f, v, l) = (config.model_width(), config.ffn_width(), config.vocab_size, config.layers);
    let enc = 4 * w * w + 3 * w * f + 2 * w;
    let dec = 8 * w * w + 3 * w * f + 3 * w;
    2 * v * w + 2 * w + l * (enc + dec)
}

#[derive(Clone, Debug)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub layout: ParamLayout,
    pub params: Vec<T>,
    rope: RopeTable<T>,
}

/// One training pair in token ids; the response is framed by bos/eos.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeqPair {
    pub prompt: Vec<u32>,
    pub response: Vec<u32>,
}

impl<T: Real> Model<T> {
    /// Normal initialisation with standard deviation `1/√width` for every
    /// matrix; norm gains start at one.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (config.model_width() as f64).sqrt()).expect("valid std");
        let mut params: Vec<T> = (0..layout.total).map(|_| T::of(normal.sample(&mut rng))).collect();
        for &(off, n) in &layout.gains {
            params[off..off + n].iter_mut().for_each(|p| *p = T::one());
        }
        Model::from_params(config.clone(), params)
    }

    pub fn from_params(config: ModelConfig, params: Vec<T>) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        if params.len() != layout.total {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                layout.total,
                params.len()
            )));
        }
        let rope = RopeTable::new(config.max_seq_len, config.head_dim, config.rope_base)?;
        Ok(Model {
            config,
            layout,
            params,
            rope,
        })
    }

    /// Same parameters in another precision.
    pub fn cast<U: Real>(&self) -> Model<U> {
        let params = self.params.iter().map(|p| U::of(p.f64())).collect();
        Model::from_params(self.config.clone(), params).expect("config already validated")
    }

    pub fn width(&self) -> usize {
        self.config.model_width()
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn check_ids(&self, ids: &[u32], what: &str) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::Shape(format!("empty {what}")));
        }
        if ids.len() > self.config.max_seq_len {
            return Err(Error::Shape(format!(
                "{what} length {} exceeds max_seq_len {}",
                ids.len(),
                self.config.max_seq_len
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= self.config.vocab_size) {
            return Err(Error::Shape(format!(
                "{what} token id {bad} outside vocabulary of {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }
}
