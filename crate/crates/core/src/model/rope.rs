//! Rotary position embeddings on interleaved feature pairs `(2k, 2k+1)`.

use super::linalg::Real;
use crate::error::{Error, Result};

/// Precomputed `cos`/`sin` of `pos / base^(2k/dim)` for a range of positions.
#[derive(Clone, Debug)]
pub struct RopeTable<T> {
    dim: usize,
    cos: Vec<T>,
    sin: Vec<T>,
}

impl<T: Real> RopeTable<T> {
    pub fn new(positions: usize, dim: usize, base: f64) -> Result<Self> {
        if dim % 2 != 0 {
            return Err(Error::Shape(format!("rotary embeddings need an even dimension, got {dim}")));
        }
        let half = dim / 2;
        let mut cos = Vec::with_capacity(positions * half);
        let mut sin = Vec::with_capacity(positions * half);
        for p in 0..positions {
            for k in 0..half {
                let angle = p as f64 / base.powf(2.0 * k as f64 / dim as f64);
                cos.push(T::of(angle.cos()));
                sin.push(T::of(angle.sin()));
            }
        }
        Ok(RopeTable { dim, cos, sin })
    }

    pub fn positions(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.cos.len() / (self.dim / 2)
        }
    }

    /// Rotates one `dim`-vector in place; `inverse` applies the transpose,
    /// which is also the backward pass.
    pub fn rotate(&self, v: &mut [T], pos: usize, inverse: bool) {
        let half = self.dim / 2;
        let cos = &self.cos[pos * half..(pos + 1) * half];
        let sin = &self.sin[pos * half..(pos + 1) * half];
        for k in 0..half {
            let (c, s) = (cos[k], if inverse { -sin[k] } else { sin[k] });
            let (x0, x1) = (v[2 * k], v[2 * k + 1]);
            v[2 * k] = x0 * c - x1 * s;
            v[2 * k + 1] = x0 * s + x1 * c;
        }
    }

    /// Rotates every head slice of each row of a `rows × width` matrix; row
    /// `r` sits at position `pos0 + r`.
    pub fn apply_rows(&self, x: &mut [T], width: usize, pos0: usize, inverse: bool) {
        for (r, row) in x.chunks_exact_mut(width).enumerate() {
            for head in row.chunks_exact_mut(self.dim) {
                self.rotate(head, pos0 + r, inverse);
            }
        }
    }
}

/// Rotates consecutive `dim`-vectors, vector `i` at `positions[i]`.
pub fn apply_rope<T: Real>(vectors: &mut [T], dim: usize, positions: &[usize], base: f64) -> Result<()> {
    if dim == 0 || vectors.len() != dim * positions.len() {
        return Err(Error::Shape(format!(
            "{} values do not form {} vectors of dimension {dim}",
            vectors.len(),
            positions.len()
        )));
    }
    let max = positions.iter().copied().max().unwrap_or(0);
    let table = RopeTable::<T>::new(max + 1, dim, base)?;
    for (v, &p) in vectors.chunks_exact_mut(dim).zip(positions) {
        table.rotate(v, p, false);
    }
    Ok(())
}
