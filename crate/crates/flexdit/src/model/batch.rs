//! Padded batches of variable-length token sequences.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// A batch of token sequences padded to a common length, with per-token 2-D
/// positions and an additive validity mask (0 for valid tokens, `-inf` for
/// padding). Padding positions are `(0, 0)`; the attention mask guarantees
/// padding never influences valid-token outputs.
#[derive(Clone, Debug)]
pub struct TokenBatch<T> {
    /// `[B, L_max, token_dim]`
    pub tokens: Tensor<T>,
    /// `B * L_max` entries of `(h, w)` token-grid coordinates.
    pub positions: Vec<[f64; 2]>,
    /// `B * L_max` additive mask entries.
    pub mask: Vec<T>,
    /// Per-item token grid `(h_tokens, w_tokens)`.
    pub grids: Vec<(usize, usize)>,
    /// Per-item valid token count (`h_tokens * w_tokens`).
    pub lens: Vec<usize>,
}

impl<T: Scalar> TokenBatch<T> {
    pub fn batch_size(&self) -> usize {
        self.grids.len()
    }

    pub fn l_max(&self) -> usize {
        self.tokens.shape()[1]
    }

    pub fn token_dim(&self) -> usize {
        self.tokens.shape()[2]
    }

    pub fn valid_total(&self) -> usize {
        self.lens.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.batch_size();
        let l_max = self.l_max();
        if self.tokens.shape().len() != 3 || self.tokens.shape()[0] != b {
            return Err(Error::shape(format!(
                "token batch shape {:?} inconsistent with {} items",
                self.tokens.shape(),
                b
            )));
        }
        if self.positions.len() != b * l_max || self.mask.len() != b * l_max {
            return Err(Error::shape("positions/mask length must be B * L_max".to_string()));
        }
        for (i, (&(h, w), &len)) in self.grids.iter().zip(&self.lens).enumerate() {
            if h * w != len {
                return Err(Error::shape(format!(
                    "item {i}: grid {h}x{w} does not match len {len}"
                )));
            }
            if len > l_max {
                return Err(Error::shape(format!("item {i}: len {len} exceeds L_max {l_max}")));
            }
            let valid = self.mask[i * l_max..(i + 1) * l_max]
                .iter()
                .filter(|&&m| m == T::zero())
                .count();
            if valid != len {
                return Err(Error::shape(format!(
                    "item {i}: mask marks {valid} valid tokens, expected {len}"
                )));
            }
        }
        Ok(())
    }

    /// Per-row loss weights: `1 / (total_valid * token_dim)` on valid rows,
    /// zero on padding, so a masked mean ignores padding exactly.
    pub fn loss_weights(&self, out_dim: usize) -> Vec<T> {
        let l_max = self.l_max();
        let denom = (self.valid_total() * out_dim) as f64;
        let w = T::from_f64(1.0 / denom);
        self.mask
            .iter()
            .enumerate()
            .map(|(i, &m)| {
                let _ = i;
                if m == T::zero() {
                    w
                } else {
                    T::zero()
                }
            })
            .take(self.batch_size() * l_max)
            .collect()
    }
}
