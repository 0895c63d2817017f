//! Patchify / unpatchify between `[C, H, W]` latents and token sequences.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Tokens for a single image plus its grid and row-major positions.
pub struct PatchTokens<T> {
    /// `[L, p*p*C]`
    pub tokens: Tensor<T>,
    pub grid: (usize, usize),
    pub positions: Vec<[f64; 2]>,
}

/// Split a `[C, H, W]` latent into non-overlapping `p x p` patches.
/// Token feature layout is channel-major: `c * p * p + dy * p + dx`.
pub fn patchify<T: Scalar>(latent: &Tensor<T>, p: usize) -> Result<PatchTokens<T>> {
    let s = latent.shape();
    if s.len() != 3 {
        return Err(Error::shape(format!("patchify expects [C, H, W], got {:?}", s)));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(Error::shape(format!(
            "extents {h}x{w} not divisible by patch size {p}"
        )));
    }
    let (gh, gw) = (h / p, w / p);
    let token_dim = c * p * p;
    let mut tokens = vec![T::zero(); gh * gw * token_dim];
    let data = latent.data();
    for th in 0..gh {
        for tw in 0..gw {
            let t_off = (th * gw + tw) * token_dim;
            for ci in 0..c {
                for dy in 0..p {
                    for dx in 0..p {
                        let src = ci * h * w + (th * p + dy) * w + (tw * p + dx);
                        tokens[t_off + ci * p * p + dy * p + dx] = data[src];
                    }
                }
            }
        }
    }
    let positions = position_grid(gh, gw);
    Ok(PatchTokens {
        tokens: Tensor::new(vec![gh * gw, token_dim], tokens)?,
        grid: (gh, gw),
        positions,
    })
}

/// Exact inverse of [`patchify`].
pub fn unpatchify<T: Scalar>(
    tokens: &Tensor<T>,
    grid: (usize, usize),
    p: usize,
    c: usize,
) -> Result<Tensor<T>> {
    let (gh, gw) = grid;
    let s = tokens.shape();
    if s.len() != 2 || s[0] != gh * gw {
        return Err(Error::shape(format!(
            "token count {:?} does not match grid {gh}x{gw}",
            s
        )));
    }
    let token_dim = c * p * p;
    if s[1] != token_dim {
        return Err(Error::shape(format!(
            "token dim {} != C*p*p = {token_dim}",
            s[1]
        )));
    }
    let (h, w) = (gh * p, gw * p);
    let mut out = vec![T::zero(); c * h * w];
    let data = tokens.data();
    for th in 0..gh {
        for tw in 0..gw {
            let t_off = (th * gw + tw) * token_dim;
            for ci in 0..c {
                for dy in 0..p {
                    for dx in 0..p {
                        let dst = ci * h * w + (th * p + dy) * w + (tw * p + dx);
                        out[dst] = data[t_off + ci * p * p + dy * p + dx];
                    }
                }
            }
        }
    }
    Tensor::new(vec![c, h, w], out)
}

/// Row-major `(h, w)` pairs over a token grid.
pub fn position_grid(gh: usize, gw: usize) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(gh * gw);
    for h in 0..gh {
        for w in 0..gw {
            out.push([h as f64, w as f64]);
        }
    }
    out
}

/// Position tuples for a text-then-image token sequence: text token `i` sits
/// at `(i, i)` on the diagonal, image tokens fill the row-major block
/// starting at `(M, M)`.
pub fn t2i_position_indices(m: usize, h: usize, w: usize) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(m + h * w);
    for i in 0..m {
        out.push([i as f64, i as f64]);
    }
    for hh in 0..h {
        for ww in 0..w {
            out.push([(m + hh) as f64, (m + ww) as f64]);
        }
    }
    out
}
