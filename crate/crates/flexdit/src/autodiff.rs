//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Tape`] is rebuilt per forward pass (variable-length batches change the
//! graph every step). Leaves snapshot their tensor data at registration;
//! after [`Tape::backward`] the caller reads gradients back via [`Tape::grad`].

use crate::error::{Error, Result};
use crate::kernels;
use crate::tensor::{Scalar, Tensor};

/// Handle to a node on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

struct Node<T> {
    data: Vec<T>,
    shape: Vec<usize>,
    needs_grad: bool,
}

enum Op<T> {
    Matmul {
        a: Var,
        b: Var,
        out: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        b_shared: bool,
        transpose_b: bool,
    },
    Add { a: Var, b: Var, out: Var },
    Sub { a: Var, b: Var, out: Var },
    Mul { a: Var, b: Var, out: Var },
    Scale { x: Var, c: T, out: Var },
    /// Gradient passes through unchanged (add-scalar, key-mask add, reshape).
    Passthrough { x: Var, out: Var },
    Silu { x: Var, out: Var },
    SoftmaxLast { x: Var, out: Var, cols: usize },
    LayerNorm { x: Var, gain: Option<Var>, bias: Option<Var>, out: Var, dim: usize, eps: T },
    ConcatLast { parts: Vec<Var>, out: Var, sizes: Vec<usize>, rows: usize },
    SliceLast { x: Var, out: Var, offset: usize, len: usize, last: usize },
    MeanLast { x: Var, out: Var, last: usize },
    SumAll { x: Var, out: Var },
    Transpose12 { x: Var, out: Var, dims: [usize; 4] },
    RepeatMid { x: Var, out: Var, reps: usize, rowlen: usize },
    Embedding { table: Var, out: Var, ids: Vec<usize>, dim: usize },
    Rope2d { x: Var, out: Var, cos: Vec<T>, sin: Vec<T>, head_dim: usize, heads: usize },
    ScaleRows { x: Var, out: Var, w: Vec<T>, last: usize },
}

/// Wengert list recording forward ops for reverse traversal.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    ops: Vec<Op<T>>,
    consumed: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), grads: Vec::new(), ops: Vec::new(), consumed: false }
    }

    fn push(&mut self, data: Vec<T>, shape: Vec<usize>, needs_grad: bool) -> Var {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        self.nodes.push(Node { data, shape, needs_grad });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Register a differentiable leaf. Data is snapshotted.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Var {
        self.push(t.data().to_vec(), t.shape().to_vec(), t.requires_grad)
    }

    /// Register a non-differentiable input.
    pub fn constant(&mut self, data: Vec<T>, shape: Vec<usize>) -> Var {
        self.push(data, shape, false)
    }

    pub fn constant_from(&mut self, t: &Tensor<T>) -> Var {
        self.push(t.data().to_vec(), t.shape().to_vec(), false)
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }

    /// Clone a node out into a standalone tensor.
    pub fn detach(&self, v: Var) -> Tensor<T> {
        Tensor::new(self.nodes[v.0].shape.clone(), self.nodes[v.0].data.clone())
            .expect("node shape is consistent")
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    // ── op builders ──────────────────────────────────────────────────

    /// Batched contraction `a[.., m, k] x b[.., k, n]` (or `b[.., n, k]` with
    /// `transpose_b`). Leading batch dims must match exactly, or `b` may omit
    /// them entirely (shared weight).
    pub fn matmul_full(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let (ashape, bshape) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if ashape.len() < 2 || bshape.len() < 2 {
            return Err(Error::shape(format!(
                "matmul needs rank >= 2, got {:?} x {:?}",
                ashape, bshape
            )));
        }
        let (m, ka) = (ashape[ashape.len() - 2], ashape[ashape.len() - 1]);
        let (bi, bj) = (bshape[bshape.len() - 2], bshape[bshape.len() - 1]);
        let (kb, n) = if transpose_b { (bj, bi) } else { (bi, bj) };
        if ka != kb {
            return Err(Error::shape(format!(
                "matmul inner extents disagree: {:?} x {:?}{}",
                ashape,
                bshape,
                if transpose_b { " (b transposed)" } else { "" }
            )));
        }
        let abatch = &ashape[..ashape.len() - 2];
        let bbatch = &bshape[..bshape.len() - 2];
        let b_shared = bbatch.is_empty() && !abatch.is_empty();
        if !b_shared && abatch != bbatch {
            return Err(Error::shape(format!(
                "matmul batch extents disagree: {:?} x {:?}",
                ashape, bshape
            )));
        }
        let batch: usize = abatch.iter().product::<usize>().max(1);
        let mut out_shape = abatch.to_vec();
        out_shape.push(m);
        out_shape.push(n);

        let mut data = vec![T::zero(); batch * m * n];
        {
            let ad = &self.nodes[a.0].data;
            let bd = &self.nodes[b.0].data;
            let bstride = if b_shared { 0 } else { ka * n };
            if batch == 1 {
                if transpose_b {
                    kernels::matmul_tb(ad, bd, &mut data, m, ka, n);
                } else {
                    kernels::matmul(ad, bd, &mut data, m, ka, n);
                }
            } else {
                kernels::for_each_batch(&mut data, m * n, batch * m * ka * n, |bi, o_sl| {
                    let a_sl = &ad[bi * m * ka..(bi + 1) * m * ka];
                    let b_sl = &bd[bi * bstride..bi * bstride + ka * n];
                    if transpose_b {
                        kernels::matmul_tb_seq(a_sl, b_sl, o_sl, m, ka, n);
                    } else {
                        kernels::matmul_seq(a_sl, b_sl, o_sl, m, ka, n);
                    }
                });
            }
        }
        let needs = self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad;
        let out = self.push(data, out_shape, needs);
        self.ops.push(Op::Matmul { a, b, out, batch, m, k: ka, n, b_shared, transpose_b });
        Ok(out)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_full(a, b, false)
    }

    /// `a[.., m, k] x b[.., n, k]^T`
    pub fn matmul_tb(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_full(a, b, true)
    }

    fn binary_shapes(&self, a: Var, b: Var, op: &str) -> Result<()> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        let ok = sb.len() <= sa.len() && sa[sa.len() - sb.len()..] == sb[..];
        if !ok {
            return Err(Error::shape(format!("{op}: {:?} vs {:?}", sa, sb)));
        }
        Ok(())
    }

    /// Elementwise add; `b` may be a trailing-shape broadcast over leading dims.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_shapes(a, b, "add")?;
        let nb = self.nodes[b.0].data.len();
        let data: Vec<T> = self.nodes[a.0]
            .data
            .iter()
            .enumerate()
            .map(|(i, &av)| av + self.nodes[b.0].data[i % nb])
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let needs = self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad;
        let out = self.push(data, shape, needs);
        self.ops.push(Op::Add { a, b, out });
        Ok(out)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_shapes(a, b, "sub")?;
        let nb = self.nodes[b.0].data.len();
        let data: Vec<T> = self.nodes[a.0]
            .data
            .iter()
            .enumerate()
            .map(|(i, &av)| av - self.nodes[b.0].data[i % nb])
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let needs = self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad;
        let out = self.push(data, shape, needs);
        self.ops.push(Op::Sub { a, b, out });
        Ok(out)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_shapes(a, b, "mul")?;
        let nb = self.nodes[b.0].data.len();
        let data: Vec<T> = self.nodes[a.0]
            .data
            .iter()
            .enumerate()
            .map(|(i, &av)| av * self.nodes[b.0].data[i % nb])
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let needs = self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad;
        let out = self.push(data, shape, needs);
        self.ops.push(Op::Mul { a, b, out });
        Ok(out)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let data: Vec<T> = self.nodes[x.0].data.iter().map(|&v| v * c).collect();
        let shape = self.nodes[x.0].shape.clone();
        let needs = self.nodes[x.0].needs_grad;
        let out = self.push(data, shape, needs);
        self.ops.push(Op::Scale { x, c, out });
        out
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        let data: Vec<T> = self.nodes[x.0].data.iter().map(|&v| v + c).collect();
        let shape = self.nodes[x.0].shape.clone();
        let needs = self.nodes[x.0].needs_grad;
        let out = self.push(data, shape, needs);
        self.ops.push(Op::Passthrough { x, out });
        out
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let data: Vec<T> = self.nodes[x.0]
            .data
            .iter()
            .map(|&v| v * (T::one() / (T::one() + (-v).exp())))
            .collect();
        let shape = self.nodes[x.0].shape.clone();
        let needs = self.nodes[x.0].needs_grad;
        let out = self.push(data, shape, needs);
        self.ops.push(Op::Silu { x, out });
        out
    }

    /// Row-stable softmax over the last dimension. Entries at `-inf` map to
    /// exactly zero; a row that is entirely `-inf` is an error.
    pub fn softmax_lastdim(&mut self, x: Var) -> Result<Var> {
        let shape = self.nodes[x.0].shape.clone();
        let cols = *shape.last().ok_or_else(|| Error::shape("softmax on rank-0 tensor"))?;
        if cols < 1 {
            return Err(Error::shape("softmax last extent must be >= 1"));
        }
        let xd = &self.nodes[x.0].data;
        let mut data = vec![T::zero(); xd.len()];
        for (r, row) in xd.chunks(cols).enumerate() {
            let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
            if max == T::neg_infinity() {
                return Err(Error::numeric(format!("fully masked row {r} in softmax")));
            }
            let orow = &mut data[r * cols..(r + 1) * cols];
            let mut sum = T::zero();
            for (o, &v) in orow.iter_mut().zip(row) {
                let e = (v - max).exp();
                *o = e;
                sum = sum + e;
            }
            let inv = T::one() / sum;
            for o in orow.iter_mut() {
                *o = *o * inv;
            }
        }
        let needs = self.nodes[x.0].needs_grad;
        let out = self.push(data, shape, needs);
        self.ops.push(Op::SoftmaxLast { x, out, cols });
        Ok(out)
    }

    /// Layer normalization over the last dimension with optional affine.
    pub fn layernorm(
        &mut self,
        x: Var,
        gain: Option<Var>,
        bias: Option<Var>,
        eps: T,
    ) -> Result<Var> {
        if eps <= T::zero() {
            return Err(Error::config("layernorm eps must be positive"));
        }
        let shape = self.nodes[x.0].shape.clone();
        let dim = *shape.last().ok_or_else(|| Error::shape("layernorm on rank-0 tensor"))?;
        if dim < 1 {
            return Err(Error::shape("layernorm last extent must be >= 1"));
        }
        for v in [gain, bias].into_iter().flatten() {
            if self.nodes[v.0].data.len() != dim {
                return Err(Error::shape(format!(
                    "layernorm affine length {} != last extent {}",
                    self.nodes[v.0].data.len(),
                    dim
                )));
            }
        }
        let inv_n = T::one() / T::from_f64(dim as f64);
        let xd = &self.nodes[x.0].data;
        let mut data = vec![T::zero(); xd.len()];
        for (r, row) in xd.chunks(dim).enumerate() {
            let mut mean = T::zero();
            for &v in row {
                mean = mean + v;
            }
            mean = mean * inv_n;
            let mut var = T::zero();
            for &v in row {
                let d = v - mean;
                var = var + d * d;
            }
            var = var * inv_n;
            let rstd = T::one() / (var + eps).sqrt();
            let orow = &mut data[r * dim..(r + 1) * dim];
            for (j, (o, &v)) in orow.iter_mut().zip(row).enumerate() {
                let mut y = (v - mean) * rstd;
                if let Some(g) = gain {
                    y = y * self.nodes[g.0].data[j];
                }
                if let Some(b) = bias {
                    y = y + self.nodes[b.0].data[j];
                }
                *o = y;
            }
        }
        let needs = self.nodes[x.0].needs_grad
            || gain.map(|g| self.nodes[g.0].needs_grad).unwrap_or(false)
            || bias.map(|b| self.nodes[b.0].needs_grad).unwrap_or(false);
        let out = self.push(data, shape, needs);
        self.ops.push(Op::LayerNorm { x, gain, bias, out, dim, eps });
        Ok(out)
    }

    pub fn concat_lastdim(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat of zero parts"));
        }
        let lead = self.nodes[parts[0].0].shape[..self.nodes[parts[0].0].shape.len() - 1].to_vec();
        let mut sizes = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = &self.nodes[p.0].shape;
            if s[..s.len() - 1] != lead[..] {
                return Err(Error::shape(format!(
                    "concat leading dims disagree: {:?} vs {:?}",
                    s, lead
                )));
            }
            sizes.push(s[s.len() - 1]);
        }
        let rows: usize = lead.iter().product::<usize>().max(1);
        let total: usize = sizes.iter().sum();
        let mut data = vec![T::zero(); rows * total];
        for r in 0..rows {
            let mut off = 0;
            for (&p, &sz) in parts.iter().zip(&sizes) {
                let src = &self.nodes[p.0].data[r * sz..(r + 1) * sz];
                data[r * total + off..r * total + off + sz].copy_from_slice(src);
                off += sz;
            }
        }
        let mut shape = lead;
        shape.push(total);
        let needs = parts.iter().any(|p| self.nodes[p.0].needs_grad);
        let out = self.push(data, shape, needs);
        self.ops.push(Op::ConcatLast { parts: parts.to_vec(), out, sizes, rows });
        Ok(out)
    }

    /// Split the last dimension into segments of the given sizes.
    pub fn split_lastdim(&mut self, x: Var, sizes: &[usize]) -> Result<Vec<Var>> {
        let shape = self.nodes[x.0].shape.clone();
        let last = *shape.last().ok_or_else(|| Error::shape("split on rank-0 tensor"))?;
        if sizes.iter().sum::<usize>() != last {
            return Err(Error::shape(format!(
                "split sizes {:?} do not sum to last extent {}",
                sizes, last
            )));
        }
        let mut outs = Vec::with_capacity(sizes.len());
        let mut offset = 0;
        for &len in sizes {
            outs.push(self.slice_lastdim(x, offset, len)?);
            offset += len;
        }
        Ok(outs)
    }

    pub fn slice_lastdim(&mut self, x: Var, offset: usize, len: usize) -> Result<Var> {
        let shape = self.nodes[x.0].shape.clone();
        let last = *shape.last().ok_or_else(|| Error::shape("slice on rank-0 tensor"))?;
        if offset + len > last {
            return Err(Error::shape(format!(
                "slice {offset}..{} out of last extent {last}",
                offset + len
            )));
        }
        let rows = self.nodes[x.0].data.len() / last;
        let mut data = vec![T::zero(); rows * len];
        for r in 0..rows {
            data[r * len..(r + 1) * len]
                .copy_from_slice(&self.nodes[x.0].data[r * last + offset..r * last + offset + len]);
        }
        let mut oshape = shape[..shape.len() - 1].to_vec();
        oshape.push(len);
        let needs = self.nodes[x.0].needs_grad;
        let out = self.push(data, oshape, needs);
        self.ops.push(Op::SliceLast { x, out, offset, len, last });
        Ok(out)
    }

    /// Mean over the last dimension (the dimension is dropped).
    pub fn mean_lastdim(&mut self, x: Var) -> Result<Var> {
        let shape = self.nodes[x.0].shape.clone();
        let last = *shape.last().ok_or_else(|| Error::shape("mean on rank-0 tensor"))?;
        if last < 1 {
            return Err(Error::shape("mean last extent must be >= 1"));
        }
        let inv = T::one() / T::from_f64(last as f64);
        let data: Vec<T> = self.nodes[x.0]
            .data
            .chunks(last)
            .map(|row| {
                let mut s = T::zero();
                for &v in row {
                    s = s + v;
                }
                s * inv
            })
            .collect();
        let oshape = if shape.len() == 1 { vec![1] } else { shape[..shape.len() - 1].to_vec() };
        let needs = self.nodes[x.0].needs_grad;
        let out = self.push(data, oshape, needs);
        self.ops.push(Op::MeanLast { x, out, last });
        Ok(out)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let mut s = T::zero();
        for &v in &self.nodes[x.0].data {
            s = s + v;
        }
        let needs = self.nodes[x.0].needs_grad;
        let out = self.push(vec![s], vec![1], needs);
        self.ops.push(Op::SumAll { x, out });
        out
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.nodes[x.0].data.len() {
            return Err(Error::shape(format!(
                "reshape {:?} -> {:?}: element counts differ",
                self.nodes[x.0].shape, shape
            )));
        }
        let data = self.nodes[x.0].data.clone();
        let needs = self.nodes[x.0].needs_grad;
        let out = self.push(data, shape, needs);
        self.ops.push(Op::Passthrough { x, out });
        Ok(out)
    }

    /// Swap dims 1 and 2 of a rank-4 tensor: `[a, b, c, d] -> [a, c, b, d]`.
    pub fn transpose12(&mut self, x: Var) -> Result<Var> {
        let s = self.nodes[x.0].shape.clone();
        if s.len() != 4 {
            return Err(Error::shape(format!("transpose12 needs rank 4, got {:?}", s)));
        }
        let [d0, d1, d2, d3] = [s[0], s[1], s[2], s[3]];
        let xd = &self.nodes[x.0].data;
        let mut data = vec![T::zero(); xd.len()];
        for i0 in 0..d0 {
            for i1 in 0..d1 {
                for i2 in 0..d2 {
                    let src = ((i0 * d1 + i1) * d2 + i2) * d3;
                    let dst = ((i0 * d2 + i2) * d1 + i1) * d3;
                    data[dst..dst + d3].copy_from_slice(&xd[src..src + d3]);
                }
            }
        }
        let needs = self.nodes[x.0].needs_grad;
        let out = self.push(data, vec![d0, d2, d1, d3], needs);
        self.ops.push(Op::Transpose12 { x, out, dims: [d0, d1, d2, d3] });
        Ok(out)
    }

    /// `[rows, d] -> [rows, reps, d]` by repetition along a new middle axis.
    pub fn repeat_mid(&mut self, x: Var, reps: usize) -> Result<Var> {
        let s = self.nodes[x.0].shape.clone();
        if s.len() != 2 {
            return Err(Error::shape(format!("repeat_mid needs rank 2, got {:?}", s)));
        }
        let (rows, d) = (s[0], s[1]);
        let xd = &self.nodes[x.0].data;
        let mut data = vec![T::zero(); rows * reps * d];
        for r in 0..rows {
            let src = &xd[r * d..(r + 1) * d];
            for rep in 0..reps {
                let dst = (r * reps + rep) * d;
                data[dst..dst + d].copy_from_slice(src);
            }
        }
        let needs = self.nodes[x.0].needs_grad;
        let out = self.push(data, vec![rows, reps, d], needs);
        self.ops.push(Op::RepeatMid { x, out, reps, rowlen: d });
        Ok(out)
    }

    /// Row lookup `table[ids[i], :]`; backward scatter-adds into the table.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let s = self.nodes[table.0].shape.clone();
        if s.len() != 2 {
            return Err(Error::shape(format!("embedding table must be rank 2, got {:?}", s)));
        }
        let (vocab, dim) = (s[0], s[1]);
        let mut data = vec![T::zero(); ids.len() * dim];
        for (i, &id) in ids.iter().enumerate() {
            if id >= vocab {
                return Err(Error::shape(format!("embedding id {id} out of vocab {vocab}")));
            }
            data[i * dim..(i + 1) * dim]
                .copy_from_slice(&self.nodes[table.0].data[id * dim..(id + 1) * dim]);
        }
        let needs = self.nodes[table.0].needs_grad;
        let out = self.push(data, vec![ids.len(), dim], needs);
        self.ops.push(Op::Embedding { table, out, ids: ids.to_vec(), dim });
        Ok(out)
    }

    /// Decoupled 2-D rotary embedding on `[B, L, H, dk]`.
    ///
    /// `cos`/`sin` hold per-token angles of length `B*L*dk/2`: the first
    /// `dk/4` entries of each token rotate consecutive pairs of the first
    /// half (height axis), the remaining `dk/4` the second half (width axis).
    pub fn rope2d(&mut self, x: Var, cos: Vec<T>, sin: Vec<T>) -> Result<Var> {
        let s = self.nodes[x.0].shape.clone();
        if s.len() != 4 {
            return Err(Error::shape(format!("rope2d needs [B, L, H, dk], got {:?}", s)));
        }
        let [b, l, heads, dk] = [s[0], s[1], s[2], s[3]];
        if dk % 4 != 0 {
            return Err(Error::shape(format!("rope2d head_dim {dk} not divisible by 4")));
        }
        let half_pairs = dk / 2;
        if cos.len() != b * l * half_pairs || sin.len() != cos.len() {
            return Err(Error::shape(format!(
                "rope2d angle buffer length {} != B*L*dk/2 = {}",
                cos.len(),
                b * l * half_pairs
            )));
        }
        let mut data = self.nodes[x.0].data.clone();
        rope_apply(&mut data, &cos, &sin, b, l, heads, dk, false);
        let needs = self.nodes[x.0].needs_grad;
        let out = self.push(data, s, needs);
        self.ops.push(Op::Rope2d { x, out, cos, sin, head_dim: dk, heads });
        Ok(out)
    }

    /// Add a constant additive key mask `[B, Lk]` to scores `[B, H, Lq, Lk]`.
    pub fn add_key_mask(&mut self, scores: Var, mask: &[T]) -> Result<Var> {
        let s = self.nodes[scores.0].shape.clone();
        if s.len() != 4 {
            return Err(Error::shape(format!("add_key_mask needs [B, H, Lq, Lk], got {:?}", s)));
        }
        let [b, h, lq, lk] = [s[0], s[1], s[2], s[3]];
        if mask.len() != b * lk {
            return Err(Error::shape(format!(
                "key mask length {} != B*Lk = {}",
                mask.len(),
                b * lk
            )));
        }
        let xd = &self.nodes[scores.0].data;
        let mut data = vec![T::zero(); xd.len()];
        for bi in 0..b {
            let mrow = &mask[bi * lk..(bi + 1) * lk];
            for hq in 0..h * lq {
                let off = (bi * h * lq + hq) * lk;
                for j in 0..lk {
                    data[off + j] = xd[off + j] + mrow[j];
                }
            }
        }
        let needs = self.nodes[scores.0].needs_grad;
        let out = self.push(data, s, needs);
        self.ops.push(Op::Passthrough { x: scores, out });
        Ok(out)
    }

    /// Multiply each last-dim row by a per-row constant weight.
    pub fn scale_rows(&mut self, x: Var, w: Vec<T>) -> Result<Var> {
        let shape = self.nodes[x.0].shape.clone();
        let last = *shape.last().ok_or_else(|| Error::shape("scale_rows on rank-0 tensor"))?;
        let rows = self.nodes[x.0].data.len() / last;
        if w.len() != rows {
            return Err(Error::shape(format!(
                "scale_rows weight length {} != row count {rows}",
                w.len()
            )));
        }
        let xd = &self.nodes[x.0].data;
        let mut data = vec![T::zero(); xd.len()];
        for r in 0..rows {
            let wr = w[r];
            for j in 0..last {
                data[r * last + j] = xd[r * last + j] * wr;
            }
        }
        let needs = self.nodes[x.0].needs_grad;
        let out = self.push(data, shape, needs);
        self.ops.push(Op::ScaleRows { x, out, w, last });
        Ok(out)
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Each recorded op is visited exactly
    /// once; the op list is consumed.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::contract("tape already consumed by backward"));
        }
        if self.nodes[loss.0].data.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        self.consumed = true;
        self.grads[loss.0] = Some(vec![T::one()]);

        let ops = std::mem::take(&mut self.ops);
        for op in ops.iter().rev() {
            self.backward_op(op);
        }
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn add_grad(&mut self, v: Var, g: Vec<T>) {
        debug_assert_eq!(g.len(), self.nodes[v.0].data.len());
        match &mut self.grads[v.0] {
            Some(acc) => {
                for (a, gi) in acc.iter_mut().zip(g) {
                    *a = *a + gi;
                }
            }
            slot => *slot = Some(g),
        }
    }

    fn backward_op(&mut self, op: &Op<T>) {
        match op {
            Op::Matmul { a, b, out, batch, m, k, n, b_shared, transpose_b } => {
                let Some(go) = self.grads[out.0].clone() else { return };
                let (batch, m, k, n) = (*batch, *m, *k, *n);
                if self.needs(*a) {
                    let bd = &self.nodes[b.0].data;
                    let bstride = if *b_shared { 0 } else { k * n };
                    let mut ga = vec![T::zero(); batch * m * k];
                    if batch == 1 {
                        if *transpose_b {
                            // dA = dOut x B  (B stored [n, k])
                            kernels::matmul(&go, bd, &mut ga, m, n, k);
                        } else {
                            // dA = dOut x B^T (B stored [k, n])
                            kernels::matmul_tb(&go, bd, &mut ga, m, n, k);
                        }
                    } else {
                        let tb = *transpose_b;
                        kernels::for_each_batch(&mut ga, m * k, batch * m * k * n, |bi, ga_sl| {
                            let go_sl = &go[bi * m * n..(bi + 1) * m * n];
                            let b_sl = &bd[bi * bstride..bi * bstride + k * n];
                            if tb {
                                kernels::matmul_seq(go_sl, b_sl, ga_sl, m, n, k);
                            } else {
                                kernels::matmul_tb_seq(go_sl, b_sl, ga_sl, m, n, k);
                            }
                        });
                    }
                    self.add_grad(*a, ga);
                }
                if self.needs(*b) {
                    let ad = &self.nodes[a.0].data;
                    let blen = self.nodes[b.0].data.len();
                    let mut gb = vec![T::zero(); blen];
                    if *b_shared {
                        // fixed batch order accumulation into the shared buffer
                        for bi in 0..batch {
                            let go_sl = &go[bi * m * n..(bi + 1) * m * n];
                            let a_sl = &ad[bi * m * k..(bi + 1) * m * k];
                            if *transpose_b {
                                kernels::matmul_ta(go_sl, a_sl, &mut gb, m, n, k);
                            } else {
                                kernels::matmul_ta(a_sl, go_sl, &mut gb, m, k, n);
                            }
                        }
                    } else {
                        let tb = *transpose_b;
                        kernels::for_each_batch(&mut gb, k * n, batch * m * k * n, |bi, gb_sl| {
                            let go_sl = &go[bi * m * n..(bi + 1) * m * n];
                            let a_sl = &ad[bi * m * k..(bi + 1) * m * k];
                            if tb {
                                kernels::matmul_ta_seq(go_sl, a_sl, gb_sl, m, n, k);
                            } else {
                                kernels::matmul_ta_seq(a_sl, go_sl, gb_sl, m, k, n);
                            }
                        });
                    }
                    self.add_grad(*b, gb);
                }
            }
            Op::Add { a, b, out } => {
                let Some(go) = self.grads[out.0].clone() else { return };
                if self.needs(*a) {
                    self.add_grad(*a, go.clone());
                }
                if self.needs(*b) {
                    let nb = self.nodes[b.0].data.len();
                    let mut gb = vec![T::zero(); nb];
                    for (i, &g) in go.iter().enumerate() {
                        gb[i % nb] = gb[i % nb] + g;
                    }
                    self.add_grad(*b, gb);
                }
            }
            Op::Sub { a, b, out } => {
                let Some(go) = self.grads[out.0].clone() else { return };
                if self.needs(*a) {
                    self.add_grad(*a, go.clone());
                }
                if self.needs(*b) {
                    let nb = self.nodes[b.0].data.len();
                    let mut gb = vec![T::zero(); nb];
                    for (i, &g) in go.iter().enumerate() {
                        gb[i % nb] = gb[i % nb] - g;
                    }
                    self.add_grad(*b, gb);
                }
            }
            Op::Mul { a, b, out } => {
                let Some(go) = self.grads[out.0].clone() else { return };
                let nb = self.nodes[b.0].data.len();
                if self.needs(*a) {
                    let ga: Vec<T> = go
                        .iter()
                        .enumerate()
                        .map(|(i, &g)| g * self.nodes[b.0].data[i % nb])
                        .collect();
                    self.add_grad(*a, ga);
                }
                if self.needs(*b) {
                    let mut gb = vec![T::zero(); nb];
                    for (i, &g) in go.iter().enumerate() {
                        gb[i % nb] = gb[i % nb] + g * self.nodes[a.0].data[i];
                    }
                    self.add_grad(*b, gb);
                }
            }
            Op::Scale { x, c, out } => {
                let Some(go) = self.grads[out.0].clone() else { return };
                if self.needs(*x) {
                    self.add_grad(*x, go.iter().map(|&g| g * *c).collect());
                }
            }
            Op::Passthrough { x, out } => {
                let Some(go) = self.grads[out.0].clone() else { return };
                if self.needs(*x) {
                    self.add_grad(*x, go);
                }
            }
            Op::Silu { x, out } => {
                let Some(go) = self.grads[out.0].clone() else { return };
                if self.needs(*x) {
                    let gx: Vec<T> = go
                        .iter()
                        .zip(&self.nodes[x.0].data)
                        .map(|(&g, &v)| {
                            let s = T::one() / (T::one() + (-v).exp());
                            g * (s + v * s * (T::one() - s))
                        })
                        .collect();
                    self.add_grad(*x, gx);
                }
            }
            Op::SoftmaxLast { x, out, cols } => {
                let Some(go) = self.grads[out.0].clone() else { return };
                if self.needs(*x) {
                    let od = &self.nodes[out.0].data;
                    let mut gx = vec![T::zero(); od.len()];
                    for r in 0..od.len() / cols {
                        let base = r * cols;
                        let mut dot = T::zero();
                        for j in 0..*cols {
                            dot = dot + go[base + j] * od[base + j];
                        }
                        for j in 0..*cols {
                            gx[base + j] = od[base + j] * (go[base + j] - dot);
                        }
                    }
                    self.add_grad(*x, gx);
                }
            }
            Op::LayerNorm { x, gain, bias, out, dim, eps } => {
                let Some(go) = self.grads[out.0].clone() else { return };
                self.backward_layernorm(*x, *gain, *bias, &go, *dim, *eps);
            }
            Op::ConcatLast { parts, out, sizes, rows } => {
                let Some(go) = self.grads[out.0].clone() else { return };
                let total: usize = sizes.iter().sum();
                let mut off = 0;
                for (&p, &sz) in parts.iter().zip(sizes) {
                    if self.needs(p) {
                        let mut gp = vec![T::zero(); rows * sz];
                        for r in 0..*rows {
                            gp[r * sz..(r + 1) * sz]
                                .copy_from_slice(&go[r * total + off..r * total + off + sz]);
                        }
                        self.add_grad(p, gp);
                    }
                    off += sz;
                }
            }
            Op::SliceLast { x, out, offset, len, last } => {
                let Some(go) = self.grads[out.0].clone() else { return };
                if self.needs(*x) {
                    let rows = self.nodes[x.0].data.len() / last;
                    let mut gx = vec![T::zero(); rows * last];
                    for r in 0..rows {
                        gx[r * last + offset..r * last + offset + len]
                            .copy_from_slice(&go[r * len..(r + 1) * len]);
                    }
                    self.add_grad(*x, gx);
                }
            }
            Op::MeanLast { x, out, last } => {
                let Some(go) = self.grads[out.0].clone() else { return };
                if self.needs(*x) {
                    let inv = T::one() / T::from_f64(*last as f64);
                    let mut gx = vec![T::zero(); self.nodes[x.0].data.len()];
                    for (r, &g) in go.iter().enumerate() {
                        let gv = g * inv;
                        for j in 0..*last {
                            gx[r * last + j] = gv;
                        }
                    }
                    self.add_grad(*x, gx);
                }
            }
            Op::SumAll { x, out } => {
                let Some(go) = self.grads[out.0].clone() else { return };
                if self.needs(*x) {
                    self.add_grad(*x, vec![go[0]; self.nodes[x.0].data.len()]);
                }
            }
            Op::Transpose12 { x, out, dims } => {
                let Some(go) = self.grads[out.0].clone() else { return };
                if self.needs(*x) {
                    let [d0, d1, d2, d3] = *dims;
                    let mut gx = vec![T::zero(); go.len()];
                    // out has layout [d0, d2, d1, d3]; invert the swap.
                    for i0 in 0..d0 {
                        for i2 in 0..d2 {
                            for i1 in 0..d1 {
                                let src = ((i0 * d2 + i2) * d1 + i1) * d3;
                                let dst = ((i0 * d1 + i1) * d2 + i2) * d3;
                                gx[dst..dst + d3].copy_from_slice(&go[src..src + d3]);
                            }
                        }
                    }
                    self.add_grad(*x, gx);
                }
            }
            Op::RepeatMid { x, out, reps, rowlen } => {
                let Some(go) = self.grads[out.0].clone() else { return };
                if self.needs(*x) {
                    let rows = self.nodes[x.0].data.len() / rowlen;
                    let mut gx = vec![T::zero(); rows * rowlen];
                    for r in 0..rows {
                        for rep in 0..*reps {
                            let src = (r * reps + rep) * rowlen;
                            for j in 0..*rowlen {
                                gx[r * rowlen + j] = gx[r * rowlen + j] + go[src + j];
                            }
                        }
                    }
                    self.add_grad(*x, gx);
                }
            }
            Op::Embedding { table, out, ids, dim } => {
                let Some(go) = self.grads[out.0].clone() else { return };
                if self.needs(*table) {
                    let mut gt = vec![T::zero(); self.nodes[table.0].data.len()];
                    for (i, &id) in ids.iter().enumerate() {
                        for j in 0..*dim {
                            gt[id * dim + j] = gt[id * dim + j] + go[i * dim + j];
                        }
                    }
                    self.add_grad(*table, gt);
                }
            }
            Op::Rope2d { x, out, cos, sin, head_dim, heads } => {
                let Some(go) = self.grads[out.0].clone() else { return };
                if self.needs(*x) {
                    let s = &self.nodes[x.0].shape;
                    let (b, l) = (s[0], s[1]);
                    let mut gx = go;
                    rope_apply(&mut gx, cos, sin, b, l, *heads, *head_dim, true);
                    self.add_grad(*x, gx);
                }
            }
            Op::ScaleRows { x, out, w, last } => {
                let Some(go) = self.grads[out.0].clone() else { return };
                if self.needs(*x) {
                    let mut gx = vec![T::zero(); go.len()];
                    for (r, &wr) in w.iter().enumerate() {
                        for j in 0..*last {
                            gx[r * last + j] = go[r * last + j] * wr;
                        }
                    }
                    self.add_grad(*x, gx);
                }
            }
        }
    }

    fn backward_layernorm(
        &mut self,
        x: Var,
        gain: Option<Var>,
        bias: Option<Var>,
        go: &[T],
        dim: usize,
        eps: T,
    ) {
        let rows = self.nodes[x.0].data.len() / dim;
        let inv_n = T::one() / T::from_f64(dim as f64);
        let mut gx = if self.needs(x) { vec![T::zero(); rows * dim] } else { Vec::new() };
        let mut ggain =
            if gain.map(|g| self.needs(g)).unwrap_or(false) { vec![T::zero(); dim] } else { Vec::new() };
        let mut gbias =
            if bias.map(|b| self.needs(b)).unwrap_or(false) { vec![T::zero(); dim] } else { Vec::new() };

        for r in 0..rows {
            let xrow = &self.nodes[x.0].data[r * dim..(r + 1) * dim];
            let mut mean = T::zero();
            for &v in xrow {
                mean = mean + v;
            }
            mean = mean * inv_n;
            let mut var = T::zero();
            for &v in xrow {
                let d = v - mean;
                var = var + d * d;
            }
            var = var * inv_n;
            let rstd = T::one() / (var + eps).sqrt();

            let grow = &go[r * dim..(r + 1) * dim];
            // dxhat_j = go_j * gain_j
            let mut sum_dxhat = T::zero();
            let mut sum_dxhat_xhat = T::zero();
            for j in 0..dim {
                let xhat = (xrow[j] - mean) * rstd;
                let dxhat = match gain {
                    Some(g) => grow[j] * self.nodes[g.0].data[j],
                    None => grow[j],
                };
                sum_dxhat = sum_dxhat + dxhat;
                sum_dxhat_xhat = sum_dxhat_xhat + dxhat * xhat;
                if !ggain.is_empty() {
                    ggain[j] = ggain[j] + grow[j] * xhat;
                }
                if !gbias.is_empty() {
                    gbias[j] = gbias[j] + grow[j];
                }
            }
            if !gx.is_empty() {
                let mean_dxhat = sum_dxhat * inv_n;
                let mean_dxhat_xhat = sum_dxhat_xhat * inv_n;
                for j in 0..dim {
                    let xhat = (xrow[j] - mean) * rstd;
                    let dxhat = match gain {
                        Some(g) => grow[j] * self.nodes[g.0].data[j],
                        None => grow[j],
                    };
                    gx[r * dim + j] = rstd * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
                }
            }
        }
        if !gx.is_empty() {
            self.add_grad(x, gx);
        }
        if !ggain.is_empty() {
            self.add_grad(gain.expect("checked"), ggain);
        }
        if !gbias.is_empty() {
            self.add_grad(bias.expect("checked"), gbias);
        }
    }
}

/// In-place pairwise rotation. With `invert`, applies the transpose
/// (rotation by the negated angles).
#[allow(clippy::too_many_arguments)]
fn rope_apply<T: Scalar>(
    data: &mut [T],
    cos: &[T],
    sin: &[T],
    b: usize,
    l: usize,
    heads: usize,
    dk: usize,
    invert: bool,
) {
    let half_pairs = dk / 2;
    for bi in 0..b {
        for li in 0..l {
            let ang = (bi * l + li) * half_pairs;
            for h in 0..heads {
                let base = ((bi * l + li) * heads + h) * dk;
                for p in 0..half_pairs {
                    let (c, s) = (cos[ang + p], sin[ang + p]);
                    let s = if invert { -s } else { s };
                    // first dk/4 pairs live in the first half, rest in the second
                    let idx = if p < half_pairs / 2 { 2 * p } else { dk / 2 + 2 * (p - half_pairs / 2) };
                    let (x0, x1) = (data[base + idx], data[base + idx + 1]);
                    data[base + idx] = c * x0 - s * x1;
                    data[base + idx + 1] = s * x0 + c * x1;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor<T: Scalar>(shape: Vec<usize>, data: Vec<T>) -> Tensor<T> {
        Tensor::new(shape, data).unwrap().requires_grad()
    }

    #[test]
    fn matmul_identity_is_bitwise() {
        let mut tape = Tape::<f32>::new();
        let eye = tape.constant(vec![1.0, 0.0, 0.0, 1.0], vec![2, 2]);
        let a = tape.constant(vec![2.0, 3.0, 4.0, 5.0], vec![2, 2]);
        let left = tape.matmul(eye, a).unwrap();
        let right = tape.matmul(a, eye).unwrap();
        assert_eq!(tape.value(left), &[2.0, 3.0, 4.0, 5.0]);
        assert_eq!(tape.value(right), &[2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn matmul_hand_example() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(vec![1.0, 2.0], vec![1, 2]);
        let b = tape.constant(vec![3.0, 4.0], vec![2, 1]);
        let out = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(out), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::<f32>::new();
        let a = tape.constant(vec![0.0; 6], vec![2, 3]);
        let b = tape.constant(vec![0.0; 8], vec![4, 2]);
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn softmax_uniform_and_masked() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(vec![0.0, 0.0, 0.0], vec![1, 3]);
        let s = tape.softmax_lastdim(x).unwrap();
        for &v in tape.value(s) {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }

        let y = tape.constant(vec![0.0, f64::NEG_INFINITY], vec![1, 2]);
        let sy = tape.softmax_lastdim(y).unwrap();
        assert_eq!(tape.value(sy), &[1.0, 0.0]);

        let z = tape.constant(vec![f64::NEG_INFINITY, f64::NEG_INFINITY], vec![1, 2]);
        assert!(tape.softmax_lastdim(z).is_err());
    }

    #[test]
    fn softmax_reference_values() {
        // exp([1,2,3]) normalized, evaluated at high precision.
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(vec![1.0, 2.0, 3.0], vec![1, 3]);
        let s = tape.softmax_lastdim(x).unwrap();
        let expect = [0.09003057317038046, 0.24472847105479767, 0.6652409557748219];
        for (v, e) in tape.value(s).iter().zip(expect) {
            assert!((v - e).abs() < 1e-12);
        }
    }

    #[test]
    fn layernorm_constant_and_two_point() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(vec![1.0, 1.0, 1.0, 1.0], vec![1, 4]);
        let y = tape.layernorm(x, None, None, 1e-6).unwrap();
        for &v in tape.value(y) {
            assert!(v.abs() < 1e-3);
        }

        let x2 = tape.constant(vec![0.0, 2.0], vec![1, 2]);
        let y2 = tape.layernorm(x2, None, None, 1e-12).unwrap();
        assert!((tape.value(y2)[0] + 1.0).abs() < 1e-6);
        assert!((tape.value(y2)[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn silu_values() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(vec![0.0, 1.0], vec![2]);
        let y = tape.silu(x);
        assert_eq!(tape.value(y)[0], 0.0);
        assert!((tape.value(y)[1] - 0.7310585786300049).abs() < 1e-12);
    }

    #[test]
    fn concat_split_shapes() {
        let mut tape = Tape::<f32>::new();
        let a = tape.constant(vec![1.0, 2.0], vec![2]);
        let b = tape.constant(vec![3.0], vec![1]);
        let c = tape.concat_lastdim(&[a, b]).unwrap();
        assert_eq!(tape.shape(c), &[3]);
        assert_eq!(tape.value(c), &[1.0, 2.0, 3.0]);
        let parts = tape.split_lastdim(c, &[2, 1]).unwrap();
        assert_eq!(tape.value(parts[0]), &[1.0, 2.0]);
        assert_eq!(tape.value(parts[1]), &[3.0]);
    }

    #[test]
    fn backward_linear_case() {
        // loss = sum(w * x) -> grad(w) = x
        let w = tensor(vec![3], vec![2.0f64, -1.0, 0.5]);
        let mut tape = Tape::new();
        let wv = tape.leaf(&w);
        let xv = tape.constant(vec![10.0, 20.0, 30.0], vec![3]);
        let prod = tape.mul(wv, xv).unwrap();
        let loss = tape.sum_all(prod);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(wv).unwrap(), &[10.0, 20.0, 30.0]);
    }

    #[test]
    fn backward_quadratic_case() {
        // loss = sum(w^2) at w = [1, 2] -> grad = [2, 4]
        let w = tensor(vec![2], vec![1.0f64, 2.0]);
        let mut tape = Tape::new();
        let wv = tape.leaf(&w);
        let sq = tape.mul(wv, wv).unwrap();
        let loss = tape.sum_all(sq);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(wv).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_two_consumers_accumulates() {
        // out = 2a + 3a -> da = 5
        let a = tensor(vec![1], vec![1.0f64]);
        let mut tape = Tape::new();
        let av = tape.leaf(&a);
        let x = tape.scale(av, 2.0);
        let y = tape.scale(av, 3.0);
        let s = tape.add(x, y).unwrap();
        let loss = tape.sum_all(s);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(av).unwrap(), &[5.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let a = tensor(vec![2], vec![1.0f64, 2.0]);
        let mut tape = Tape::new();
        let av = tape.leaf(&a);
        assert!(tape.backward(av).is_err());
    }

    #[test]
    fn transpose12_roundtrip() {
        let mut tape = Tape::<f32>::new();
        let data: Vec<f32> = (0..24).map(|i| i as f32).collect();
        let x = tape.constant(data.clone(), vec![2, 3, 2, 2]);
        let t = tape.transpose12(x).unwrap();
        let back = tape.transpose12(t).unwrap();
        assert_eq!(tape.value(back), &data[..]);
        assert_eq!(tape.shape(t), &[2, 2, 3, 2]);
    }

    #[test]
    fn repeat_mid_and_mean() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(vec![1.0, 2.0], vec![1, 2]);
        let r = tape.repeat_mid(x, 3).unwrap();
        assert_eq!(tape.shape(r), &[1, 3, 2]);
        assert_eq!(tape.value(r), &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let m = tape.mean_lastdim(r).unwrap();
        assert_eq!(tape.value(m), &[1.5, 1.5, 1.5]);
    }

    #[test]
    fn embedding_lookup_and_scatter() {
        let table = tensor(vec![3, 2], vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let mut tape = Tape::new();
        let tv = tape.leaf(&table);
        let e = tape.embedding(tv, &[2, 0, 2]).unwrap();
        assert_eq!(tape.value(e), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        let loss = tape.sum_all(e);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(tv).unwrap(), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
    }
}
