//! Hot inner loops for matrix products.
//!
//! Every kernel writes each output element from exactly one thread with a
//! fixed summation order, so results are bitwise reproducible regardless of
//! thread count. Dot products accumulate into a fixed 8-lane array (enables
//! SIMD without changing the reduction order between runs).

use crate::tensor::Scalar;
use rayon::prelude::*;

/// Below this many multiply-adds the rayon dispatch overhead dominates.
const PAR_THRESHOLD: usize = 256 * 1024;

const LANES: usize = 8;

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::zero(); LANES];
    let chunks = a.len() / LANES;
    for c in 0..chunks {
        let ao = &a[c * LANES..(c + 1) * LANES];
        let bo = &b[c * LANES..(c + 1) * LANES];
        for l in 0..LANES {
            lanes[l] = lanes[l] + ao[l] * bo[l];
        }
    }
    let mut acc = T::zero();
    for l in lanes {
        acc = acc + l;
    }
    for i in chunks * LANES..a.len() {
        acc = acc + a[i] * b[i];
    }
    acc
}

#[inline]
fn matmul_row<T: Scalar>(a_row: &[T], b: &[T], out_row: &mut [T], n: usize) {
    for (kk, &aik) in a_row.iter().enumerate() {
        let b_row = &b[kk * n..(kk + 1) * n];
        for (o, &bv) in out_row.iter_mut().zip(b_row) {
            *o = *o + aik * bv;
        }
    }
}

/// out[m,n] += a[m,k] * b[k,n]
pub fn matmul<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    if m * k * n >= PAR_THRESHOLD && m > 1 {
        out.par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, row)| matmul_row(&a[i * k..(i + 1) * k], b, row, n));
    } else {
        matmul_seq(a, b, out, m, k, n);
    }
}

pub fn matmul_seq<T: Scalar>(a: &[T], b: &[T], out: &mut [T], _m: usize, k: usize, n: usize) {
    for (i, row) in out.chunks_mut(n).enumerate() {
        matmul_row(&a[i * k..(i + 1) * k], b, row, n);
    }
}

#[inline]
fn matmul_tb_row<T: Scalar>(a_row: &[T], b: &[T], out_row: &mut [T], k: usize) {
    for (j, o) in out_row.iter_mut().enumerate() {
        *o = *o + dot(a_row, &b[j * k..(j + 1) * k]);
    }
}

/// out[m,n] += a[m,k] * b[n,k]^T  (dot-product form; b rows are contiguous)
pub fn matmul_tb<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    if m * k * n >= PAR_THRESHOLD && m > 1 {
        out.par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, row)| matmul_tb_row(&a[i * k..(i + 1) * k], b, row, k));
    } else {
        matmul_tb_seq(a, b, out, m, k, n);
    }
}

pub fn matmul_tb_seq<T: Scalar>(a: &[T], b: &[T], out: &mut [T], _m: usize, k: usize, n: usize) {
    for (i, row) in out.chunks_mut(n).enumerate() {
        matmul_tb_row(&a[i * k..(i + 1) * k], b, row, k);
    }
}

#[inline]
fn matmul_ta_row<T: Scalar>(a: &[T], b: &[T], kk: usize, out_row: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let aik = a[i * k + kk];
        let b_row = &b[i * n..(i + 1) * n];
        for (o, &bv) in out_row.iter_mut().zip(b_row) {
            *o = *o + aik * bv;
        }
    }
}

/// out[k,n] += a[m,k]^T * b[m,n]  (the dB kernel; parallel over rows of out)
pub fn matmul_ta<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    if m * k * n >= PAR_THRESHOLD && k > 1 {
        out.par_chunks_mut(n)
            .enumerate()
            .for_each(|(kk, row)| matmul_ta_row(a, b, kk, row, m, k, n));
    } else {
        matmul_ta_seq(a, b, out, m, k, n);
    }
}

pub fn matmul_ta_seq<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for (kk, row) in out.chunks_mut(n).enumerate() {
        matmul_ta_row(a, b, kk, row, m, k, n);
    }
}

/// Run `body(batch_index, out_chunk)` over equally sized output chunks,
/// in parallel when the total work is large enough.
pub fn for_each_batch<T: Scalar, F>(out: &mut [T], chunk: usize, total_work: usize, body: F)
where
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    let batches = out.len() / chunk.max(1);
    if total_work >= PAR_THRESHOLD && batches > 1 {
        out.par_chunks_mut(chunk).enumerate().for_each(|(bi, o)| body(bi, o));
    } else {
        for (bi, o) in out.chunks_mut(chunk).enumerate() {
            body(bi, o);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for kk in 0..k {
                    out[i * n + j] += a[i * k + kk] * b[kk * n + j];
                }
            }
        }
        out
    }

    #[test]
    fn kernels_agree_with_naive() {
        let (m, k, n) = (7, 13, 9);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64) * 0.3 - 2.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64) * 0.1 - 1.0).collect();
        let expect = naive(&a, &b, m, k, n);

        let mut out = vec![0.0; m * n];
        matmul(&a, &b, &mut out, m, k, n);
        for (x, y) in out.iter().zip(&expect) {
            assert!((x - y).abs() < 1e-12);
        }

        // b^T layout: bt[n,k]
        let mut bt = vec![0.0; n * k];
        for kk in 0..k {
            for j in 0..n {
                bt[j * k + kk] = b[kk * n + j];
            }
        }
        let mut out2 = vec![0.0; m * n];
        matmul_tb(&a, &bt, &mut out2, m, k, n);
        for (x, y) in out2.iter().zip(&expect) {
            assert!((x - y).abs() < 1e-12);
        }

        // a^T form: out[k,n] = a^T[k,m] * b2[m,n]
        let b2: Vec<f64> = (0..m * n).map(|i| (i as f64) * 0.2).collect();
        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for kk in 0..k {
                at[kk * m + i] = a[i * k + kk];
            }
        }
        let expect3 = naive(&at, &b2, k, m, n);
        let mut out3 = vec![0.0; k * n];
        matmul_ta(&a, &b2, &mut out3, m, k, n);
        for (x, y) in out3.iter().zip(&expect3) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn parallel_path_matches_sequential_bitwise() {
        // Large enough to take the rayon path.
        let (m, k, n) = (128, 64, 64);
        let a: Vec<f32> = (0..m * k).map(|i| ((i * 2654435761_usize) % 1000) as f32 * 1e-3).collect();
        let b: Vec<f32> = (0..k * n).map(|i| ((i * 40503_usize) % 1000) as f32 * 1e-3 - 0.5).collect();
        let mut par = vec![0.0f32; m * n];
        let mut seq = vec![0.0f32; m * n];
        matmul(&a, &b, &mut par, m, k, n);
        matmul_seq(&a, &b, &mut seq, m, k, n);
        assert_eq!(par, seq);
    }
}
