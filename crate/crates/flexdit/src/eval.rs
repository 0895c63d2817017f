//! Evaluation: fixed-protocol masked validation loss, per-class pixel
//! statistics against generator references, and energy distance on pooled
//! downsamples.

use crate::autodiff::Tape;
use crate::data::{
    channel_stats, class_reference_stats, pack_batch, stat_distance, DatasetSpec, ImageSample,
};
use crate::error::Result;
use crate::model::patch::patchify;
use crate::model::{ForwardCtx, Model, TokenBatch};
use crate::rope::RopeTable;
use crate::sample::{sample_images, SamplerSetup};
use crate::tensor::{Scalar, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Frozen validation protocol: interpolated inputs with fixed timesteps and
/// fixed noise, so losses are comparable across models and training stages.
pub struct ValSet {
    batches: Vec<ValBatch>,
}

struct ValBatch {
    xt: TokenBatch<f32>,
    labels: Vec<usize>,
    t: Vec<f32>,
    target: Vec<f32>,
}

impl ValSet {
    /// Build from clean samples: item `i` gets `t` from a deterministic
    /// uniform grid over (0, 1) and noise from the seed.
    pub fn build(
        samples: &[ImageSample],
        patch: usize,
        l_max: usize,
        batch_size: usize,
        seed: u64,
    ) -> Result<ValSet> {
        Self::build_with_range(samples, patch, l_max, batch_size, seed, (0.05, 0.95))
    }

    /// Mid-schedule variant: the `t` grid covers only the middle of the
    /// interval, where velocity prediction is hardest (the region timestep
    /// samplers fight over).
    pub fn build_mid(
        samples: &[ImageSample],
        patch: usize,
        l_max: usize,
        batch_size: usize,
        seed: u64,
    ) -> Result<ValSet> {
        Self::build_with_range(samples, patch, l_max, batch_size, seed, (0.2, 0.8))
    }

    fn build_with_range(
        samples: &[ImageSample],
        patch: usize,
        l_max: usize,
        batch_size: usize,
        seed: u64,
        (t_lo, t_hi): (f64, f64),
    ) -> Result<ValSet> {
        let mut batches = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = samples.len();
        for (chunk_idx, chunk) in samples.chunks(batch_size).enumerate() {
            let items: Vec<_> = chunk
                .iter()
                .map(|s| patchify(&s.latent, patch).map(|pt| (pt, s.label)))
                .collect::<Result<_>>()?;
            let (clean, labels) = pack_batch(&items, l_max)?;
            let b = clean.batch_size();
            let td = clean.token_dim();
            let t: Vec<f32> = (0..b)
                .map(|i| {
                    let global = chunk_idx * batch_size + i;
                    (t_lo + (t_hi - t_lo) * (global as f64 / n.max(1) as f64)) as f32
                })
                .collect();
            let mut xt = clean.clone();
            let mut target = vec![0.0f32; b * l_max * td];
            for (i, &ti) in t.iter().enumerate().take(b) {
                for p in 0..clean.lens[i] {
                    let off = (i * l_max + p) * td;
                    for c in 0..td {
                        let x1 = clean.tokens.data()[off + c];
                        let x0 = f32::sample_standard_normal(&mut rng);
                        xt.tokens.data_mut()[off + c] = ti * x1 + (1.0 - ti) * x0;
                        target[off + c] = x1 - x0;
                    }
                }
            }
            batches.push(ValBatch { xt, labels, t, target });
        }
        Ok(ValSet { batches })
    }

    /// Masked mean-squared velocity error over the whole set.
    pub fn loss(&self, model: &Model<f32>, rope: &RopeTable) -> Result<f64> {
        let mut total = 0.0f64;
        let mut weight = 0.0f64;
        for vb in &self.batches {
            let mut tape = Tape::new();
            let pass =
                model.forward(&mut tape, &vb.xt, &vb.t, &vb.labels, &ForwardCtx::new(rope))?;
            let v = tape.value(pass.velocity);
            let td = vb.xt.token_dim();
            let l_max = vb.xt.l_max();
            let mut sq = 0.0f64;
            let mut count = 0usize;
            for i in 0..vb.xt.batch_size() {
                for p in 0..vb.xt.lens[i] {
                    let off = (i * l_max + p) * td;
                    for c in 0..td {
                        let d = (v[off + c] - vb.target[off + c]) as f64;
                        sq += d * d;
                    }
                    count += td;
                }
            }
            total += sq;
            weight += count as f64;
        }
        Ok(total / weight)
    }
}

/// Average-pool a latent to a fixed `[C, gh, gw]` grid and flatten (makes
/// variable-resolution samples comparable).
pub fn pooled_flat(latent: &Tensor<f32>, gh: usize, gw: usize) -> Vec<f64> {
    let s = latent.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let mut out = vec![0.0f64; c * gh * gw];
    for ci in 0..c {
        for oy in 0..gh {
            let y0 = oy * h / gh;
            let y1 = ((oy + 1) * h / gh).max(y0 + 1).min(h);
            for ox in 0..gw {
                let x0 = ox * w / gw;
                let x1 = ((ox + 1) * w / gw).max(x0 + 1).min(w);
                let mut acc = 0.0f64;
                for y in y0..y1 {
                    for x in x0..x1 {
                        acc += latent.data()[ci * h * w + y * w + x] as f64;
                    }
                }
                out[ci * gh * gw + oy * gw + ox] = acc / ((y1 - y0) * (x1 - x0)) as f64;
            }
        }
    }
    out
}

/// Energy distance between two point clouds:
/// `2 E|X-Y| - E|X-X'| - E|Y-Y'|`.
pub fn energy_distance(xs: &[Vec<f64>], ys: &[Vec<f64>]) -> f64 {
    fn mean_cross(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        let total: f64 = a
            .par_iter()
            .map(|x| {
                let mut acc = 0.0;
                for y in b {
                    let mut d = 0.0;
                    for (xi, yi) in x.iter().zip(y) {
                        let t = xi - yi;
                        d += t * t;
                    }
                    acc += d.sqrt();
                }
                acc
            })
            .sum();
        total / (a.len() * b.len()) as f64
    }
    2.0 * mean_cross(xs, ys) - mean_cross(xs, xs) - mean_cross(ys, ys)
}

/// Per-class statistic distance of generated samples against generator
/// references at one grid.
pub struct ClassEval {
    pub class: usize,
    pub stat_distance: f64,
}

/// Generate `per_class` images for every class at `grid` and compare pooled
/// channel statistics with fresh reference draws at the same resolution.
#[allow(clippy::too_many_arguments)]
pub fn eval_generation(
    model: &Model<f32>,
    setup: &SamplerSetup,
    spec: &DatasetSpec,
    grid: (usize, usize),
    patch: usize,
    per_class: usize,
    ref_count: usize,
    seed: u64,
) -> Result<Vec<ClassEval>> {
    let resolution = (grid.0 * patch, grid.1 * patch);
    let mut out = Vec::new();
    for class in 0..spec.classes {
        let labels = vec![class; per_class];
        let (images, _) = sample_images(model, setup, grid, &labels, seed ^ (class as u64) << 8)?;
        let gen_stats = channel_stats(&images);
        let ref_stats = class_reference_stats(spec, class, resolution, ref_count, seed ^ 0x7777);
        out.push(ClassEval { class, stat_distance: stat_distance(&gen_stats, &ref_stats) });
    }
    Ok(out)
}

/// Mean statistic distance across classes (the scalar used for
/// method-vs-method comparisons).
pub fn mean_distance(evals: &[ClassEval]) -> f64 {
    evals.iter().map(|e| e.stat_distance).sum::<f64>() / evals.len() as f64
}
