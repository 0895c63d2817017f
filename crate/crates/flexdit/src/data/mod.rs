//! Synthetic multi-resolution dataset, preprocessing, and batch packing.
//!
//! At this scale images are latents directly: `C`-channel float arrays at
//! small extents. Classes are colored rectangles on noise-textured
//! backgrounds; per-class channel statistics are strong enough to separate
//! a trained sampler from an untrained one.

pub mod io;
pub mod preprocess;

pub use preprocess::{
    center_crop, mixed_preprocess, resize_bilinear, resize_to_budget, PreprocessBranch,
    PreprocessMode, PreprocessPolicy,
};

use crate::error::{Error, Result};
use crate::flow::BatchSource;
use crate::model::patch::{patchify, position_grid, PatchTokens};
use crate::model::TokenBatch;
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One latent image with its class label.
#[derive(Clone)]
pub struct ImageSample {
    /// `[C, H, W]`
    pub latent: Tensor<f32>,
    pub label: usize,
    pub source_size: (usize, usize),
}

/// Generator description; fully determines the dataset given the seed.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub classes: usize,
    pub channels: usize,
    pub count: usize,
    pub seed: u64,
    /// `(h, w, weight)` resolution distribution.
    pub resolutions: Vec<(usize, usize, f64)>,
    pub bg_noise: f64,
    pub fg_noise: f64,
}

impl DatasetSpec {
    /// Defaults mirror the training setup: multiple aspect ratios
    /// (1:1, 1:2, 1:3) under a 64-token budget at patch 2.
    pub fn toy(classes: usize, count: usize, seed: u64) -> Self {
        DatasetSpec {
            classes,
            channels: 4,
            count,
            seed,
            resolutions: vec![
                (16, 16, 0.4),
                (10, 20, 0.25),
                (6, 18, 0.2),
                (12, 12, 0.15),
            ],
            bg_noise: 0.3,
            fg_noise: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.channels == 0 || self.count == 0 {
            return Err(Error::config("classes, channels and count must be positive"));
        }
        if self.resolutions.is_empty() {
            return Err(Error::config("at least one resolution entry required"));
        }
        if self.resolutions.iter().any(|&(h, w, wt)| h == 0 || w == 0 || wt <= 0.0) {
            return Err(Error::config("resolution entries must have positive extents and weights"));
        }
        Ok(())
    }
}

/// Per-class rectangle color in channel space: strong positive on channel
/// `k mod C`, mild negative on the next channel.
pub fn class_signature(class: usize, channels: usize) -> Vec<f32> {
    let mut sig = vec![0.0f32; channels];
    sig[class % channels] = 1.5;
    sig[(class + 1) % channels] = -0.5;
    sig
}

fn mix_seed(seed: u64, idx: u64) -> u64 {
    let mut z = seed ^ idx.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn draw_resolution<R: Rng + ?Sized>(spec: &DatasetSpec, rng: &mut R) -> (usize, usize) {
    let total: f64 = spec.resolutions.iter().map(|r| r.2).sum();
    let mut u = rng.gen::<f64>() * total;
    for &(h, w, wt) in &spec.resolutions {
        if u < wt {
            return (h, w);
        }
        u -= wt;
    }
    let last = spec.resolutions.last().unwrap();
    (last.0, last.1)
}

/// Draw one sample of a given class at a given resolution.
pub fn generate_sample_at<R: Rng + ?Sized>(
    spec: &DatasetSpec,
    class: usize,
    (h, w): (usize, usize),
    rng: &mut R,
) -> ImageSample {
    let c = spec.channels;
    let sig = class_signature(class, c);
    let mut data = vec![0.0f32; c * h * w];
    for v in data.iter_mut() {
        *v = rng.gen::<f32>() * 2.0 * spec.bg_noise as f32 - spec.bg_noise as f32;
    }
    // axis-aligned rectangle covering a large fraction of the frame
    let rh = ((h as f64 * rng.gen_range(0.4..0.75)).round() as usize).clamp(1, h);
    let rw = ((w as f64 * rng.gen_range(0.4..0.75)).round() as usize).clamp(1, w);
    let y0 = rng.gen_range(0..=h - rh);
    let x0 = rng.gen_range(0..=w - rw);
    for ci in 0..c {
        for y in y0..y0 + rh {
            for x in x0..x0 + rw {
                let noise = rng.gen::<f32>() * 2.0 * spec.fg_noise as f32 - spec.fg_noise as f32;
                data[ci * h * w + y * w + x] = sig[ci] + noise;
            }
        }
    }
    ImageSample {
        latent: Tensor::new(vec![c, h, w], data).expect("sized above"),
        label: class,
        source_size: (h, w),
    }
}

/// Deterministic sample `idx` of the dataset (classes round-robin,
/// resolution drawn from the spec distribution).
pub fn generate_sample(spec: &DatasetSpec, idx: usize) -> ImageSample {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, idx as u64));
    let class = idx % spec.classes;
    let res = draw_resolution(spec, &mut rng);
    generate_sample_at(spec, class, res, &mut rng)
}

/// Materialize the whole dataset.
pub fn synth_dataset(spec: &DatasetSpec) -> Result<Vec<ImageSample>> {
    spec.validate()?;
    Ok((0..spec.count).map(|i| generate_sample(spec, i)).collect())
}

/// Row-major `(h, w)` position list for a token grid.
pub fn position_map(h_tokens: usize, w_tokens: usize) -> Vec<[f64; 2]> {
    position_grid(h_tokens, w_tokens)
}

/// Pack per-image token lists into a padded batch: zero padding tokens,
/// `-inf` additive mask at padding, zero positions at padding.
pub fn pack_batch(items: &[(PatchTokens<f32>, usize)], l_max: usize) -> Result<(TokenBatch<f32>, Vec<usize>)> {
    if items.is_empty() {
        return Err(Error::data("pack_batch: empty batch"));
    }
    let td = items[0].0.tokens.shape()[1];
    let b = items.len();
    let mut tokens = vec![0.0f32; b * l_max * td];
    let mut positions = vec![[0.0f64, 0.0]; b * l_max];
    let mut mask = vec![f32::NEG_INFINITY; b * l_max];
    let mut grids = Vec::with_capacity(b);
    let mut lens = Vec::with_capacity(b);
    let mut labels = Vec::with_capacity(b);
    for (i, (pt, label)) in items.iter().enumerate() {
        let l = pt.tokens.shape()[0];
        if pt.tokens.shape()[1] != td {
            return Err(Error::shape(format!(
                "sample {i}: token dim {} != {td}",
                pt.tokens.shape()[1]
            )));
        }
        if l > l_max {
            return Err(Error::data(format!(
                "sample {i}: {l} tokens exceed the budget L_max = {l_max}"
            )));
        }
        tokens[(i * l_max) * td..(i * l_max + l) * td].copy_from_slice(pt.tokens.data());
        positions[i * l_max..i * l_max + l].copy_from_slice(&pt.positions);
        for m in mask.iter_mut().skip(i * l_max).take(l) {
            *m = 0.0;
        }
        grids.push(pt.grid);
        lens.push(l);
        labels.push(*label);
    }
    let batch = TokenBatch {
        tokens: Tensor::new(vec![b, l_max, td], tokens)?,
        positions,
        mask,
        grids,
        lens,
    };
    batch.validate()?;
    Ok((batch, labels))
}

/// Recover the per-item token lists from a packed batch (inverse of
/// [`pack_batch`] on the valid region).
pub fn unpack_batch(batch: &TokenBatch<f32>) -> Vec<Tensor<f32>> {
    let l_max = batch.l_max();
    let td = batch.token_dim();
    batch
        .lens
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let start = i * l_max * td;
            Tensor::new(vec![l, td], batch.tokens.data()[start..start + l * td].to_vec())
                .expect("sized by construction")
        })
        .collect()
}

/// Preprocessed, patchified dataset ready for training.
pub struct TokenDataset {
    pub items: Vec<(PatchTokens<f32>, usize)>,
    pub l_max: usize,
    pub token_dim: usize,
    /// Samples dropped as smaller than one patch.
    pub skipped: usize,
}

impl TokenDataset {
    /// Apply the policy to every sample and patchify the survivors.
    pub fn prepare(
        samples: &[ImageSample],
        policy: &PreprocessPolicy,
        seed: u64,
    ) -> Result<TokenDataset> {
        policy.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut items = Vec::with_capacity(samples.len());
        let mut skipped = 0usize;
        for s in samples {
            let processed = match policy.mode {
                PreprocessMode::Flexible => resize_to_budget(s, policy.token_budget, policy.patch)?,
                PreprocessMode::Mixed => mixed_preprocess(s, policy, &mut rng)?.0,
            };
            match processed {
                Some(p) => {
                    let pt = patchify(&p.latent, policy.patch)?;
                    items.push((pt, p.label));
                }
                None => skipped += 1,
            }
        }
        if items.is_empty() {
            return Err(Error::data("no samples survived preprocessing"));
        }
        let token_dim = items[0].0.tokens.shape()[1];
        Ok(TokenDataset { items, l_max: policy.token_budget, token_dim, skipped })
    }
}

impl BatchSource for TokenDataset {
    fn sample_batch(
        &self,
        rng: &mut ChaCha8Rng,
        batch_size: usize,
    ) -> Result<(TokenBatch<f32>, Vec<usize>)> {
        let picks: Vec<&(PatchTokens<f32>, usize)> = (0..batch_size)
            .map(|_| &self.items[rng.gen_range(0..self.items.len())])
            .collect();
        let owned: Vec<(PatchTokens<f32>, usize)> = picks
            .into_iter()
            .map(|(pt, l)| {
                (
                    PatchTokens {
                        tokens: pt.tokens.clone(),
                        grid: pt.grid,
                        positions: pt.positions.clone(),
                    },
                    *l,
                )
            })
            .collect();
        pack_batch(&owned, self.l_max)
    }
}

/// Pooled per-pixel channel statistics over a set of latents:
/// channel means and the `C x C` covariance.
pub fn channel_stats(samples: &[Tensor<f32>]) -> (Vec<f64>, Vec<f64>) {
    assert!(!samples.is_empty());
    let c = samples[0].shape()[0];
    let mut mean = vec![0.0f64; c];
    let mut count = 0usize;
    for s in samples {
        let (h, w) = (s.shape()[1], s.shape()[2]);
        for (ci, m) in mean.iter_mut().enumerate() {
            for p in 0..h * w {
                *m += s.data()[ci * h * w + p] as f64;
            }
        }
        count += h * w;
    }
    for m in mean.iter_mut() {
        *m /= count as f64;
    }
    let mut cov = vec![0.0f64; c * c];
    for s in samples {
        let (h, w) = (s.shape()[1], s.shape()[2]);
        for p in 0..h * w {
            for ci in 0..c {
                let di = s.data()[ci * h * w + p] as f64 - mean[ci];
                for cj in 0..c {
                    let dj = s.data()[cj * h * w + p] as f64 - mean[cj];
                    cov[ci * c + cj] += di * dj;
                }
            }
        }
    }
    for v in cov.iter_mut() {
        *v /= count as f64;
    }
    (mean, cov)
}

/// Distance between two (mean, covariance) summaries:
/// `||dmu||_2 + ||dSigma||_F`.
pub fn stat_distance(a: &(Vec<f64>, Vec<f64>), b: &(Vec<f64>, Vec<f64>)) -> f64 {
    let dm: f64 = a.0.iter().zip(&b.0).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let dc: f64 = a.1.iter().zip(&b.1).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    dm + dc
}

/// Monte-Carlo reference statistics for one class at one resolution.
pub fn class_reference_stats(
    spec: &DatasetSpec,
    class: usize,
    resolution: (usize, usize),
    n: usize,
    seed: u64,
) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed ^ 0xABCD_EF01, seed));
    let samples: Vec<Tensor<f32>> = (0..n)
        .map(|_| generate_sample_at(spec, class, resolution, &mut rng).latent)
        .collect();
    channel_stats(&samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generator_is_deterministic() {
        let spec = DatasetSpec::toy(4, 8, 33);
        let a = synth_dataset(&spec).unwrap();
        let b = synth_dataset(&spec).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.latent.data(), y.latent.data());
            assert_eq!(x.label, y.label);
        }
    }

    #[test]
    fn class_zero_is_red_dominant() {
        // the class-0 rectangle pushes channel 0 well above channel 1
        let spec = DatasetSpec::toy(4, 64, 7);
        let samples = synth_dataset(&spec).unwrap();
        let class0: Vec<Tensor<f32>> =
            samples.iter().filter(|s| s.label == 0).map(|s| s.latent.clone()).collect();
        let (mean, _) = channel_stats(&class0);
        assert!(mean[0] > mean[1] + 0.3, "channel means {mean:?}");
    }

    #[test]
    fn resolution_histogram_matches_spec() {
        let spec = DatasetSpec::toy(4, 10_000, 99);
        let samples = synth_dataset(&spec).unwrap();
        let total_w: f64 = spec.resolutions.iter().map(|r| r.2).sum();
        for &(h, w, wt) in &spec.resolutions {
            let got = samples
                .iter()
                .filter(|s| s.latent.shape()[1] == h && s.latent.shape()[2] == w)
                .count() as f64
                / spec.count as f64;
            let expect = wt / total_w;
            assert!((got - expect).abs() < 0.02, "{h}x{w}: {got} vs {expect}");
        }
    }

    #[test]
    fn position_map_examples() {
        assert_eq!(position_map(1, 1), vec![[0.0, 0.0]]);
        assert_eq!(
            position_map(2, 3),
            vec![[0.0, 0.0], [0.0, 1.0], [0.0, 2.0], [1.0, 0.0], [1.0, 1.0], [1.0, 2.0]]
        );
        // length and distinctness at small sizes
        for h in 1..5 {
            for w in 1..5 {
                let m = position_map(h, w);
                assert_eq!(m.len(), h * w);
                let mut seen = std::collections::HashSet::new();
                for p in &m {
                    assert!(seen.insert((p[0] as i64, p[1] as i64)));
                }
            }
        }
    }

    #[test]
    fn pack_batch_example_and_roundtrip() {
        use crate::model::patch::patchify;
        let spec = DatasetSpec::toy(4, 2, 5);
        // one 20x40 latent (200 tokens at p=2) and one full 16x32 (256 th...)
        let a = generate_sample_at(&spec, 0, (20, 40), &mut ChaCha8Rng::seed_from_u64(1));
        let b = generate_sample_at(&spec, 1, (32, 32), &mut ChaCha8Rng::seed_from_u64(2));
        let pa = patchify(&a.latent, 2).unwrap();
        let pb = patchify(&b.latent, 2).unwrap();
        let items = vec![(pa, 0usize), (pb, 1usize)];
        let (batch, labels) = pack_batch(&items, 256).unwrap();
        assert_eq!(labels, vec![0, 1]);
        assert_eq!(batch.lens, vec![200, 256]);
        // 56 pads on the first row, none on the second
        let pads0 = batch.mask[..256].iter().filter(|&&m| m == f32::NEG_INFINITY).count();
        let pads1 = batch.mask[256..].iter().filter(|&&m| m == f32::NEG_INFINITY).count();
        assert_eq!((pads0, pads1), (56, 0));

        // valid token values survive bitwise; pads are exactly zero
        let unpacked = unpack_batch(&batch);
        assert_eq!(unpacked[0].data(), items[0].0.tokens.data());
        assert_eq!(unpacked[1].data(), items[1].0.tokens.data());
        let td = batch.token_dim();
        for p in 200..256 {
            for c in 0..td {
                assert_eq!(batch.tokens.data()[(p) * td + c], 0.0);
            }
        }

        // oversize sample is named in the error
        let big = patchify(&generate_sample_at(&spec, 0, (40, 40), &mut ChaCha8Rng::seed_from_u64(3)).latent, 2).unwrap();
        let err = pack_batch(&[(big, 0)], 256).unwrap_err().to_string();
        assert!(err.contains("sample 0"), "{err}");
    }

    #[test]
    fn position_map_agrees_with_patchify() {
        let spec = DatasetSpec::toy(4, 1, 6);
        let s = generate_sample_at(&spec, 2, (10, 20), &mut ChaCha8Rng::seed_from_u64(4));
        let pt = crate::model::patch::patchify(&s.latent, 2).unwrap();
        assert_eq!(pt.positions, position_map(5, 10));
    }

    #[test]
    fn reference_stats_separate_classes() {
        let spec = DatasetSpec::toy(4, 1, 8);
        let s0 = class_reference_stats(&spec, 0, (16, 16), 64, 1);
        let s1 = class_reference_stats(&spec, 1, (16, 16), 64, 2);
        let s0b = class_reference_stats(&spec, 0, (16, 16), 64, 3);
        let same = stat_distance(&s0, &s0b);
        let diff = stat_distance(&s0, &s1);
        assert!(diff > 5.0 * same, "same-class {same} vs cross-class {diff}");
    }
}
