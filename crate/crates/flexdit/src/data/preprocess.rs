//! Flexible-resolution preprocessing: aspect-preserving resize under a token
//! budget, and the mixed strategy that coin-flips between budget resize and
//! resize-plus-center-crop for images larger than the target on both sides.

use super::ImageSample;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PreprocessMode {
    /// Aspect-preserving resize under the token budget only.
    Flexible,
    /// Coin flip between crop-to-square and budget resize when eligible.
    Mixed,
}

impl PreprocessMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "flexible" => Ok(PreprocessMode::Flexible),
            "mixed" => Ok(PreprocessMode::Mixed),
            other => Err(Error::config(format!(
                "unknown preprocess mode '{other}' (expected flexible|mixed)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct PreprocessPolicy {
    pub mode: PreprocessMode,
    /// Target square side for the crop branch, in latent pixels.
    pub target: usize,
    pub token_budget: usize,
    pub patch: usize,
}

impl PreprocessPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || self.token_budget == 0 {
            return Err(Error::config("patch and token_budget must be positive"));
        }
        if self.mode == PreprocessMode::Mixed {
            if self.target == 0 || !self.target.is_multiple_of(self.patch) {
                return Err(Error::config(format!(
                    "target {} must be a positive multiple of patch {}",
                    self.target, self.patch
                )));
            }
            let target_tokens = (self.target / self.patch) * (self.target / self.patch);
            if target_tokens > self.token_budget {
                return Err(Error::config(format!(
                    "target {} implies {target_tokens} tokens, over the budget {}",
                    self.target, self.token_budget
                )));
            }
        }
        Ok(())
    }
}

/// Which Algorithm-1 branch a sample took (instrumentation for tests).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PreprocessBranch {
    ResizeOnly,
    CoinResize,
    CoinCrop,
}

/// Bilinear resample with corner-aligned sampling: output corners map onto
/// input corners exactly.
pub fn resize_bilinear(img: &Tensor<f32>, out_h: usize, out_w: usize) -> Result<Tensor<f32>> {
    let s = img.shape();
    if s.len() != 3 {
        return Err(Error::shape(format!("resize expects [C, H, W], got {:?}", s)));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    if out_h == 0 || out_w == 0 {
        return Err(Error::shape("resize target must be positive"));
    }
    if (out_h, out_w) == (h, w) {
        return Ok(img.clone());
    }
    let sy = if out_h > 1 { (h - 1) as f64 / (out_h - 1) as f64 } else { 0.0 };
    let sx = if out_w > 1 { (w - 1) as f64 / (out_w - 1) as f64 } else { 0.0 };
    let mut out = vec![0.0f32; c * out_h * out_w];
    let data = img.data();
    for ci in 0..c {
        for oy in 0..out_h {
            let fy = oy as f64 * sy;
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(h - 1);
            let wy = (fy - y0 as f64) as f32;
            for ox in 0..out_w {
                let fx = ox as f64 * sx;
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(w - 1);
                let wx = (fx - x0 as f64) as f32;
                let p00 = data[ci * h * w + y0 * w + x0];
                let p01 = data[ci * h * w + y0 * w + x1];
                let p10 = data[ci * h * w + y1 * w + x0];
                let p11 = data[ci * h * w + y1 * w + x1];
                let top = p00 + (p01 - p00) * wx;
                let bot = p10 + (p11 - p10) * wx;
                out[ci * out_h * out_w + oy * out_w + ox] = top + (bot - top) * wy;
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], out)
}

/// Round half-down to a non-negative integer.
fn half_down(x: f64) -> usize {
    (x - 0.5).ceil().max(0.0) as usize
}

/// Aspect-preserving resize so the patch grid fits the token budget. Images
/// already under budget only get divisibility rounding; images smaller than
/// one patch are skipped (`None`).
pub fn resize_to_budget(
    sample: &ImageSample,
    token_budget: usize,
    patch: usize,
) -> Result<Option<ImageSample>> {
    let s = sample.latent.shape();
    let (h, w) = (s[1], s[2]);
    if h < patch || w < patch {
        return Ok(None);
    }
    let lambda =
        ((token_budget * patch * patch) as f64 / (h * w) as f64).sqrt().min(1.0);
    let mut ht = half_down(lambda * h as f64 / patch as f64).max(1);
    let mut wt = half_down(lambda * w as f64 / patch as f64).max(1);
    while ht * wt > token_budget {
        if ht >= wt && ht > 1 {
            ht -= 1;
        } else if wt > 1 {
            wt -= 1;
        } else {
            return Err(Error::data(format!(
                "token budget {token_budget} unsatisfiable at patch {patch}"
            )));
        }
    }
    let (nh, nw) = (ht * patch, wt * patch);
    let latent = resize_bilinear(&sample.latent, nh, nw)?;
    Ok(Some(ImageSample { latent, label: sample.label, source_size: sample.source_size }))
}

/// Center crop to `size x size`; odd margins give the extra pixel to the
/// leading side.
pub fn center_crop(img: &Tensor<f32>, size: usize) -> Result<Tensor<f32>> {
    let s = img.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    if h < size || w < size {
        return Err(Error::contract(format!(
            "center_crop: image {h}x{w} smaller than crop {size}"
        )));
    }
    let oy = (h - size).div_ceil(2);
    let ox = (w - size).div_ceil(2);
    let mut out = vec![0.0f32; c * size * size];
    for ci in 0..c {
        for y in 0..size {
            for x in 0..size {
                out[ci * size * size + y * size + x] = img.data()[ci * h * w + (oy + y) * w + (ox + x)];
            }
        }
    }
    Tensor::new(vec![c, size, size], out)
}

/// The mixed strategy: when both sides exceed the target, flip a fair coin
/// between resize-then-center-crop to `target x target` and the plain budget
/// resize; otherwise just budget-resize.
pub fn mixed_preprocess<R: Rng + ?Sized>(
    sample: &ImageSample,
    policy: &PreprocessPolicy,
    rng: &mut R,
) -> Result<(Option<ImageSample>, PreprocessBranch)> {
    policy.validate()?;
    let s = sample.latent.shape();
    let (h, w) = (s[1], s[2]);
    let target = policy.target;
    if h > target && w > target {
        if rng.gen::<f64>() > 0.5 {
            // resize the short side to the target, then crop the square
            let (nh, nw) = if h <= w {
                (target, ((w as f64 * target as f64 / h as f64).round() as usize).max(target))
            } else {
                (((h as f64 * target as f64 / w as f64).round() as usize).max(target), target)
            };
            let resized = resize_bilinear(&sample.latent, nh, nw)?;
            let cropped = center_crop(&resized, target)?;
            Ok((
                Some(ImageSample {
                    latent: cropped,
                    label: sample.label,
                    source_size: sample.source_size,
                }),
                PreprocessBranch::CoinCrop,
            ))
        } else {
            let out = resize_to_budget(sample, policy.token_budget, policy.patch)?;
            Ok((out, PreprocessBranch::CoinResize))
        }
    } else {
        let out = resize_to_budget(sample, policy.token_budget, policy.patch)?;
        Ok((out, PreprocessBranch::ResizeOnly))
    }
}
