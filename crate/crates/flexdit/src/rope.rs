//! Decoupled 2-D rotary position embeddings and training-free extrapolation.
//!
//! The head dimension splits in half: the first half rotates by
//! height-axis angles, the second by width-axis angles. Each axis behaves as
//! standard 1-D RoPE over a half-dimension, so the per-axis frequencies are
//! `theta_d = base^(-4d/|D|)` for `d in 0..|D|/4`.
//!
//! Extrapolation methods rescale positions (PI), the rotary base (NTK,
//! VisionNTK) or the per-dimension frequencies (YaRN, VisionYaRN), with the
//! vision variants applying separate height/width scale factors.

use crate::error::{Error, Result};

use std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RopeMethod {
    None,
    Pi,
    Ntk,
    Yarn,
    VisionNtk,
    VisionYarn,
}

impl RopeMethod {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => RopeMethod::None,
            "pi" => RopeMethod::Pi,
            "ntk" => RopeMethod::Ntk,
            "yarn" => RopeMethod::Yarn,
            "vision_ntk" => RopeMethod::VisionNtk,
            "vision_yarn" => RopeMethod::VisionYarn,
            other => {
                return Err(Error::config(format!(
                    "unknown rope method '{other}' (expected none|pi|ntk|yarn|vision_ntk|vision_yarn)"
                )))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            RopeMethod::None => "none",
            RopeMethod::Pi => "pi",
            RopeMethod::Ntk => "ntk",
            RopeMethod::Yarn => "yarn",
            RopeMethod::VisionNtk => "vision_ntk",
            RopeMethod::VisionYarn => "vision_yarn",
        }
    }
}

#[derive(Clone, Debug)]
pub struct RopeConfig {
    pub head_dim: usize,
    pub base: f64,
    pub method: RopeMethod,
    /// Per-axis training extent (square root of the token budget).
    pub train_len: usize,
    pub yarn_alpha: f64,
    pub yarn_beta: f64,
}

impl RopeConfig {
    pub fn new(head_dim: usize, train_len: usize) -> Self {
        RopeConfig {
            head_dim,
            base: 10000.0,
            method: RopeMethod::None,
            train_len,
            yarn_alpha: 1.0,
            yarn_beta: 32.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.head_dim.is_multiple_of(4) || self.head_dim == 0 {
            return Err(Error::config(format!(
                "head_dim {} must be a positive multiple of 4",
                self.head_dim
            )));
        }
        if self.base <= 1.0 {
            return Err(Error::config(format!("rope base {} must exceed 1", self.base)));
        }
        if self.train_len < 1 {
            return Err(Error::config("train_len must be >= 1"));
        }
        if self.yarn_alpha >= self.yarn_beta {
            return Err(Error::config(format!(
                "yarn alpha {} must be < beta {}",
                self.yarn_alpha, self.yarn_beta
            )));
        }
        Ok(())
    }
}

/// Global and per-axis scale factors, floored at one.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaleFactors {
    pub s: f64,
    pub s_h: f64,
    pub s_w: f64,
}

pub fn scale_factors(h_test: usize, w_test: usize, train_len: usize) -> ScaleFactors {
    let t = train_len as f64;
    ScaleFactors {
        s: ((h_test.max(w_test) as f64) / t).max(1.0),
        s_h: (h_test as f64 / t).max(1.0),
        s_w: (w_test as f64 / t).max(1.0),
    }
}

/// Per-axis base frequencies: `base^(-4d/|D|)` for `d in 0..|D|/4`.
pub fn base_frequencies(head_dim: usize, base: f64) -> Result<Vec<f64>> {
    if !head_dim.is_multiple_of(4) || head_dim == 0 {
        return Err(Error::config(format!(
            "head_dim {head_dim} must be a positive multiple of 4"
        )));
    }
    let quarter = head_dim / 4;
    Ok((0..quarter).map(|d| base.powf(-4.0 * d as f64 / head_dim as f64)).collect())
}

/// NTK base shift: `b' = b * s^(|D|/(|D|-2))`.
pub fn apply_ntk(base: f64, s: f64, head_dim: usize) -> f64 {
    base * s.powf(head_dim as f64 / (head_dim as f64 - 2.0))
}

/// Per-axis NTK bases from per-axis scale factors.
pub fn apply_vision_ntk(base: f64, s_h: f64, s_w: f64, head_dim: usize) -> (f64, f64) {
    (apply_ntk(base, s_h, head_dim), apply_ntk(base, s_w, head_dim))
}

/// YaRN ramp: 0 below alpha, 1 above beta, linear between.
pub fn yarn_ramp(r: f64, alpha: f64, beta: f64) -> f64 {
    if r < alpha {
        0.0
    } else if r > beta {
        1.0
    } else {
        (r - alpha) / (beta - alpha)
    }
}

/// Query/key magnitude correction: `1/sqrt(t) = 0.1 ln(s) + 1`.
pub fn yarn_magnitude(s: f64) -> f64 {
    0.1 * s.ln() + 1.0
}

/// YaRN frequency blend for one axis. `r(d)` uses the pre-interpolation
/// base: the wavelength-to-context ratio `train_len * theta_d / (2 pi)`.
pub fn apply_yarn(cfg: &RopeConfig, s: f64) -> Result<Vec<f64>> {
    cfg.validate()?;
    let base = base_frequencies(cfg.head_dim, cfg.base)?;
    Ok(base
        .iter()
        .map(|&theta| {
            let r = cfg.train_len as f64 * theta / (2.0 * PI);
            let g = yarn_ramp(r, cfg.yarn_alpha, cfg.yarn_beta);
            (1.0 - g) * theta / s + g * theta
        })
        .collect())
}

/// Per-axis YaRN blends (the magnitude term stays global-s).
pub fn apply_vision_yarn(cfg: &RopeConfig, s_h: f64, s_w: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    Ok((apply_yarn(cfg, s_h)?, apply_yarn(cfg, s_w)?))
}

/// Entropy-control attention scale: `max(1, sqrt(ln(Ht*Wt / (Htr*Wtr))))`,
/// natural logarithm.
pub fn attention_scale(h_test: usize, w_test: usize, h_train: usize, w_train: usize) -> f64 {
    let ratio = (h_test as f64 * w_test as f64) / (h_train as f64 * w_train as f64);
    ratio.ln().max(0.0).sqrt().max(1.0)
}

/// Position interpolation: divide coordinates by the per-axis factors
/// (pass the global `s` for both to get the vanilla variant). Fractional
/// positions are fine; rotation angles are continuous.
pub fn apply_pi(positions: &mut [[f64; 2]], s_h: f64, s_w: f64) {
    for p in positions.iter_mut() {
        p[0] /= s_h;
        p[1] /= s_w;
    }
}

/// 1-D rotary rotation in place: pair `(2i, 2i+1)` rotates by `pos * freqs[i]`.
pub fn rotate_1d(x: &mut [f64], pos: f64, freqs: &[f64]) {
    assert_eq!(x.len(), freqs.len() * 2, "vector length must be twice the frequency count");
    for (i, &f) in freqs.iter().enumerate() {
        let angle = pos * f;
        let (s, c) = angle.sin_cos();
        let (a, b) = (x[2 * i], x[2 * i + 1]);
        x[2 * i] = c * a - s * b;
        x[2 * i + 1] = s * a + c * b;
    }
}

/// Frequencies, position scaling and cached integer-position tables for one
/// (method, test grid) combination. Immutable after construction.
#[derive(Clone, Debug)]
pub struct RopeTable {
    pub config: RopeConfig,
    pub factors: ScaleFactors,
    pub freqs_h: Vec<f64>,
    pub freqs_w: Vec<f64>,
    /// Multiplicative position scaling (PI uses 1/s; all others 1).
    pub pos_scale_h: f64,
    pub pos_scale_w: f64,
    /// YaRN query/key magnitude multiplier (1 otherwise).
    pub magnitude: f64,
    pub extent_h: usize,
    pub extent_w: usize,
    cos_h: Vec<f64>,
    sin_h: Vec<f64>,
    cos_w: Vec<f64>,
    sin_w: Vec<f64>,
}

impl RopeTable {
    /// Build the table for a test grid of `h_test x w_test` tokens.
    ///
    /// Every method degenerates to the identity setup when the grid fits the
    /// training extent (all scale factors floor at 1).
    pub fn build(config: &RopeConfig, h_test: usize, w_test: usize) -> Result<Self> {
        config.validate()?;
        let factors = scale_factors(h_test, w_test, config.train_len);
        let base = base_frequencies(config.head_dim, config.base)?;

        let (freqs_h, freqs_w, pos_scale, magnitude) = match config.method {
            RopeMethod::None => (base.clone(), base, (1.0, 1.0), 1.0),
            RopeMethod::Pi => {
                let inv = 1.0 / factors.s;
                (base.clone(), base, (inv, inv), 1.0)
            }
            RopeMethod::Ntk => {
                let b = apply_ntk(config.base, factors.s, config.head_dim);
                let f = base_frequencies(config.head_dim, b)?;
                (f.clone(), f, (1.0, 1.0), 1.0)
            }
            RopeMethod::Yarn => {
                let f = apply_yarn(config, factors.s)?;
                (f.clone(), f, (1.0, 1.0), yarn_magnitude(factors.s))
            }
            RopeMethod::VisionNtk => {
                let (bh, bw) = apply_vision_ntk(config.base, factors.s_h, factors.s_w, config.head_dim);
                (
                    base_frequencies(config.head_dim, bh)?,
                    base_frequencies(config.head_dim, bw)?,
                    (1.0, 1.0),
                    1.0,
                )
            }
            RopeMethod::VisionYarn => {
                let (fh, fw) = apply_vision_yarn(config, factors.s_h, factors.s_w)?;
                (fh, fw, (1.0, 1.0), yarn_magnitude(factors.s))
            }
        };

        let quarter = config.head_dim / 4;
        let cache = |extent: usize, freqs: &[f64], scale: f64| {
            let mut cos = Vec::with_capacity(extent * quarter);
            let mut sin = Vec::with_capacity(extent * quarter);
            for p in 0..extent {
                for &f in freqs {
                    let angle = p as f64 * scale * f;
                    cos.push(angle.cos());
                    sin.push(angle.sin());
                }
            }
            (cos, sin)
        };
        let (cos_h, sin_h) = cache(h_test.max(1), &freqs_h, pos_scale.0);
        let (cos_w, sin_w) = cache(w_test.max(1), &freqs_w, pos_scale.1);

        Ok(RopeTable {
            config: config.clone(),
            factors,
            freqs_h,
            freqs_w,
            pos_scale_h: pos_scale.0,
            pos_scale_w: pos_scale.1,
            magnitude,
            extent_h: h_test.max(1),
            extent_w: w_test.max(1),
            cos_h,
            sin_h,
            cos_w,
            sin_w,
        })
    }

    pub fn quarter(&self) -> usize {
        self.config.head_dim / 4
    }

    /// Append the angle pair caches for one (possibly fractional) position:
    /// `|D|/4` height entries then `|D|/4` width entries.
    pub fn push_cos_sin(&self, h: f64, w: f64, cos: &mut Vec<f64>, sin: &mut Vec<f64>) {
        let q = self.quarter();
        let int_h = h.fract() == 0.0 && h >= 0.0 && (h as usize) < self.extent_h;
        if int_h && self.pos_scale_h == 1.0 {
            let o = h as usize * q;
            cos.extend_from_slice(&self.cos_h[o..o + q]);
            sin.extend_from_slice(&self.sin_h[o..o + q]);
        } else {
            for &f in &self.freqs_h {
                let angle = h * self.pos_scale_h * f;
                cos.push(angle.cos());
                sin.push(angle.sin());
            }
        }
        let int_w = w.fract() == 0.0 && w >= 0.0 && (w as usize) < self.extent_w;
        if int_w && self.pos_scale_w == 1.0 {
            let o = w as usize * q;
            cos.extend_from_slice(&self.cos_w[o..o + q]);
            sin.extend_from_slice(&self.sin_w[o..o + q]);
        } else {
            for &f in &self.freqs_w {
                let angle = w * self.pos_scale_w * f;
                cos.push(angle.cos());
                sin.push(angle.sin());
            }
        }
    }

    /// Rotate one head vector in place at grid position `(h, w)`: first half
    /// by height angles, second half by width angles, pairwise.
    pub fn rotate_2d(&self, x: &mut [f64], h: f64, w: f64) -> Result<()> {
        if x.len() != self.config.head_dim {
            return Err(Error::shape(format!(
                "vector length {} != head_dim {}",
                x.len(),
                self.config.head_dim
            )));
        }
        if h < 0.0 || w < 0.0 || h > self.extent_h as f64 || w > self.extent_w as f64 {
            return Err(Error::shape(format!(
                "position ({h}, {w}) outside table extents ({}, {})",
                self.extent_h, self.extent_w
            )));
        }
        let half = self.config.head_dim / 2;
        let (first, second) = x.split_at_mut(half);
        let scaled_freqs_h: Vec<f64> = self.freqs_h.iter().map(|f| f * self.pos_scale_h).collect();
        let scaled_freqs_w: Vec<f64> = self.freqs_w.iter().map(|f| f * self.pos_scale_w).collect();
        rotate_1d(first, h, &scaled_freqs_h);
        rotate_1d(second, w, &scaled_freqs_w);
        Ok(())
    }

    /// Cached cos/sin entries (validated by the unit-circle invariant test).
    pub fn cached_entries(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.cos_h
            .iter()
            .zip(&self.sin_h)
            .chain(self.cos_w.iter().zip(&self.sin_w))
            .map(|(&c, &s)| (c, s))
    }
}
