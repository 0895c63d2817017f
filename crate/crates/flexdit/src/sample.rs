//! Image generation: integrate the learned velocity field from noise to
//! data over a chosen token grid, with optional rotary extrapolation,
//! attention scaling and classifier-free guidance.

use crate::autodiff::Tape;
use crate::data::position_map;
use crate::error::{Error, Result};
use crate::flow::{cfg_velocity, integrate, OdeMethod, OdeStats};
use crate::model::patch::unpatchify;
use crate::model::{ForwardCtx, Model, TokenBatch};
use crate::rope::{attention_scale, RopeConfig, RopeMethod, RopeTable};
use crate::tensor::{Scalar, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct SamplerSetup {
    pub method: RopeMethod,
    pub rope_base: f64,
    pub yarn_alpha: f64,
    pub yarn_beta: f64,
    /// Enable the entropy-control attention scale at long contexts.
    pub attn_scale: bool,
    pub ode: OdeMethod,
    /// Guidance weight; 1.0 runs a single conditional pass.
    pub cfg_scale: f64,
}

impl Default for SamplerSetup {
    fn default() -> Self {
        SamplerSetup {
            method: RopeMethod::None,
            rope_base: 10000.0,
            yarn_alpha: 1.0,
            yarn_beta: 32.0,
            attn_scale: false,
            ode: OdeMethod::Euler { steps: 25 },
            cfg_scale: 1.0,
        }
    }
}

/// What one sampling run actually used (persisted next to the outputs).
#[derive(Clone, Debug)]
pub struct SampleMeta {
    pub method: RopeMethod,
    pub grid: (usize, usize),
    pub s: f64,
    pub s_h: f64,
    pub s_w: f64,
    pub s_attn: f64,
    pub magnitude: f64,
    pub cfg_scale: f64,
    pub out_of_budget: bool,
    pub stats: OdeStats,
}

impl SampleMeta {
    pub fn to_text(&self) -> String {
        format!(
            "method {}\ngrid {}x{}\ns {}\ns_h {}\ns_w {}\ns_attn {}\nmagnitude {}\ncfg {}\nout_of_budget {}\node_evals {}\n",
            self.method.name(),
            self.grid.0,
            self.grid.1,
            self.s,
            self.s_h,
            self.s_w,
            self.s_attn,
            self.magnitude,
            self.cfg_scale,
            self.out_of_budget,
            self.stats.evals
        )
    }
}

/// Build the rotary table a grid requires under the given setup.
pub fn rope_for_grid(model_head_dim: usize, train_axis: usize, setup: &SamplerSetup, grid: (usize, usize)) -> Result<RopeTable> {
    let cfg = RopeConfig {
        head_dim: model_head_dim,
        base: setup.rope_base,
        method: setup.method,
        train_len: train_axis,
        yarn_alpha: setup.yarn_alpha,
        yarn_beta: setup.yarn_beta,
    };
    RopeTable::build(&cfg, grid.0, grid.1)
}

/// Generate `labels.len()` images on a `grid` of tokens. Noise for image
/// `i` derives from `(seed, i)`, so results do not depend on batch
/// composition or worker count.
pub fn sample_images(
    model: &Model<f32>,
    setup: &SamplerSetup,
    grid: (usize, usize),
    labels: &[usize],
    seed: u64,
) -> Result<(Vec<Tensor<f32>>, SampleMeta)> {
    let cfg = &model.config;
    let (gh, gw) = grid;
    if gh == 0 || gw == 0 {
        return Err(Error::config("sample grid must be positive"));
    }
    let l = gh * gw;
    let td = cfg.token_dim();
    let n = labels.len();
    if n == 0 {
        return Err(Error::config("no labels requested"));
    }
    let out_of_budget = l > cfg.max_tokens;

    let axis = cfg.train_axis_len();
    let rope = rope_for_grid(cfg.head_dim(), axis, setup, grid)?;
    let s_attn = if setup.attn_scale { attention_scale(gh, gw, axis, axis) } else { 1.0 };

    // initial noise per image, derived from (seed, image index)
    let mut z0 = vec![0.0f32; n * l * td];
    for (i, chunk) in z0.chunks_mut(l * td).enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x1234_5678));
        for v in chunk.iter_mut() {
            *v = f32::sample_standard_normal(&mut rng);
        }
    }

    let positions_one = position_map(gh, gw);
    let guided = setup.cfg_scale > 1.0;
    let rows = if guided { 2 * n } else { n };
    let mut positions = Vec::with_capacity(rows * l);
    for _ in 0..rows {
        positions.extend_from_slice(&positions_one);
    }
    let mask = vec![0.0f32; rows * l];
    let grids = vec![grid; rows];
    let lens = vec![l; rows];
    let mut all_labels: Vec<usize> = labels.to_vec();
    if guided {
        all_labels.extend(std::iter::repeat_n(cfg.null_class(), n));
    }

    let velocity = |z: &[f32], t: f64| -> Result<Vec<f32>> {
        let mut tokens = Vec::with_capacity(rows * l * td);
        tokens.extend_from_slice(z);
        if guided {
            tokens.extend_from_slice(z);
        }
        let batch = TokenBatch {
            tokens: Tensor::new(vec![rows, l, td], tokens)?,
            positions: positions.clone(),
            mask: mask.clone(),
            grids: grids.clone(),
            lens: lens.clone(),
        };
        let ts = vec![t as f32; rows];
        let mut tape = Tape::new();
        let ctx = ForwardCtx { rope: &rope, attn_scale: s_attn, allow_oversize: true };
        let pass = model.forward(&mut tape, &batch, &ts, &all_labels, &ctx)?;
        let v = tape.value(pass.velocity);
        if guided {
            Ok(cfg_velocity(&v[..n * l * td], &v[n * l * td..], setup.cfg_scale))
        } else {
            Ok(v.to_vec())
        }
    };

    let (z1, stats) = integrate(velocity, z0, &setup.ode)?;

    let mut images = Vec::with_capacity(n);
    for i in 0..n {
        let tokens = Tensor::new(vec![l, td], z1[i * l * td..(i + 1) * l * td].to_vec())?;
        images.push(unpatchify(&tokens, grid, cfg.patch, cfg.in_channels)?);
    }
    let meta = SampleMeta {
        method: setup.method,
        grid,
        s: rope.factors.s,
        s_h: rope.factors.s_h,
        s_w: rope.factors.s_w,
        s_attn,
        magnitude: rope.magnitude,
        cfg_scale: setup.cfg_scale,
        out_of_budget,
        stats,
    };
    Ok((images, meta))
}
