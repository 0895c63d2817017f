//! The flexible diffusion transformer: masked attention with QK-Norm and
//! decoupled 2-D RoPE, SwiGLU feed-forward, per-block low-rank adaptive
//! conditioning plus one shared global modulation, and a modulated linear
//! output head.

pub mod accounting;
pub mod batch;
pub mod params;
pub mod patch;

pub use accounting::{count_parameters, estimate_flops, ParamCounts};
pub use batch::TokenBatch;
pub use params::{ParamRole, ParamStore};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::rope::RopeTable;
use crate::tensor::{Scalar, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Sinusoidal timestep feature width (half cosines, half sines).
pub const TIME_FEATURES: usize = 256;

/// LayerNorm epsilon throughout the model.
pub const LN_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub patch: usize,
    pub lora_rank: usize,
    pub in_channels: usize,
    pub max_tokens: usize,
    pub num_classes: usize,
}

impl ModelConfig {
    /// Standard dims with patch 2, four latent channels, rank `d/4`.
    pub fn with_dims(layers: usize, hidden: usize, heads: usize) -> Self {
        ModelConfig {
            layers,
            hidden,
            heads,
            patch: 2,
            lora_rank: (hidden / 4).max(1),
            in_channels: 4,
            max_tokens: 256,
            num_classes: 1000,
        }
    }

    /// Named size presets from the scaling table.
    pub fn preset(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "b" | "base" => Ok(Self::with_dims(15, 768, 12)),
            "xl" => Ok(Self::with_dims(36, 1152, 16)),
            "3b" => Ok(Self::with_dims(40, 2304, 24)),
            other => Err(Error::config(format!("unknown preset '{other}' (expected b|xl|3b)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden == 0 || self.heads == 0 {
            return Err(Error::config("layers, hidden and heads must be positive"));
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::config(format!(
                "hidden {} not divisible by heads {}",
                self.hidden, self.heads
            )));
        }
        if !self.head_dim().is_multiple_of(4) {
            return Err(Error::config(format!(
                "head_dim {} must be divisible by 4 for 2-D rotary embeddings",
                self.head_dim()
            )));
        }
        if self.lora_rank < 1 {
            return Err(Error::config("lora_rank must be >= 1"));
        }
        if self.max_tokens < 1 {
            return Err(Error::config("max_tokens must be >= 1"));
        }
        if self.patch == 0 || self.in_channels == 0 {
            return Err(Error::config("patch and in_channels must be positive"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    /// SwiGLU hidden width: exact `8d/3` when integral, otherwise rounded and
    /// aligned up to a multiple of the head count.
    pub fn swiglu_hidden(&self) -> usize {
        let num = 8 * self.hidden;
        if num.is_multiple_of(3) {
            num / 3
        } else {
            let rounded = (num as f64 / 3.0).round() as usize;
            if self.heads == 0 {
                rounded
            } else {
                rounded.div_ceil(self.heads) * self.heads
            }
        }
    }

    pub fn token_dim(&self) -> usize {
        self.patch * self.patch * self.in_channels
    }

    /// Class id used for unconditional (classifier-free) passes.
    pub fn null_class(&self) -> usize {
        self.num_classes
    }

    /// Per-axis training extent: the square root of the token budget.
    pub fn train_axis_len(&self) -> usize {
        (self.max_tokens as f64).sqrt().round().max(1.0) as usize
    }
}

/// Model parameters plus configuration.
#[derive(Clone)]
pub struct Model<T: Scalar> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
}

/// Per-forward handles: the predicted velocity and the leaf vars aligned
/// with parameter-store order for gradient write-back.
#[derive(Debug)]
pub struct ForwardPass {
    pub velocity: Var,
    pub leaves: Vec<Var>,
}

/// Rotary table plus attention options for one forward call.
pub struct ForwardCtx<'a> {
    pub rope: &'a RopeTable,
    pub attn_scale: f64,
    /// Permit token grids beyond the training budget (extrapolation paths).
    pub allow_oversize: bool,
}

impl<'a> ForwardCtx<'a> {
    pub fn new(rope: &'a RopeTable) -> Self {
        ForwardCtx { rope, attn_scale: 1.0, allow_oversize: false }
    }
}

impl<T: Scalar> Model<T> {
    /// Initialize parameters: truncated-normal weights, zero biases, and
    /// zero-initialized modulation outputs and final head so every block
    /// starts as an identity-gated residual.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.hidden;
        let h = config.swiglu_hidden();
        let r = config.lora_rank;
        let td = config.token_dim();
        let classes = config.num_classes + 1;
        let std = T::from_f64(0.02);

        let mut p = ParamStore::new();
        let tn = |shape: Vec<usize>, rng: &mut ChaCha8Rng| {
            Tensor::trunc_normal(shape, std, rng).requires_grad()
        };
        let zeros = |shape: Vec<usize>| Tensor::zeros(shape).requires_grad();

        use ParamRole::*;
        p.insert("patch_embed.w", PatchEmbedWeight, tn(vec![td, d], &mut rng))?;
        p.insert("patch_embed.b", PatchEmbedBias, zeros(vec![d]))?;
        p.insert("t_embed.w1", TimeEmbedWeight, tn(vec![TIME_FEATURES, d], &mut rng))?;
        p.insert("t_embed.b1", TimeEmbedBias, zeros(vec![d]))?;
        p.insert("t_embed.w2", TimeEmbedWeight, tn(vec![d, d], &mut rng))?;
        p.insert("t_embed.b2", TimeEmbedBias, zeros(vec![d]))?;
        p.insert("class_embed.table", ClassEmbedTable, tn(vec![classes, d], &mut rng))?;
        // shared modulation head starts at zero so initial scale/shift/gate
        // are all zero
        p.insert("global_adaln.w", GlobalAdaLnWeight, zeros(vec![d, 6 * d]))?;
        p.insert("global_adaln.b", GlobalAdaLnBias, zeros(vec![6 * d]))?;
        for i in 0..config.layers {
            let pre = format!("blocks.{i}");
            p.insert(format!("{pre}.attn.wq"), AttentionWeight, tn(vec![d, d], &mut rng))?;
            p.insert(format!("{pre}.attn.bq"), AttentionBias, zeros(vec![d]))?;
            p.insert(format!("{pre}.attn.wk"), AttentionWeight, tn(vec![d, d], &mut rng))?;
            p.insert(format!("{pre}.attn.bk"), AttentionBias, zeros(vec![d]))?;
            p.insert(format!("{pre}.attn.wv"), AttentionWeight, tn(vec![d, d], &mut rng))?;
            p.insert(format!("{pre}.attn.bv"), AttentionBias, zeros(vec![d]))?;
            p.insert(format!("{pre}.attn.wo"), AttentionWeight, tn(vec![d, d], &mut rng))?;
            p.insert(format!("{pre}.attn.bo"), AttentionBias, zeros(vec![d]))?;
            p.insert(format!("{pre}.swiglu.w_gate"), SwigluWeight, tn(vec![d, h], &mut rng))?;
            p.insert(format!("{pre}.swiglu.b_gate"), SwigluBias, zeros(vec![h]))?;
            p.insert(format!("{pre}.swiglu.w_up"), SwigluWeight, tn(vec![d, h], &mut rng))?;
            p.insert(format!("{pre}.swiglu.b_up"), SwigluBias, zeros(vec![h]))?;
            p.insert(format!("{pre}.swiglu.w_down"), SwigluWeight, tn(vec![h, d], &mut rng))?;
            p.insert(format!("{pre}.swiglu.b_down"), SwigluBias, zeros(vec![d]))?;
            p.insert(format!("{pre}.adaln.w1"), AdaLnLoraWeight, tn(vec![d, r], &mut rng))?;
            p.insert(format!("{pre}.adaln.b1"), AdaLnLoraBias, zeros(vec![r]))?;
            p.insert(format!("{pre}.adaln.w2"), AdaLnLoraWeight, zeros(vec![r, 6 * d]))?;
            p.insert(format!("{pre}.adaln.b2"), AdaLnLoraBias, zeros(vec![6 * d]))?;
        }
        p.insert("final.mod_w", FinalWeight, zeros(vec![d, 2 * d]))?;
        p.insert("final.mod_b", FinalBias, zeros(vec![2 * d]))?;
        p.insert("final.w", FinalWeight, zeros(vec![d, td]))?;
        p.insert("final.b", FinalBias, zeros(vec![td]))?;

        Ok(Model { config, params: p })
    }

    fn index_of(&self, name: &str) -> usize {
        self.params
            .entries()
            .iter()
            .position(|e| e.name == name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    /// Predicted velocity for every token slot, `[B, L_max, p*p*C]`.
    /// Padding slots produce values that the loss and sampler ignore.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        batch: &TokenBatch<T>,
        t: &[T],
        labels: &[usize],
        ctx: &ForwardCtx,
    ) -> Result<ForwardPass> {
        batch.validate()?;
        let cfg = &self.config;
        let b = batch.batch_size();
        let l = batch.l_max();
        let d = cfg.hidden;
        let heads = cfg.heads;
        let dk = cfg.head_dim();
        let td = cfg.token_dim();

        if batch.token_dim() != td {
            return Err(Error::shape(format!(
                "batch token dim {} != p*p*C = {td}",
                batch.token_dim()
            )));
        }
        if t.len() != b || labels.len() != b {
            return Err(Error::shape(format!(
                "expected {b} timesteps and labels, got {} and {}",
                t.len(),
                labels.len()
            )));
        }
        if !ctx.allow_oversize {
            if let Some((i, &len)) =
                batch.lens.iter().enumerate().find(|(_, &len)| len > cfg.max_tokens)
            {
                return Err(Error::data(format!(
                    "batch item {i}: token count {len} exceeds the budget L_max = {}",
                    cfg.max_tokens
                )));
            }
        }
        if ctx.rope.config.head_dim != dk {
            return Err(Error::shape(format!(
                "rope head_dim {} != model head_dim {dk}",
                ctx.rope.config.head_dim
            )));
        }
        for &label in labels {
            if label > cfg.num_classes {
                return Err(Error::data(format!(
                    "label {label} out of range (null class is {})",
                    cfg.num_classes
                )));
            }
        }

        // rotary angle caches for every token slot, shared across layers
        let mut cos64 = Vec::with_capacity(b * l * dk / 2);
        let mut sin64 = Vec::with_capacity(b * l * dk / 2);
        for p in &batch.positions {
            ctx.rope.push_cos_sin(p[0], p[1], &mut cos64, &mut sin64);
        }
        let cos: Vec<T> = cos64.iter().map(|&v| T::from_f64(v)).collect();
        let sin: Vec<T> = sin64.iter().map(|&v| T::from_f64(v)).collect();

        let leaves: Vec<Var> = self.params.entries().iter().map(|e| tape.leaf(&e.tensor)).collect();
        let var = |name: &str| leaves[self.index_of(name)];
        let eps = T::from_f64(LN_EPS);

        // patch embedding
        let tokens = tape.constant_from(&batch.tokens);
        let tok2 = tape.reshape(tokens, vec![b * l, td])?;
        let x0 = tape.matmul(tok2, var("patch_embed.w"))?;
        let x0 = tape.add(x0, var("patch_embed.b"))?;
        let mut x = tape.reshape(x0, vec![b, l, d])?;

        // conditioning vector: timestep features + class embedding
        let tf = time_features(t);
        let tfeat = tape.constant(tf, vec![b, TIME_FEATURES]);
        let t1 = tape.matmul(tfeat, var("t_embed.w1"))?;
        let t1 = tape.add(t1, var("t_embed.b1"))?;
        let t1 = tape.silu(t1);
        let temb = tape.matmul(t1, var("t_embed.w2"))?;
        let temb = tape.add(temb, var("t_embed.b2"))?;
        let cemb = tape.embedding(var("class_embed.table"), labels)?;
        let cond = tape.add(temb, cemb)?;

        let g6 = tape.matmul(cond, var("global_adaln.w"))?;
        let global6 = tape.add(g6, var("global_adaln.b"))?;

        let scale_logits = T::from_f64(ctx.attn_scale / (dk as f64).sqrt());
        let magnitude = T::from_f64(ctx.rope.magnitude);

        for i in 0..cfg.layers {
            let pre = format!("blocks.{i}");
            // modulation: shared global head plus the per-block low-rank path
            let l1 = tape.matmul(cond, var(&format!("{pre}.adaln.w1")))?;
            let l1 = tape.add(l1, var(&format!("{pre}.adaln.b1")))?;
            let l2 = tape.matmul(l1, var(&format!("{pre}.adaln.w2")))?;
            let l2 = tape.add(l2, var(&format!("{pre}.adaln.b2")))?;
            let s6 = tape.add(global6, l2)?;
            let parts = tape.split_lastdim(s6, &[d, d, d, d, d, d])?;
            let (beta1, beta2, gamma1, gamma2, alpha1, alpha2) =
                (parts[0], parts[1], parts[2], parts[3], parts[4], parts[5]);

            // attention branch
            let hmod = {
                let ln = tape.layernorm(x, None, None, eps)?;
                let g = tape.add_scalar(gamma1, T::one());
                let ge = tape.repeat_mid(g, l)?;
                let be = tape.repeat_mid(beta1, l)?;
                let scaled = tape.mul(ln, ge)?;
                tape.add(scaled, be)?
            };
            let attn = self.attention(
                tape, hmod, &pre, &leaves, batch, &cos, &sin, scale_logits, magnitude, b, l,
                heads, dk,
            )?;
            let a1 = tape.repeat_mid(alpha1, l)?;
            let gated = tape.mul(attn, a1)?;
            x = tape.add(x, gated)?;

            // feed-forward branch
            let hmod2 = {
                let ln = tape.layernorm(x, None, None, eps)?;
                let g = tape.add_scalar(gamma2, T::one());
                let ge = tape.repeat_mid(g, l)?;
                let be = tape.repeat_mid(beta2, l)?;
                let scaled = tape.mul(ln, ge)?;
                tape.add(scaled, be)?
            };
            let ff = {
                let h2 = tape.reshape(hmod2, vec![b * l, d])?;
                let g = tape.matmul(h2, var(&format!("{pre}.swiglu.w_gate")))?;
                let g = tape.add(g, var(&format!("{pre}.swiglu.b_gate")))?;
                let g = tape.silu(g);
                let u = tape.matmul(h2, var(&format!("{pre}.swiglu.w_up")))?;
                let u = tape.add(u, var(&format!("{pre}.swiglu.b_up")))?;
                let gu = tape.mul(g, u)?;
                let dn = tape.matmul(gu, var(&format!("{pre}.swiglu.w_down")))?;
                let dn = tape.add(dn, var(&format!("{pre}.swiglu.b_down")))?;
                tape.reshape(dn, vec![b, l, d])?
            };
            let a2 = tape.repeat_mid(alpha2, l)?;
            let gated2 = tape.mul(ff, a2)?;
            x = tape.add(x, gated2)?;
        }

        // modulated output head
        let fm = tape.matmul(cond, var("final.mod_w"))?;
        let fm = tape.add(fm, var("final.mod_b"))?;
        let fparts = tape.split_lastdim(fm, &[d, d])?;
        let (shift, scale) = (fparts[0], fparts[1]);
        let ln = tape.layernorm(x, None, None, eps)?;
        let sc = tape.add_scalar(scale, T::one());
        let sce = tape.repeat_mid(sc, l)?;
        let she = tape.repeat_mid(shift, l)?;
        let hmod = tape.mul(ln, sce)?;
        let hmod = tape.add(hmod, she)?;
        let h2 = tape.reshape(hmod, vec![b * l, d])?;
        let out = tape.matmul(h2, var("final.w"))?;
        let out = tape.add(out, var("final.b"))?;
        let velocity = tape.reshape(out, vec![b, l, td])?;

        Ok(ForwardPass { velocity, leaves })
    }

    #[allow(clippy::too_many_arguments)]
    fn attention(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        prefix: &str,
        leaves: &[Var],
        batch: &TokenBatch<T>,
        cos: &[T],
        sin: &[T],
        scale_logits: T,
        magnitude: T,
        b: usize,
        l: usize,
        heads: usize,
        dk: usize,
    ) -> Result<Var> {
        let d = heads * dk;
        let eps = T::from_f64(LN_EPS);
        let var = |name: String| leaves[self.index_of(&name)];

        let x2 = tape.reshape(x, vec![b * l, d])?;
        let mut proj = |w: &str, bname: &str| -> Result<Var> {
            let p = tape.matmul(x2, var(format!("{prefix}.attn.{w}")))?;
            let p = tape.add(p, var(format!("{prefix}.attn.{bname}")))?;
            tape.reshape(p, vec![b, l, heads, dk])
        };
        let q = proj("wq", "bq")?;
        let k = proj("wk", "bk")?;
        let v = proj("wv", "bv")?;

        // QK-Norm (no affine) bounds the pre-mask logits
        let q = tape.layernorm(q, None, None, eps)?;
        let k = tape.layernorm(k, None, None, eps)?;
        let mut q = tape.rope2d(q, cos.to_vec(), sin.to_vec())?;
        let mut k = tape.rope2d(k, cos.to_vec(), sin.to_vec())?;
        if magnitude != T::one() {
            q = tape.scale(q, magnitude);
            k = tape.scale(k, magnitude);
        }

        let qt = tape.transpose12(q)?; // [B, H, L, dk]
        let kt = tape.transpose12(k)?;
        let vt = tape.transpose12(v)?;
        let scores = tape.matmul_tb(qt, kt)?;
        let scores = tape.scale(scores, scale_logits);
        let scores = tape.add_key_mask(scores, &batch.mask)?;
        let probs = tape.softmax_lastdim(scores)?;
        let ctx = tape.matmul(probs, vt)?;
        let ctx = tape.transpose12(ctx)?;
        let ctx2 = tape.reshape(ctx, vec![b * l, d])?;
        let out = tape.matmul(ctx2, var(format!("{prefix}.attn.wo")))?;
        let out = tape.add(out, var(format!("{prefix}.attn.bo")))?;
        tape.reshape(out, vec![b, l, d])
    }

    /// Read gradients off a spent tape back into the parameter store.
    /// A gradient reaching a frozen tensor is a contract violation.
    pub fn accumulate_grads(&mut self, tape: &Tape<T>, pass: &ForwardPass) -> Result<()> {
        for (entry, var) in self.params.entries_mut().zip(&pass.leaves) {
            if entry.tensor.requires_grad {
                if let Some(g) = tape.grad(*var) {
                    entry.tensor.accumulate_grad(g)?;
                }
            } else if tape.grad(*var).is_some() {
                return Err(Error::contract(format!(
                    "gradient flowed into frozen tensor {}",
                    entry.name
                )));
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model { config: self.config.clone(), params: self.params.cast::<U>() }
    }
}

/// Sinusoidal features for continuous timesteps in `[0, 1]` (scaled by 1000
/// against a max period of 10000, cosines then sines).
pub fn time_features<T: Scalar>(t: &[T]) -> Vec<T> {
    let half = TIME_FEATURES / 2;
    let mut out = vec![T::zero(); t.len() * TIME_FEATURES];
    for (bi, &tv) in t.iter().enumerate() {
        let tv = tv.as_f64() * 1000.0;
        for i in 0..half {
            let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
            let arg = tv * freq;
            out[bi * TIME_FEATURES + i] = T::from_f64(arg.cos());
            out[bi * TIME_FEATURES + half + i] = T::from_f64(arg.sin());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rope::RopeConfig;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            layers: 2,
            hidden: 32,
            heads: 2,
            patch: 2,
            lora_rank: 8,
            in_channels: 4,
            max_tokens: 16,
            num_classes: 4,
        }
    }

    fn make_batch(b: usize, grids: &[(usize, usize)], l_max: usize, td: usize, seed: u64) -> TokenBatch<f32> {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut tokens = Tensor::<f32>::randn(vec![b, l_max, td], 1.0, &mut rng);
        let mut positions = vec![[0.0, 0.0]; b * l_max];
        let mut mask = vec![f32::NEG_INFINITY; b * l_max];
        let mut lens = Vec::new();
        for (i, &(gh, gw)) in grids.iter().enumerate() {
            let len = gh * gw;
            lens.push(len);
            for p in 0..len {
                positions[i * l_max + p] = [(p / gw) as f64, (p % gw) as f64];
                mask[i * l_max + p] = 0.0;
            }
            // zero padding contents
            for p in len..l_max {
                for c in 0..td {
                    tokens.data_mut()[(i * l_max + p) * td + c] = 0.0;
                }
            }
        }
        TokenBatch { tokens, positions, mask, grids: grids.to_vec(), lens }
    }

    #[test]
    fn forward_output_shape_contract() {
        let cfg = tiny_config();
        let model = Model::<f32>::init(cfg.clone(), 1).unwrap();
        let rope = RopeTable::build(&RopeConfig::new(cfg.head_dim(), 4), 4, 4).unwrap();
        let batch = make_batch(2, &[(2, 3), (4, 4)], 16, cfg.token_dim(), 7);
        let mut tape = Tape::new();
        let pass = model
            .forward(&mut tape, &batch, &[0.3, 0.8], &[0, 3], &ForwardCtx::new(&rope))
            .unwrap();
        assert_eq!(tape.shape(pass.velocity), &[2, 16, 16]);
    }

    #[test]
    fn zero_initialized_head_outputs_zero() {
        let cfg = tiny_config();
        let model = Model::<f32>::init(cfg.clone(), 2).unwrap();
        let rope = RopeTable::build(&RopeConfig::new(cfg.head_dim(), 4), 4, 4).unwrap();
        let batch = make_batch(1, &[(2, 2)], 16, cfg.token_dim(), 9);
        let mut tape = Tape::new();
        let pass = model
            .forward(&mut tape, &batch, &[0.5], &[1], &ForwardCtx::new(&rope))
            .unwrap();
        for &v in tape.value(pass.velocity) {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn padding_content_invariance() {
        let cfg = tiny_config();
        let model = Model::<f32>::init(cfg.clone(), 3).unwrap();
        let rope = RopeTable::build(&RopeConfig::new(cfg.head_dim(), 4), 4, 4).unwrap();
        let mut batch = make_batch(2, &[(2, 3), (3, 3)], 16, cfg.token_dim(), 11);

        let run = |batch: &TokenBatch<f32>| {
            let mut tape = Tape::new();
            let pass = model
                .forward(&mut tape, batch, &[0.4, 0.9], &[1, 2], &ForwardCtx::new(&rope))
                .unwrap();
            tape.detach(pass.velocity)
        };
        let base = run(&batch);

        // scribble over padding token contents
        let l_max = 16;
        let td = cfg.token_dim();
        for i in 0..2 {
            for p in batch.lens[i]..l_max {
                for c in 0..td {
                    batch.tokens.data_mut()[(i * l_max + p) * td + c] = 123.0 + p as f32;
                }
            }
        }
        let scribbled = run(&batch);

        for i in 0..2 {
            for p in 0..batch.lens[i] {
                for c in 0..td {
                    let idx = (i * l_max + p) * td + c;
                    let diff = (base.data()[idx] - scribbled.data()[idx]).abs();
                    assert!(diff <= 1e-6, "valid output changed by {diff}");
                }
            }
        }
    }

    #[test]
    fn oversize_batch_rejected_without_flag() {
        let cfg = tiny_config(); // max_tokens = 16
        let model = Model::<f32>::init(cfg.clone(), 4).unwrap();
        let rope = RopeTable::build(&RopeConfig::new(cfg.head_dim(), 4), 5, 5).unwrap();
        let batch = make_batch(1, &[(5, 5)], 25, cfg.token_dim(), 13);
        let mut tape = Tape::new();
        let err = model
            .forward(&mut tape, &batch, &[0.5], &[0], &ForwardCtx::new(&rope))
            .unwrap_err();
        assert!(err.to_string().contains("exceeds the budget"));

        let mut tape2 = Tape::new();
        let ctx = ForwardCtx { rope: &rope, attn_scale: 1.0, allow_oversize: true };
        assert!(model.forward(&mut tape2, &batch, &[0.5], &[0], &ctx).is_ok());
    }

    #[test]
    fn analytic_counts_match_allocation() {
        let cfg = tiny_config();
        let model = Model::<f32>::init(cfg.clone(), 5).unwrap();
        let mut by_role: std::collections::HashMap<ParamRole, u64> = Default::default();
        for e in model.params.entries() {
            *by_role.entry(e.role).or_insert(0) += e.tensor.numel() as u64;
        }
        for (role, count) in accounting::analytic_role_counts(&cfg) {
            assert_eq!(by_role.get(&role).copied().unwrap_or(0), count, "{role:?}");
        }
        assert_eq!(model.params.total_params(), count_parameters(&cfg).total);
    }

    #[test]
    fn swiglu_param_identity() {
        // 3 d h == 8 d^2 when h = 8d/3 exactly
        let cfg = ModelConfig::with_dims(1, 96, 6);
        assert_eq!(cfg.swiglu_hidden(), 256);
        assert_eq!(3 * cfg.hidden * cfg.swiglu_hidden(), 8 * cfg.hidden * cfg.hidden);
    }

    #[test]
    fn qknorm_bounds_attention_logits() {
        // per-vector layernorm forces ||LN(v)||_2 = sqrt(dk), so pre-mask
        // logits stay within s_attn * sqrt(dk) up to the eps slack
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let dk = 16usize;
        let bound = (dk as f64).sqrt() * 1.01;
        for _ in 0..500 {
            let scale = 10f32.powi(rng.gen_range(-2..4));
            let q = Tensor::<f32>::randn(vec![1, dk], scale, &mut rng);
            let k = Tensor::<f32>::randn(vec![1, dk], scale, &mut rng);
            let mut tape = Tape::new();
            let qv = tape.constant_from(&q);
            let kv = tape.constant_from(&k);
            let qn = tape.layernorm(qv, None, None, 1e-6).unwrap();
            let kn = tape.layernorm(kv, None, None, 1e-6).unwrap();
            let logit: f32 = tape
                .value(qn)
                .iter()
                .zip(tape.value(kn))
                .map(|(a, b)| a * b)
                .sum::<f32>()
                / (dk as f32).sqrt();
            assert!(
                (logit as f64).abs() <= bound,
                "logit {logit} exceeds bound {bound}"
            );
        }
    }

    #[test]
    fn forward_is_permutation_equivariant() {
        // permuting tokens with their positions and mask permutes outputs
        let cfg = tiny_config();
        let model = Model::<f32>::init(cfg.clone(), 6).unwrap();
        let rope = RopeTable::build(&RopeConfig::new(cfg.head_dim(), 4), 4, 4).unwrap();
        let batch = make_batch(1, &[(3, 4)], 16, cfg.token_dim(), 19);
        let td = cfg.token_dim();
        let l_max = 16;

        let run = |b: &TokenBatch<f32>| {
            let mut tape = Tape::new();
            let pass = model
                .forward(&mut tape, b, &[0.6], &[2], &ForwardCtx::new(&rope))
                .unwrap();
            tape.detach(pass.velocity)
        };
        let base = run(&batch);

        // reverse the valid prefix (a fixed permutation)
        let l = batch.lens[0];
        let mut permuted = batch.clone();
        for p in 0..l {
            let src = l - 1 - p;
            for c in 0..td {
                permuted.tokens.data_mut()[p * td + c] = batch.tokens.data()[src * td + c];
            }
            permuted.positions[p] = batch.positions[src];
        }
        let out = run(&permuted);
        for p in 0..l {
            let src = l - 1 - p;
            for c in 0..td {
                let a = base.data()[src * td + c];
                let b = out.data()[p * td + c];
                assert!((a - b).abs() <= 1e-6, "slot {p} ch {c}: {a} vs {b}");
            }
        }
        let _ = l_max;
    }

    #[test]
    fn time_features_shape_and_range() {
        let f = time_features(&[0.0f32, 0.5, 1.0]);
        assert_eq!(f.len(), 3 * TIME_FEATURES);
        for &v in &f {
            assert!((-1.0..=1.0).contains(&v));
        }
        // distinct timesteps produce distinct features
        assert_ne!(
            &f[0..TIME_FEATURES],
            &f[TIME_FEATURES..2 * TIME_FEATURES]
        );
    }
}
