//! Analytic parameter and FLOP accounting (no allocation).

use super::params::ParamRole;
use super::ModelConfig;

/// Per-role analytic scalar counts; matches an allocation-based enumeration
/// of the live parameter store exactly.
pub fn analytic_role_counts(cfg: &ModelConfig) -> Vec<(ParamRole, u64)> {
    let n = cfg.layers as u64;
    let d = cfg.hidden as u64;
    let h = cfg.swiglu_hidden() as u64;
    let r = cfg.lora_rank as u64;
    let td = cfg.token_dim() as u64;
    let classes = cfg.num_classes as u64 + 1; // plus the null class
    let tf = super::TIME_FEATURES as u64;

    vec![
        (ParamRole::AttentionWeight, n * 4 * d * d),
        (ParamRole::AttentionBias, n * 4 * d),
        (ParamRole::SwigluWeight, n * 3 * d * h),
        (ParamRole::SwigluBias, n * (2 * h + d)),
        (ParamRole::AdaLnLoraWeight, n * (d * r + r * 6 * d)),
        (ParamRole::AdaLnLoraBias, n * (r + 6 * d)),
        (ParamRole::GlobalAdaLnWeight, 6 * d * d),
        (ParamRole::GlobalAdaLnBias, 6 * d),
        (ParamRole::TimeEmbedWeight, tf * d + d * d),
        (ParamRole::TimeEmbedBias, 2 * d),
        (ParamRole::ClassEmbedTable, classes * d),
        (ParamRole::PatchEmbedWeight, td * d),
        (ParamRole::PatchEmbedBias, d),
        (ParamRole::FinalWeight, d * 2 * d + d * td),
        (ParamRole::FinalBias, 2 * d + td),
    ]
}

/// Parameter breakdown in the reporting buckets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamCounts {
    pub attention: u64,
    pub swiglu: u64,
    pub adaln_lora: u64,
    pub global_adaln: u64,
    pub embedders: u64,
    pub final_layer: u64,
    pub total: u64,
}

pub fn count_parameters(cfg: &ModelConfig) -> ParamCounts {
    let mut c = ParamCounts {
        attention: 0,
        swiglu: 0,
        adaln_lora: 0,
        global_adaln: 0,
        embedders: 0,
        final_layer: 0,
        total: 0,
    };
    for (role, count) in analytic_role_counts(cfg) {
        match role {
            ParamRole::AttentionWeight | ParamRole::AttentionBias => c.attention += count,
            ParamRole::SwigluWeight | ParamRole::SwigluBias => c.swiglu += count,
            ParamRole::AdaLnLoraWeight | ParamRole::AdaLnLoraBias => c.adaln_lora += count,
            ParamRole::GlobalAdaLnWeight | ParamRole::GlobalAdaLnBias => c.global_adaln += count,
            ParamRole::TimeEmbedWeight
            | ParamRole::TimeEmbedBias
            | ParamRole::ClassEmbedTable
            | ParamRole::PatchEmbedWeight
            | ParamRole::PatchEmbedBias => c.embedders += count,
            ParamRole::FinalWeight | ParamRole::FinalBias => c.final_layer += count,
        }
        c.total += count;
    }
    c
}

/// Per-block main weights (attention + SwiGLU + AdaLN-LoRA, biases excluded);
/// equals `13.75 * d^2` when `h = 8d/3` is integral and `r = d/4`.
pub fn block_main_weights(cfg: &ModelConfig) -> u64 {
    let d = cfg.hidden as u64;
    let h = cfg.swiglu_hidden() as u64;
    let r = cfg.lora_rank as u64;
    4 * d * d + 3 * d * h + (d * r + r * 6 * d)
}

/// Baseline block accounting of the predecessor design: plain AdaLN with a
/// full `d -> 6d` projection per block. Returns (attention, swiglu, adaln)
/// weights, which sit in the exact ratio 2 : 4 : 3.
pub fn baseline_block_weights(d: u64) -> (u64, u64, u64) {
    (4 * d * d, 8 * d * d, 6 * d * d)
}

/// Forward cost for one image of `l` tokens, in multiply-accumulates
/// (the counting convention of common profilers, which report one MAC as
/// one "FLOP" and skip activation-by-activation products outside linears).
pub fn estimate_flops(cfg: &ModelConfig, l: usize) -> f64 {
    let d = cfg.hidden as f64;
    let h = cfg.swiglu_hidden() as f64;
    let r = cfg.lora_rank as f64;
    let td = cfg.token_dim() as f64;
    let lf = l as f64;
    let tf = super::TIME_FEATURES as f64;

    let per_layer = 4.0 * lf * d * d       // q, k, v, o projections
        + 2.0 * lf * lf * d                // attention scores + value mix
        + 3.0 * lf * d * h                 // SwiGLU gate/up/down
        + (d * r + r * 6.0 * d);           // AdaLN-LoRA (per image, not per token)
    cfg.layers as f64 * per_layer
        + lf * td * d                      // patch embedder
        + (tf * d + d * d)                 // timestep embedder
        + 6.0 * d * d                      // global AdaLN
        + (2.0 * d * d + lf * d * td)      // final modulation + projection
}

/// Total training cost: forward cost x batch x steps x 3.
pub fn training_flops(cfg: &ModelConfig, l: usize, batch: usize, steps: usize) -> f64 {
    estimate_flops(cfg, l) * batch as f64 * steps as f64 * 3.0
}
