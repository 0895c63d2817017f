//! High-resolution post-training: freeze everything except bias terms,
//! normalization-related modulation modules (the per-block low-rank
//! conditioning and the shared global modulation), the patch embedder and
//! the final output layer, then fine-tune on the extended token budget with
//! NTK-shifted rotary embeddings.

use crate::error::{Error, Result};
use crate::flow::{BatchSource, TimestepSampler, TracePoint, TrainOptions, Trainer};
use crate::model::accounting::analytic_role_counts;
use crate::model::{Model, ModelConfig, ParamRole};
use crate::rope::{RopeConfig, RopeMethod, RopeTable};
use crate::tensor::Scalar;

/// Trainability of one role under the post-training recipe.
pub fn role_is_trainable(role: ParamRole) -> bool {
    role.is_bias()
        || matches!(
            role,
            ParamRole::AdaLnLoraWeight
                | ParamRole::GlobalAdaLnWeight
                | ParamRole::PatchEmbedWeight
                | ParamRole::FinalWeight
        )
}

#[derive(Clone, Debug)]
pub struct FreezeEntry {
    pub name: String,
    pub role: ParamRole,
    pub trainable: bool,
    pub numel: u64,
}

/// Per-parameter trainable flags plus summary counts.
#[derive(Clone, Debug)]
pub struct FreezePlan {
    pub entries: Vec<FreezeEntry>,
    pub trainable_params: u64,
    pub frozen_params: u64,
}

impl FreezePlan {
    pub fn fraction(&self) -> f64 {
        self.trainable_params as f64 / (self.trainable_params + self.frozen_params) as f64
    }

    pub fn is_trainable(&self, name: &str) -> Option<bool> {
        self.entries.iter().find(|e| e.name == name).map(|e| e.trainable)
    }

    /// Text report: one line per tensor plus the summary.
    pub fn report(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!(
                "{} {} {} {}\n",
                if e.trainable { "train " } else { "freeze" },
                e.name,
                e.role.name(),
                e.numel
            ));
        }
        out.push_str(&format!(
            "trainable {} frozen {} fraction {:.6}\n",
            self.trainable_params,
            self.frozen_params,
            self.fraction()
        ));
        out
    }
}

/// Classify every tensor of a live model.
pub fn build_freeze_plan<T: Scalar>(model: &Model<T>) -> FreezePlan {
    let mut entries = Vec::with_capacity(model.params.len());
    let mut trainable_params = 0u64;
    let mut frozen_params = 0u64;
    for e in model.params.entries() {
        let trainable = role_is_trainable(e.role);
        let numel = e.tensor.numel() as u64;
        if trainable {
            trainable_params += numel;
        } else {
            frozen_params += numel;
        }
        entries.push(FreezeEntry { name: e.name.clone(), role: e.role, trainable, numel });
    }
    FreezePlan { entries, trainable_params, frozen_params }
}

/// Analytic trainable fraction straight from the role count formulas.
pub fn analytic_trainable_fraction(cfg: &ModelConfig) -> f64 {
    let mut trainable = 0u64;
    let mut total = 0u64;
    for (role, count) in analytic_role_counts(cfg) {
        total += count;
        if role_is_trainable(role) {
            trainable += count;
        }
    }
    trainable as f64 / total as f64
}

/// Set `requires_grad` flags from the plan. Frozen tensors then register as
/// constants on the tape: no gradient is computed for them and the
/// optimizer never touches their bytes.
pub fn apply_freeze_plan(model: &mut Model<f32>, plan: &FreezePlan) -> Result<()> {
    if plan.entries.len() != model.params.len() {
        return Err(Error::contract(format!(
            "freeze plan covers {} tensors, model has {}",
            plan.entries.len(),
            model.params.len()
        )));
    }
    for (entry, fe) in model.params.entries_mut().zip(&plan.entries) {
        if entry.name != fe.name {
            return Err(Error::contract(format!(
                "freeze plan order mismatch: {} vs {}",
                entry.name, fe.name
            )));
        }
        entry.tensor.requires_grad = fe.trainable;
    }
    Ok(())
}

/// Rotary table for the extended budget: per-axis NTK base shift against
/// the original training extent.
pub fn extended_rope(cfg: &ModelConfig, original_axis: usize, l_max_hi: usize) -> Result<RopeTable> {
    let axis_hi = (l_max_hi as f64).sqrt().round().max(1.0) as usize;
    let rope_cfg = RopeConfig {
        method: RopeMethod::VisionNtk,
        ..RopeConfig::new(cfg.head_dim(), original_axis)
    };
    RopeTable::build(&rope_cfg, axis_hi, axis_hi)
}

pub struct PosttrainOutcome {
    pub trainer: Trainer,
    pub plan: FreezePlan,
    pub trace: Vec<TracePoint>,
    pub rope: RopeTable,
}

/// Freeze, extend the budget, and fine-tune on the high-resolution source.
pub fn posttrain<S: BatchSource>(
    model: Model<f32>,
    source: &S,
    l_max_hi: usize,
    steps: usize,
    sampler: TimestepSampler,
    opts: TrainOptions,
) -> Result<PosttrainOutcome> {
    if l_max_hi <= model.config.max_tokens {
        return Err(Error::config(format!(
            "post-training budget {l_max_hi} must exceed the pretraining budget {}",
            model.config.max_tokens
        )));
    }
    let original_axis = model.config.train_axis_len();
    let plan = build_freeze_plan(&model);
    let mut model = model;
    apply_freeze_plan(&mut model, &plan)?;
    model.config.max_tokens = l_max_hi;
    let rope = extended_rope(&model.config, original_axis, l_max_hi)?;

    let mut trainer = Trainer::new(model, sampler, opts);
    let trace = trainer.run(source, &rope, steps, |_| {})?;
    Ok(PosttrainOutcome { trainer, plan, trace, rope })
}
