//! Named parameter store with role tags.
//!
//! Roles drive the post-training freeze classification and the analytic
//! parameter accounting; every tensor in a model carries exactly one.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};
use std::collections::HashMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamRole {
    AttentionWeight,
    AttentionBias,
    SwigluWeight,
    SwigluBias,
    AdaLnLoraWeight,
    AdaLnLoraBias,
    GlobalAdaLnWeight,
    GlobalAdaLnBias,
    TimeEmbedWeight,
    TimeEmbedBias,
    ClassEmbedTable,
    PatchEmbedWeight,
    PatchEmbedBias,
    FinalWeight,
    FinalBias,
}

impl ParamRole {
    pub const ALL: [ParamRole; 15] = [
        ParamRole::AttentionWeight,
        ParamRole::AttentionBias,
        ParamRole::SwigluWeight,
        ParamRole::SwigluBias,
        ParamRole::AdaLnLoraWeight,
        ParamRole::AdaLnLoraBias,
        ParamRole::GlobalAdaLnWeight,
        ParamRole::GlobalAdaLnBias,
        ParamRole::TimeEmbedWeight,
        ParamRole::TimeEmbedBias,
        ParamRole::ClassEmbedTable,
        ParamRole::PatchEmbedWeight,
        ParamRole::PatchEmbedBias,
        ParamRole::FinalWeight,
        ParamRole::FinalBias,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ParamRole::AttentionWeight => "attention_weight",
            ParamRole::AttentionBias => "attention_bias",
            ParamRole::SwigluWeight => "swiglu_weight",
            ParamRole::SwigluBias => "swiglu_bias",
            ParamRole::AdaLnLoraWeight => "adaln_lora_weight",
            ParamRole::AdaLnLoraBias => "adaln_lora_bias",
            ParamRole::GlobalAdaLnWeight => "global_adaln_weight",
            ParamRole::GlobalAdaLnBias => "global_adaln_bias",
            ParamRole::TimeEmbedWeight => "time_embed_weight",
            ParamRole::TimeEmbedBias => "time_embed_bias",
            ParamRole::ClassEmbedTable => "class_embed_table",
            ParamRole::PatchEmbedWeight => "patch_embed_weight",
            ParamRole::PatchEmbedBias => "patch_embed_bias",
            ParamRole::FinalWeight => "final_weight",
            ParamRole::FinalBias => "final_bias",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .find(|r| r.name() == s)
            .copied()
            .ok_or_else(|| Error::contract(format!("unrecognized parameter role '{s}'")))
    }

    pub fn is_bias(&self) -> bool {
        matches!(
            self,
            ParamRole::AttentionBias
                | ParamRole::SwigluBias
                | ParamRole::AdaLnLoraBias
                | ParamRole::GlobalAdaLnBias
                | ParamRole::TimeEmbedBias
                | ParamRole::PatchEmbedBias
                | ParamRole::FinalBias
        )
    }
}

#[derive(Clone)]
pub struct ParamEntry<T> {
    pub name: String,
    pub role: ParamRole,
    pub tensor: Tensor<T>,
}

/// Insertion-ordered named tensors. Order is the canonical serialization and
/// optimizer-state order.
#[derive(Clone)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new(), index: HashMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, role: ParamRole, tensor: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::contract(format!("duplicate parameter name {name}")));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(ParamEntry { name, role, tensor });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.entries[i].tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index.get(name).copied().map(move |i| &mut self.entries[i].tensor)
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> impl Iterator<Item = &mut ParamEntry<T>> {
        self.entries.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count across all tensors.
    pub fn total_params(&self) -> u64 {
        self.entries.iter().map(|e| e.tensor.numel() as u64).sum()
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.tensor.zero_grad();
        }
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.tensor.numel()).collect()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for e in &self.entries {
            out.insert(e.name.clone(), e.role, e.tensor.cast::<U>())
                .expect("names unique by construction");
        }
        out
    }
}
