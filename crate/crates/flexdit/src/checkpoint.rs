//! Checkpoint directory format.
//!
//! `manifest` is a text file: a format-version line, the model
//! configuration, metadata (training step, optimizer step), then one line
//! per tensor with name, dtype, shape, byte offset into `weights.bin` and a
//! sha256 checksum. `weights.bin` holds the concatenated little-endian f32
//! buffers, row-major, in manifest order. EMA tensors carry an `ema/`
//! prefix, optimizer moments `opt.m/` and `opt.v/`.

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::optim::{AdamW, AdamWConfig};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::fs;
use std::path::Path;

pub const FORMAT_VERSION: u32 = 1;

pub struct CheckpointState<'a> {
    pub model: &'a Model<f32>,
    pub ema: Option<&'a [Vec<f32>]>,
    pub opt: Option<&'a AdamW<f32>>,
    pub step: usize,
}

fn tensor_bytes(data: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(data.len() * 4);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn checksum(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn save_checkpoint(dir: &Path, state: &CheckpointState) -> Result<()> {
    fs::create_dir_all(dir)?;
    let cfg = &state.model.config;
    let mut manifest = format!("format_version {FORMAT_VERSION}\n");
    manifest.push_str(&format!("config.layers {}\n", cfg.layers));
    manifest.push_str(&format!("config.hidden {}\n", cfg.hidden));
    manifest.push_str(&format!("config.heads {}\n", cfg.heads));
    manifest.push_str(&format!("config.patch {}\n", cfg.patch));
    manifest.push_str(&format!("config.lora_rank {}\n", cfg.lora_rank));
    manifest.push_str(&format!("config.in_channels {}\n", cfg.in_channels));
    manifest.push_str(&format!("config.max_tokens {}\n", cfg.max_tokens));
    manifest.push_str(&format!("config.num_classes {}\n", cfg.num_classes));
    manifest.push_str(&format!("meta.step {}\n", state.step));
    if let Some(opt) = state.opt {
        manifest.push_str(&format!("meta.opt_step {}\n", opt.step_count));
    }

    let mut blob: Vec<u8> = Vec::new();
    let mut push_tensor = |manifest: &mut String, name: &str, shape: &[usize], data: &[f32]| {
        let bytes = tensor_bytes(data);
        let shape_s = if shape.is_empty() {
            data.len().to_string()
        } else {
            shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
        };
        manifest.push_str(&format!(
            "tensor {name} f32 {shape_s} {} {}\n",
            blob.len(),
            checksum(&bytes)
        ));
        blob.extend_from_slice(&bytes);
    };

    for e in state.model.params.entries() {
        push_tensor(&mut manifest, &e.name, e.tensor.shape(), e.tensor.data());
    }
    if let Some(ema) = state.ema {
        for (e, shadow) in state.model.params.entries().iter().zip(ema) {
            push_tensor(&mut manifest, &format!("ema/{}", e.name), e.tensor.shape(), shadow);
        }
    }
    if let Some(opt) = state.opt {
        for (e, m) in state.model.params.entries().iter().zip(&opt.m) {
            push_tensor(&mut manifest, &format!("opt.m/{}", e.name), e.tensor.shape(), m);
        }
        for (e, v) in state.model.params.entries().iter().zip(&opt.v) {
            push_tensor(&mut manifest, &format!("opt.v/{}", e.name), e.tensor.shape(), v);
        }
    }

    fs::write(dir.join("weights.bin"), &blob)?;
    fs::write(dir.join("manifest"), manifest)?;
    Ok(())
}

/// (first moments, second moments, optimizer step count)
pub type OptState = (Vec<Vec<f32>>, Vec<Vec<f32>>, u64);

pub struct LoadedCheckpoint {
    pub model: Model<f32>,
    pub ema: Option<Vec<Vec<f32>>>,
    pub opt_state: Option<OptState>,
    pub step: usize,
}

impl LoadedCheckpoint {
    /// Rebuild the optimizer from stored moments.
    pub fn optimizer(&self, config: AdamWConfig) -> Option<AdamW<f32>> {
        self.opt_state.as_ref().map(|(m, v, steps)| {
            let mut opt = AdamW::new(config, &self.model.params.param_sizes());
            opt.m = m.clone();
            opt.v = v.clone();
            opt.step_count = *steps;
            opt
        })
    }
}

pub fn load_checkpoint(dir: &Path) -> Result<LoadedCheckpoint> {
    let manifest_path = dir.join("manifest");
    let manifest = fs::read_to_string(&manifest_path)
        .map_err(|_| Error::data(format!("missing checkpoint manifest at {}", manifest_path.display())))?;
    let blob = fs::read(dir.join("weights.bin"))
        .map_err(|_| Error::data(format!("missing weights.bin in {}", dir.display())))?;

    let mut kv: HashMap<String, String> = HashMap::new();
    struct TensorLine {
        name: String,
        shape: Vec<usize>,
        offset: usize,
        checksum: String,
    }
    let mut tensors: Vec<TensorLine> = Vec::new();
    for line in manifest.lines() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            ["tensor", name, dtype, shape, offset, sum] => {
                if *dtype != "f32" {
                    return Err(Error::data(format!("unsupported dtype {dtype} for {name}")));
                }
                let shape: Vec<usize> = shape
                    .split('x')
                    .map(|d| d.parse::<usize>().map_err(|_| Error::data(format!("bad shape in manifest: {shape}"))))
                    .collect::<Result<_>>()?;
                tensors.push(TensorLine {
                    name: name.to_string(),
                    shape,
                    offset: offset
                        .parse()
                        .map_err(|_| Error::data(format!("bad offset for {name}")))?,
                    checksum: sum.to_string(),
                });
            }
            [key, value] => {
                kv.insert(key.to_string(), value.to_string());
            }
            [] => {}
            other => return Err(Error::data(format!("malformed manifest line: {other:?}"))),
        }
    }

    let version: u32 = kv
        .get("format_version")
        .ok_or_else(|| Error::data("manifest missing format_version"))?
        .parse()
        .map_err(|_| Error::data("bad format_version"))?;
    if version != FORMAT_VERSION {
        return Err(Error::data(format!(
            "checkpoint format version {version} unsupported (expected {FORMAT_VERSION})"
        )));
    }
    let cfg_int = |key: &str| -> Result<usize> {
        kv.get(key)
            .ok_or_else(|| Error::data(format!("manifest missing {key}")))?
            .parse::<usize>()
            .map_err(|_| Error::data(format!("bad integer for {key}")))
    };
    let config = ModelConfig {
        layers: cfg_int("config.layers")?,
        hidden: cfg_int("config.hidden")?,
        heads: cfg_int("config.heads")?,
        patch: cfg_int("config.patch")?,
        lora_rank: cfg_int("config.lora_rank")?,
        in_channels: cfg_int("config.in_channels")?,
        max_tokens: cfg_int("config.max_tokens")?,
        num_classes: cfg_int("config.num_classes")?,
    };
    let step = cfg_int("meta.step").unwrap_or(0);

    let read_tensor = |t: &TensorLine| -> Result<Vec<f32>> {
        let numel: usize = t.shape.iter().product();
        let end = t.offset + numel * 4;
        if end > blob.len() {
            return Err(Error::data(format!(
                "tensor {} extends past weights.bin ({} > {})",
                t.name,
                end,
                blob.len()
            )));
        }
        let bytes = &blob[t.offset..end];
        if checksum(bytes) != t.checksum {
            return Err(Error::data(format!("checksum mismatch for tensor {}", t.name)));
        }
        Ok(bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect())
    };

    // rebuild the skeleton, then overwrite tensor data by name
    let mut model = Model::<f32>::init(config, 0)?;
    let mut ema: Vec<Vec<f32>> = Vec::new();
    let mut opt_m: HashMap<String, Vec<f32>> = HashMap::new();
    let mut opt_v: HashMap<String, Vec<f32>> = HashMap::new();
    let mut loaded_names: Vec<String> = Vec::new();
    let mut ema_map: HashMap<String, Vec<f32>> = HashMap::new();

    for t in &tensors {
        let data = read_tensor(t)?;
        if let Some(name) = t.name.strip_prefix("ema/") {
            ema_map.insert(name.to_string(), data);
        } else if let Some(name) = t.name.strip_prefix("opt.m/") {
            opt_m.insert(name.to_string(), data);
        } else if let Some(name) = t.name.strip_prefix("opt.v/") {
            opt_v.insert(name.to_string(), data);
        } else {
            let tensor = model.params.get_mut(&t.name).ok_or_else(|| {
                Error::data(format!("checkpoint tensor {} not in model skeleton", t.name))
            })?;
            if tensor.numel() != data.len() {
                return Err(Error::data(format!(
                    "tensor {} has {} values, model expects {}",
                    t.name,
                    data.len(),
                    tensor.numel()
                )));
            }
            tensor.data_mut().copy_from_slice(&data);
            loaded_names.push(t.name.clone());
        }
    }
    if loaded_names.len() != model.params.len() {
        return Err(Error::data(format!(
            "checkpoint holds {} model tensors, expected {}",
            loaded_names.len(),
            model.params.len()
        )));
    }

    let ema_opt = if ema_map.is_empty() {
        None
    } else {
        for e in model.params.entries() {
            let shadow = ema_map.remove(&e.name).ok_or_else(|| {
                Error::data(format!("ema tensor missing for {}", e.name))
            })?;
            ema.push(shadow);
        }
        Some(ema)
    };

    let opt_state = if opt_m.is_empty() {
        None
    } else {
        let mut ms = Vec::new();
        let mut vs = Vec::new();
        for e in model.params.entries() {
            ms.push(
                opt_m
                    .remove(&e.name)
                    .ok_or_else(|| Error::data(format!("opt.m missing for {}", e.name)))?,
            );
            vs.push(
                opt_v
                    .remove(&e.name)
                    .ok_or_else(|| Error::data(format!("opt.v missing for {}", e.name)))?,
            );
        }
        let steps: u64 = kv
            .get("meta.opt_step")
            .and_then(|s| s.parse().ok())
            .unwrap_or(step as u64);
        Some((ms, vs, steps))
    };

    Ok(LoadedCheckpoint { model, ema: ema_opt, opt_state, step })
}

/// Human-readable diff of two configurations (resume guard).
pub fn config_diff(a: &ModelConfig, b: &ModelConfig) -> Vec<String> {
    let mut diffs = Vec::new();
    let mut check = |key: &str, x: usize, y: usize| {
        if x != y {
            diffs.push(format!("{key}: checkpoint {x} vs run {y}"));
        }
    };
    check("layers", a.layers, b.layers);
    check("hidden", a.hidden, b.hidden);
    check("heads", a.heads, b.heads);
    check("patch", a.patch, b.patch);
    check("lora_rank", a.lora_rank, b.lora_rank);
    check("in_channels", a.in_channels, b.in_channels);
    check("max_tokens", a.max_tokens, b.max_tokens);
    check("num_classes", a.num_classes, b.num_classes);
    diffs
}
