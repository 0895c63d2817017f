//! Run configuration: flat dotted keys in a TOML-compatible text file,
//! validated against a schema (unknown keys are rejected), with the fully
//! resolved configuration persisted next to run outputs.

use crate::data::{DatasetSpec, PreprocessMode};
use crate::error::{Error, Result};
use crate::flow::{OdeMethod, TimestepSampler};
use crate::model::ModelConfig;
use crate::rope::RopeMethod;
use std::collections::BTreeMap;
use std::path::PathBuf;

#[derive(Clone, Debug)]
pub struct RopeOptions {
    pub method: RopeMethod,
    pub base: f64,
    pub yarn_alpha: f64,
    pub yarn_beta: f64,
}

#[derive(Clone, Debug)]
pub struct FlowOptions {
    pub sampler: TimestepSampler,
    pub ode: OdeMethod,
    pub cfg_scale: f64,
}

#[derive(Clone, Debug)]
pub struct TrainSection {
    pub lr: f64,
    pub steps: usize,
    /// Warm-up steps; resolved to 2% of total when unset.
    pub warmup: Option<usize>,
    pub ema: f64,
    pub batch: usize,
    pub class_drop: f64,
    pub ckpt_every: usize,
    pub log_every: usize,
    pub resume: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct DataSection {
    /// Existing dataset directory; when unset the inline spec is
    /// synthesized under the output directory.
    pub path: Option<PathBuf>,
    pub spec: DatasetSpec,
    pub mode: PreprocessMode,
    /// Crop target side for mixed preprocessing, in latent pixels.
    pub target: usize,
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub rope: RopeOptions,
    pub attn_scale: bool,
    pub flow: FlowOptions,
    pub train: TrainSection,
    pub data: DataSection,
    pub seed: u64,
    pub out: PathBuf,
    pub deterministic: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig {
                layers: 4,
                hidden: 96,
                heads: 6,
                patch: 2,
                lora_rank: 24,
                in_channels: 4,
                max_tokens: 64,
                num_classes: 4,
            },
            rope: RopeOptions {
                method: RopeMethod::None,
                base: 10000.0,
                yarn_alpha: 1.0,
                yarn_beta: 32.0,
            },
            attn_scale: false,
            flow: FlowOptions {
                sampler: TimestepSampler::LogitNormal { mean: 0.0, std: 1.0 },
                ode: OdeMethod::Euler { steps: 25 },
                cfg_scale: 1.0,
            },
            train: TrainSection {
                lr: 1e-4,
                steps: 1000,
                warmup: None,
                ema: 0.9999,
                batch: 8,
                class_drop: 0.1,
                ckpt_every: 0,
                log_every: 50,
                resume: None,
            },
            data: DataSection {
                path: None,
                spec: DatasetSpec::toy(4, 512, 0),
                mode: PreprocessMode::Flexible,
                target: 16,
            },
            seed: 0,
            out: PathBuf::from("out"),
            deterministic: false,
        }
    }
}

/// Flatten a parsed TOML document into dotted string keys.
fn flatten(prefix: &str, value: &toml::Value, out: &mut BTreeMap<String, toml::Value>) -> Result<()> {
    match value {
        toml::Value::Table(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out)?;
            }
            Ok(())
        }
        other => {
            out.insert(prefix.to_string(), other.clone());
            Ok(())
        }
    }
}

fn as_usize(key: &str, v: &toml::Value) -> Result<usize> {
    v.as_integer()
        .filter(|&i| i >= 0)
        .map(|i| i as usize)
        .ok_or_else(|| Error::config(format!("{key}: expected a non-negative integer")))
}

fn as_u64(key: &str, v: &toml::Value) -> Result<u64> {
    v.as_integer()
        .filter(|&i| i >= 0)
        .map(|i| i as u64)
        .ok_or_else(|| Error::config(format!("{key}: expected a non-negative integer")))
}

fn as_f64(key: &str, v: &toml::Value) -> Result<f64> {
    v.as_float()
        .or_else(|| v.as_integer().map(|i| i as f64))
        .ok_or_else(|| Error::config(format!("{key}: expected a number")))
}

fn as_bool(key: &str, v: &toml::Value) -> Result<bool> {
    v.as_bool().ok_or_else(|| Error::config(format!("{key}: expected a boolean")))
}

fn as_str<'v>(key: &str, v: &'v toml::Value) -> Result<&'v str> {
    v.as_str().ok_or_else(|| Error::config(format!("{key}: expected a string")))
}

const KNOWN_KEYS: &[&str] = &[
    "model.layers",
    "model.hidden",
    "model.heads",
    "model.patch",
    "model.lora_rank",
    "model.in_channels",
    "model.max_tokens",
    "model.num_classes",
    "rope.method",
    "rope.base",
    "rope.yarn_alpha",
    "rope.yarn_beta",
    "extrapolation.attn_scale",
    "flow.sampler",
    "flow.logit_mean",
    "flow.logit_std",
    "flow.ode",
    "flow.steps",
    "flow.rtol",
    "flow.atol",
    "flow.cfg",
    "train.lr",
    "train.steps",
    "train.warmup",
    "train.ema",
    "train.batch",
    "train.class_drop",
    "train.ckpt_every",
    "train.log_every",
    "train.resume",
    "data.path",
    "data.classes",
    "data.channels",
    "data.count",
    "data.seed",
    "data.resolutions",
    "data.bg_noise",
    "data.fg_noise",
    "data.mode",
    "data.target",
    "seed",
    "out",
    "deterministic",
];

impl RunConfig {
    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|_| Error::config(format!("cannot read config file {}", path.display())))?;
        Self::parse_str(&text)
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let doc: toml::Value = text
            .parse()
            .map_err(|e| Error::config(format!("config parse error: {e}")))?;
        let mut flat = BTreeMap::new();
        flatten("", &doc, &mut flat)?;

        for key in flat.keys() {
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(Error::config(format!("unknown config key '{key}'")));
            }
        }

        let mut cfg = RunConfig::default();
        let mut logit_mean = 0.0f64;
        let mut logit_std = 1.0f64;
        let mut ode_name = "euler".to_string();
        let mut ode_steps = 25usize;
        let mut rtol = 1e-5f64;
        let mut atol = 1e-5f64;

        for (key, v) in &flat {
            match key.as_str() {
                "model.layers" => cfg.model.layers = as_usize(key, v)?,
                "model.hidden" => cfg.model.hidden = as_usize(key, v)?,
                "model.heads" => cfg.model.heads = as_usize(key, v)?,
                "model.patch" => cfg.model.patch = as_usize(key, v)?,
                "model.lora_rank" => cfg.model.lora_rank = as_usize(key, v)?,
                "model.in_channels" => cfg.model.in_channels = as_usize(key, v)?,
                "model.max_tokens" => cfg.model.max_tokens = as_usize(key, v)?,
                "model.num_classes" => cfg.model.num_classes = as_usize(key, v)?,
                "rope.method" => cfg.rope.method = RopeMethod::parse(as_str(key, v)?)?,
                "rope.base" => cfg.rope.base = as_f64(key, v)?,
                "rope.yarn_alpha" => cfg.rope.yarn_alpha = as_f64(key, v)?,
                "rope.yarn_beta" => cfg.rope.yarn_beta = as_f64(key, v)?,
                "extrapolation.attn_scale" => cfg.attn_scale = as_bool(key, v)?,
                "flow.sampler" => cfg.flow.sampler = TimestepSampler::parse(as_str(key, v)?)?,
                "flow.logit_mean" => logit_mean = as_f64(key, v)?,
                "flow.logit_std" => logit_std = as_f64(key, v)?,
                "flow.ode" => ode_name = as_str(key, v)?.to_string(),
                "flow.steps" => ode_steps = as_usize(key, v)?,
                "flow.rtol" => rtol = as_f64(key, v)?,
                "flow.atol" => atol = as_f64(key, v)?,
                "flow.cfg" => cfg.flow.cfg_scale = as_f64(key, v)?,
                "train.lr" => cfg.train.lr = as_f64(key, v)?,
                "train.steps" => cfg.train.steps = as_usize(key, v)?,
                "train.warmup" => cfg.train.warmup = Some(as_usize(key, v)?),
                "train.ema" => cfg.train.ema = as_f64(key, v)?,
                "train.batch" => cfg.train.batch = as_usize(key, v)?,
                "train.class_drop" => cfg.train.class_drop = as_f64(key, v)?,
                "train.ckpt_every" => cfg.train.ckpt_every = as_usize(key, v)?,
                "train.log_every" => cfg.train.log_every = as_usize(key, v)?,
                "train.resume" => cfg.train.resume = Some(PathBuf::from(as_str(key, v)?)),
                "data.path" => cfg.data.path = Some(PathBuf::from(as_str(key, v)?)),
                "data.classes" => cfg.data.spec.classes = as_usize(key, v)?,
                "data.channels" => cfg.data.spec.channels = as_usize(key, v)?,
                "data.count" => cfg.data.spec.count = as_usize(key, v)?,
                "data.seed" => cfg.data.spec.seed = as_u64(key, v)?,
                "data.bg_noise" => cfg.data.spec.bg_noise = as_f64(key, v)?,
                "data.fg_noise" => cfg.data.spec.fg_noise = as_f64(key, v)?,
                "data.resolutions" => {
                    cfg.data.spec.resolutions = parse_resolutions(as_str(key, v)?)?;
                }
                "data.mode" => cfg.data.mode = PreprocessMode::parse(as_str(key, v)?)?,
                "data.target" => cfg.data.target = as_usize(key, v)?,
                "seed" => cfg.seed = as_u64(key, v)?,
                "out" => cfg.out = PathBuf::from(as_str(key, v)?),
                "deterministic" => cfg.deterministic = as_bool(key, v)?,
                _ => unreachable!("validated above"),
            }
        }

        if let TimestepSampler::LogitNormal { .. } = cfg.flow.sampler {
            if logit_std <= 0.0 {
                return Err(Error::config("flow.logit_std must be positive"));
            }
            cfg.flow.sampler = TimestepSampler::LogitNormal { mean: logit_mean, std: logit_std };
        }
        cfg.flow.ode = OdeMethod::parse(&ode_name, ode_steps, rtol, atol)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.flow.ode.validate()?;
        self.data.spec.validate()?;
        if self.flow.cfg_scale < 1.0 {
            return Err(Error::config(format!(
                "flow.cfg {} must be >= 1",
                self.flow.cfg_scale
            )));
        }
        if !(0.0..1.0).contains(&self.train.ema) {
            return Err(Error::config(format!("train.ema {} outside [0, 1)", self.train.ema)));
        }
        if !(0.0..=1.0).contains(&self.train.class_drop) {
            return Err(Error::config("train.class_drop must be in [0, 1]"));
        }
        if self.train.batch == 0 {
            return Err(Error::config("train.batch must be positive"));
        }
        Ok(())
    }

    pub fn warmup_steps(&self) -> usize {
        self.train.warmup.unwrap_or_else(|| (self.train.steps / 50).max(1))
    }

    /// Resolved flat key-value dump (sorted), persisted alongside outputs.
    pub fn resolved_text(&self) -> String {
        let (logit_mean, logit_std) = match self.flow.sampler {
            TimestepSampler::LogitNormal { mean, std } => (mean, std),
            TimestepSampler::Uniform => (0.0, 1.0),
        };
        let (ode_name, ode_steps, rtol, atol) = match self.flow.ode {
            OdeMethod::Euler { steps } => ("euler", steps, 1e-5, 1e-5),
            OdeMethod::Rk4 { steps } => ("rk4", steps, 1e-5, 1e-5),
            OdeMethod::Adaptive { rtol, atol } => ("adaptive", 0, rtol, atol),
        };
        let resolutions = self
            .data
            .spec
            .resolutions
            .iter()
            .map(|&(h, w, wt)| format!("{h}x{w}:{wt}"))
            .collect::<Vec<_>>()
            .join(",");
        let mut pairs: Vec<(String, String)> = vec![
            ("model.layers".into(), self.model.layers.to_string()),
            ("model.hidden".into(), self.model.hidden.to_string()),
            ("model.heads".into(), self.model.heads.to_string()),
            ("model.patch".into(), self.model.patch.to_string()),
            ("model.lora_rank".into(), self.model.lora_rank.to_string()),
            ("model.in_channels".into(), self.model.in_channels.to_string()),
            ("model.max_tokens".into(), self.model.max_tokens.to_string()),
            ("model.num_classes".into(), self.model.num_classes.to_string()),
            ("rope.method".into(), format!("\"{}\"", self.rope.method.name())),
            ("rope.base".into(), format!("{:?}", self.rope.base)),
            ("rope.yarn_alpha".into(), format!("{:?}", self.rope.yarn_alpha)),
            ("rope.yarn_beta".into(), format!("{:?}", self.rope.yarn_beta)),
            ("extrapolation.attn_scale".into(), self.attn_scale.to_string()),
            ("flow.sampler".into(), format!("\"{}\"", self.flow.sampler.name())),
            ("flow.logit_mean".into(), format!("{logit_mean:?}")),
            ("flow.logit_std".into(), format!("{logit_std:?}")),
            ("flow.ode".into(), format!("\"{ode_name}\"")),
            ("flow.steps".into(), ode_steps.to_string()),
            ("flow.rtol".into(), format!("{rtol:?}")),
            ("flow.atol".into(), format!("{atol:?}")),
            ("flow.cfg".into(), format!("{:?}", self.flow.cfg_scale)),
            ("train.lr".into(), format!("{:?}", self.train.lr)),
            ("train.steps".into(), self.train.steps.to_string()),
            ("train.warmup".into(), self.warmup_steps().to_string()),
            ("train.ema".into(), format!("{:?}", self.train.ema)),
            ("train.batch".into(), self.train.batch.to_string()),
            ("train.class_drop".into(), format!("{:?}", self.train.class_drop)),
            ("train.ckpt_every".into(), self.train.ckpt_every.to_string()),
            ("train.log_every".into(), self.train.log_every.to_string()),
            ("data.classes".into(), self.data.spec.classes.to_string()),
            ("data.channels".into(), self.data.spec.channels.to_string()),
            ("data.count".into(), self.data.spec.count.to_string()),
            ("data.seed".into(), self.data.spec.seed.to_string()),
            ("data.bg_noise".into(), format!("{:?}", self.data.spec.bg_noise)),
            ("data.fg_noise".into(), format!("{:?}", self.data.spec.fg_noise)),
            ("data.resolutions".into(), format!("\"{resolutions}\"")),
            (
                "data.mode".into(),
                format!(
                    "\"{}\"",
                    match self.data.mode {
                        PreprocessMode::Flexible => "flexible",
                        PreprocessMode::Mixed => "mixed",
                    }
                ),
            ),
            ("data.target".into(), self.data.target.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("out".into(), format!("\"{}\"", self.out.display())),
            ("deterministic".into(), self.deterministic.to_string()),
        ];
        if let Some(p) = &self.data.path {
            pairs.push(("data.path".into(), format!("\"{}\"", p.display())));
        }
        if let Some(p) = &self.train.resume {
            pairs.push(("train.resume".into(), format!("\"{}\"", p.display())));
        }
        pairs.sort();
        let mut out = String::new();
        for (k, v) in pairs {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}

fn parse_resolutions(text: &str) -> Result<Vec<(usize, usize, f64)>> {
    let mut out = Vec::new();
    for entry in text.split(',') {
        let entry = entry.trim();
        let (dims, weight) = entry
            .split_once(':')
            .ok_or_else(|| Error::config(format!("resolution '{entry}' lacks ':weight'")))?;
        let (h, w) = dims
            .split_once('x')
            .ok_or_else(|| Error::config(format!("resolution '{dims}' not HxW")))?;
        let parse = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::config(format!("bad extent '{s}' in resolutions")))
        };
        out.push((
            parse(h)?,
            parse(w)?,
            weight
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::config(format!("bad weight '{weight}' in resolutions")))?,
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn parse_and_roundtrip() {
        let text = r#"
model.layers = 2
model.hidden = 32
model.heads = 2
model.max_tokens = 16
model.num_classes = 3
rope.method = "vision_ntk"
flow.sampler = "uniform"
flow.ode = "rk4"
flow.steps = 10
train.lr = 0.0003
train.steps = 100
data.count = 32
data.classes = 3
data.resolutions = "8x8:1.0"
seed = 7
"#;
        let cfg = RunConfig::parse_str(text).unwrap();
        assert_eq!(cfg.model.layers, 2);
        assert_eq!(cfg.rope.method, RopeMethod::VisionNtk);
        assert_eq!(cfg.flow.sampler, TimestepSampler::Uniform);
        assert_eq!(cfg.flow.ode, OdeMethod::Rk4 { steps: 10 });
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.data.spec.resolutions, vec![(8, 8, 1.0)]);

        // the resolved dump parses back to the same configuration
        let dump = cfg.resolved_text();
        let cfg2 = RunConfig::parse_str(&dump).unwrap();
        assert_eq!(cfg2.model, cfg.model);
        assert_eq!(cfg2.flow.ode, cfg.flow.ode);
        assert_eq!(cfg2.seed, cfg.seed);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::parse_str("model.depth = 3\n").expect_err("must fail");
        assert!(err.to_string().contains("model.depth"));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn sections_also_accepted() {
        // TOML section headers produce the same dotted keys
        let text = "[model]\nlayers = 3\nhidden = 48\nheads = 4\n[train]\nsteps = 10\n";
        let cfg = RunConfig::parse_str(text).unwrap();
        assert_eq!(cfg.model.layers, 3);
        assert_eq!(cfg.train.steps, 10);
    }

    #[test]
    fn bad_values_are_config_errors() {
        assert!(RunConfig::parse_str("model.layers = \"three\"\n").is_err());
        assert!(RunConfig::parse_str("rope.method = \"bogus\"\n").is_err());
        assert!(RunConfig::parse_str("flow.cfg = 0.5\n").is_err());
    }
}
