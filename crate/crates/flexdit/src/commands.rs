//! The five user-facing commands, as library functions so tests and the
//! thin binary share one implementation.

use crate::adapt::{posttrain, FreezePlan};
use crate::checkpoint::{config_diff, load_checkpoint, save_checkpoint, CheckpointState};
use crate::config::RunConfig;
use crate::data::{io as data_io, DatasetSpec, ImageSample, PreprocessPolicy, TokenDataset};
use crate::error::{Error, Result};
use crate::eval::{eval_generation, mean_distance, energy_distance, pooled_flat, ValSet};
use crate::flow::{OdeMethod, TracePoint, TrainOptions, Trainer};
use crate::model::accounting::{count_parameters, estimate_flops};
use crate::model::{Model, ModelConfig};
use crate::rope::RopeMethod;
use crate::sample::{sample_images, SampleMeta, SamplerSetup};
use std::fs;
use std::path::PathBuf;

// ── train ────────────────────────────────────────────────────────────

pub struct TrainOutput {
    pub ckpt_dir: PathBuf,
    pub trace_path: PathBuf,
    pub trace: Vec<TracePoint>,
}

/// Load the dataset named by the config, or synthesize it under the output
/// directory when no path is given.
fn resolve_dataset(cfg: &RunConfig) -> Result<Vec<ImageSample>> {
    match &cfg.data.path {
        Some(path) => {
            if !path.join("index").exists() {
                return Err(Error::data(format!(
                    "dataset not found at {} (no index file)",
                    path.display()
                )));
            }
            data_io::load_dataset(path)
        }
        None => {
            let dir = cfg.out.join("dataset");
            if dir.join("index").exists() {
                data_io::load_dataset(&dir)
            } else {
                data_io::write_dataset(&dir, &cfg.data.spec)?;
                data_io::load_dataset(&dir)
            }
        }
    }
}

fn policy_for(cfg: &RunConfig) -> PreprocessPolicy {
    PreprocessPolicy {
        mode: cfg.data.mode,
        target: cfg.data.target,
        token_budget: cfg.model.max_tokens,
        patch: cfg.model.patch,
    }
}

pub fn cmd_train(cfg: &RunConfig, mut progress: impl FnMut(&TracePoint)) -> Result<TrainOutput> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join("run.config"), cfg.resolved_text())?;

    let samples = resolve_dataset(cfg)?;
    let dataset = TokenDataset::prepare(&samples, &policy_for(cfg), cfg.seed ^ 0xDA7A)?;

    let opts = TrainOptions {
        batch_size: cfg.train.batch,
        lr: cfg.train.lr,
        warmup: cfg.warmup_steps(),
        ema_decay: cfg.train.ema,
        class_drop: cfg.train.class_drop,
        seed: cfg.seed,
    };

    let mut trainer = match &cfg.train.resume {
        Some(path) => {
            let loaded = load_checkpoint(path)?;
            let diffs = config_diff(&loaded.model.config, &cfg.model);
            if !diffs.is_empty() {
                return Err(Error::config(format!(
                    "refusing to resume from {}: configuration differs: {}",
                    path.display(),
                    diffs.join("; ")
                )));
            }
            let opt = loaded.optimizer(crate::optim::AdamWConfig {
                lr: cfg.train.lr,
                ..Default::default()
            });
            let mut t = Trainer::new(loaded.model, cfg.flow.sampler, opts);
            if let Some(ema) = loaded.ema {
                t.ema = ema;
            }
            if let Some(opt) = opt {
                t.opt = opt;
            }
            t.step = loaded.step;
            t
        }
        None => {
            let model = Model::<f32>::init(cfg.model.clone(), cfg.seed)?;
            Trainer::new(model, cfg.flow.sampler, opts)
        }
    };

    let rope = Trainer::train_rope(&trainer.model)?;
    let trace_path = cfg.out.join("loss.csv");
    let mut csv = String::from("step,loss,lr\n");
    let mut full_trace: Vec<TracePoint> = Vec::new();

    while trainer.step < cfg.train.steps {
        let remaining = cfg.train.steps - trainer.step;
        let chunk = if cfg.train.ckpt_every > 0 {
            remaining.min(cfg.train.ckpt_every)
        } else {
            remaining
        };
        let trace = trainer.run(&dataset, &rope, chunk, &mut progress)?;
        for p in &trace {
            csv.push_str(&format!("{},{:?},{:?}\n", p.step, p.loss, p.lr));
        }
        full_trace.extend(trace);
        if cfg.train.ckpt_every > 0 && trainer.step < cfg.train.steps {
            let dir = cfg.out.join(format!("ckpt-{}", trainer.step));
            save_checkpoint(
                &dir,
                &CheckpointState {
                    model: &trainer.model,
                    ema: Some(&trainer.ema),
                    opt: Some(&trainer.opt),
                    step: trainer.step,
                },
            )?;
        }
    }

    let ckpt_dir = cfg.out.join("ckpt-final");
    save_checkpoint(
        &ckpt_dir,
        &CheckpointState {
            model: &trainer.model,
            ema: Some(&trainer.ema),
            opt: Some(&trainer.opt),
            step: trainer.step,
        },
    )?;
    fs::write(&trace_path, csv)?;
    Ok(TrainOutput { ckpt_dir, trace_path, trace: full_trace })
}

// ── sample ───────────────────────────────────────────────────────────

pub struct SampleArgs {
    pub ckpt: PathBuf,
    /// Latent pixel extents; must divide by the model patch size.
    pub height: usize,
    pub width: usize,
    pub method: RopeMethod,
    pub cfg_scale: f64,
    pub n: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub ode: OdeMethod,
    pub attn_scale: bool,
    /// Sample from EMA weights when the checkpoint carries them.
    pub use_ema: bool,
    pub class: Option<usize>,
    pub ppm: bool,
    pub rope_base: f64,
    pub yarn_alpha: f64,
    pub yarn_beta: f64,
}

impl SampleArgs {
    pub fn new(ckpt: PathBuf, height: usize, width: usize, out: PathBuf) -> Self {
        SampleArgs {
            ckpt,
            height,
            width,
            method: RopeMethod::None,
            cfg_scale: 1.0,
            n: 4,
            seed: 0,
            out,
            ode: OdeMethod::Euler { steps: 25 },
            attn_scale: false,
            use_ema: true,
            class: None,
            ppm: false,
            rope_base: 10000.0,
            yarn_alpha: 1.0,
            yarn_beta: 32.0,
        }
    }
}

pub struct SampleOutput {
    pub meta: SampleMeta,
    pub paths: Vec<PathBuf>,
    /// Set when an out-of-budget grid ran without an extrapolation method.
    pub warned: bool,
}

pub fn cmd_sample(args: &SampleArgs) -> Result<SampleOutput> {
    let loaded = load_checkpoint(&args.ckpt)?;
    let model = match (args.use_ema, loaded.ema) {
        (true, Some(ema)) => {
            let mut m = loaded.model;
            for (entry, shadow) in m.params.entries_mut().zip(&ema) {
                entry.tensor.data_mut().copy_from_slice(shadow);
            }
            m
        }
        _ => loaded.model,
    };
    let p = model.config.patch;
    if !args.height.is_multiple_of(p) || !args.width.is_multiple_of(p) {
        return Err(Error::config(format!(
            "extents {}x{} not divisible by patch {p}",
            args.height, args.width
        )));
    }
    let grid = (args.height / p, args.width / p);
    let oversize = grid.0 * grid.1 > model.config.max_tokens;
    let warned = oversize && args.method == RopeMethod::None;
    if warned {
        eprintln!(
            "warning: grid {}x{} exceeds the training budget {} with no extrapolation method; proceeding with direct extrapolation",
            grid.0, grid.1, model.config.max_tokens
        );
    }

    let setup = SamplerSetup {
        method: args.method,
        rope_base: args.rope_base,
        yarn_alpha: args.yarn_alpha,
        yarn_beta: args.yarn_beta,
        attn_scale: args.attn_scale,
        ode: args.ode,
        cfg_scale: args.cfg_scale,
    };
    let labels: Vec<usize> = (0..args.n)
        .map(|i| args.class.unwrap_or(i % model.config.num_classes))
        .collect();
    let (images, meta) = sample_images(&model, &setup, grid, &labels, args.seed)?;

    fs::create_dir_all(&args.out)?;
    let mut paths = Vec::new();
    for (i, img) in images.iter().enumerate() {
        let path = args.out.join(format!("{i:04}.sample"));
        data_io::write_sample(
            &path,
            &ImageSample {
                latent: img.clone(),
                label: labels[i],
                source_size: (args.height, args.width),
            },
        )?;
        if args.ppm {
            data_io::write_ppm(&args.out.join(format!("{i:04}.ppm")), img)?;
        }
        paths.push(path);
    }
    fs::write(args.out.join("metadata"), meta.to_text())?;
    Ok(SampleOutput { meta, paths, warned })
}

// ── adapt ────────────────────────────────────────────────────────────

pub struct AdaptArgs {
    pub from: PathBuf,
    pub l_max: usize,
    pub steps: usize,
    pub out: PathBuf,
}

pub struct AdaptOutput {
    pub ckpt_dir: PathBuf,
    pub plan: FreezePlan,
    pub trace: Vec<TracePoint>,
}

pub fn cmd_adapt(args: &AdaptArgs, cfg: &RunConfig) -> Result<AdaptOutput> {
    let loaded = load_checkpoint(&args.from)?;
    let model = loaded.model;

    fs::create_dir_all(&args.out)?;
    // high-resolution dataset from the run config spec, prepared against
    // the extended budget
    let samples = resolve_dataset(cfg)?;
    let policy = PreprocessPolicy {
        mode: cfg.data.mode,
        target: cfg.data.target,
        token_budget: args.l_max,
        patch: model.config.patch,
    };
    let dataset = TokenDataset::prepare(&samples, &policy, cfg.seed ^ 0xAD47)?;

    let opts = TrainOptions {
        batch_size: cfg.train.batch,
        lr: cfg.train.lr,
        warmup: 0,
        ema_decay: cfg.train.ema,
        class_drop: cfg.train.class_drop,
        seed: cfg.seed ^ 0x9057,
    };
    let outcome = posttrain(model, &dataset, args.l_max, args.steps, cfg.flow.sampler, opts)?;

    fs::write(args.out.join("freeze_plan.txt"), outcome.plan.report())?;
    let mut csv = String::from("step,loss,lr\n");
    for p in &outcome.trace {
        csv.push_str(&format!("{},{:?},{:?}\n", p.step, p.loss, p.lr));
    }
    fs::write(args.out.join("adapt_loss.csv"), csv)?;

    let ckpt_dir = args.out.join("ckpt-adapted");
    save_checkpoint(
        &ckpt_dir,
        &CheckpointState {
            model: &outcome.trainer.model,
            ema: Some(&outcome.trainer.ema),
            opt: Some(&outcome.trainer.opt),
            step: outcome.trainer.step,
        },
    )?;
    Ok(AdaptOutput { ckpt_dir, plan: outcome.plan, trace: outcome.trace })
}

// ── eval ─────────────────────────────────────────────────────────────

pub struct EvalArgs {
    pub ckpt: PathBuf,
    pub dataset: PathBuf,
    /// Latent pixel resolutions to evaluate.
    pub resolutions: Vec<(usize, usize)>,
    pub out: PathBuf,
    pub per_class: usize,
    pub seed: u64,
    pub use_ema: bool,
}

pub struct EvalRow {
    pub resolution: (usize, usize),
    pub metric: String,
    pub value: f64,
}

pub fn cmd_eval(args: &EvalArgs) -> Result<Vec<EvalRow>> {
    let loaded = load_checkpoint(&args.ckpt)?;
    let model = match (args.use_ema, loaded.ema) {
        (true, Some(ema)) => {
            let mut m = loaded.model;
            for (entry, shadow) in m.params.entries_mut().zip(&ema) {
                entry.tensor.data_mut().copy_from_slice(shadow);
            }
            m
        }
        _ => loaded.model,
    };

    let spec_text = fs::read_to_string(args.dataset.join("dataset.spec")).map_err(|_| {
        Error::data(format!("missing dataset.spec in {}", args.dataset.display()))
    })?;
    let spec: DatasetSpec = data_io::parse_spec(&spec_text)?;
    let p = model.config.patch;
    let setup = SamplerSetup::default();
    let mut rows = Vec::new();

    for &(h, w) in &args.resolutions {
        if h % p != 0 || w % p != 0 {
            return Err(Error::config(format!("resolution {h}x{w} not divisible by patch {p}")));
        }
        let grid = (h / p, w / p);

        // masked validation loss at this resolution, fixed protocol
        let val_samples: Vec<ImageSample> = {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(args.seed ^ 0x55AA);
            (0..32)
                .map(|i| crate::data::generate_sample_at(&spec, i % spec.classes, (h, w), &mut rng))
                .collect()
        };
        let val = ValSet::build(&val_samples, p, grid.0 * grid.1, 8, args.seed ^ 0x11)?;
        let rope = crate::sample::rope_for_grid(
            model.config.head_dim(),
            model.config.train_axis_len(),
            &setup,
            grid,
        )?;
        rows.push(EvalRow {
            resolution: (h, w),
            metric: "val_loss".into(),
            value: val.loss(&model, &rope)?,
        });

        // per-class statistic distances of generated samples
        let evals =
            eval_generation(&model, &setup, &spec, grid, p, args.per_class, 64, args.seed ^ 0x22)?;
        for e in &evals {
            rows.push(EvalRow {
                resolution: (h, w),
                metric: format!("stat_distance_class_{}", e.class),
                value: e.stat_distance,
            });
        }
        rows.push(EvalRow {
            resolution: (h, w),
            metric: "stat_distance_mean".into(),
            value: mean_distance(&evals),
        });

        // energy distance between pooled generated and reference clouds
        let labels: Vec<usize> = (0..args.per_class * spec.classes)
            .map(|i| i % spec.classes)
            .collect();
        let (gen_images, _) = sample_images(&model, &setup, grid, &labels, args.seed ^ 0x33)?;
        let gen_cloud: Vec<Vec<f64>> = gen_images.iter().map(|t| pooled_flat(t, 4, 4)).collect();
        let ref_cloud: Vec<Vec<f64>> = {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(args.seed ^ 0x44);
            (0..labels.len())
                .map(|i| {
                    pooled_flat(
                        &crate::data::generate_sample_at(&spec, i % spec.classes, (h, w), &mut rng)
                            .latent,
                        4,
                        4,
                    )
                })
                .collect()
        };
        rows.push(EvalRow {
            resolution: (h, w),
            metric: "energy_distance".into(),
            value: energy_distance(&gen_cloud, &ref_cloud),
        });
    }

    fs::create_dir_all(&args.out)?;
    let mut csv = String::from("resolution,metric,value\n");
    for r in &rows {
        csv.push_str(&format!("{}x{},{},{:?}\n", r.resolution.0, r.resolution.1, r.metric, r.value));
    }
    fs::write(args.out.join("eval.csv"), csv)?;
    Ok(rows)
}

// ── report ───────────────────────────────────────────────────────────

pub struct ReportRow {
    pub name: String,
    pub config: ModelConfig,
    pub params: u64,
    pub gflops: f64,
}

pub fn cmd_report(presets: &[&str], custom: Option<&ModelConfig>, tokens: usize) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();
    for name in presets {
        let cfg = ModelConfig::preset(name)?;
        rows.push(ReportRow {
            name: name.to_string(),
            params: count_parameters(&cfg).total,
            gflops: estimate_flops(&cfg, tokens) / 1e9,
            config: cfg,
        });
    }
    if let Some(cfg) = custom {
        cfg.validate()?;
        rows.push(ReportRow {
            name: "custom".into(),
            params: count_parameters(cfg).total,
            gflops: estimate_flops(cfg, tokens) / 1e9,
            config: cfg.clone(),
        });
    }
    Ok(rows)
}

pub fn report_table(rows: &[ReportRow], tokens: usize) -> String {
    let mut out = format!(
        "{:<8} {:>6} {:>7} {:>6} {:>5} {:>10} {:>12}\n",
        "model", "layers", "hidden", "heads", "patch", "params(M)", format!("gflops@L{tokens}")
    );
    for r in rows {
        out.push_str(&format!(
            "{:<8} {:>6} {:>7} {:>6} {:>5} {:>10.1} {:>12.1}\n",
            r.name,
            r.config.layers,
            r.config.hidden,
            r.config.heads,
            r.config.patch,
            r.params as f64 / 1e6,
            r.gflops
        ));
    }
    out
}
