use clap::{Parser, Subcommand};
use flexdit::commands::{
    cmd_adapt, cmd_eval, cmd_report, cmd_sample, cmd_train, report_table, AdaptArgs, EvalArgs,
    SampleArgs,
};
use flexdit::config::RunConfig;
use flexdit::error::{Error, Result};
use flexdit::flow::OdeMethod;
use flexdit::model::ModelConfig;
use flexdit::rope::RopeMethod;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "flexdit", about = "Flexible-resolution diffusion transformer", version)]
struct Cli {
    /// Run configuration file (TOML-style dotted keys).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Root random seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Reproducibility mode: fixed seeds, fixed-order reductions and
    /// fixed-step solvers only.
    #[arg(long, global = true)]
    deterministic: bool,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model from the run configuration.
    Train,
    /// Generate images from a checkpoint.
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        /// Latent height in pixels.
        #[arg(long)]
        height: usize,
        /// Latent width in pixels.
        #[arg(long)]
        width: usize,
        /// Rotary extrapolation: none|pi|ntk|yarn|vision_ntk|vision_yarn.
        #[arg(long, default_value = "none")]
        method: String,
        /// Classifier-free guidance scale (1 = unguided).
        #[arg(long, default_value_t = 1.0)]
        cfg: f64,
        #[arg(long, default_value_t = 4)]
        n: usize,
        /// ODE integrator: euler|rk4|adaptive.
        #[arg(long, default_value = "euler")]
        ode: String,
        #[arg(long, default_value_t = 25)]
        steps: usize,
        /// Enable the long-context attention scale.
        #[arg(long)]
        attn_scale: bool,
        /// Sample from live weights instead of EMA.
        #[arg(long)]
        live: bool,
        /// Fixed class id (default: cycle over classes).
        #[arg(long)]
        class: Option<usize>,
        /// Also write portable-pixmap previews.
        #[arg(long)]
        ppm: bool,
    },
    /// High-resolution post-training from a checkpoint.
    Adapt {
        #[arg(long)]
        from: PathBuf,
        /// Extended token budget.
        #[arg(long)]
        lmax: usize,
        #[arg(long)]
        steps: usize,
    },
    /// Evaluate a checkpoint against a dataset.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Comma-separated latent resolutions, e.g. 16x16,10x20.
        #[arg(long)]
        resolutions: String,
        /// Generated samples per class per resolution.
        #[arg(long, default_value_t = 8)]
        per_class: usize,
        /// Evaluate live weights instead of EMA.
        #[arg(long)]
        live: bool,
    },
    /// Print parameter and FLOP accounting for model presets.
    Report {
        /// Preset name (b|xl|3b); repeatable. Defaults to all three.
        #[arg(long)]
        preset: Vec<String>,
        /// Also report the config-file model.
        #[arg(long)]
        custom: bool,
        /// Token count for the FLOP estimate.
        #[arg(long, default_value_t = 256)]
        tokens: usize,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if cli.deterministic {
        cfg.deterministic = true;
        if matches!(cfg.flow.ode, OdeMethod::Adaptive { .. }) {
            return Err(Error::config(
                "deterministic mode requires a fixed-step solver (flow.ode = euler|rk4)",
            ));
        }
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match &cli.cmd {
        Cmd::Train => {
            let cfg = load_config(&cli)?;
            let log_every = cfg.train.log_every.max(1);
            let out = cmd_train(&cfg, |p| {
                if p.step % log_every == 0 {
                    eprintln!("step {:>6}  loss {:.5}  lr {:.2e}", p.step, p.loss, p.lr);
                }
            })?;
            println!("checkpoint: {}", out.ckpt_dir.display());
            println!("loss trace: {}", out.trace_path.display());
        }
        Cmd::Sample {
            ckpt,
            height,
            width,
            method,
            cfg,
            n,
            ode,
            steps,
            attn_scale,
            live,
            class,
            ppm,
        } => {
            let run_cfg = load_config(&cli)?;
            let ode = OdeMethod::parse(ode, *steps, 1e-5, 1e-5)?;
            if run_cfg.deterministic && !ode.is_fixed_step() {
                return Err(Error::config(
                    "deterministic mode requires a fixed-step solver",
                ));
            }
            let args = SampleArgs {
                ckpt: ckpt.clone(),
                height: *height,
                width: *width,
                method: RopeMethod::parse(method)?,
                cfg_scale: *cfg,
                n: *n,
                seed: run_cfg.seed,
                out: run_cfg.out.join("samples"),
                ode,
                attn_scale: *attn_scale,
                use_ema: !live,
                class: *class,
                ppm: *ppm,
                rope_base: run_cfg.rope.base,
                yarn_alpha: run_cfg.rope.yarn_alpha,
                yarn_beta: run_cfg.rope.yarn_beta,
            };
            let out = cmd_sample(&args)?;
            println!("wrote {} samples to {}", out.paths.len(), args.out.display());
            print!("{}", out.meta.to_text());
        }
        Cmd::Adapt { from, lmax, steps } => {
            let cfg = load_config(&cli)?;
            let args = AdaptArgs {
                from: from.clone(),
                l_max: *lmax,
                steps: *steps,
                out: cfg.out.clone(),
            };
            let out = cmd_adapt(&args, &cfg)?;
            println!("adapted checkpoint: {}", out.ckpt_dir.display());
            println!(
                "trainable fraction: {:.4} ({} of {} parameters)",
                out.plan.fraction(),
                out.plan.trainable_params,
                out.plan.trainable_params + out.plan.frozen_params
            );
        }
        Cmd::Eval { ckpt, dataset, resolutions, per_class, live } => {
            let cfg = load_config(&cli)?;
            let mut parsed = Vec::new();
            for entry in resolutions.split(',') {
                let (h, w) = entry
                    .trim()
                    .split_once('x')
                    .ok_or_else(|| Error::config(format!("resolution '{entry}' not HxW")))?;
                parsed.push((
                    h.parse::<usize>()
                        .map_err(|_| Error::config(format!("bad height '{h}'")))?,
                    w.parse::<usize>()
                        .map_err(|_| Error::config(format!("bad width '{w}'")))?,
                ));
            }
            let args = EvalArgs {
                ckpt: ckpt.clone(),
                dataset: dataset.clone(),
                resolutions: parsed,
                out: cfg.out.clone(),
                per_class: *per_class,
                seed: cfg.seed,
                use_ema: !live,
            };
            let rows = cmd_eval(&args)?;
            for r in &rows {
                println!("{}x{} {} {:.6}", r.resolution.0, r.resolution.1, r.metric, r.value);
            }
            println!("report: {}", cfg.out.join("eval.csv").display());
        }
        Cmd::Report { preset, custom, tokens } => {
            let presets: Vec<&str> = if preset.is_empty() {
                vec!["b", "xl", "3b"]
            } else {
                preset.iter().map(|s| s.as_str()).collect()
            };
            let custom_cfg: Option<ModelConfig> = if *custom {
                Some(load_config(&cli)?.model)
            } else {
                None
            };
            let rows = cmd_report(&presets, custom_cfg.as_ref(), *tokens)?;
            print!("{}", report_table(&rows, *tokens));
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
