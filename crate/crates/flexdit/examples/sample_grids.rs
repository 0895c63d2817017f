//! Train briefly, then sample several aspect ratios — including an
//! out-of-budget grid with NTK-shifted rotary embeddings — and write
//! portable-pixmap previews.
//!
//!     cargo run --release --example sample_grids

use flexdit::data::io::write_ppm;
use flexdit::data::{synth_dataset, DatasetSpec, PreprocessMode, PreprocessPolicy, TokenDataset};
use flexdit::flow::{OdeMethod, TimestepSampler, TrainOptions, Trainer};
use flexdit::model::{Model, ModelConfig};
use flexdit::rope::RopeMethod;
use flexdit::sample::{sample_images, SamplerSetup};

fn main() {
    let cfg = ModelConfig {
        layers: 2,
        hidden: 48,
        heads: 4,
        patch: 2,
        lora_rank: 12,
        in_channels: 4,
        max_tokens: 64,
        num_classes: 4,
    };
    let model = Model::<f32>::init(cfg, 1).unwrap();
    let spec = DatasetSpec::toy(4, 256, 7);
    let dataset = TokenDataset::prepare(
        &synth_dataset(&spec).unwrap(),
        &PreprocessPolicy {
            mode: PreprocessMode::Flexible,
            target: 16,
            token_budget: 64,
            patch: 2,
        },
        3,
    )
    .unwrap();
    let rope = Trainer::train_rope(&model).unwrap();
    let opts = TrainOptions {
        batch_size: 8,
        lr: 3e-4,
        warmup: 10,
        ema_decay: 0.99,
        class_drop: 0.1,
        seed: 5,
    };
    let mut trainer =
        Trainer::new(model, TimestepSampler::LogitNormal { mean: 0.0, std: 1.0 }, opts);
    println!("training 600 steps...");
    trainer.run(&dataset, &rope, 600, |_| {}).unwrap();
    let model = trainer.ema_model();

    let out = std::env::temp_dir().join("flexdit_sample_grids");
    std::fs::create_dir_all(&out).unwrap();

    // in-budget grids at three aspect ratios, then one 1.5x-budget grid
    let runs = [
        ("square", (8, 8), RopeMethod::None),
        ("wide_1x2", (5, 10), RopeMethod::None),
        ("tall_2x1", (10, 5), RopeMethod::None),
        ("oversized_ntk", (8, 12), RopeMethod::VisionNtk),
    ];
    for (name, grid, method) in runs {
        let setup = SamplerSetup {
            method,
            attn_scale: method != RopeMethod::None,
            ode: OdeMethod::Euler { steps: 25 },
            cfg_scale: 1.5,
            ..Default::default()
        };
        let (images, meta) = sample_images(&model, &setup, grid, &[0, 1, 2, 3], 42).unwrap();
        for (i, img) in images.iter().enumerate() {
            write_ppm(&out.join(format!("{name}_class{i}.ppm")), img).unwrap();
        }
        println!(
            "{name}: grid {}x{} method {} s_h {:.2} s_w {:.2} -> {} images",
            grid.0,
            grid.1,
            meta.method.name(),
            meta.s_h,
            meta.s_w,
            images.len()
        );
    }
    println!("previews in {}", out.display());
}
