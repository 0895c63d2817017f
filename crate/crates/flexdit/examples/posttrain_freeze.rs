//! High-resolution post-training: the freeze classification, the trainable
//! fraction at the reference scale, and a short bias/norm-only run on an
//! extended token budget.
//!
//!     cargo run --release --example posttrain_freeze

use flexdit::adapt::{analytic_trainable_fraction, build_freeze_plan, posttrain};
use flexdit::data::{synth_dataset, DatasetSpec, PreprocessMode, PreprocessPolicy, TokenDataset};
use flexdit::flow::{TimestepSampler, TrainOptions};
use flexdit::model::{Model, ModelConfig};

fn main() {
    // the reference configuration: ~671M parameters, 14.15% trainable
    let xl = ModelConfig::preset("xl").unwrap();
    println!("xl trainable fraction: {:.4}", analytic_trainable_fraction(&xl));

    let cfg = ModelConfig {
        layers: 2,
        hidden: 48,
        heads: 4,
        patch: 2,
        lora_rank: 12,
        in_channels: 4,
        max_tokens: 16,
        num_classes: 4,
    };
    let model = Model::<f32>::init(cfg, 3).unwrap();
    let plan = build_freeze_plan(&model);
    println!("\ntoy plan ({} tensors):", plan.entries.len());
    print!("{}", plan.report());

    // fine-tune on a doubled budget
    let spec = DatasetSpec {
        resolutions: vec![(10, 10, 0.5), (8, 16, 0.5)],
        ..DatasetSpec::toy(4, 128, 11)
    };
    let dataset = TokenDataset::prepare(
        &synth_dataset(&spec).unwrap(),
        &PreprocessPolicy {
            mode: PreprocessMode::Flexible,
            target: 8,
            token_budget: 36,
            patch: 2,
        },
        5,
    )
    .unwrap();
    let opts = TrainOptions {
        batch_size: 4,
        lr: 1e-3,
        warmup: 0,
        ema_decay: 0.99,
        class_drop: 0.1,
        seed: 9,
    };
    let outcome =
        posttrain(model, &dataset, 36, 30, TimestepSampler::Uniform, opts).unwrap();
    let first = outcome.trace.first().unwrap().loss;
    let last = outcome.trace.last().unwrap().loss;
    println!("\n30 post-training steps on budget 36: loss {first:.4} -> {last:.4}");
    println!(
        "extended rope: s_h {:.2}, base_h shift via vision-ntk",
        outcome.rope.factors.s_h
    );
}
