//! Train a small model on the synthetic multi-resolution dataset and print
//! the loss trajectory.
//!
//!     cargo run --release --example train_tiny

use flexdit::data::{synth_dataset, DatasetSpec, PreprocessMode, PreprocessPolicy, TokenDataset};
use flexdit::flow::{TimestepSampler, TrainOptions, Trainer};
use flexdit::model::{Model, ModelConfig};

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
    let samples = synth_dataset(&spec).unwrap();
    let policy = PreprocessPolicy {
        mode: PreprocessMode::Flexible,
        target: 16,
        token_budget: 64,
        patch: 2,
    };
    let dataset = TokenDataset::prepare(&samples, &policy, 3).unwrap();
    println!("dataset: {} items ({} skipped)", dataset.items.len(), dataset.skipped);

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
    trainer
        .run(&dataset, &rope, 400, |p| {
            if p.step % 50 == 0 {
                println!("step {:>4}  loss {:.4}  lr {:.2e}", p.step, p.loss, p.lr);
            }
        })
        .unwrap();
}
