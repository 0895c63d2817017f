//! Training-loop contracts: zero-learning-rate bit identity, EMA fixed
//! points, warm-up shape, and the non-finite abort.

mod common;

use flexdit::data::{synth_dataset, DatasetSpec, PreprocessMode, PreprocessPolicy, TokenDataset};
use flexdit::flow::{TimestepSampler, TrainOptions, Trainer};
use flexdit::model::{Model, ModelConfig};
use flexdit::optim::ema_update;

fn tiny() -> (Model<f32>, TokenDataset) {
    let cfg = ModelConfig {
        layers: 1,
        hidden: 32,
        heads: 2,
        patch: 2,
        lora_rank: 8,
        in_channels: 4,
        max_tokens: 16,
        num_classes: 4,
    };
    let model = Model::init(cfg, 4).unwrap();
    let spec = DatasetSpec {
        resolutions: vec![(8, 8, 1.0)],
        ..DatasetSpec::toy(4, 48, 9)
    };
    let dataset = TokenDataset::prepare(
        &synth_dataset(&spec).unwrap(),
        &PreprocessPolicy {
            mode: PreprocessMode::Flexible,
            target: 8,
            token_budget: 16,
            patch: 2,
        },
        1,
    )
    .unwrap();
    (model, dataset)
}

#[test]
fn zero_learning_rate_leaves_weights_bit_identical() {
    let (model, dataset) = tiny();
    let before: Vec<Vec<u8>> = model
        .params
        .entries()
        .iter()
        .map(|e| e.tensor.data().iter().flat_map(|v| v.to_le_bytes()).collect())
        .collect();
    let opts = TrainOptions { batch_size: 4, lr: 0.0, warmup: 0, ema_decay: 0.9, class_drop: 0.0, seed: 2 };
    let rope = Trainer::train_rope(&model).unwrap();
    let mut trainer = Trainer::new(model, TimestepSampler::Uniform, opts);
    trainer.run(&dataset, &rope, 10, |_| {}).unwrap();
    for (e, old) in trainer.model.params.entries().iter().zip(&before) {
        let new: Vec<u8> = e.tensor.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        assert_eq!(&new, old, "{} changed at lr = 0", e.name);
    }
}

#[test]
fn ema_of_constant_weights_is_those_weights() {
    let live = vec![0.25f32, -1.5, 3.0];
    let mut shadow = live.clone();
    for _ in 0..1000 {
        ema_update(&mut shadow, &live, 0.9999).unwrap();
    }
    assert_eq!(shadow, live);
}

#[test]
fn warmup_ramps_linearly_then_holds() {
    let (model, _) = tiny();
    let opts = TrainOptions { batch_size: 4, lr: 1e-3, warmup: 10, ema_decay: 0.9, class_drop: 0.0, seed: 2 };
    let trainer = Trainer::new(model, TimestepSampler::Uniform, opts);
    assert!((trainer.learning_rate_at(0) - 1e-4).abs() < 1e-12);
    assert!((trainer.learning_rate_at(4) - 5e-4).abs() < 1e-12);
    assert!((trainer.learning_rate_at(10) - 1e-3).abs() < 1e-12);
    assert!((trainer.learning_rate_at(500) - 1e-3).abs() < 1e-12);
}

#[test]
fn divergence_aborts_with_step_index() {
    let (model, dataset) = tiny();
    // an absurd learning rate forces non-finite weights within a few steps
    let opts = TrainOptions { batch_size: 4, lr: 1e12, warmup: 0, ema_decay: 0.9, class_drop: 0.0, seed: 2 };
    let rope = Trainer::train_rope(&model).unwrap();
    let mut trainer = Trainer::new(model, TimestepSampler::Uniform, opts);
    let err = trainer
        .run(&dataset, &rope, 50, |_| {})
        .expect_err("divergence must abort");
    let msg = err.to_string();
    assert!(
        msg.contains("step") || msg.contains("non-finite"),
        "unexpected abort message: {msg}"
    );
}
