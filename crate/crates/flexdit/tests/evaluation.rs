//! Metric calibration: the data-generating oracle scores at the sampling
//! noise floor, an untrained model scores far above it.

mod common;

use flexdit::data::{
    channel_stats, class_reference_stats, generate_sample_at, stat_distance, DatasetSpec,
};
use flexdit::eval::{eval_generation, mean_distance};
use flexdit::flow::OdeMethod;
use flexdit::model::{Model, ModelConfig};
use flexdit::sample::SamplerSetup;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn oracle_scores_at_noise_floor_untrained_model_far_above() {
    let spec = DatasetSpec::toy(4, 1, 31);
    let n = 24;
    let resolution = (16, 16);

    // noise floor: independent generator draws against the reference stats
    let mut floor = 0.0f64;
    for class in 0..spec.classes {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + class as u64);
        let oracle_draws: Vec<_> = (0..n)
            .map(|_| generate_sample_at(&spec, class, resolution, &mut rng).latent)
            .collect();
        let gen_stats = channel_stats(&oracle_draws);
        let ref_stats = class_reference_stats(&spec, class, resolution, 96, 7);
        floor = floor.max(stat_distance(&gen_stats, &ref_stats));
    }

    // negative control: an untrained model's samples
    let cfg = ModelConfig {
        layers: 1,
        hidden: 32,
        heads: 2,
        patch: 2,
        lora_rank: 8,
        in_channels: 4,
        max_tokens: 64,
        num_classes: 4,
    };
    let untrained = Model::<f32>::init(cfg, 9).unwrap();
    let setup = SamplerSetup { ode: OdeMethod::Euler { steps: 8 }, ..Default::default() };
    let evals = eval_generation(&untrained, &setup, &spec, (8, 8), 2, n, 96, 55).unwrap();
    let untrained_distance = mean_distance(&evals);

    assert!(
        untrained_distance > 4.0 * floor,
        "untrained {untrained_distance:.4} vs noise floor {floor:.4}"
    );
}
