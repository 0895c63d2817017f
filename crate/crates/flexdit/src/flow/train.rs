//! The training loop: AdamW with linear warm-up, EMA shadow weights,
//! classifier-free null-class dropout, and a per-step seeded RNG so resumed
//! runs replay the exact same draws.

use super::{flow_loss, TimestepSampler};
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::model::{Model, TokenBatch};
use crate::optim::{ema_update, AdamW, AdamWConfig};
use crate::rope::{RopeConfig, RopeTable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Anything that can produce training batches of clean latent tokens.
pub trait BatchSource {
    fn sample_batch(
        &self,
        rng: &mut ChaCha8Rng,
        batch_size: usize,
    ) -> Result<(TokenBatch<f32>, Vec<usize>)>;
}

#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub batch_size: usize,
    pub lr: f64,
    /// Linear warm-up length in steps (0 disables).
    pub warmup: usize,
    pub ema_decay: f64,
    /// Probability of replacing a label with the null class.
    pub class_drop: f64,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            batch_size: 8,
            lr: 1e-4,
            warmup: 0,
            ema_decay: 0.9999,
            class_drop: 0.1,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TracePoint {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

/// Mutable training state: model, optimizer moments, EMA shadow, step count.
pub struct Trainer {
    pub model: Model<f32>,
    pub opt: AdamW<f32>,
    pub ema: Vec<Vec<f32>>,
    pub step: usize,
    pub sampler: TimestepSampler,
    pub opts: TrainOptions,
}

impl Trainer {
    pub fn new(model: Model<f32>, sampler: TimestepSampler, opts: TrainOptions) -> Self {
        let sizes = model.params.param_sizes();
        let ema = model.params.entries().iter().map(|e| e.tensor.data().to_vec()).collect();
        let opt = AdamW::new(AdamWConfig { lr: opts.lr, ..Default::default() }, &sizes);
        Trainer { model, opt, ema, step: 0, sampler, opts }
    }

    /// Deterministic per-step RNG derived from the root seed, so a resumed
    /// run replays the exact same data order, timesteps and noise.
    pub fn step_rng(seed: u64, step: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(splitmix(seed ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)))
    }

    pub fn learning_rate_at(&self, step: usize) -> f64 {
        if self.opts.warmup > 0 && step < self.opts.warmup {
            self.opts.lr * (step + 1) as f64 / self.opts.warmup as f64
        } else {
            self.opts.lr
        }
    }

    /// Run `n_steps` training steps; the trace holds one point per step.
    pub fn run<S: BatchSource>(
        &mut self,
        source: &S,
        rope: &RopeTable,
        n_steps: usize,
        mut on_step: impl FnMut(&TracePoint),
    ) -> Result<Vec<TracePoint>> {
        let mut trace = Vec::with_capacity(n_steps);
        for _ in 0..n_steps {
            let point = self.train_step(source, rope)?;
            on_step(&point);
            trace.push(point);
        }
        Ok(trace)
    }

    fn train_step<S: BatchSource>(&mut self, source: &S, rope: &RopeTable) -> Result<TracePoint> {
        let step = self.step;
        let mut rng = Self::step_rng(self.opts.seed, step);
        let (batch, mut labels) = source.sample_batch(&mut rng, self.opts.batch_size)?;
        let null = self.model.config.null_class();
        for label in labels.iter_mut() {
            if self.opts.class_drop > 0.0 && rng.gen::<f64>() < self.opts.class_drop {
                *label = null;
            }
        }

        let mut tape = Tape::new();
        let out = flow_loss(&mut tape, &self.model, &batch, &labels, &self.sampler, rope, &mut rng)?;
        if !out.value.is_finite() {
            return Err(Error::numeric(format!("non-finite loss at step {step}")));
        }
        tape.backward(out.loss)?;
        self.model.params.zero_grads();
        self.model.accumulate_grads(&tape, &out.pass)?;

        let lr = self.learning_rate_at(step);
        let params = self.model.params.entries_mut().map(|e| {
            let (data, grad) = e.tensor.data_and_grad();
            (e.name.as_str(), data, grad)
        });
        self.opt.step(params, Some(lr))?;

        for (shadow, entry) in self.ema.iter_mut().zip(self.model.params.entries()) {
            ema_update(shadow, entry.tensor.data(), self.opts.ema_decay)?;
        }

        self.step += 1;
        Ok(TracePoint { step, loss: out.value, lr })
    }

    /// Clone of the model with EMA weights substituted in.
    pub fn ema_model(&self) -> Model<f32> {
        let mut m = self.model.clone();
        for (entry, shadow) in m.params.entries_mut().zip(&self.ema) {
            entry.tensor.data_mut().copy_from_slice(shadow);
        }
        m
    }

    /// Rope table matching the model's training budget (identity setup).
    pub fn train_rope(model: &Model<f32>) -> Result<RopeTable> {
        let axis = model.config.train_axis_len();
        RopeTable::build(&RopeConfig::new(model.config.head_dim(), axis), axis, axis)
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
