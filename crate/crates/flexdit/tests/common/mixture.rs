//! Tiny tape-built MLP velocity field trained on a 2-D Gaussian mixture;
//! the "trained toy model" for ODE accuracy checks and the
//! marginal-preservation smoke test.

#![allow(dead_code)]

use flexdit::autodiff::{Tape, Var};
use flexdit::flow::{sample_timestep, TimestepSampler};
use flexdit::optim::{AdamW, AdamWConfig};
use flexdit::tensor::{Scalar, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const HIDDEN: usize = 96;

pub struct MixtureField {
    w1: Tensor<f32>,
    b1: Tensor<f32>,
    w2: Tensor<f32>,
    b2: Tensor<f32>,
    w3: Tensor<f32>,
    b3: Tensor<f32>,
}

pub fn target_sample(rng: &mut ChaCha8Rng) -> [f32; 2] {
    let c = if rng.gen::<f64>() < 0.5 { -2.0 } else { 2.0 };
    [c + 0.5 * f32::sample_standard_normal(rng), 0.5 * f32::sample_standard_normal(rng)]
}

impl MixtureField {
    fn init(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = |shape: Vec<usize>, rng: &mut ChaCha8Rng| {
            Tensor::trunc_normal(shape, 0.2, rng).requires_grad()
        };
        MixtureField {
            w1: t(vec![3, HIDDEN], &mut rng),
            b1: Tensor::zeros(vec![HIDDEN]).requires_grad(),
            w2: t(vec![HIDDEN, HIDDEN], &mut rng),
            b2: Tensor::zeros(vec![HIDDEN]).requires_grad(),
            w3: Tensor::zeros(vec![HIDDEN, 2]).requires_grad(),
            b3: Tensor::zeros(vec![2]).requires_grad(),
        }
    }

    fn forward(&self, tape: &mut Tape<f32>, input: Var) -> (Var, Vec<Var>) {
        let w1 = tape.leaf(&self.w1);
        let b1 = tape.leaf(&self.b1);
        let w2 = tape.leaf(&self.w2);
        let b2 = tape.leaf(&self.b2);
        let w3 = tape.leaf(&self.w3);
        let b3 = tape.leaf(&self.b3);
        let h = tape.matmul(input, w1).unwrap();
        let h = tape.add(h, b1).unwrap();
        let h = tape.silu(h);
        let h2 = tape.matmul(h, w2).unwrap();
        let h2 = tape.add(h2, b2).unwrap();
        let h2 = tape.silu(h2);
        let out = tape.matmul(h2, w3).unwrap();
        let out = tape.add(out, b3).unwrap();
        (out, vec![w1, b1, w2, b2, w3, b3])
    }

    /// Velocity for a flat `[z1, z2, z1, z2, ...]` state at time `t`.
    pub fn velocity(&self, z: &[f32], t: f64) -> Vec<f32> {
        let rows = z.len() / 2;
        let mut input = Vec::with_capacity(rows * 3);
        for r in 0..rows {
            input.extend_from_slice(&[z[2 * r], z[2 * r + 1], t as f32]);
        }
        let mut tape = Tape::new();
        let inp = tape.constant(input, vec![rows, 3]);
        let (v, _) = self.forward(&mut tape, inp);
        tape.value(v).to_vec()
    }
}

/// Train the field for `steps` batches of 256.
pub fn train_mixture_field(steps: usize, seed: u64) -> MixtureField {
    let mut mlp = MixtureField::init(seed);
    let sizes = [3 * HIDDEN, HIDDEN, HIDDEN * HIDDEN, HIDDEN, HIDDEN * 2, 2];
    let mut opt = AdamW::new(AdamWConfig { lr: 3e-3, ..Default::default() }, &sizes);
    let sampler = TimestepSampler::LogitNormal { mean: 0.0, std: 1.0 };
    let batch = 256;

    for step in 0..steps {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (7919 + step as u64));
        let mut input = Vec::with_capacity(batch * 3);
        let mut target = Vec::with_capacity(batch * 2);
        for _ in 0..batch {
            let x1 = target_sample(&mut rng);
            let x0 =
                [f32::sample_standard_normal(&mut rng), f32::sample_standard_normal(&mut rng)];
            let t: f32 = sample_timestep(&sampler, &mut rng);
            input.extend_from_slice(&[
                t * x1[0] + (1.0 - t) * x0[0],
                t * x1[1] + (1.0 - t) * x0[1],
                t,
            ]);
            target.extend_from_slice(&[x1[0] - x0[0], x1[1] - x0[1]]);
        }
        let mut tape = Tape::new();
        let inp = tape.constant(input, vec![batch, 3]);
        let (v, leaves) = mlp.forward(&mut tape, inp);
        let tgt = tape.constant(target, vec![batch, 2]);
        let diff = tape.sub(v, tgt).unwrap();
        let sq = tape.mul(diff, diff).unwrap();
        let sum = tape.sum_all(sq);
        let loss = tape.scale(sum, 1.0 / (batch * 2) as f32);
        tape.backward(loss).unwrap();

        let params: Vec<&mut Tensor<f32>> =
            vec![&mut mlp.w1, &mut mlp.b1, &mut mlp.w2, &mut mlp.b2, &mut mlp.w3, &mut mlp.b3];
        let mut iter_params = Vec::new();
        for (p, &var) in params.into_iter().zip(&leaves) {
            p.zero_grad();
            if let Some(g) = tape.grad(var) {
                p.accumulate_grad(g).unwrap();
            }
            iter_params.push(p);
        }
        // step decay keeps late training from bouncing around the optimum
        let lr = if step * 5 < steps * 3 { 3e-3 } else { 3e-4 };
        opt.step(
            iter_params.into_iter().enumerate().map(|(i, t)| {
                let names = ["w1", "b1", "w2", "b2", "w3", "b3"];
                let (d, g) = t.data_and_grad();
                (names[i], d, g)
            }),
            Some(lr),
        )
        .unwrap();
    }
    mlp
}
