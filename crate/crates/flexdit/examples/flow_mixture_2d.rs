//! Rectified flow on a 2-D Gaussian mixture with a small tape-built MLP:
//! train the velocity field, transport noise through the ODE, and measure
//! the energy distance to held-out target samples.
//!
//!     cargo run --release --example flow_mixture_2d

use flexdit::autodiff::{Tape, Var};
use flexdit::eval::energy_distance;
use flexdit::flow::{integrate, sample_timestep, OdeMethod, TimestepSampler};
use flexdit::optim::{AdamW, AdamWConfig};
use flexdit::tensor::{Scalar, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const HIDDEN: usize = 64;

struct Mlp {
    w1: Tensor<f32>, // [3, HIDDEN] on (z1, z2, t)
    b1: Tensor<f32>,
    w2: Tensor<f32>, // [HIDDEN, HIDDEN]
    b2: Tensor<f32>,
    w3: Tensor<f32>, // [HIDDEN, 2]
    b3: Tensor<f32>,
}

impl Mlp {
    fn init(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = |shape: Vec<usize>, rng: &mut ChaCha8Rng| {
            Tensor::trunc_normal(shape, 0.2, rng).requires_grad()
        };
        Mlp {
            w1: t(vec![3, HIDDEN], &mut rng),
            b1: Tensor::zeros(vec![HIDDEN]).requires_grad(),
            w2: t(vec![HIDDEN, HIDDEN], &mut rng),
            b2: Tensor::zeros(vec![HIDDEN]).requires_grad(),
            w3: Tensor::zeros(vec![HIDDEN, 2]).requires_grad(),
            b3: Tensor::zeros(vec![2]).requires_grad(),
        }
    }

    fn params(&mut self) -> Vec<(&str, &mut Tensor<f32>)> {
        vec![
            ("w1", &mut self.w1),
            ("b1", &mut self.b1),
            ("w2", &mut self.w2),
            ("b2", &mut self.b2),
            ("w3", &mut self.w3),
            ("b3", &mut self.b3),
        ]
    }

    /// Velocity for a batch of (z, t) rows; input shape [n, 3].
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
}

fn target_sample(rng: &mut ChaCha8Rng) -> [f32; 2] {
    // two-component mixture: centers (-2, 0) and (2, 0), std 0.5
    let c = if rng.gen::<f64>() < 0.5 { -2.0 } else { 2.0 };
    [
        c + 0.5 * f32::sample_standard_normal(rng),
        0.5 * f32::sample_standard_normal(rng),
    ]
}

fn main() {
    let mut mlp = Mlp::init(1);
    let mut opt = AdamW::new(
        AdamWConfig { lr: 3e-3, ..Default::default() },
        &[3 * HIDDEN, HIDDEN, HIDDEN * HIDDEN, HIDDEN, HIDDEN * 2, 2],
    );
    let sampler = TimestepSampler::LogitNormal { mean: 0.0, std: 1.0 };
    let batch = 256;

    println!("training the 2-D velocity field...");
    for step in 0..1500 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + step as u64);
        let mut input = Vec::with_capacity(batch * 3);
        let mut target = Vec::with_capacity(batch * 2);
        for _ in 0..batch {
            let x1 = target_sample(&mut rng);
            let x0 = [
                f32::sample_standard_normal(&mut rng),
                f32::sample_standard_normal(&mut rng),
            ];
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
        if step % 300 == 0 {
            println!("step {:>4}  loss {:.4}", step, tape.value(loss)[0]);
        }
        tape.backward(loss).unwrap();
        for (p, &var) in mlp.params().into_iter().zip(&leaves) {
            p.1.zero_grad();
            if let Some(g) = tape.grad(var) {
                p.1.accumulate_grad(g).unwrap();
            }
        }
        opt.step(
            mlp.params().into_iter().map(|(n, t)| {
                let (d, g) = t.data_and_grad();
                (n, d, g)
            }),
            None,
        )
        .unwrap();
    }

    // transport noise through the learned field
    println!("transporting 10000 noise samples...");
    let n = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let z0: Vec<f32> = (0..n * 2).map(|_| f32::sample_standard_normal(&mut rng)).collect();
    let velocity = |z: &[f32], t: f64| {
        let rows = z.len() / 2;
        let mut input = Vec::with_capacity(rows * 3);
        for r in 0..rows {
            input.extend_from_slice(&[z[2 * r], z[2 * r + 1], t as f32]);
        }
        let mut tape = Tape::new();
        let inp = tape.constant(input, vec![rows, 3]);
        let (v, _) = mlp.forward(&mut tape, inp);
        Ok(tape.value(v).to_vec())
    };
    let (z1, _) = integrate(velocity, z0, &OdeMethod::Rk4 { steps: 40 }).unwrap();

    let generated: Vec<Vec<f64>> =
        (0..n).map(|i| vec![z1[2 * i] as f64, z1[2 * i + 1] as f64]).collect();
    let held_out: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let s = target_sample(&mut rng);
            vec![s[0] as f64, s[1] as f64]
        })
        .collect();
    let e = energy_distance(&generated, &held_out);
    println!("energy distance generated vs held-out target: {e:.5}");

    let mode_split = generated.iter().filter(|p| p[0] > 0.0).count() as f64 / n as f64;
    println!("fraction in the right mode: {mode_split:.3} (target 0.5)");
}
