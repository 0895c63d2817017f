//! Rectified-flow objective: straight-line interpolants between noise and
//! data, velocity regression, timestep samplers and classifier-free
//! guidance. Noise sits at `t = 0`, data at `t = 1`.

pub mod ode;
pub mod train;

pub use ode::{integrate, OdeMethod, OdeStats};
pub use train::{BatchSource, TrainOptions, Trainer, TracePoint};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::{ForwardCtx, ForwardPass, Model, TokenBatch};
use crate::rope::RopeTable;
use crate::tensor::{Scalar, Tensor};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Timestep distribution for training.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TimestepSampler {
    Uniform,
    /// `t = sigmoid(u)` with `u ~ Normal(mean, std)`: mass concentrates
    /// mid-schedule where velocity is hardest to learn.
    LogitNormal { mean: f64, std: f64 },
}

impl TimestepSampler {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(TimestepSampler::Uniform),
            "logit_normal" => Ok(TimestepSampler::LogitNormal { mean: 0.0, std: 1.0 }),
            other => Err(Error::config(format!(
                "unknown timestep sampler '{other}' (expected uniform|logit_normal)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TimestepSampler::Uniform => "uniform",
            TimestepSampler::LogitNormal { .. } => "logit_normal",
        }
    }
}

/// Draw a timestep strictly inside (0, 1).
pub fn sample_timestep<T: Scalar, R: Rng + ?Sized>(sampler: &TimestepSampler, rng: &mut R) -> T {
    match sampler {
        TimestepSampler::Uniform => loop {
            let u = T::sample_uniform_01(rng);
            if u > T::zero() {
                return u;
            }
        },
        TimestepSampler::LogitNormal { mean, std } => {
            let normal = Normal::new(*mean, *std).expect("std is validated positive");
            let u: f64 = normal.sample(rng);
            T::from_f64(1.0 / (1.0 + (-u).exp()))
        }
    }
}

/// One interpolant draw: `xt = t*x1 + (1-t)*x0`, target `x1 - x0`.
pub struct InterpolantSample<T> {
    pub x0: Tensor<T>,
    pub x1: Tensor<T>,
    pub t: T,
    pub xt: Tensor<T>,
    pub target_v: Tensor<T>,
}

pub fn make_interpolant<T: Scalar>(x0: Tensor<T>, x1: Tensor<T>, t: T) -> Result<InterpolantSample<T>> {
    if x0.shape() != x1.shape() {
        return Err(Error::shape(format!(
            "interpolant endpoints differ: {:?} vs {:?}",
            x0.shape(),
            x1.shape()
        )));
    }
    let xt = if t == T::zero() {
        x0.clone()
    } else if t == T::one() {
        x1.clone()
    } else {
        let omt = T::one() - t;
        let data = x0
            .data()
            .iter()
            .zip(x1.data())
            .map(|(&a, &b)| t * b + omt * a)
            .collect();
        Tensor::new(x0.shape().to_vec(), data)?
    };
    let target = x1
        .data()
        .iter()
        .zip(x0.data())
        .map(|(&b, &a)| b - a)
        .collect();
    let target_v = Tensor::new(x0.shape().to_vec(), target)?;
    Ok(InterpolantSample { x0, x1, t, xt, target_v })
}

/// Guided velocity: `v_uncond + w * (v_cond - v_uncond)`.
pub fn cfg_velocity<T: Scalar>(v_cond: &[T], v_uncond: &[T], w: f64) -> Vec<T> {
    let wt = T::from_f64(w);
    v_cond
        .iter()
        .zip(v_uncond)
        .map(|(&c, &u)| u + wt * (c - u))
        .collect()
}

/// Flow loss output: the scalar loss var (still on the tape) plus handles.
pub struct FlowLoss {
    pub loss: Var,
    pub value: f64,
    pub pass: ForwardPass,
    pub t: Vec<f64>,
}

/// Build the masked velocity-regression loss for a batch of clean latents.
///
/// Noise is drawn only for valid token slots (in item order), so the loss is
/// exactly invariant to padding content and to growing `L_max`. Timesteps
/// are per item.
#[allow(clippy::too_many_arguments)]
pub fn flow_loss<T: Scalar, R: Rng + ?Sized>(
    tape: &mut Tape<T>,
    model: &Model<T>,
    clean: &TokenBatch<T>,
    labels: &[usize],
    sampler: &TimestepSampler,
    rope: &RopeTable,
    rng: &mut R,
) -> Result<FlowLoss> {
    clean.validate()?;
    let b = clean.batch_size();
    let l_max = clean.l_max();
    let td = clean.token_dim();

    let t: Vec<T> = (0..b).map(|_| sample_timestep(sampler, rng)).collect();

    // interpolate valid slots; padding slots pass through untouched
    let mut xt = clean.clone();
    let mut target = vec![T::zero(); b * l_max * td];
    for (i, &ti) in t.iter().enumerate() {
        let omt = T::one() - ti;
        for p in 0..clean.lens[i] {
            let off = (i * l_max + p) * td;
            for c in 0..td {
                let x1 = clean.tokens.data()[off + c];
                let x0 = T::sample_standard_normal(rng);
                xt.tokens.data_mut()[off + c] = ti * x1 + omt * x0;
                target[off + c] = x1 - x0;
            }
        }
    }

    let pass = model.forward(tape, &xt, &t, labels, &ForwardCtx::new(rope))?;
    let tgt = tape.constant(target, vec![b, l_max, td]);
    let diff = tape.sub(pass.velocity, tgt)?;
    let sq = tape.mul(diff, diff)?;
    let weights = clean.loss_weights(td);
    let weighted = tape.scale_rows(sq, weights)?;
    let loss = tape.sum_all(weighted);
    let value = tape.value(loss)[0].as_f64();
    Ok(FlowLoss { loss, value, pass, t: t.iter().map(|v| v.as_f64()).collect() })
}
