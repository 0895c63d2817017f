//! Flexible-resolution diffusion transformer.
//!
//! Variable-length token sequences over arbitrary aspect ratios, decoupled
//! 2-D rotary position embeddings with training-free extrapolation (PI, NTK,
//! YaRN and their per-axis vision variants), masked attention with QK-Norm,
//! SwiGLU feed-forward, low-rank adaptive conditioning, rectified-flow
//! training and ODE sampling, and bias/norm-only high-resolution
//! post-training.
//!
//! The `examples/` directory holds one runnable example per major
//! capability; the `flexdit` binary exposes the same machinery as `train`,
//! `sample`, `adapt`, `eval` and `report` subcommands.

pub mod adapt;
pub mod autodiff;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod flow;
pub mod gradcheck;
pub mod kernels;
pub mod model;
pub mod optim;
pub mod rope;
pub mod sample;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
