//! Shared helpers for the integration and acceptance suites.

#![allow(dead_code)]

pub mod mixture;

use flexdit::autodiff::{Tape, Var};
use flexdit::gradcheck;
use flexdit::model::{Model, ModelConfig, TokenBatch};
use flexdit::rope::{RopeConfig, RopeTable};
use flexdit::tensor::{Scalar, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random batch with per-item grids, zeroed padding.
pub fn make_batch<T: Scalar>(
    grids: &[(usize, usize)],
    l_max: usize,
    token_dim: usize,
    seed: u64,
) -> TokenBatch<T> {
    let b = grids.len();
    let mut r = rng(seed);
    let mut tokens = Tensor::<T>::randn(vec![b, l_max, token_dim], T::one(), &mut r);
    let mut positions = vec![[0.0, 0.0]; b * l_max];
    let mut mask = vec![T::neg_infinity(); b * l_max];
    let mut lens = Vec::new();
    for (i, &(gh, gw)) in grids.iter().enumerate() {
        let len = gh * gw;
        assert!(len <= l_max, "grid {gh}x{gw} exceeds l_max {l_max}");
        lens.push(len);
        for p in 0..len {
            positions[i * l_max + p] = [(p / gw) as f64, (p % gw) as f64];
            mask[i * l_max + p] = T::zero();
        }
        for p in len..l_max {
            for c in 0..token_dim {
                tokens.data_mut()[(i * l_max + p) * token_dim + c] = T::zero();
            }
        }
    }
    TokenBatch { tokens, positions, mask, grids: grids.to_vec(), lens }
}

/// FD check for a loss built from a single leaf tensor. Returns the worst
/// relative error.
pub fn fd_check_unary<F>(shape: &[usize], data: &[f64], build: F) -> f64
where
    F: Fn(&mut Tape<f64>, Var) -> Var,
{
    let t = Tensor::new(shape.to_vec(), data.to_vec()).unwrap().requires_grad();
    let mut tape = Tape::new();
    let v = tape.leaf(&t);
    let loss = build(&mut tape, v);
    assert_eq!(tape.value(loss).len(), 1, "build must produce a scalar loss");
    tape.backward(loss).unwrap();
    let analytic = tape.grad(v).expect("leaf must receive a gradient").to_vec();

    let f = |x: &[f64]| {
        let t = Tensor::new(shape.to_vec(), x.to_vec()).unwrap().requires_grad();
        let mut tape = Tape::new();
        let v = tape.leaf(&t);
        let loss = build(&mut tape, v);
        tape.value(loss)[0]
    };
    gradcheck::check(f, data, &analytic, 1e-4)
}

/// Projection weights to make a sum-loss sensitive to every output entry.
pub fn projection(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..n).map(|_| r.gen::<f64>() * 2.0 - 1.0).collect()
}

pub fn random_vec(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..n).map(|_| r.gen::<f64>() * 2.0 - 1.0).collect()
}

/// Tiny f64 model configuration for oracle-grade gradient checks.
pub fn oracle_config() -> ModelConfig {
    ModelConfig {
        layers: 1,
        hidden: 16,
        heads: 2,
        patch: 2,
        lora_rank: 4,
        in_channels: 4,
        max_tokens: 8,
        num_classes: 2,
    }
}

pub struct BlockCheckSetup {
    pub model: Model<f64>,
    pub batch: TokenBatch<f64>,
    pub rope: RopeTable,
    pub t: Vec<f64>,
    pub labels: Vec<usize>,
    pub target: Vec<f64>,
}

pub fn block_check_setup(seed: u64) -> BlockCheckSetup {
    let cfg = oracle_config();
    let model = Model::<f64>::init(cfg.clone(), seed).unwrap();
    let rope = RopeTable::build(&RopeConfig::new(cfg.head_dim(), 3), 3, 3).unwrap();
    let batch = make_batch::<f64>(&[(2, 2), (2, 3)], 8, cfg.token_dim(), seed ^ 0x5eed);
    let t = vec![0.3, 0.8];
    let labels = vec![0, 2]; // includes the null class
    let target = random_vec(2 * 8 * cfg.token_dim(), seed ^ 0xfeed);
    BlockCheckSetup { model, batch, rope, t, labels, target }
}

/// Masked mean-squared-error between the forward velocity and a fixed
/// target, built on the tape so it is differentiable end to end.
pub fn masked_mse_loss(
    tape: &mut Tape<f64>,
    model: &Model<f64>,
    setup: &BlockCheckSetup,
) -> (Var, flexdit::model::ForwardPass) {
    use flexdit::model::ForwardCtx;
    let pass = model
        .forward(tape, &setup.batch, &setup.t, &setup.labels, &ForwardCtx::new(&setup.rope))
        .unwrap();
    let td = setup.batch.token_dim();
    let tgt = tape.constant(setup.target.clone(), vec![setup.batch.batch_size(), setup.batch.l_max(), td]);
    let diff = tape.sub(pass.velocity, tgt).unwrap();
    let sq = tape.mul(diff, diff).unwrap();
    let weights = setup.batch.loss_weights(td);
    let weighted = tape.scale_rows(sq, weights).unwrap();
    let loss = tape.sum_all(weighted);
    (loss, pass)
}

/// Analytic-vs-numeric gradient comparison across every parameter of the
/// tiny model. Returns (worst relative error, per-parameter errors).
pub fn full_block_gradient_check(seed: u64) -> (f64, Vec<(String, f64)>) {
    let setup = block_check_setup(seed);
    let model = setup.model.clone();

    // analytic gradients
    let mut tape = Tape::new();
    let (loss, pass) = masked_mse_loss(&mut tape, &model, &setup);
    tape.backward(loss).unwrap();
    let analytic: Vec<(String, Vec<f64>)> = model
        .params
        .entries()
        .iter()
        .zip(&pass.leaves)
        .map(|(e, &v)| (e.name.clone(), tape.grad(v).map(|g| g.to_vec()).unwrap_or_default()))
        .collect();

    // numeric gradients, one parameter tensor at a time
    let mut fd_model = model.clone();
    let mut results = Vec::new();
    let mut worst = 0.0f64;
    let step = 1e-4;
    #[allow(clippy::needless_range_loop)]
    for p_idx in 0..fd_model.params.len() {
        let name = fd_model.params.entries()[p_idx].name.clone();
        let n = fd_model.params.entries()[p_idx].tensor.numel();
        let mut numeric = vec![0.0; n];
        for i in 0..n {
            let orig = fd_model.params.entries()[p_idx].tensor.data()[i];
            let eval = |m: &Model<f64>| -> f64 {
                let mut tape = Tape::new();
                let (loss, _) = masked_mse_loss(&mut tape, m, &setup);
                tape.value(loss)[0]
            };
            set_param(&mut fd_model, p_idx, i, orig + step);
            let fp = eval(&fd_model);
            set_param(&mut fd_model, p_idx, i, orig - step);
            let fm = eval(&fd_model);
            set_param(&mut fd_model, p_idx, i, orig);
            numeric[i] = (fp - fm) / (2.0 * step);
        }
        let (_, ana) = &analytic[p_idx];
        let err = if ana.is_empty() {
            // no gradient flowed; numeric must agree it is zero
            numeric.iter().fold(0.0f64, |w, &v| w.max(v.abs()))
        } else {
            gradcheck::max_rel_err(ana, &numeric, 1e-3)
        };
        worst = worst.max(err);
        results.push((name, err));
    }
    (worst, results)
}

fn set_param(model: &mut Model<f64>, p_idx: usize, i: usize, value: f64) {
    let entry = model.params.entries_mut().nth(p_idx).unwrap();
    entry.tensor.data_mut()[i] = value;
}

/// Finite-difference check of every differentiable tape operation against
/// random inputs with a weighted-sum loss. Returns per-op worst errors.
pub fn op_gradient_battery() -> Vec<(String, f64)> {
    let mut results: Vec<(String, f64)> = Vec::new();
    let mut push = |name: &str, err: f64| results.push((name.to_string(), err));

    // matmul, both operands, batched/transposed/shared-rhs forms
    let b_data = random_vec(5 * 3, 1);
    push(
        "matmul_dA",
        fd_check_unary(&[4, 5], &random_vec(20, 2), |tape, v| {
            let b = tape.constant(b_data.clone(), vec![5, 3]);
            let out = tape.matmul(v, b).unwrap();
            tape.sum_all(out)
        }),
    );
    let a_data = random_vec(4 * 5, 3);
    let w53 = projection(4 * 3, 4);
    push(
        "matmul_dB",
        fd_check_unary(&[5, 3], &random_vec(15, 5), |tape, v| {
            let a = tape.constant(a_data.clone(), vec![4, 5]);
            let out = tape.matmul(a, v).unwrap();
            let wv = tape.constant(w53.clone(), vec![4, 3]);
            let prod = tape.mul(out, wv).unwrap();
            tape.sum_all(prod)
        }),
    );
    push(
        "matmul_tb_batched",
        fd_check_unary(&[2, 3, 4], &random_vec(24, 6), |tape, v| {
            let b = tape.constant(random_vec(6 * 4, 7), vec![6, 4]);
            let out = tape.matmul_tb(v, b).unwrap();
            let w = tape.constant(projection(2 * 3 * 6, 8), vec![2, 3, 6]);
            let prod = tape.mul(out, w).unwrap();
            tape.sum_all(prod)
        }),
    );

    // elementwise with trailing broadcast
    let w34 = projection(12, 11);
    for op in ["add", "sub", "mul"] {
        let err = fd_check_unary(&[3, 4], &random_vec(12, 12), |tape, v| {
            let b = tape.constant(random_vec(4, 13), vec![4]);
            let out = match op {
                "add" => tape.add(v, b).unwrap(),
                "sub" => tape.sub(v, b).unwrap(),
                _ => tape.mul(v, b).unwrap(),
            };
            let wv = tape.constant(w34.clone(), vec![3, 4]);
            let prod = tape.mul(out, wv).unwrap();
            tape.sum_all(prod)
        });
        push(op, err);

        let a_fixed = random_vec(12, 14);
        let err = fd_check_unary(&[4], &random_vec(4, 15), |tape, v| {
            let a = tape.constant(a_fixed.clone(), vec![3, 4]);
            let out = match op {
                "add" => tape.add(a, v).unwrap(),
                "sub" => tape.sub(a, v).unwrap(),
                _ => tape.mul(a, v).unwrap(),
            };
            let wv = tape.constant(w34.clone(), vec![3, 4]);
            let prod = tape.mul(out, wv).unwrap();
            tape.sum_all(prod)
        });
        push(&format!("{op}_broadcast"), err);
    }

    push(
        "silu",
        fd_check_unary(&[10], &random_vec(10, 22), |tape, v| {
            let s = tape.silu(v);
            let w = tape.constant(projection(10, 21), vec![10]);
            let prod = tape.mul(s, w).unwrap();
            tape.sum_all(prod)
        }),
    );
    push(
        "softmax_lastdim",
        fd_check_unary(&[3, 6], &random_vec(18, 24), |tape, v| {
            let s = tape.softmax_lastdim(v).unwrap();
            let w = tape.constant(projection(18, 23), vec![3, 6]);
            let prod = tape.mul(s, w).unwrap();
            tape.sum_all(prod)
        }),
    );
    push(
        "layernorm",
        fd_check_unary(&[3, 8], &random_vec(24, 25), |tape, v| {
            let y = tape.layernorm(v, None, None, 1e-6).unwrap();
            let w = tape.constant(projection(24, 26), vec![3, 8]);
            let prod = tape.mul(y, w).unwrap();
            tape.sum_all(prod)
        }),
    );
    let x_fixed = random_vec(3 * 8, 27);
    push(
        "layernorm_affine",
        fd_check_unary(&[8], &random_vec(8, 28), |tape, v| {
            let x = tape.constant(x_fixed.clone(), vec![3, 8]);
            let bias = tape.constant(random_vec(8, 29), vec![8]);
            let y = tape.layernorm(x, Some(v), Some(bias), 1e-6).unwrap();
            let w = tape.constant(projection(24, 30), vec![3, 8]);
            let prod = tape.mul(y, w).unwrap();
            tape.sum_all(prod)
        }),
    );
    push(
        "split_concat",
        fd_check_unary(&[2, 6], &random_vec(12, 31), |tape, v| {
            let parts = tape.split_lastdim(v, &[2, 4]).unwrap();
            let cat = tape.concat_lastdim(&[parts[1], parts[0]]).unwrap();
            let w = tape.constant(projection(12, 32), vec![2, 6]);
            let prod = tape.mul(cat, w).unwrap();
            tape.sum_all(prod)
        }),
    );
    push(
        "transpose12",
        fd_check_unary(&[2, 3, 2, 2], &random_vec(24, 33), |tape, v| {
            let t = tape.transpose12(v).unwrap();
            let w = tape.constant(projection(24, 34), vec![2, 2, 3, 2]);
            let prod = tape.mul(t, w).unwrap();
            tape.sum_all(prod)
        }),
    );
    push(
        "repeat_mid",
        fd_check_unary(&[2, 5], &random_vec(10, 35), |tape, v| {
            let r = tape.repeat_mid(v, 3).unwrap();
            let w = tape.constant(projection(30, 36), vec![2, 3, 5]);
            let prod = tape.mul(r, w).unwrap();
            tape.sum_all(prod)
        }),
    );
    push(
        "mean_lastdim",
        fd_check_unary(&[4, 5], &random_vec(20, 37), |tape, v| {
            let m = tape.mean_lastdim(v).unwrap();
            let w = tape.constant(projection(4, 38), vec![4]);
            let prod = tape.mul(m, w).unwrap();
            tape.sum_all(prod)
        }),
    );
    push(
        "scale_rows",
        fd_check_unary(&[3, 4], &random_vec(12, 39), |tape, v| {
            let s = tape.scale_rows(v, vec![0.5, 0.0, 2.0]).unwrap();
            let w = tape.constant(projection(12, 40), vec![3, 4]);
            let prod = tape.mul(s, w).unwrap();
            tape.sum_all(prod)
        }),
    );
    let cos: Vec<f64> = (0..2 * 4).map(|i| ((i as f64) * 0.7).cos()).collect();
    let sin: Vec<f64> = (0..2 * 4).map(|i| ((i as f64) * 0.7).sin()).collect();
    push(
        "rope2d",
        fd_check_unary(&[1, 2, 2, 8], &random_vec(32, 41), |tape, v| {
            let r = tape.rope2d(v, cos.clone(), sin.clone()).unwrap();
            let w = tape.constant(projection(32, 42), vec![1, 2, 2, 8]);
            let prod = tape.mul(r, w).unwrap();
            tape.sum_all(prod)
        }),
    );
    push(
        "embedding",
        fd_check_unary(&[4, 3], &random_vec(12, 43), |tape, v| {
            let e = tape.embedding(v, &[1, 3, 1]).unwrap();
            let w = tape.constant(projection(9, 44), vec![3, 3]);
            let prod = tape.mul(e, w).unwrap();
            tape.sum_all(prod)
        }),
    );
    push(
        "scale_and_add_scalar",
        fd_check_unary(&[6], &random_vec(6, 45), |tape, v| {
            let a = tape.scale(v, -1.7);
            let b = tape.add_scalar(a, 0.3);
            let w = tape.constant(projection(6, 46), vec![6]);
            let prod = tape.mul(b, w).unwrap();
            tape.sum_all(prod)
        }),
    );
    push(
        "dag_two_consumers",
        fd_check_unary(&[6], &random_vec(6, 47), |tape, v| {
            let a = tape.silu(v);
            let b = tape.scale(v, 1.5);
            let prod = tape.mul(a, b).unwrap();
            tape.sum_all(prod)
        }),
    );

    results
}
