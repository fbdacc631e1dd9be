//! AdamW with decoupled weight decay and the warmup/decay schedule.

use crate::corpus::TokenId;

use super::grad::Gradients;
use super::train::TrainConfig;
use super::{Matrix, NeuralM1Params};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First/second moment accumulators shaped like the parameters.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

fn tensor_shapes(params: &NeuralM1Params) -> Vec<usize> {
    vec![
        params.embed_q.data.len(),
        params.embed_d.data.len(),
        params.proj_q.weight.data.len(),
        params.proj_q.bias.len(),
        params.proj_d.weight.data.len(),
        params.proj_d.bias.len(),
        params.f1.weight.data.len(),
        params.f1.bias.len(),
        params.f2.weight.data.len(),
        params.f2.bias.len(),
        params.f3.weight.data.len(),
        params.f3.bias.len(),
    ]
}

impl AdamState {
    pub fn new(params: &NeuralM1Params) -> AdamState {
        let shapes = tensor_shapes(params);
        AdamState {
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// Elementwise AdamW update for one dense tensor slice.
#[allow(clippy::too_many_arguments)]
fn update_dense(
    p: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    wd: f64,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..p.len() {
        p[i] *= 1.0 - lr * wd;
        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        p[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}

/// Zero-gradient update: decay still applies to parameters and moments.
fn update_dense_zero_grad(p: &mut [f64], m: &mut [f64], v: &mut [f64], lr: f64, wd: f64, bc1: f64, bc2: f64) {
    for i in 0..p.len() {
        p[i] *= 1.0 - lr * wd;
        m[i] *= ADAM_BETA1;
        v[i] *= ADAM_BETA2;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        p[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}

fn update_embedding(
    table: &mut Matrix,
    rows: &std::collections::BTreeMap<TokenId, Vec<f64>>,
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    wd: f64,
    bc1: f64,
    bc2: f64,
) {
    let cols = table.cols;
    for r in 0..table.rows {
        let span = r * cols..(r + 1) * cols;
        match rows.get(&(r as TokenId)) {
            Some(g) => update_dense(
                &mut table.data[span.clone()],
                g,
                &mut m[span.clone()],
                &mut v[span],
                lr,
                wd,
                bc1,
                bc2,
            ),
            None => update_dense_zero_grad(
                &mut table.data[span.clone()],
                &mut m[span.clone()],
                &mut v[span],
                lr,
                wd,
                bc1,
                bc2,
            ),
        }
    }
}

/// One AdamW step with bias correction; weight decay is applied as
/// `p <- p * (1 - lr * wd)` before the moment update term. Embedding rows
/// without gradient still decay.
pub fn adamw_step(
    params: &mut NeuralM1Params,
    grads: &Gradients,
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);

    let (m, v) = (&mut state.m, &mut state.v);
    update_embedding(&mut params.embed_q, &grads.embed_q, &mut m[0], &mut v[0], lr, weight_decay, bc1, bc2);
    update_embedding(&mut params.embed_d, &grads.embed_d, &mut m[1], &mut v[1], lr, weight_decay, bc1, bc2);

    let dense: Vec<(&mut Vec<f64>, &Vec<f64>)> = vec![
        (&mut params.proj_q.weight.data, &grads.proj_q.weight.data),
        (&mut params.proj_q.bias, &grads.proj_q.bias),
        (&mut params.proj_d.weight.data, &grads.proj_d.weight.data),
        (&mut params.proj_d.bias, &grads.proj_d.bias),
        (&mut params.f1.weight.data, &grads.f1.weight.data),
        (&mut params.f1.bias, &grads.f1.bias),
        (&mut params.f2.weight.data, &grads.f2.weight.data),
        (&mut params.f2.bias, &grads.f2.bias),
        (&mut params.f3.weight.data, &grads.f3.weight.data),
        (&mut params.f3.bias, &grads.f3.bias),
    ];
    for (i, (p, g)) in dense.into_iter().enumerate() {
        update_dense(p, g, &mut m[i + 2], &mut v[i + 2], lr, weight_decay, bc1, bc2);
    }
}

/// Learning rate at a given step. The base rate decays by `lr_decay` after
/// each epoch; during the warmup window (a fraction of the total step count,
/// confined to epoch 0) the rate ramps linearly from zero.
pub fn lr_at_step(step: usize, steps_per_epoch: usize, epoch: usize, config: &TrainConfig) -> f64 {
    let base = config.base_lr * config.lr_decay.powi(epoch as i32);
    let total_steps = steps_per_epoch * config.epochs;
    let warmup_steps = (config.warmup_frac * total_steps as f64).floor() as usize;
    if epoch == 0 && warmup_steps > 0 && step < warmup_steps {
        config.base_lr * step as f64 / warmup_steps as f64
    } else {
        base
    }
}
