//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

use super::{Params, ScoreNetwork};
use crate::error::{Error, Result};

/// Whether a step lowers or raises the loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Descend,
    Ascend,
}

impl Direction {
    /// +1 for ascent, -1 for descent.
    pub fn sign(self) -> f64 {
        match self {
            Direction::Ascend => 1.0,
            Direction::Descend => -1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub m: Params,
    pub v: Params,
    pub step: u64,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerState {
    pub fn new(net: &ScoreNetwork, lr: f64, weight_decay: f64) -> Self {
        OptimizerState {
            m: net.params.zeros_like(),
            v: net.params.zeros_like(),
            step: 0,
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One AdamW update. The direction only flips the gradient; weight decay always
/// shrinks the parameters.
pub fn adamw_step(
    net: &mut ScoreNetwork,
    grads: &Params,
    opt: &mut OptimizerState,
    direction: Direction,
) -> Result<()> {
    let shapes_match = |a: &Params| {
        a.tensors()
            .iter()
            .zip(net.params.tensors())
            .all(|((_, x), (_, y))| x.len() == y.len())
            && a.layers.len() == net.params.layers.len()
    };
    if !shapes_match(grads) || !shapes_match(&opt.m) || !shapes_match(&opt.v) {
        return Err(Error::InvalidArgument(
            "gradient or moment shapes differ from the network".into(),
        ));
    }
    opt.step += 1;
    let k = opt.step as i32;
    let bc1 = 1.0 - opt.beta1.powi(k);
    let bc2 = 1.0 - opt.beta2.powi(k);
    let flip = -direction.sign();
    let decay = 1.0 - opt.lr * opt.weight_decay;

    let (b1, b2, lr, eps) = (opt.beta1, opt.beta2, opt.lr, opt.eps);
    let params = net.params.tensors_mut();
    let ms = opt.m.tensors_mut();
    let vs = opt.v.tensors_mut();
    let gs = grads.tensors();
    for (((p, m), v), g) in params.into_iter().zip(ms).zip(vs).zip(gs) {
        for (((pi, mi), vi), gi) in p.1.iter_mut().zip(m.1.iter_mut()).zip(v.1.iter_mut()).zip(g.1) {
            let g = flip * gi;
            *mi = b1 * *mi + (1.0 - b1) * g;
            *vi = b2 * *vi + (1.0 - b2) * g * g;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            *pi = *pi * decay - lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
