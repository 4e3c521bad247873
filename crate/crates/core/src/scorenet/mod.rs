//! A small time-conditioned MLP score model with hand-written backpropagation.
//!
//! Each layer is `pre = W a + b + E[t]`, where `E` is a per-timestep additive
//! embedding table. Hidden layers apply ReLU; the last layer is linear and,
//! with `final_skip`, the input is added to the output.

mod adamw;
mod io;
mod regularize;

pub use adamw::{adamw_step, Direction, OptimizerState};
pub use io::{load_network, save_network, NetworkSidecar};
pub use regularize::{spectral_norm_estimate, spectral_normalize, weight_clip};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ScoreModel;
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub dim: usize,
    pub hidden: usize,
    /// Number of affine maps.
    pub depth: usize,
    /// Rows in each embedding table.
    pub steps: usize,
    pub final_skip: bool,
}

impl NetworkConfig {
    pub fn new(dim: usize, steps: usize) -> Self {
        NetworkConfig {
            dim,
            hidden: 64,
            depth: 4,
            steps,
            final_skip: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.hidden == 0 || self.depth == 0 || self.steps == 0 {
            return Err(Error::Config(format!("degenerate network config {self:?}")));
        }
        Ok(())
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        (0..self.depth)
            .map(|l| {
                let i = if l == 0 { self.dim } else { self.hidden };
                let o = if l + 1 == self.depth { self.dim } else { self.hidden };
                (i, o)
            })
            .collect()
    }
}

/// One affine map plus its timestep embedding table.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim x in_dim`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    /// Row-major `steps x out_dim`; row `t - 1` is added at timestep `t`.
    pub embed: Vec<f64>,
}

impl Layer {
    fn zeros(in_dim: usize, out_dim: usize, steps: usize) -> Self {
        Layer {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
            embed: vec![0.0; steps * out_dim],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Embedding,
}

/// A full set of parameter-shaped buffers: network weights, gradients, or
/// optimizer moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub layers: Vec<Layer>,
}

impl Params {
    pub fn zeros(config: &NetworkConfig) -> Self {
        Params {
            layers: config
                .layer_dims()
                .into_iter()
                .map(|(i, o)| Layer::zeros(i, o, config.steps))
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Params {
            layers: self
                .layers
                .iter()
                .map(|l| Layer::zeros(l.in_dim, l.out_dim, l.embed.len() / l.out_dim))
                .collect(),
        }
    }

    /// Tensors in serialization order: for each layer, weight, bias, embedding.
    pub fn tensors(&self) -> Vec<(ParamKind, &[f64])> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    (ParamKind::Weight, l.weight.as_slice()),
                    (ParamKind::Bias, l.bias.as_slice()),
                    (ParamKind::Embedding, l.embed.as_slice()),
                ]
            })
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<(ParamKind, &mut [f64])> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    (ParamKind::Weight, l.weight.as_mut_slice()),
                    (ParamKind::Bias, l.bias.as_mut_slice()),
                    (ParamKind::Embedding, l.embed.as_mut_slice()),
                ]
            })
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn scale(&mut self, c: f64) {
        for (_, t) in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= c);
        }
    }

    fn add_assign(&mut self, other: &Params) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// The score network `s_theta(x, t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreNetwork {
    pub config: NetworkConfig,
    pub params: Params,
}

/// Scratch space for a forward/backward pass.
#[derive(Clone, Debug)]
pub struct Workspace {
    /// Pre-activations per layer.
    pre: Vec<Vec<f64>>,
    /// Layer inputs: `acts[0]` is x, `acts[l]` the input of layer l.
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Workspace {
    pub fn new(config: &NetworkConfig) -> Self {
        let dims = config.layer_dims();
        let width = dims.iter().map(|(i, o)| (*i).max(*o)).max().unwrap_or(1);
        Workspace {
            pre: dims.iter().map(|(_, o)| vec![0.0; *o]).collect(),
            acts: dims.iter().map(|(i, _)| vec![0.0; *i]).collect(),
            delta: vec![0.0; width],
            delta_prev: vec![0.0; width],
        }
    }
}

/// One training example: input, timestep, regression target and loss weight.
#[derive(Clone, Copy, Debug)]
pub struct Example<'a> {
    pub x: &'a [f64],
    pub t: usize,
    pub target: &'a [f64],
    pub weight: f64,
}

impl ScoreNetwork {
    /// All-zero parameters.
    pub fn zeros(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let params = Params::zeros(&config);
        Ok(ScoreNetwork { config, params })
    }

    /// Glorot-uniform weights; zero biases and embeddings.
    pub fn init(config: NetworkConfig, rng: &mut Rng) -> Result<Self> {
        let mut net = ScoreNetwork::zeros(config)?;
        for layer in &mut net.params.layers {
            let limit = (6.0 / (layer.in_dim + layer.out_dim) as f64).sqrt();
            for w in &mut layer.weight {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(net)
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn steps(&self) -> usize {
        self.config.steps
    }

    fn check(&self, x: &[f64], t: usize) -> Result<()> {
        if x.len() != self.config.dim {
            return Err(Error::DimensionMismatch {
                expected: self.config.dim,
                got: x.len(),
            });
        }
        if t == 0 || t > self.config.steps {
            return Err(Error::TimestepOutOfRange {
                t,
                steps: self.config.steps,
            });
        }
        Ok(())
    }

    /// Evaluates `s_theta(x, t)`.
    pub fn forward_eval(&self, x: &[f64], t: usize) -> Result<Vec<f64>> {
        self.check(x, t)?;
        let mut ws = Workspace::new(&self.config);
        let mut out = vec![0.0; self.config.dim];
        self.forward_ws(x, t, &mut ws, &mut out);
        Ok(out)
    }

    /// Forward pass that keeps intermediate values in `ws` for backprop.
    pub fn forward_ws(&self, x: &[f64], t: usize, ws: &mut Workspace, out: &mut [f64]) {
        let depth = self.params.layers.len();
        ws.acts[0].copy_from_slice(x);
        for (l, layer) in self.params.layers.iter().enumerate() {
            let emb = &layer.embed[(t - 1) * layer.out_dim..t * layer.out_dim];
            let (input, pre) = (&ws.acts[l], &mut ws.pre[l]);
            for (o, p) in pre.iter_mut().enumerate() {
                let row = &layer.weight[o * layer.in_dim..(o + 1) * layer.in_dim];
                let dot: f64 = row.iter().zip(input.iter()).map(|(w, a)| w * a).sum();
                *p = dot + layer.bias[o] + emb[o];
            }
            if l + 1 < depth {
                for (a, p) in ws.acts[l + 1].iter_mut().zip(ws.pre[l].iter()) {
                    *a = p.max(0.0);
                }
            }
        }
        let last = &ws.pre[depth - 1];
        for ((o, p), xi) in out.iter_mut().zip(last).zip(x) {
            *o = if self.config.final_skip { p + xi } else { *p };
        }
    }

    /// Accumulates into `grads` the gradient of `0.5 * weight * |s(x,t) - target|^2`
    /// scaled by `coef`, and returns the unscaled per-example loss.
    fn accumulate(
        &self,
        ex: &Example<'_>,
        coef: f64,
        ws: &mut Workspace,
        out: &mut [f64],
        grads: &mut Params,
    ) -> f64 {
        self.forward_ws(ex.x, ex.t, ws, out);
        let depth = self.params.layers.len();
        let mut sq = 0.0;
        let d = self.config.dim;
        for j in 0..d {
            let r = out[j] - ex.target[j];
            sq += r * r;
            // d(loss)/d(out) = weight * residual; the skip term has no parameters.
            ws.delta[j] = coef * ex.weight * r;
        }
        for l in (0..depth).rev() {
            let layer = &self.params.layers[l];
            let g = &mut grads.layers[l];
            let (n_in, n_out) = (layer.in_dim, layer.out_dim);
            let input = &ws.acts[l];
            let row0 = (ex.t - 1) * n_out;
            for o in 0..n_out {
                let dl = ws.delta[o];
                if dl == 0.0 {
                    continue;
                }
                g.bias[o] += dl;
                g.embed[row0 + o] += dl;
                let grow = &mut g.weight[o * n_in..(o + 1) * n_in];
                for (gw, a) in grow.iter_mut().zip(input.iter()) {
                    *gw += dl * a;
                }
            }
            if l == 0 {
                break;
            }
            // Back through W and the ReLU of layer l - 1.
            let prev_pre = &ws.pre[l - 1];
            for i in 0..n_in {
                ws.delta_prev[i] = 0.0;
            }
            for o in 0..n_out {
                let dl = ws.delta[o];
                if dl == 0.0 {
                    continue;
                }
                let row = &layer.weight[o * n_in..(o + 1) * n_in];
                for (dp, w) in ws.delta_prev[..n_in].iter_mut().zip(row) {
                    *dp += dl * w;
                }
            }
            for i in 0..n_in {
                ws.delta[i] = if prev_pre[i] > 0.0 {
                    ws.delta_prev[i]
                } else {
                    0.0
                };
            }
        }
        0.5 * ex.weight * sq
    }

    /// Mean weighted loss `mean_i 0.5 w_i |s(x_i, t_i) - y_i|^2` over the batch and
    /// its exact parameter gradient.
    pub fn backward_grads(&self, batch: &[Example<'_>]) -> Result<(f64, Params)> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let mut grads = self.params.zeros_like();
        let mut ws = Workspace::new(&self.config);
        let mut out = vec![0.0; self.config.dim];
        let coef = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        for ex in batch {
            self.check(ex.x, ex.t)?;
            if ex.target.len() != self.config.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.config.dim,
                    got: ex.target.len(),
                });
            }
            total += self.accumulate(ex, coef, &mut ws, &mut out, &mut grads);
        }
        Ok((total * coef, grads))
    }

    /// Mean weighted loss only.
    pub fn batch_loss(&self, batch: &[Example<'_>]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let mut ws = Workspace::new(&self.config);
        let mut out = vec![0.0; self.config.dim];
        let mut total = 0.0;
        for ex in batch {
            self.check(ex.x, ex.t)?;
            self.forward_ws(ex.x, ex.t, &mut ws, &mut out);
            let sq: f64 = out
                .iter()
                .zip(ex.target)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            total += 0.5 * ex.weight * sq;
        }
        Ok(total / batch.len() as f64)
    }

    /// Adds `c * other` to the parameters.
    pub fn axpy(&mut self, c: f64, other: &Params) {
        let mut scaled = other.clone();
        scaled.scale(c);
        self.params.add_assign(&scaled);
    }
}

impl ScoreModel for ScoreNetwork {
    fn dim(&self) -> usize {
        self.config.dim
    }

    fn score_into(&self, x: &[f64], t: usize, out: &mut [f64]) {
        let mut ws = Workspace::new(&self.config);
        self.forward_ws(x, t, &mut ws, out);
    }

    fn score_batch_into(&self, xs: &[f64], t: usize, out: &mut [f64]) {
        let d = self.config.dim;
        let mut ws = Workspace::new(&self.config);
        for (x, o) in xs.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
            self.forward_ws(x, t, &mut ws, o);
        }
    }
}
