//! Forward diffusion and DDPM ancestral reverse sampling.

use rand::{Rng as _, SeedableRng};
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ScoreModel;
use crate::ot;
use crate::rng::Rng;
use crate::schedule::NoiseSchedule;
use crate::synthdata::{standard_normal, SampleSet};

/// How the reverse chain is started.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReverseMode {
    /// Reverse from the forward-diffused data, so `q_T = p_T`.
    SharedTerminal,
    /// Reverse from fresh `N(0, I)` draws.
    FreshTerminal,
}

impl std::str::FromStr for ReverseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shared-terminal" | "shared" => Ok(ReverseMode::SharedTerminal),
            "fresh-terminal" | "fresh" => Ok(ReverseMode::FreshTerminal),
            _ => Err(Error::Config(format!("unknown reverse mode `{s}`"))),
        }
    }
}

impl std::fmt::Display for ReverseMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ReverseMode::SharedTerminal => "shared-terminal",
            ReverseMode::FreshTerminal => "fresh-terminal",
        })
    }
}

/// `x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) z` with the given noise.
pub fn forward_diffuse_with(sch: &NoiseSchedule, x0: &SampleSet, t: usize, z: &[f64]) -> Result<SampleSet> {
    let (scale, var) = sch.marginal_params(t)?;
    if z.len() != x0.as_slice().len() {
        return Err(Error::SizeMismatch {
            left: x0.as_slice().len(),
            right: z.len(),
        });
    }
    let sd = var.sqrt();
    let data = x0
        .as_slice()
        .iter()
        .zip(z)
        .map(|(x, e)| scale * x + sd * e)
        .collect();
    SampleSet::new(x0.dim(), data)
}

/// One-shot sample of `x_t | x_0` for every point.
pub fn forward_diffuse(sch: &NoiseSchedule, x0: &SampleSet, t: usize, rng: &mut Rng) -> Result<SampleSet> {
    sch.marginal_params(t)?;
    let z: Vec<f64> = (0..x0.as_slice().len()).map(|_| rng.sample(StandardNormal)).collect();
    forward_diffuse_with(sch, x0, t, &z)
}

const CHAINS_PER_TASK: usize = 256;

/// Runs the reverse chain from step `from_t` down to 0:
/// `x_{t-1} = (x_t + beta_t s(x_t, t)) / sqrt(1 - beta_t) + sqrt(beta_t) z`,
/// with no noise on the last step. `from_t = 0` returns the input unchanged.
///
/// Each chain draws from its own substream, so results do not depend on the
/// number of worker threads.
pub fn reverse_from(
    model: &dyn ScoreModel,
    sch: &NoiseSchedule,
    xt: &SampleSet,
    from_t: usize,
    rng: &mut Rng,
) -> Result<SampleSet> {
    if from_t > sch.steps() {
        return Err(Error::TimestepOutOfRange {
            t: from_t,
            steps: sch.steps(),
        });
    }
    if model.dim() != xt.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: xt.dim(),
        });
    }
    let base: u64 = rng.random();
    let mut out = xt.clone();
    if from_t == 0 {
        return Ok(out);
    }
    let d = xt.dim();
    let betas = sch.betas();
    let failures: Vec<usize> = out
        .as_mut_slice()
        .par_chunks_mut(CHAINS_PER_TASK * d)
        .enumerate()
        .filter_map(|(task, chunk)| {
            let first = task * CHAINS_PER_TASK;
            let mut rngs: Vec<Rng> = (0..chunk.len() / d)
                .map(|i| {
                    let mut r = Rng::seed_from_u64(base);
                    r.set_stream((first + i) as u64);
                    r
                })
                .collect();
            let mut s = vec![0.0; chunk.len()];
            for t in (1..=from_t).rev() {
                let beta = betas[t - 1];
                let inv = 1.0 / (1.0 - beta).sqrt();
                let sd = beta.sqrt();
                model.score_batch_into(chunk, t, &mut s);
                for ((x, si), r) in chunk.chunks_exact_mut(d).zip(s.chunks_exact(d)).zip(&mut rngs) {
                    for (xk, sk) in x.iter_mut().zip(si) {
                        *xk = (*xk + beta * sk) * inv;
                        if t > 1 {
                            let z: f64 = r.sample(StandardNormal);
                            *xk += sd * z;
                        }
                    }
                }
                if !chunk.iter().all(|v| v.is_finite()) {
                    return Some(t);
                }
            }
            None
        })
        .collect();
    if let Some(&t) = failures.iter().max() {
        return Err(Error::NonFiniteState { t });
    }
    Ok(out)
}

/// Full reverse chain from `T`.
pub fn reverse_ancestral(model: &dyn ScoreModel, sch: &NoiseSchedule, xt: &SampleSet, rng: &mut Rng) -> Result<SampleSet> {
    reverse_from(model, sch, xt, sch.steps(), rng)
}

/// Output of [`generate`].
#[derive(Clone, Debug)]
pub struct Generated {
    /// Generated data `q_0`.
    pub q0: SampleSet,
    /// The forward-diffused data `p_T`.
    pub p_t: SampleSet,
    /// Empirical `W2(p_T, q_T)`; exactly 0 in shared-terminal mode.
    pub w2_terminal: f64,
}

/// Diffuses `p0` to `T` and generates one sample per input point.
pub fn generate(
    model: &dyn ScoreModel,
    sch: &NoiseSchedule,
    mode: ReverseMode,
    p0: &SampleSet,
    rng: &mut Rng,
) -> Result<Generated> {
    let p_t = forward_diffuse(sch, p0, sch.steps(), rng)?;
    let (start, w2_terminal) = match mode {
        ReverseMode::SharedTerminal => (p_t.clone(), 0.0),
        ReverseMode::FreshTerminal => {
            let fresh = standard_normal(p0.dim(), p0.len(), rng)?;
            let w = ot::w2(&p_t, &fresh)?;
            (fresh, w)
        }
    };
    let q0 = reverse_ancestral(model, sch, &start, rng)?;
    Ok(Generated { q0, p_t, w2_terminal })
}
