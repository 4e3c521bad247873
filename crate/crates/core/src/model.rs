//! The score-model interface and closed-form reference models.

use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;

/// A time-indexed vector field `s(x, t)` on R^d, with `t` in `1..=T`.
pub trait ScoreModel: Sync {
    fn dim(&self) -> usize;

    /// Writes `s(x, t)` into `out`. Callers guarantee `x.len() == out.len() == dim()`
    /// and a valid timestep.
    fn score_into(&self, x: &[f64], t: usize, out: &mut [f64]);

    fn score(&self, x: &[f64], t: usize) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.score_into(x, t, &mut out);
        out
    }

    /// Evaluates many row-major points at one timestep.
    fn score_batch_into(&self, xs: &[f64], t: usize, out: &mut [f64]) {
        let d = self.dim();
        for (x, o) in xs.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
            self.score_into(x, t, o);
        }
    }

    fn score_batch(&self, xs: &[f64], t: usize) -> Vec<f64> {
        let mut out = vec![0.0; xs.len()];
        self.score_batch_into(xs, t, &mut out);
        out
    }
}

/// Exact marginal score of the forward process when `p_0 = N(mean, var0 I)`:
/// `p_t = N(sqrt(ab) mean, (ab var0 + 1 - ab) I)`.
#[derive(Clone, Debug)]
pub struct GaussianScore {
    schedule: NoiseSchedule,
    mean: Vec<f64>,
    var0: f64,
}

impl GaussianScore {
    pub fn new(schedule: NoiseSchedule, mean: Vec<f64>, var0: f64) -> Result<Self> {
        if mean.is_empty() {
            return Err(Error::InvalidArgument("empty mean".into()));
        }
        if !(var0 >= 0.0) {
            return Err(Error::InvalidArgument(format!("variance {var0}")));
        }
        Ok(GaussianScore {
            schedule,
            mean,
            var0,
        })
    }

    /// Variance of the time-`t` marginal.
    pub fn marginal_var(&self, t: usize) -> f64 {
        let ab = self.schedule.alpha_bars()[t - 1];
        ab * self.var0 + 1.0 - ab
    }
}

impl ScoreModel for GaussianScore {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn score_into(&self, x: &[f64], t: usize, out: &mut [f64]) {
        let ab = self.schedule.alpha_bars()[t - 1];
        let scale = ab.sqrt();
        let var = ab * self.var0 + 1.0 - ab;
        for ((o, xi), m) in out.iter_mut().zip(x).zip(&self.mean) {
            *o = -(xi - scale * m) / var;
        }
    }
}

/// Exact marginal score for an equal-weight isotropic Gaussian mixture
/// `p_0 = (1/K) sum_k N(m_k, v_k I)`.
#[derive(Clone, Debug)]
pub struct MixtureScore {
    schedule: NoiseSchedule,
    components: Vec<(Vec<f64>, f64)>,
}

impl MixtureScore {
    pub fn new(schedule: NoiseSchedule, components: Vec<(Vec<f64>, f64)>) -> Result<Self> {
        let d = components
            .first()
            .ok_or(Error::Empty("mixture components"))?
            .0
            .len();
        if components.iter().any(|(m, _)| m.len() != d) {
            return Err(Error::InvalidArgument("ragged mixture means".into()));
        }
        Ok(MixtureScore {
            schedule,
            components,
        })
    }
}

impl ScoreModel for MixtureScore {
    fn dim(&self) -> usize {
        self.components[0].0.len()
    }

    fn score_into(&self, x: &[f64], t: usize, out: &mut [f64]) {
        let ab = self.schedule.alpha_bars()[t - 1];
        let scale = ab.sqrt();
        let d = x.len() as f64;
        // log-responsibilities, stabilised by the max
        let logw: Vec<f64> = self
            .components
            .iter()
            .map(|(m, v)| {
                let var = ab * v + 1.0 - ab;
                let r2: f64 = x.iter().zip(m).map(|(a, b)| (a - scale * b).powi(2)).sum();
                -0.5 * r2 / var - 0.5 * d * var.ln()
            })
            .collect();
        let top = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logw.iter().map(|l| (l - top).exp()).collect();
        let z: f64 = w.iter().sum();
        out.iter_mut().for_each(|o| *o = 0.0);
        for (wk, (m, v)) in w.iter().zip(&self.components) {
            let var = ab * v + 1.0 - ab;
            for ((o, xi), mi) in out.iter_mut().zip(x).zip(m) {
                *o += wk / z * (-(xi - scale * mi) / var);
            }
        }
    }
}

/// Wraps a closure as a score model.
pub struct FnScore<F> {
    dim: usize,
    f: F,
}

impl<F> FnScore<F>
where
    F: Fn(&[f64], usize, &mut [f64]) + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        FnScore { dim, f }
    }
}

impl<F> ScoreModel for FnScore<F>
where
    F: Fn(&[f64], usize, &mut [f64]) + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn score_into(&self, x: &[f64], t: usize, out: &mut [f64]) {
        (self.f)(x, t, out)
    }
}
