//! DDPM noise schedules and closed-form forward-process quantities.
//!
//! The forward chain is `x_t = sqrt(1 - beta_t) x_{t-1} + sqrt(beta_t) z`, i.e. the
//! drift `f(x, t) = -beta_t x / 2` and diffusion `g(t) = sqrt(beta_t)` with
//! stationary law N(0, I). Timesteps are 1-based; integrals over `[0, T]` are
//! unit-step Riemann sums over `t = 1..=T`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
    /// Stationary standard deviation; 1 for the DDPM parameterisation.
    pub sigma: f64,
}

impl NoiseSchedule {
    /// Builds a schedule from explicit betas.
    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        if let Some(b) = beta.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::Config(format!("beta {b} outside (0, 1)")));
        }
        let alpha_bar = beta
            .iter()
            .scan(1.0, |acc, b| {
                *acc *= 1.0 - b;
                Some(*acc)
            })
            .collect();
        Ok(NoiseSchedule {
            beta,
            alpha_bar,
            sigma: 1.0,
        })
    }

    /// Sigmoid-shaped schedule from `beta1` to `beta_t` over `steps` steps.
    ///
    /// The logistic curve is sampled on a uniform grid over [-6, 6] and then
    /// mapped affinely so the first and last betas equal the requested endpoints.
    /// With a single step the schedule is `[beta_t]`.
    pub fn sigmoid(steps: usize, beta1: f64, beta_t: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        if !(beta1 > 0.0 && beta1 < beta_t && beta_t < 1.0) {
            return Err(Error::Config(format!(
                "need 0 < beta1 < betaT < 1, got {beta1} and {beta_t}"
            )));
        }
        if steps == 1 {
            return NoiseSchedule::from_betas(vec![beta_t]);
        }
        let logistic = |u: f64| 1.0 / (1.0 + (-u).exp());
        let s: Vec<f64> = (0..steps)
            .map(|i| logistic(-6.0 + 12.0 * i as f64 / (steps - 1) as f64))
            .collect();
        let (lo, hi) = (s[0], s[steps - 1]);
        let mut beta: Vec<f64> = s
            .iter()
            .map(|v| beta1 + (beta_t - beta1) * (v - lo) / (hi - lo))
            .collect();
        beta[0] = beta1;
        beta[steps - 1] = beta_t;
        NoiseSchedule::from_betas(beta)
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    fn check(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.steps() {
            Err(Error::TimestepOutOfRange {
                t,
                steps: self.steps(),
            })
        } else {
            Ok(t - 1)
        }
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        Ok(self.beta[self.check(t)?])
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        Ok(self.alpha_bar[self.check(t)?])
    }

    /// `(sqrt(alpha_bar_t), 1 - alpha_bar_t)`: scale and variance of `x_t | x_0`.
    pub fn marginal_params(&self, t: usize) -> Result<(f64, f64)> {
        let ab = self.alpha_bar(t)?;
        Ok((ab.sqrt(), 1.0 - ab))
    }

    /// Conditional score `-(x - sqrt(ab) x0) / (1 - ab)` of `x_t | x_0`.
    pub fn conditional_score(&self, t: usize, x: &[f64], x0: &[f64]) -> Result<Vec<f64>> {
        if x.len() != x0.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                got: x0.len(),
            });
        }
        let (scale, var) = self.marginal_params(t)?;
        Ok(x.iter()
            .zip(x0)
            .map(|(xi, x0i)| -(xi - scale * x0i) / var)
            .collect())
    }

    /// Lipschitz constant of the drift `-beta_t x / 2`.
    pub fn lipschitz_lf(&self, t: usize) -> Result<f64> {
        Ok(self.beta(t)? / 2.0)
    }

    /// The drift `f(x, t)`.
    pub fn drift(&self, t: usize, x: &[f64]) -> Result<Vec<f64>> {
        let b = self.beta(t)?;
        Ok(x.iter().map(|v| -0.5 * b * v).collect())
    }

    /// `g(t)^2 = sigma^2 beta_t`.
    pub fn g2(&self, t: usize) -> Result<f64> {
        Ok(self.sigma * self.sigma * self.beta(t)?)
    }

    /// Sum of betas over `1..=t`.
    pub fn cumulative_beta(&self, t: usize) -> f64 {
        self.beta[..t.min(self.steps())].iter().sum()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        wtr.write_record(["t", "beta", "alpha_bar"])?;
        for (i, (b, ab)) in self.beta.iter().zip(&self.alpha_bar).enumerate() {
            wtr.write_record([(i + 1).to_string(), b.to_string(), ab.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn default10() -> NoiseSchedule {
        NoiseSchedule::sigmoid(10, 1e-5, 1e-2).unwrap()
    }

    #[test]
    fn sigmoid_endpoints_are_exact() {
        let s = default10();
        assert_eq!(s.beta(1).unwrap(), 1e-5);
        assert_eq!(s.beta(10).unwrap(), 1e-2);
        assert!(s.betas().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn invalid_ranges_are_rejected() {
        assert!(NoiseSchedule::sigmoid(1, 0.1, 0.1).is_err());
        assert!(NoiseSchedule::sigmoid(10, 0.2, 0.1).is_err());
        assert!(NoiseSchedule::sigmoid(10, 0.0, 0.1).is_err());
        assert!(NoiseSchedule::sigmoid(10, 0.1, 1.0).is_err());
        assert!(NoiseSchedule::sigmoid(0, 1e-5, 1e-2).is_err());
        assert!(NoiseSchedule::from_betas(vec![0.1, 1.5]).is_err());
    }

    #[test]
    fn alpha_bar_is_the_product() {
        let s = default10();
        let mut direct = 1.0;
        for t in 1..=10 {
            direct *= 1.0 - s.beta(t).unwrap();
            assert!((s.alpha_bar(t).unwrap() - direct).abs() < 1e-15);
        }
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
        assert!(s.alpha_bars().iter().all(|a| *a > 0.0 && *a < 1.0));
    }

    // Composing the one-step kernels N(sqrt(1-b) x, b) analytically:
    // scale_k = prod sqrt(1-b_r), var_k = (1-b_k) var_{k-1} + b_k.
    #[test]
    fn marginals_match_stepwise_composition() {
        for s in [default10(), NoiseSchedule::sigmoid(200, 1e-5, 1e-2).unwrap()] {
            let (mut scale, mut var) = (1.0f64, 0.0f64);
            for t in 1..=s.steps() {
                let b = s.beta(t).unwrap();
                scale *= (1.0 - b).sqrt();
                var = (1.0 - b) * var + b;
                let (ms, mv) = s.marginal_params(t).unwrap();
                assert!((ms - scale).abs() < 1e-12);
                assert!((mv - var).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn marginal_limits() {
        let tiny = NoiseSchedule::from_betas(vec![1e-12; 5]).unwrap();
        let (sc, v) = tiny.marginal_params(5).unwrap();
        assert!((sc - 1.0).abs() < 1e-10 && v < 1e-10);
        let long = NoiseSchedule::sigmoid(5000, 1e-4, 2e-2).unwrap();
        let (sc, v) = long.marginal_params(5000).unwrap();
        assert!(sc < 1e-10 && (v - 1.0).abs() < 1e-10);
        assert!(long.marginal_params(0).is_err());
        assert!(long.marginal_params(5001).is_err());
    }

    #[test]
    fn conditional_score_zero_at_mode() {
        let s = default10();
        let x0 = [0.3, -1.2];
        let (scale, _) = s.marginal_params(4).unwrap();
        let x: Vec<f64> = x0.iter().map(|v| v * scale).collect();
        let sc = s.conditional_score(4, &x, &x0).unwrap();
        assert!(sc.iter().all(|v| v.abs() < 1e-9));
        assert!(s.conditional_score(4, &[1.0], &x0).is_err());
    }

    #[test]
    fn conditional_score_arithmetic() {
        // alpha_bar = 0.75 after a single step of beta = 0.25.
        let s = NoiseSchedule::from_betas(vec![0.25]).unwrap();
        let got = s.conditional_score(1, &[2.0], &[2.0]).unwrap()[0];
        let want = -(2.0 - 0.75f64.sqrt() * 2.0) / 0.25;
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn conditional_score_matches_finite_differences() {
        let s = default10();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for t in [1, 3, 10] {
            let (scale, var) = s.marginal_params(t).unwrap();
            let x0 = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let x = [
                scale * x0[0] + rng.random_range(-1.0..1.0) * var.sqrt(),
                scale * x0[1] + rng.random_range(-1.0..1.0) * var.sqrt(),
            ];
            let logp = |y: &[f64]| -> f64 {
                y.iter()
                    .zip(&x0)
                    .map(|(yi, x0i)| {
                        let d = yi - scale * x0i;
                        -0.5 * d * d / var - 0.5 * (2.0 * std::f64::consts::PI * var).ln()
                    })
                    .sum()
            };
            let analytic = s.conditional_score(t, &x, &x0).unwrap();
            for j in 0..2 {
                let h = 1e-3 * var.sqrt();
                let mut xp = x;
                let mut xm = x;
                xp[j] += h;
                xm[j] -= h;
                let fd = (logp(&xp) - logp(&xm)) / (2.0 * h);
                let rel = (fd - analytic[j]).abs() / analytic[j].abs().max(1e-12);
                assert!(rel < 1e-6, "t={t} rel={rel}");
            }
        }
    }

    #[test]
    fn drift_lipschitz_constant() {
        let s = default10();
        assert!((s.lipschitz_lf(10).unwrap() - 0.005).abs() < 1e-18);
        assert!((s.lipschitz_lf(1).unwrap() - 5e-6).abs() < 1e-20);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for t in 1..=10 {
            let lf = s.lipschitz_lf(t).unwrap();
            let x: Vec<f64> = (0..2).map(|_| rng.random_range(-3.0..3.0)).collect();
            let y: Vec<f64> = (0..2).map(|_| rng.random_range(-3.0..3.0)).collect();
            let fx = s.drift(t, &x).unwrap();
            let fy = s.drift(t, &y).unwrap();
            let num = fx.iter().zip(&fy).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let den = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!((num - lf * den).abs() < 1e-14);
        }
    }

    #[test]
    fn csv_dump() {
        let mut buf = Vec::new();
        default10().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,beta,alpha_bar\n1,0.00001,"));
        assert_eq!(text.lines().count(), 11);
    }
}
