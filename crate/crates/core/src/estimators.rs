//! Kernel density estimates, the plug-in J_SM estimator, grid search for
//! one-sided Lipschitz constants and the Gaussian reference quantities.

use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ScoreModel;
use crate::rng::Rng;
use crate::sampler::forward_diffuse;
use crate::schedule::NoiseSchedule;
use crate::synthdata::SampleSet;

/// Floor applied to KDE densities before taking logs.
pub const DENSITY_FLOOR: f64 = 1e-12;

/// Isotropic Gaussian kernel density estimate over a support set.
#[derive(Clone, Debug)]
pub struct KdeModel {
    support: SampleSet,
    bandwidth: f64,
}

impl KdeModel {
    pub fn new(support: SampleSet, bandwidth: f64) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::Empty("KDE support"));
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::InvalidArgument(format!("bandwidth {bandwidth}")));
        }
        Ok(KdeModel { support, bandwidth })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn support(&self) -> &SampleSet {
        &self.support
    }

    fn norm(&self) -> f64 {
        let d = self.support.dim() as f64;
        (2.0 * std::f64::consts::PI * self.bandwidth * self.bandwidth).powf(-0.5 * d)
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.support.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.support.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// `(1/n) sum_i N(x; x_i, h^2 I)`, unfloored.
    pub fn density(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        Ok(self.density_unchecked(x))
    }

    fn density_unchecked(&self, x: &[f64]) -> f64 {
        let inv = -0.5 / (self.bandwidth * self.bandwidth);
        let sum: f64 = self
            .support
            .points()
            .map(|p| {
                let r2: f64 = p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                (inv * r2).exp()
            })
            .sum();
        self.norm() * sum / self.support.len() as f64
    }

    /// Log density with the floor applied.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        Ok(self.density(x)?.max(DENSITY_FLOOR).ln())
    }

    /// Central-difference estimate of `grad log p(x)`.
    pub fn score(&self, x: &[f64], fd_step: f64) -> Result<Vec<f64>> {
        self.check(x)?;
        if !(fd_step > 0.0) {
            return Err(Error::InvalidArgument(format!("finite-difference step {fd_step}")));
        }
        let mut out = vec![0.0; x.len()];
        self.score_fd_into(x, fd_step, &mut out);
        Ok(out)
    }

    /// All `2d` shifted densities in one pass over the support, using
    /// `|x +- h e_j - p|^2 = r^2 +- 2h (x_j - p_j) + h^2`.
    fn score_fd_into(&self, x: &[f64], fd: f64, out: &mut [f64]) {
        let d = x.len();
        let inv = -0.5 / (self.bandwidth * self.bandwidth);
        let mut plus = vec![0.0; d];
        let mut minus = vec![0.0; d];
        for p in self.support.points() {
            let r2: f64 = p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            for j in 0..d {
                let c = 2.0 * fd * (x[j] - p[j]);
                let base = r2 + fd * fd;
                plus[j] += (inv * (base + c)).exp();
                minus[j] += (inv * (base - c)).exp();
            }
        }
        let scale = self.norm() / self.support.len() as f64;
        for j in 0..d {
            let lp = (plus[j] * scale).max(DENSITY_FLOOR).ln();
            let lm = (minus[j] * scale).max(DENSITY_FLOOR).ln();
            out[j] = (lp - lm) / (2.0 * fd);
        }
    }

    /// Exact gradient of the log of the (unfloored) mixture density.
    pub fn score_exact(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        let h2 = self.bandwidth * self.bandwidth;
        // Weights relative to the nearest support point keep this finite far out.
        let r2s: Vec<f64> = self
            .support
            .points()
            .map(|p| p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum())
            .collect();
        let rmin = r2s.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut num = vec![0.0; x.len()];
        let mut den = 0.0;
        for (p, r2) in self.support.points().zip(&r2s) {
            let w = (-0.5 * (r2 - rmin) / h2).exp();
            den += w;
            for ((n, pj), xj) in num.iter_mut().zip(p).zip(x) {
                *n += w * (pj - xj) / h2;
            }
        }
        Ok(num.into_iter().map(|n| n / den).collect())
    }
}

/// Per-timestep and total plug-in estimates of the score-matching loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JsmEstimate {
    /// `sum_t 0.5 beta_t b(t)`.
    pub total: f64,
    /// `b(t) = mean |kde_score - s(x, t)|^2` for `t = 1..=T`.
    pub per_t: Vec<f64>,
}

/// Estimates `J_SM` with `lambda = beta`. At each `t` the data are diffused,
/// a KDE is fitted on the diffused batch and compared to the model on
/// `n_per_t` points of that same batch.
pub fn estimate_jsm(
    model: &dyn ScoreModel,
    sch: &NoiseSchedule,
    p0: &SampleSet,
    n_per_t: usize,
    bandwidth: f64,
    fd_step: f64,
    rng: &mut Rng,
) -> Result<JsmEstimate> {
    if p0.is_empty() || n_per_t == 0 {
        return Err(Error::Empty("J_SM estimation input"));
    }
    if model.dim() != p0.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: p0.dim(),
        });
    }
    if !(fd_step > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step {fd_step}")));
    }
    let d = p0.dim();
    let mut per_t = Vec::with_capacity(sch.steps());
    for t in 1..=sch.steps() {
        let xt = forward_diffuse(sch, p0, t, rng)?;
        let mut idx: Vec<usize> = (0..xt.len()).collect();
        idx.shuffle(rng);
        idx.truncate(n_per_t.min(xt.len()));
        let queries = xt.select(&idx)?;
        let kde = KdeModel::new(xt, bandwidth)?;
        let model_scores = model.score_batch(queries.as_slice(), t);
        let errs: Vec<f64> = queries
            .as_slice()
            .par_chunks(d)
            .zip(model_scores.par_chunks(d))
            .map(|(x, s)| {
                let mut k = vec![0.0; d];
                kde.score_fd_into(x, fd_step, &mut k);
                k.iter().zip(s).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            })
            .collect();
        per_t.push(errs.iter().sum::<f64>() / errs.len() as f64);
    }
    let total = sch
        .betas()
        .iter()
        .zip(&per_t)
        .map(|(b, e)| 0.5 * b * e)
        .sum();
    Ok(JsmEstimate { total, per_t })
}

/// Plug-in KL estimate `mean_{x in p} log(p_hat(x) / q_hat(x))` with Gaussian
/// KDEs of a common bandwidth, both floored.
pub fn kl_estimate(p: &SampleSet, q: &SampleSet, bandwidth: f64) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            got: q.dim(),
        });
    }
    let kp = KdeModel::new(p.clone(), bandwidth)?;
    let kq = KdeModel::new(q.clone(), bandwidth)?;
    let terms: Vec<f64> = p
        .as_slice()
        .par_chunks(p.dim())
        .map(|x| {
            let a = kp.density_unchecked(x).max(DENSITY_FLOOR).ln();
            let b = kq.density_unchecked(x).max(DENSITY_FLOOR).ln();
            a - b
        })
        .collect();
    Ok(terms.iter().sum::<f64>() / terms.len() as f64)
}

/// Axis-aligned box `[lo_k, hi_k]` per coordinate.
pub type Bounds = Vec<(f64, f64)>;

/// Settings for grid estimates of `L_s(t)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LsGridConfig {
    /// Maximum grid points along any axis.
    pub points_per_axis: usize,
    /// Box padding in forward-process standard deviations.
    pub pad_sd: f64,
    /// Only pairs closer than this are compared; `None` compares all pairs.
    pub pair_cap: Option<f64>,
}

impl Default for LsGridConfig {
    fn default() -> Self {
        LsGridConfig {
            points_per_axis: 41,
            pad_sd: 3.0,
            pair_cap: Some(2.0),
        }
    }
}

fn axis(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    (0..n).map(|i| lo + i as f64 * step).collect()
}

fn grid_points(bounds: &[(f64, f64)], step: f64) -> Result<SampleSet> {
    if bounds.is_empty() {
        return Err(Error::InvalidArgument("empty box".into()));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidArgument(format!("grid step {step}")));
    }
    let mut axes = Vec::with_capacity(bounds.len());
    for &(lo, hi) in bounds {
        if !(hi >= lo && lo.is_finite() && hi.is_finite()) {
            return Err(Error::InvalidArgument(format!("box side [{lo}, {hi}]")));
        }
        axes.push(axis(lo, hi, step));
    }
    let total: usize = axes.iter().map(Vec::len).product();
    if total < 2 {
        return Err(Error::InvalidArgument(
            "grid needs at least two points".into(),
        ));
    }
    let d = bounds.len();
    let mut data = Vec::with_capacity(total * d);
    let mut idx = vec![0usize; d];
    for _ in 0..total {
        for k in 0..d {
            data.push(axes[k][idx[k]]);
        }
        for k in (0..d).rev() {
            idx[k] += 1;
            if idx[k] < axes[k].len() {
                break;
            }
            idx[k] = 0;
        }
    }
    SampleSet::new(d, data)
}

fn pair_max(xs: &SampleSet, fs: &[f64], pair_cap: Option<f64>, one_sided: bool) -> f64 {
    let d = xs.dim();
    let n = xs.len();
    let cap2 = pair_cap.map(|c| c * c).unwrap_or(f64::INFINITY);
    (0..n)
        .into_par_iter()
        .map(|i| {
            let (x, fx) = (xs.point(i), &fs[i * d..(i + 1) * d]);
            let mut best = f64::NEG_INFINITY;
            for j in i + 1..n {
                let y = xs.point(j);
                let mut r2 = 0.0;
                for k in 0..d {
                    r2 += (x[k] - y[k]) * (x[k] - y[k]);
                }
                if r2 > cap2 || r2 == 0.0 {
                    continue;
                }
                let fy = &fs[j * d..(j + 1) * d];
                let v = if one_sided {
                    (0..d).map(|k| (fx[k] - fy[k]) * (x[k] - y[k])).sum::<f64>() / r2
                } else {
                    ((0..d).map(|k| (fx[k] - fy[k]).powi(2)).sum::<f64>() / r2).sqrt()
                };
                best = best.max(v);
            }
            best
        })
        .reduce(|| f64::NEG_INFINITY, f64::max)
}

fn eval_field<F>(f: &F, pts: &SampleSet) -> Vec<f64>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    let d = pts.dim();
    let mut out = vec![0.0; pts.as_slice().len()];
    out.par_chunks_mut(d)
        .zip(pts.as_slice().par_chunks(d))
        .for_each(|(o, x)| f(x, o));
    out
}

/// `max (f(x) - f(y)).(x - y) / |x - y|^2` over grid pairs (optionally only
/// pairs within `pair_cap`).
pub fn one_sided_lipschitz_grid<F>(
    f: F,
    bounds: &[(f64, f64)],
    step: f64,
    pair_cap: Option<f64>,
) -> Result<f64>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    let pts = grid_points(bounds, step)?;
    let fs = eval_field(&f, &pts);
    let v = pair_max(&pts, &fs, pair_cap, true);
    if v == f64::NEG_INFINITY {
        return Err(Error::InvalidArgument("no grid pair within the distance cap".into()));
    }
    Ok(v)
}

/// `max |f(x) - f(y)| / |x - y|` over the same grid pairs.
pub fn two_sided_lipschitz_grid<F>(
    f: F,
    bounds: &[(f64, f64)],
    step: f64,
    pair_cap: Option<f64>,
) -> Result<f64>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    let pts = grid_points(bounds, step)?;
    let fs = eval_field(&f, &pts);
    let v = pair_max(&pts, &fs, pair_cap, false);
    if v == f64::NEG_INFINITY {
        return Err(Error::InvalidArgument("no grid pair within the distance cap".into()));
    }
    Ok(v)
}

/// Box around the time-`t` marginal: the bounding box of `sqrt(ab_t) x0`
/// padded by `pad_sd * sqrt(1 - ab_t)`.
pub fn ls_box(sch: &NoiseSchedule, t: usize, p0: &SampleSet, pad_sd: f64) -> Result<Bounds> {
    let (scale, var) = sch.marginal_params(t)?;
    if p0.is_empty() {
        return Err(Error::Empty("sample set"));
    }
    let pad = pad_sd * var.sqrt();
    Ok(p0
        .bounds()
        .into_iter()
        .map(|(lo, hi)| (scale * lo - pad, scale * hi + pad))
        .collect())
}

/// Grid step giving at most `points` nodes along the widest side.
pub fn grid_step(bounds: &[(f64, f64)], points: usize) -> f64 {
    let width = bounds
        .iter()
        .map(|(lo, hi)| hi - lo)
        .fold(0.0f64, f64::max);
    if points < 2 || width <= 0.0 {
        return f64::INFINITY;
    }
    width / (points - 1) as f64
}

/// Grid-estimated `L_s(t)` of a model for every `t = 1..=T`.
pub fn ls_series(
    model: &dyn ScoreModel,
    sch: &NoiseSchedule,
    p0: &SampleSet,
    cfg: &LsGridConfig,
) -> Result<Vec<f64>> {
    (1..=sch.steps())
        .map(|t| {
            let bounds = ls_box(sch, t, p0, cfg.pad_sd)?;
            let step = grid_step(&bounds, cfg.points_per_axis);
            one_sided_lipschitz_grid(|x, out| model.score_into(x, t, out), &bounds, step, cfg.pair_cap)
        })
        .collect()
}

/// Writes an `L_s(t)` series as CSV `t,ls`.
pub fn write_ls_csv<W: Write>(ls: &[f64], w: W) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    wtr.write_record(["t", "ls"])?;
    for (i, v) in ls.iter().enumerate() {
        wtr.write_record([(i + 1).to_string(), v.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// One-sided Lipschitz constant of the exact score when `p_0 = N(0, sigma0^2 I)`:
/// the score is linear with slope `-1 / (ab sigma0^2 + 1 - ab)`.
pub fn gaussian_score_onesided(sch: &NoiseSchedule, t: usize, sigma0: f64) -> Result<f64> {
    let ab = sch.alpha_bar(t)?;
    Ok(-1.0 / (ab * sigma0 * sigma0 + 1.0 - ab))
}

/// `|h_t - 1|` in `L^2(phi)` for `p_0 = N(0, sigma0^2)` in 1D, where
/// `h_t = p_t / phi` and `phi` is the standard normal density, by adaptive
/// Simpson quadrature.
pub fn h_decay(sch: &NoiseSchedule, sigma0: f64, t_list: &[usize]) -> Result<Vec<f64>> {
    t_list
        .iter()
        .map(|&t| {
            let ab = sch.alpha_bar(t)?;
            let v = ab * sigma0 * sigma0 + 1.0 - ab;
            let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
            let pt = |x: f64| (-0.5 * x * x / v).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
            // (p/phi - 1)^2 phi = (p - phi)^2 / phi, written to avoid 0/0 in the tails.
            let integrand = |x: f64| {
                let (p, f) = (pt(x), phi(x));
                if f == 0.0 {
                    if p == 0.0 {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                } else {
                    (p - f) * (p - f) / f
                }
            };
            let half = 12.0 * v.sqrt().max(1.0);
            let sq = adaptive_simpson(&integrand, -half, half, 1e-13, 256);
            if !sq.is_finite() {
                return Err(Error::NonFinite(format!("h_t quadrature at t = {t}")));
            }
            Ok(sq.max(0.0).sqrt())
        })
        .collect()
}

/// Adaptive Simpson over `panels` equal subintervals.
pub(crate) fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, panels: usize) -> f64 {
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol || !delta.is_finite() {
            return left + right + delta / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
            + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|i| {
            let (lo, hi) = (a + i as f64 * h, a + (i + 1) as f64 * h);
            let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
            let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
            rec(f, lo, hi, fa, fm, fb, whole, tol / panels as f64, 40)
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GaussianScore;
    use crate::rng;
    use crate::synthdata::standard_normal;
    use proptest::prelude::*;

    fn set1(xs: &[f64]) -> SampleSet {
        SampleSet::new(1, xs.to_vec()).unwrap()
    }

    #[test]
    fn kernel_peak_and_tails() {
        let h = 0.05;
        let k = KdeModel::new(set1(&[0.0]), h).unwrap();
        let peak = 1.0 / (h * (2.0 * std::f64::consts::PI).sqrt());
        assert!((k.density(&[0.0]).unwrap() - peak).abs() < 1e-12);
        assert_eq!(k.density(&[1e6]).unwrap(), 0.0);
        assert_eq!(k.log_density(&[1e6]).unwrap(), DENSITY_FLOOR.ln());
        assert!(KdeModel::new(set1(&[0.0]), 0.0).is_err());
        assert!(k.density(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn symmetric_support_gives_zero_score() {
        let k = KdeModel::new(set1(&[-1.0, -0.3, 0.3, 1.0]), 0.5).unwrap();
        assert!(k.score(&[0.0], 0.01).unwrap()[0].abs() < 1e-12);
        assert!(k.score_exact(&[0.0]).unwrap()[0].abs() < 1e-12);
    }

    #[test]
    fn density_integrates_to_one() {
        let mut r = rng::from_seed(9);
        let s = standard_normal(1, 50, &mut r).unwrap();
        let k = KdeModel::new(s, 0.3).unwrap();
        let total = adaptive_simpson(&|x| k.density(&[x]).unwrap(), -10.0, 10.0, 1e-10, 64);
        assert!((total - 1.0).abs() < 1e-3, "{total}");
    }

    #[test]
    fn finite_differences_approach_exact_gradient() {
        let mut r = rng::from_seed(10);
        let s = standard_normal(2, 30, &mut r).unwrap();
        let k = KdeModel::new(s, 0.4).unwrap();
        for q in [[0.1, -0.2], [1.0, 0.5], [-1.5, 0.3]] {
            let exact = k.score_exact(&q).unwrap();
            let e1: f64 = k.score(&q, 1e-2).unwrap().iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let e2: f64 = k.score(&q, 5e-3).unwrap().iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            // Second-order: halving the step cuts the error about fourfold.
            assert!(e1 < 1e-2, "{e1}");
            assert!(e2 < 0.3 * e1 + 1e-9, "{e1} {e2}");
        }
    }

    #[test]
    fn kde_score_as_model_gives_zero_jsm() {
        // A field that reproduces the KDE fitted on the same diffused batch.
        let sch = NoiseSchedule::sigmoid(3, 1e-5, 1e-2).unwrap();
        let mut r = rng::from_seed(11);
        let p0 = standard_normal(1, 40, &mut r).unwrap();
        let seed = 77;
        let mut r1 = rng::from_seed(seed);
        let batches: Vec<SampleSet> = (1..=3)
            .map(|t| {
                let b = forward_diffuse(&sch, &p0, t, &mut r1).unwrap();
                let mut idx: Vec<usize> = (0..b.len()).collect();
                idx.shuffle(&mut r1);
                b
            })
            .collect();
        let kdes: Vec<KdeModel> = batches.into_iter().map(|b| KdeModel::new(b, 0.05).unwrap()).collect();
        let m = crate::model::FnScore::new(1, |x: &[f64], t: usize, o: &mut [f64]| {
            kdes[t - 1].score_fd_into(x, 0.01, o)
        });
        let est = estimate_jsm(&m, &sch, &p0, 40, 0.05, 0.01, &mut rng::from_seed(seed)).unwrap();
        assert_eq!(est.total, 0.0);
        assert_eq!(est.per_t.len(), 3);
    }

    #[test]
    fn lipschitz_of_linear_fields() {
        let b = vec![(-1.0, 1.0), (-1.0, 1.0)];
        let v = one_sided_lipschitz_grid(|x, o| {
            o[0] = -2.0 * x[0] + 0.7;
            o[1] = -2.0 * x[1] - 0.1;
        }, &b, 0.25, None)
        .unwrap();
        assert!((v + 2.0).abs() < 1e-12);
        let v = one_sided_lipschitz_grid(|x, o| o.copy_from_slice(x), &b, 0.25, Some(0.5)).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
        let v = one_sided_lipschitz_grid(|x, o| o[0] = x[0].max(0.0), &[(-1.0, 1.0)], 0.1, None).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
        // A rotation has zero one-sided constant but unit two-sided constant.
        let rot = |x: &[f64], o: &mut [f64]| {
            o[0] = -x[1];
            o[1] = x[0];
        };
        assert!(one_sided_lipschitz_grid(rot, &b, 0.25, None).unwrap().abs() < 1e-12);
        assert!((two_sided_lipschitz_grid(rot, &b, 0.25, None).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_grids_are_rejected() {
        let f = |x: &[f64], o: &mut [f64]| o.copy_from_slice(x);
        assert!(one_sided_lipschitz_grid(f, &[(0.0, 0.0)], 0.1, None).is_err());
        assert!(one_sided_lipschitz_grid(f, &[(0.0, 1.0)], 0.0, None).is_err());
        assert!(one_sided_lipschitz_grid(f, &[(1.0, 0.0)], 0.1, None).is_err());
    }

    #[test]
    fn gaussian_one_sided_values() {
        let sch = NoiseSchedule::sigmoid(100, 1e-5, 1e-2).unwrap();
        for t in [1, 50, 100] {
            assert!((gaussian_score_onesided(&sch, t, 1.0).unwrap() + 1.0).abs() < 1e-12);
        }
        let v = gaussian_score_onesided(&sch, 1, 0.1f64.sqrt()).unwrap();
        assert!((v + 10.0).abs() < 1e-2, "{v}");
        // Grid search on the exact linear score recovers the closed form.
        let g = GaussianScore::new(sch.clone(), vec![0.0, 0.0], 0.1).unwrap();
        let b = vec![(-1.0, 1.0), (-1.0, 1.0)];
        let grid = one_sided_lipschitz_grid(|x, o| g.score_into(x, 40, o), &b, 0.1, Some(2.0)).unwrap();
        let exact = gaussian_score_onesided(&sch, 40, 0.1f64.sqrt()).unwrap();
        assert!((grid - exact).abs() < 1e-9);
    }

    #[test]
    fn h_decay_matches_closed_form() {
        let sch = NoiseSchedule::sigmoid(100, 1e-5, 1e-2).unwrap();
        let ts: Vec<usize> = (1..=100).collect();
        assert!(h_decay(&sch, 1.0, &ts).unwrap().iter().all(|v| *v < 1e-6));
        let got = h_decay(&sch, 0.1f64.sqrt(), &ts).unwrap();
        for (t, g) in ts.iter().zip(&got) {
            let ab = sch.alpha_bar(*t).unwrap();
            let v = 0.1 * ab + 1.0 - ab;
            let want = (1.0 / (v * (2.0 - v)).sqrt() - 1.0).sqrt();
            assert!((g - want).abs() < 1e-6 * want.max(1.0), "t={t}: {g} vs {want}");
        }
    }

    #[test]
    fn kl_of_identical_sets_is_zero() {
        let mut r = rng::from_seed(12);
        let s = standard_normal(2, 300, &mut r).unwrap();
        assert_eq!(kl_estimate(&s, &s, 0.1).unwrap(), 0.0);
        let far = SampleSet::new(2, s.as_slice().iter().map(|x| x + 50.0).collect()).unwrap();
        assert!(kl_estimate(&s, &far, 0.1).unwrap() > 10.0);
    }

    #[test]
    fn ls_csv() {
        let mut buf = Vec::new();
        write_ls_csv(&[-1.0, 0.5], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t,ls\n1,-1\n2,0.5\n");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn one_sided_never_exceeds_two_sided(a in -3.0f64..3.0, b in -3.0f64..3.0, c in -3.0f64..3.0, k in 0.1f64..4.0) {
            let f = move |x: &[f64], o: &mut [f64]| {
                o[0] = a * x[0] + b * x[1] + (k * x[0]).sin();
                o[1] = c * x[0] - a * x[1] + (k * x[1]).tanh();
            };
            let bx = vec![(-1.0, 1.0), (-1.0, 1.0)];
            let one = one_sided_lipschitz_grid(f, &bx, 0.2, Some(1.0)).unwrap();
            let two = two_sided_lipschitz_grid(f, &bx, 0.2, Some(1.0)).unwrap();
            prop_assert!(one <= two + 1e-12);
        }

        #[test]
        fn refining_the_grid_does_not_lower_the_estimate(a in -3.0f64..3.0, k in 0.5f64..5.0) {
            let f = move |x: &[f64], o: &mut [f64]| o[0] = a * x[0] + (k * x[0]).sin();
            let coarse = one_sided_lipschitz_grid(f, &[(-2.0, 2.0)], 0.2, None).unwrap();
            let fine = one_sided_lipschitz_grid(f, &[(-2.0, 2.0)], 0.1, None).unwrap();
            prop_assert!(fine >= coarse - 1e-12);
        }
    }
}
