//! Assembly of the Wasserstein upper bounds from a trained run: the
//! integrating factor, the pathwise and Cauchy–Schwarz forms, the log-log
//! line, the terminal offset and its sweep over `T`, and the perturbation bound.
//!
//! Integrals over time are left Riemann sums on the schedule grid, so
//! `int g^2 h dt` is `sum_t beta_t h(t)`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators;
use crate::ot;
use crate::rng::{self, tag, Rng};
use crate::sampler::{self, forward_diffuse, ReverseMode};
use crate::schedule::NoiseSchedule;
use crate::synthdata::{self, standard_normal, SampleSet};
use crate::training::{self, EpochRecord, Regularizer, TrainConfig, TrainedRun};

/// Smallest value an integrating factor is allowed to take.
pub const I_FLOOR: f64 = 1e-300;

fn log_sum_exp(xs: impl IntoIterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = xs.into_iter().collect();
    let top = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY || top == f64::INFINITY {
        return top;
    }
    top + xs.iter().map(|x| (x - top).exp()).sum::<f64>().ln()
}

/// `I(t) = exp(sum_{r <= t} beta_r (1/2 + L_s(r)))` for `t = 0..=T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegratingFactor {
    /// `ln I(t)`, index 0 is `t = 0`.
    pub log_values: Vec<f64>,
    /// Set when some `I(t)` fell below [`I_FLOOR`] and was raised to it.
    pub floored: bool,
}

impl IntegratingFactor {
    pub fn values(&self) -> Vec<f64> {
        self.log_values.iter().map(|l| l.exp()).collect()
    }

    pub fn at(&self, t: usize) -> f64 {
        self.log_values[t].exp()
    }

    /// `I(T)`.
    pub fn terminal(&self) -> f64 {
        self.at(self.log_values.len() - 1)
    }

    /// `ln sum_t beta_t I(t)^2`.
    pub fn log_weighted_sq(&self, sch: &NoiseSchedule) -> f64 {
        log_sum_exp(
            sch.betas()
                .iter()
                .zip(&self.log_values[1..])
                .map(|(b, l)| b.ln() + 2.0 * l),
        )
    }

    /// A series that is zero for every `t`; used to force a violation.
    pub fn zero(steps: usize) -> Self {
        IntegratingFactor {
            log_values: vec![f64::NEG_INFINITY; steps + 1],
            floored: false,
        }
    }
}

pub fn integrating_factor_series(sch: &NoiseSchedule, ls: &[f64]) -> Result<IntegratingFactor> {
    if ls.len() != sch.steps() {
        return Err(Error::SizeMismatch {
            left: sch.steps(),
            right: ls.len(),
        });
    }
    if let Some(t) = ls.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("L_s at t = {}", t + 1)));
    }
    let floor = I_FLOOR.ln();
    let mut log_values = Vec::with_capacity(ls.len() + 1);
    log_values.push(0.0);
    let mut acc = 0.0;
    let mut floored = false;
    for (b, l) in sch.betas().iter().zip(ls) {
        acc += b * (0.5 + l);
        if acc < floor {
            floored = true;
        }
        log_values.push(acc.max(floor));
    }
    Ok(IntegratingFactor {
        log_values,
        floored,
    })
}

/// `L_f(t) = beta_t / 2` for every step.
pub fn lf_series(sch: &NoiseSchedule) -> Vec<f64> {
    sch.betas().iter().map(|b| 0.5 * b).collect()
}

/// `1/2 ln sum_t beta_t I(t)^2`.
pub fn intercept(sch: &NoiseSchedule, ifac: &IntegratingFactor) -> f64 {
    0.5 * ifac.log_weighted_sq(sch)
}

/// `sum_t beta_t I(t) sqrt(b(t)) + I(T) w2_terminal`.
pub fn bound_rhs_theorem(sch: &NoiseSchedule, ifac: &IntegratingFactor, b: &[f64], w2_terminal: f64) -> Result<f64> {
    if b.len() != sch.steps() || ifac.log_values.len() != sch.steps() + 1 {
        return Err(Error::SizeMismatch {
            left: sch.steps(),
            right: b.len(),
        });
    }
    if let Some(v) = b.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::InvalidArgument(format!("negative score error {v}")));
    }
    let path: f64 = sch
        .betas()
        .iter()
        .zip(&ifac.log_values[1..])
        .zip(b)
        .map(|((beta, l), bt)| beta * l.exp() * bt.sqrt())
        .sum();
    Ok(path + ifac.terminal() * w2_terminal)
}

/// `sqrt(2 (sum_t beta_t I(t)^2) j) + offset`.
pub fn bound_rhs_corollary(sch: &NoiseSchedule, ifac: &IntegratingFactor, j: f64, offset: f64) -> Result<f64> {
    if !(j >= 0.0) {
        return Err(Error::InvalidArgument(format!("loss {j} must be nonnegative")));
    }
    if j == 0.0 {
        return Ok(offset);
    }
    Ok((0.5 * (2f64.ln() + ifac.log_weighted_sq(sch) + j.ln())).exp() + offset)
}

/// A point of the log-log verification plot.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogLogPoint {
    /// `1/2 ln J_DSM`.
    pub x: f64,
    pub intercept: f64,
    /// `ln W2`.
    pub y: f64,
}

impl LogLogPoint {
    /// The bound `x + intercept` on `y`.
    pub fn bound_line(&self) -> f64 {
        self.x + self.intercept
    }

    pub fn holds(&self) -> bool {
        self.y <= self.bound_line()
    }
}

pub fn loglog_point(j_dsm: f64, ifac: &IntegratingFactor, sch: &NoiseSchedule, w2: f64) -> Result<LogLogPoint> {
    if !(j_dsm > 0.0) || !(w2 > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "log-log point needs positive inputs, got J = {j_dsm}, W2 = {w2}"
        )));
    }
    Ok(LogLogPoint {
        x: 0.5 * j_dsm.ln(),
        intercept: intercept(sch, ifac),
        y: w2.ln(),
    })
}

/// Contraction bound on `W2(p_T, N(0, I))` next to the direct measurement.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Contraction {
    /// `exp(-1/2 sum beta) W2(p_0, phi)`.
    pub bound: f64,
    /// Empirical `W2(p_T, phi)`.
    pub direct: f64,
}

/// Both sides of the contraction inequality with `n` points each.
pub fn contraction_offset(sch: &NoiseSchedule, p0: &SampleSet, n: usize, rng: &mut Rng) -> Result<Contraction> {
    if n == 0 {
        return Err(Error::Empty("contraction sample"));
    }
    let x0 = p0.head(n);
    let n = x0.len();
    let phi = standard_normal(x0.dim(), n, rng)?;
    let factor = (-0.5 * sch.cumulative_beta(sch.steps())).exp();
    let bound = factor * ot::w2(&x0, &phi)?;
    let xt = forward_diffuse(sch, &x0, sch.steps(), rng)?;
    let phi2 = standard_normal(x0.dim(), n, rng)?;
    let direct = ot::w2(&xt, &phi2)?;
    Ok(Contraction { bound, direct })
}

/// Everything the bounds say about one trained network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub j_dsm: f64,
    pub j_sm_est: Option<f64>,
    pub ls_series: Vec<f64>,
    pub lf_series: Vec<f64>,
    pub i_series: Vec<f64>,
    pub i_floored: bool,
    pub intercept: f64,
    /// `(ln J_DSM, ln W2)`.
    pub slope_point: (f64, f64),
    pub w2_terminal: f64,
    /// `I(T) W2(p_T, q_T)`.
    pub offset: f64,
    pub rhs_corollary: f64,
    pub rhs_theorem: Option<f64>,
    pub measured_w2: f64,
}

/// Bound check at one logged epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochCheck {
    pub epoch: usize,
    pub j_dsm: f64,
    pub w2: f64,
    pub intercept: f64,
    pub offset: f64,
    pub rhs_corollary: f64,
    pub j_sm_est: Option<f64>,
    pub holds: bool,
}

impl EpochCheck {
    pub fn log_jdsm(&self) -> f64 {
        self.j_dsm.ln()
    }

    pub fn log_w2(&self) -> f64 {
        self.w2.ln()
    }

    pub fn bound_line(&self) -> f64 {
        0.5 * self.j_dsm.ln() + self.intercept
    }
}

/// The report plus per-epoch checks for a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub report: BoundReport,
    pub epochs: Vec<EpochCheck>,
    /// Epochs at which the measured W2 exceeded the bound.
    pub violations: Vec<usize>,
}

impl Verification {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }

    /// CSV `epoch,log_jdsm,log_w2,bound_line`.
    pub fn write_loglog_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        wtr.write_record(["epoch", "log_jdsm", "log_w2", "bound_line"])?;
        for e in &self.epochs {
            wtr.write_record([
                e.epoch.to_string(),
                e.log_jdsm().to_string(),
                e.log_w2().to_string(),
                e.bound_line().to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// How the integrating factor is obtained when verifying a run.
#[derive(Clone, Debug, Default)]
pub struct VerifyOptions {
    /// Replace `I` by zero everywhere (a deliberately broken bound).
    pub zero_i_series: bool,
}

fn ifac_for(sch: &NoiseSchedule, ls: &[f64], opts: &VerifyOptions) -> Result<IntegratingFactor> {
    if opts.zero_i_series {
        Ok(IntegratingFactor::zero(sch.steps()))
    } else {
        integrating_factor_series(sch, ls)
    }
}

fn check_epoch(sch: &NoiseSchedule, rec: &EpochRecord, ifac: &IntegratingFactor) -> Result<Option<EpochCheck>> {
    let (Some(w2), Some(w2_terminal)) = (rec.w2, rec.w2_terminal) else {
        return Ok(None);
    };
    let offset = ifac.terminal() * w2_terminal;
    let rhs = bound_rhs_corollary(sch, ifac, rec.j_dsm, offset)?;
    Ok(Some(EpochCheck {
        epoch: rec.epoch,
        j_dsm: rec.j_dsm,
        w2,
        intercept: intercept(sch, ifac),
        offset,
        rhs_corollary: rhs,
        j_sm_est: rec.j_sm_est,
        holds: w2 <= rhs,
    }))
}

/// Checks the bound at every evaluated epoch. Epochs that carry their own
/// `L_s` series use it; the others use `final_ls`, estimated on the final
/// network.
pub fn verify_run(run: &TrainedRun, final_ls: &[f64], opts: &VerifyOptions) -> Result<Verification> {
    let sch = &run.schedule;
    let last = run
        .history
        .records
        .iter()
        .rev()
        .find(|r| r.w2.is_some())
        .ok_or(Error::Empty("evaluated epochs"))?;
    let final_ifac = ifac_for(sch, final_ls, opts)?;
    let mut epochs = Vec::new();
    for rec in &run.history.records {
        let ifac = match &rec.ls {
            Some(ls) => ifac_for(sch, ls, opts)?,
            None => final_ifac.clone(),
        };
        if let Some(c) = check_epoch(sch, rec, &ifac)? {
            epochs.push(c);
        }
    }
    let violations = epochs.iter().filter(|c| !c.holds).map(|c| c.epoch).collect();

    let w2 = last.w2.unwrap_or(f64::NAN);
    let w2_terminal = last.w2_terminal.unwrap_or(0.0);
    let offset = final_ifac.terminal() * w2_terminal;
    let rhs_theorem = match &last.jsm_per_t {
        Some(b) => Some(bound_rhs_theorem(sch, &final_ifac, b, w2_terminal)?),
        None => None,
    };
    let report = BoundReport {
        j_dsm: last.j_dsm,
        j_sm_est: last.j_sm_est,
        ls_series: final_ls.to_vec(),
        lf_series: lf_series(sch),
        i_series: final_ifac.values(),
        i_floored: final_ifac.floored,
        intercept: intercept(sch, &final_ifac),
        slope_point: (last.j_dsm.ln(), w2.ln()),
        w2_terminal,
        offset,
        rhs_corollary: bound_rhs_corollary(sch, &final_ifac, last.j_dsm, offset)?,
        rhs_theorem,
        measured_w2: w2,
    };
    Ok(Verification {
        report,
        epochs,
        violations,
    })
}

/// Grid estimate of `L_s(t)` for the final network of a run.
pub fn final_ls(run: &TrainedRun) -> Result<Vec<f64>> {
    estimators::ls_series(&run.net, &run.schedule, &run.eval_set, &run.config.ls_grid)
}

/// One row of the `T` sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub steps: usize,
    /// `I(T) W2(p_T, q_T)` with fresh terminal draws.
    pub offset: f64,
    /// `W2(p_0, q_0)` at the last training epoch.
    pub w2_p0q0: f64,
    pub ls_t: f64,
    pub i_t: f64,
    pub w2_terminal: f64,
    /// `W2(p_0, q_0)` when generating from fresh terminal draws.
    pub w2_fresh: f64,
    pub j_dsm: f64,
    pub epochs: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    /// CSV `T,offset,w2_p0q0,ls_T`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        wtr.write_record(["T", "offset", "w2_p0q0", "ls_T"])?;
        for r in &self.rows {
            wtr.write_record([
                r.steps.to_string(),
                r.offset.to_string(),
                r.w2_p0q0.to_string(),
                r.ls_t.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Offset terms for a trained run, using fresh `N(0, I)` terminal draws.
pub fn sweep_row(run: &TrainedRun) -> Result<(SweepRow, Vec<f64>)> {
    let sch = &run.schedule;
    let ls = final_ls(run)?;
    let ifac = integrating_factor_series(sch, &ls)?;
    let mut r = rng::stream(run.config.seed, &[tag::TERMINAL, sch.steps() as u64]);
    let fresh = sampler::generate(&run.net, sch, ReverseMode::FreshTerminal, &run.eval_set, &mut r)?;
    let w2_fresh = ot::w2(&run.eval_set, &fresh.q0)?;
    let last = run.history.last().ok_or(Error::Empty("history"))?;
    let row = SweepRow {
        steps: sch.steps(),
        offset: ifac.terminal() * fresh.w2_terminal,
        w2_p0q0: last.w2.unwrap_or(f64::NAN),
        ls_t: *ls.last().unwrap_or(&f64::NAN),
        i_t: ifac.terminal(),
        w2_terminal: fresh.w2_terminal,
        w2_fresh,
        j_dsm: last.j_dsm,
        epochs: run.history.len(),
    };
    Ok((row, ls))
}

/// Retrains for every `T` (same beta endpoints) and collects offset terms.
pub fn sweep_t(base: &TrainConfig, t_list: &[usize]) -> Result<SweepResult> {
    if t_list.is_empty() {
        return Err(Error::Empty("T list"));
    }
    let mut rows = Vec::with_capacity(t_list.len());
    for &steps in t_list {
        let cfg = TrainConfig {
            steps,
            ..base.clone()
        };
        log::info!("sweep: training with T = {steps}");
        let run = training::run_training(&cfg)?;
        rows.push(sweep_row(&run)?.0);
    }
    Ok(SweepResult { rows })
}

/// Outcome of training one regularization variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularizeRow {
    pub variant: Regularizer,
    /// J_DSM at the last epoch.
    pub loss: f64,
    pub intercept: f64,
    pub w2: f64,
    pub i_floored: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RegularizeResult {
    pub rows: Vec<RegularizeRow>,
}

impl RegularizeResult {
    pub fn get(&self, variant: Regularizer) -> Option<&RegularizeRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    /// CSV `variant,loss,intercept`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .quote_style(csv::QuoteStyle::Never)
            .from_writer(w);
        wtr.write_record(["variant", "loss", "intercept"])?;
        for r in &self.rows {
            wtr.write_record([r.variant.to_string(), r.loss.to_string(), r.intercept.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Vanilla, spectral normalization, clipping at 0.1 and the weight-decay grid.
pub fn default_regularizers() -> Vec<Regularizer> {
    let mut v = vec![Regularizer::None, Regularizer::Spectral, Regularizer::Clip(0.1)];
    v.extend([0.01, 0.1, 0.5, 1.0, 5.0].map(Regularizer::WeightDecay));
    v
}

/// Trains with one regularizer and reports the converged loss and intercept.
pub fn regularize_row(base: &TrainConfig, variant: Regularizer) -> Result<RegularizeRow> {
    let cfg = TrainConfig {
        regularizer: variant,
        ..base.clone()
    };
    let run = training::run_training(&cfg)?;
    let ls = final_ls(&run)?;
    let ifac = integrating_factor_series(&run.schedule, &ls)?;
    let last = run.history.last().ok_or(Error::Empty("history"))?;
    Ok(RegularizeRow {
        variant,
        loss: last.j_dsm,
        intercept: intercept(&run.schedule, &ifac),
        w2: last.w2.unwrap_or(f64::NAN),
        i_floored: ifac.floored,
    })
}

pub fn regularize_sweep(base: &TrainConfig, variants: &[Regularizer]) -> Result<RegularizeResult> {
    if variants.is_empty() {
        return Err(Error::Empty("regularizer list"));
    }
    let mut rows = Vec::with_capacity(variants.len());
    for &v in variants {
        log::info!("regularize: training variant {v}");
        rows.push(regularize_row(base, v)?);
    }
    Ok(RegularizeResult { rows })
}

/// The per-run quantities entering the perturbation bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationTerms {
    /// `ln sum_t beta_t I(t)^2`.
    pub log_weighted_sq: f64,
    pub i_t: f64,
    pub j: f64,
    pub w2_terminal: f64,
}

impl PerturbationTerms {
    pub fn new(sch: &NoiseSchedule, ifac: &IntegratingFactor, j: f64, w2_terminal: f64) -> Self {
        PerturbationTerms {
            log_weighted_sq: ifac.log_weighted_sq(sch),
            i_t: ifac.terminal(),
            j,
            w2_terminal,
        }
    }

    fn score_term(&self) -> f64 {
        if self.j <= 0.0 {
            0.0
        } else {
            (0.5 * (2f64.ln() + self.log_weighted_sq + self.j.ln())).exp()
        }
    }
}

/// `W2(p0, p0~) + sqrt(2 int g^2 I^2 J) + sqrt(2 int g^2 I~^2 J~)
///  + I(T) W2(p_T, q_T) + I~(T) W2(p~_T, q~_T)`.
pub fn perturbation_bound(run: &PerturbationTerms, run_tilde: &PerturbationTerms, w2_p0_p0tilde: f64) -> f64 {
    w2_p0_p0tilde
        + run.score_term()
        + run_tilde.score_term()
        + run.i_t * run.w2_terminal
        + run_tilde.i_t * run_tilde.w2_terminal
}

/// Outcome of one clean-versus-corrupted comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationCheck {
    pub seed: u64,
    pub eps: f64,
    pub w2_p0_p0tilde: f64,
    pub measured_w2_q0_q0tilde: f64,
    pub bound: f64,
    pub clean: PerturbationTerms,
    pub corrupted: PerturbationTerms,
}

impl PerturbationCheck {
    pub fn holds(&self) -> bool {
        self.measured_w2_q0_q0tilde <= self.bound
    }
}

fn terms_and_sample(run: &TrainedRun, sample_seed: u64) -> Result<(PerturbationTerms, SampleSet)> {
    let sch = &run.schedule;
    let ls = final_ls(run)?;
    let ifac = integrating_factor_series(sch, &ls)?;
    let mut r = rng::stream(sample_seed, &[tag::TERMINAL]);
    let gen = sampler::generate(&run.net, sch, run.config.mode, &run.eval_set, &mut r)?;
    let j = run.history.last().ok_or(Error::Empty("history"))?.j_dsm;
    Ok((PerturbationTerms::new(sch, &ifac, j, gen.w2_terminal), gen.q0))
}

/// Trains on clean data and on data with `N(0, eps^2)` noise added to every
/// coordinate, then compares the generated sets against the bound.
pub fn perturbation_check(cfg: &TrainConfig, eps: f64) -> Result<PerturbationCheck> {
    cfg.validate()?;
    let data = synthdata::generate(&cfg.data_spec())?;
    let eval_set = synthdata::generate(&cfg.eval_spec())?;
    let noise_seed = rng::derive_seed(cfg.seed, &[tag::PERTURB]);
    let data_t = synthdata::perturb(&data, eps, noise_seed)?;
    let eval_t = synthdata::perturb(&eval_set, eps, noise_seed ^ 1)?;
    let w2_p = ot::w2(&eval_set, &eval_t)?;

    let clean = training::run_training_on(cfg, &data, eval_set)?;
    let corrupted = training::run_training_on(cfg, &data_t, eval_t)?;
    // Same sampling seed on both sides so identical inputs give identical outputs.
    let (a, q0) = terms_and_sample(&clean, cfg.seed)?;
    let (b, q0t) = terms_and_sample(&corrupted, cfg.seed)?;
    let measured = ot::w2(&q0, &q0t)?;
    Ok(PerturbationCheck {
        seed: cfg.seed,
        eps,
        w2_p0_p0tilde: w2_p,
        measured_w2_q0_q0tilde: measured,
        bound: perturbation_bound(&a, &b, w2_p),
        clean: a,
        corrupted: b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sch10() -> NoiseSchedule {
        NoiseSchedule::sigmoid(10, 1e-5, 1e-2).unwrap()
    }

    #[test]
    fn zero_exponent_gives_unit_factor() {
        let sch = sch10();
        let ifac = integrating_factor_series(&sch, &[-0.5; 10]).unwrap();
        assert!(ifac.values().iter().all(|v| (v - 1.0).abs() < 1e-15));
        assert_eq!(ifac.log_values[0], 0.0);
    }

    #[test]
    fn constant_exponent_is_exponential() {
        let sch = NoiseSchedule::from_betas(vec![0.1; 20]).unwrap();
        // beta (1/2 + L) = 0.1 * 1.5 = c per step.
        let ifac = integrating_factor_series(&sch, &[1.0; 20]).unwrap();
        for (t, v) in ifac.values().iter().enumerate() {
            assert!((v - (0.15 * t as f64).exp()).abs() < 1e-12 * v);
        }
    }

    #[test]
    fn factor_errors_and_floor() {
        let sch = sch10();
        assert!(integrating_factor_series(&sch, &[0.0; 9]).is_err());
        let mut ls = vec![0.0; 10];
        ls[3] = f64::NAN;
        assert!(integrating_factor_series(&sch, &ls).is_err());
        let ifac = integrating_factor_series(&sch, &[-1e6; 10]).unwrap();
        assert!(ifac.floored);
        assert!(ifac.values().iter().all(|v| *v >= I_FLOOR * 0.999));
    }

    #[test]
    fn theorem_bound_edge_cases() {
        let sch = sch10();
        let ifac = integrating_factor_series(&sch, &[-3.0; 10]).unwrap();
        assert_eq!(bound_rhs_theorem(&sch, &ifac, &[0.0; 10], 0.0).unwrap(), 0.0);
        let off = bound_rhs_theorem(&sch, &ifac, &[0.0; 10], 0.4).unwrap();
        assert!((off - ifac.terminal() * 0.4).abs() < 1e-15);
        let mut b = vec![0.0; 10];
        b[2] = -1.0;
        assert!(bound_rhs_theorem(&sch, &ifac, &b, 0.0).is_err());
    }

    #[test]
    fn corollary_and_loglog_agree() {
        let sch = sch10();
        let ifac = integrating_factor_series(&sch, &[2.0; 10]).unwrap();
        assert_eq!(bound_rhs_corollary(&sch, &ifac, 0.0, 0.0).unwrap(), 0.0);
        assert!(bound_rhs_corollary(&sch, &ifac, -1.0, 0.0).is_err());
        let p = loglog_point(1.0, &ifac, &sch, 0.3).unwrap();
        assert_eq!(p.x, 0.0);
        assert_eq!(p.bound_line(), p.intercept);
        for j in [0.01, 1.0, 7.5] {
            let p = loglog_point(j, &ifac, &sch, 0.3).unwrap();
            let direct = bound_rhs_corollary(&sch, &ifac, j, 0.0).unwrap();
            // exp(x + intercept) = sqrt(J sum beta I^2), i.e. the corollary up to sqrt(2).
            assert!((p.bound_line().exp() * 2f64.sqrt() - direct).abs() < 1e-12 * direct);
        }
        assert!(loglog_point(0.0, &ifac, &sch, 0.3).is_err());
        assert!(loglog_point(1.0, &ifac, &sch, -0.3).is_err());
    }

    #[test]
    fn gaussian_factor_matches_fine_quadrature() {
        // Oracle: integrate (1/2 - 1/v) over cumulative beta B on a fine grid,
        // with ab = exp(-B) and v = ab sigma0^2 + 1 - ab. The step sum differs
        // from this by its O(beta) discretization error, about 1.2% at T = 10
        // and 2.5% at T = 100.
        for steps in [10, 100] {
            let sch = NoiseSchedule::sigmoid(steps, 1e-5, 1e-2).unwrap();
            let ls: Vec<f64> = (1..=steps)
                .map(|t| estimators::gaussian_score_onesided(&sch, t, 0.1f64.sqrt()).unwrap())
                .collect();
            let got = integrating_factor_series(&sch, &ls).unwrap().terminal();
            let total = sch.cumulative_beta(steps);
            let n = 200_000;
            let h = total / n as f64;
            let acc: f64 = (0..n)
                .map(|i| {
                    let ab = (-(i as f64 + 0.5) * h).exp();
                    h * (0.5 - 1.0 / (0.1 * ab + 1.0 - ab))
                })
                .sum();
            let rel = got / acc.exp() - 1.0;
            assert!(rel.abs() < 0.03, "T = {steps}: relative gap {rel}");
        }
    }

    #[test]
    fn perturbation_bound_is_at_least_data_distance() {
        let sch = sch10();
        let ifac = integrating_factor_series(&sch, &[1.0; 10]).unwrap();
        let a = PerturbationTerms::new(&sch, &ifac, 0.0, 0.0);
        assert_eq!(perturbation_bound(&a, &a, 0.25), 0.25);
        let b = PerturbationTerms::new(&sch, &ifac, 2.0, 0.1);
        let full = perturbation_bound(&a, &b, 0.25);
        let expect = 0.25 + bound_rhs_corollary(&sch, &ifac, 2.0, 0.0).unwrap() + ifac.terminal() * 0.1;
        assert!((full - expect).abs() < 1e-12);
    }

    #[test]
    fn regularize_csv_layout() {
        let res = RegularizeResult {
            rows: vec![RegularizeRow {
                variant: Regularizer::WeightDecay(0.5),
                loss: 4.0,
                intercept: -1.5,
                w2: 0.1,
                i_floored: false,
            }],
        };
        let mut buf = Vec::new();
        res.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "variant,loss,intercept\nweight-decay:0.5,4,-1.5\n");
        assert_eq!(default_regularizers().len(), 8);
        assert!(res.get(Regularizer::None).is_none());
    }

    #[test]
    fn sweep_csv_layout() {
        let res = SweepResult {
            rows: vec![SweepRow {
                steps: 10,
                offset: 0.5,
                w2_p0q0: 0.05,
                ls_t: -1.0,
                i_t: 1.0,
                w2_terminal: 0.5,
                w2_fresh: 0.06,
                j_dsm: 4.0,
                epochs: 3,
            }],
        };
        let mut buf = Vec::new();
        res.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "T,offset,w2_p0q0,ls_T\n10,0.5,0.05,-1\n");
    }

    #[test]
    fn contraction_shrinks_with_more_noise() {
        let x0 = synthdata::generate(&synthdata::DatasetSpec::new(
            synthdata::DatasetKind::Gauss2d4Cluster,
            300,
            1,
        ))
        .unwrap();
        let short = NoiseSchedule::sigmoid(50, 1e-5, 1e-2).unwrap();
        let long = NoiseSchedule::sigmoid(100, 1e-5, 1e-2).unwrap();
        let a = contraction_offset(&short, &x0, 300, &mut rng::from_seed(1)).unwrap();
        let b = contraction_offset(&long, &x0, 300, &mut rng::from_seed(1)).unwrap();
        assert!(b.bound < a.bound);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        // The Cauchy–Schwarz step: sum beta I sqrt(b) <= sqrt(2 sum beta I^2 * 1/2 sum beta b).
        #[test]
        fn theorem_never_exceeds_corollary(
            b in prop::collection::vec(0.0f64..10.0, 10),
            ls in prop::collection::vec(-20.0f64..20.0, 10),
            w in 0.0f64..2.0,
        ) {
            let sch = sch10();
            let ifac = integrating_factor_series(&sch, &ls).unwrap();
            let jsm: f64 = sch.betas().iter().zip(&b).map(|(beta, v)| 0.5 * beta * v).sum();
            let thm = bound_rhs_theorem(&sch, &ifac, &b, w).unwrap();
            let cor = bound_rhs_corollary(&sch, &ifac, jsm, ifac.terminal() * w).unwrap();
            prop_assert!(thm <= cor * (1.0 + 1e-12) + 1e-15);
        }

        #[test]
        fn corollary_is_monotone_in_j(j1 in 0.0f64..10.0, j2 in 0.0f64..10.0, l in -5.0f64..5.0) {
            let sch = sch10();
            let ifac = integrating_factor_series(&sch, &[l; 10]).unwrap();
            let (lo, hi) = if j1 <= j2 { (j1, j2) } else { (j2, j1) };
            prop_assert!(bound_rhs_corollary(&sch, &ifac, lo, 0.0).unwrap() <= bound_rhs_corollary(&sch, &ifac, hi, 0.0).unwrap());
        }

        #[test]
        fn factor_starts_at_one_and_stays_positive(ls in prop::collection::vec(-1e5f64..1e3, 10)) {
            let ifac = integrating_factor_series(&sch10(), &ls).unwrap();
            prop_assert_eq!(ifac.log_values[0], 0.0);
            prop_assert!(ifac.values().iter().all(|v| *v > 0.0));
        }
    }
}
