//! Denoising score matching with the ascent-then-descent protocol and
//! per-epoch evaluation.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{self, JsmEstimate, LsGridConfig};
use crate::model::ScoreModel;
use crate::ot;
use crate::rng::{self, tag, Rng};
use crate::sampler::{self, ReverseMode};
use crate::schedule::NoiseSchedule;
use crate::scorenet::{
    adamw_step, spectral_normalize, weight_clip, Direction, Example, NetworkConfig,
    OptimizerState, Params, ScoreNetwork,
};
use crate::synthdata::{self, DatasetKind, DatasetSpec, SampleSet};

pub use crate::estimators::kl_estimate as kl_estimate_epoch;

/// Weight constraint applied after every optimizer step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Regularizer {
    None,
    Spectral,
    /// Clamp weight entries to `[-c, c]`.
    Clip(f64),
    /// Replaces the AdamW decay coefficient.
    WeightDecay(f64),
}

impl fmt::Display for Regularizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Regularizer::None => f.write_str("none"),
            Regularizer::Spectral => f.write_str("spectral"),
            Regularizer::Clip(c) => write!(f, "clip:{c}"),
            Regularizer::WeightDecay(c) => write!(f, "weight-decay:{c}"),
        }
    }
}

impl FromStr for Regularizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown regularizer `{s}`"));
        let coef = |v: &str| -> Result<f64> {
            let c: f64 = v.parse().map_err(|_| bad())?;
            if c > 0.0 && c.is_finite() {
                Ok(c)
            } else {
                Err(Error::Config(format!("regularizer coefficient must be positive, got {v}")))
            }
        };
        match s.split_once(':') {
            None => match s {
                "none" | "vanilla" => Ok(Regularizer::None),
                "spectral" => Ok(Regularizer::Spectral),
                _ => Err(bad()),
            },
            Some(("clip", v)) => Ok(Regularizer::Clip(coef(v)?)),
            Some(("weight-decay", v)) => Ok(Regularizer::WeightDecay(coef(v)?)),
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for Regularizer {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Regularizer> for String {
    fn from(r: Regularizer) -> String {
        r.to_string()
    }
}

/// Settings for the per-epoch plug-in J_SM estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JsmConfig {
    pub n_per_t: usize,
    pub bandwidth: f64,
    pub fd_step: f64,
}

impl Default for JsmConfig {
    fn default() -> Self {
        JsmConfig {
            n_per_t: 2000,
            bandwidth: 0.05,
            fd_step: 0.01,
        }
    }
}

/// Everything that determines a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub dataset: DatasetKind,
    /// Training set size.
    pub n_train: usize,
    /// Jitter for two-moons.
    pub noise: f64,
    pub steps: usize,
    pub beta1: f64,
    pub beta_t: f64,
    pub hidden: usize,
    pub depth: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub ascent_epochs: usize,
    /// Cap on descent epochs.
    pub descent_epochs: usize,
    /// Moving-average window for the stopping rule.
    pub window: usize,
    /// Minimum decrease of the moving average between epochs.
    pub tolerance: f64,
    /// Points per W2 evaluation.
    pub eval_points: usize,
    /// Evaluate every this many epochs; the last epoch is always evaluated.
    pub eval_every: usize,
    pub mode: ReverseMode,
    pub regularizer: Regularizer,
    pub spectral_iters: usize,
    /// KDE bandwidth for the KL estimate; `None` skips it.
    pub kl_bandwidth: Option<f64>,
    /// Per-epoch J_SM estimate; `None` skips it.
    pub jsm: Option<JsmConfig>,
    /// Recompute the `L_s(t)` series at every evaluated epoch.
    pub track_ls: bool,
    pub ls_grid: LsGridConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dataset: DatasetKind::Gauss2d4Cluster,
            n_train: 1000,
            noise: synthdata::DEFAULT_MOONS_NOISE,
            steps: 10,
            beta1: 1e-5,
            beta_t: 1e-2,
            hidden: 64,
            depth: 4,
            batch_size: 128,
            lr: 1e-3,
            weight_decay: 0.01,
            ascent_epochs: 10,
            descent_epochs: 2000,
            window: 20,
            tolerance: 1e-4,
            eval_points: 2000,
            eval_every: 1,
            mode: ReverseMode::SharedTerminal,
            regularizer: Regularizer::None,
            spectral_iters: 20,
            kl_bandwidth: Some(0.1),
            jsm: None,
            track_ls: false,
            ls_grid: LsGridConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if self.eval_points < 2 {
            return fail("eval_points must be at least 2");
        }
        if self.n_train == 0 {
            return fail("n_train must be positive");
        }
        if self.eval_every == 0 {
            return fail("eval_every must be positive");
        }
        if self.window == 0 {
            return fail("window must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail("lr must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return fail("weight_decay must be nonnegative");
        }
        if self.regularizer == Regularizer::Spectral && self.spectral_iters == 0 {
            return fail("spectral_iters must be positive");
        }
        if let Some(h) = self.kl_bandwidth {
            if !(h > 0.0) {
                return fail("kl_bandwidth must be positive");
            }
        }
        if let Some(j) = &self.jsm {
            if j.n_per_t == 0 || !(j.bandwidth > 0.0) || !(j.fd_step > 0.0) {
                return fail("jsm settings must be positive");
            }
        }
        self.schedule()?;
        self.network_config().validate()?;
        self.data_spec().validate()
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::sigmoid(self.steps, self.beta1, self.beta_t)
    }

    pub fn network_config(&self) -> NetworkConfig {
        NetworkConfig {
            hidden: self.hidden,
            depth: self.depth,
            ..NetworkConfig::new(self.dataset.dim(), self.steps)
        }
    }

    pub fn data_spec(&self) -> DatasetSpec {
        DatasetSpec {
            noise: self.noise,
            ..DatasetSpec::new(self.dataset, self.n_train, self.seed)
        }
    }

    /// The held-out set that is diffused and regenerated at every evaluation.
    pub fn eval_spec(&self) -> DatasetSpec {
        DatasetSpec {
            noise: self.noise,
            ..DatasetSpec::new(
                self.dataset,
                self.eval_points,
                rng::derive_seed(self.seed, &[tag::EVAL_DATA]),
            )
        }
    }

    /// AdamW decay actually used, after the regularizer override.
    pub fn effective_weight_decay(&self) -> f64 {
        match self.regularizer {
            Regularizer::WeightDecay(c) => c,
            _ => self.weight_decay,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Ascent,
    Descent,
}

/// Metrics recorded after one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub phase: Phase,
    /// J_DSM from a stratified pass over the training set, with noise held
    /// fixed across epochs.
    pub j_dsm: f64,
    /// Mean of the minibatch losses seen during the epoch, on the same scale.
    pub train_loss: f64,
    pub w2: Option<f64>,
    pub w2_terminal: Option<f64>,
    pub kl: Option<f64>,
    pub j_sm_est: Option<f64>,
    pub jsm_per_t: Option<Vec<f64>>,
    pub ls: Option<Vec<f64>>,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    /// Whether descent stopped on the moving-average rule rather than the cap.
    pub converged: bool,
}

fn opt_str(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |x| x.to_string())
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// Records that carry a W2 measurement.
    pub fn evaluated(&self) -> impl Iterator<Item = &EpochRecord> {
        self.records.iter().filter(|r| r.w2.is_some())
    }

    /// CSV `epoch,j_dsm,w2,kl,j_sm_est`; missing values are written as `nan`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        wtr.write_record(["epoch", "j_dsm", "w2", "kl", "j_sm_est"])?;
        for r in &self.records {
            wtr.write_record([
                r.epoch.to_string(),
                r.j_dsm.to_string(),
                opt_str(r.w2),
                opt_str(r.kl),
                opt_str(r.j_sm_est),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

struct Draws {
    xs: Vec<f64>,
    targets: Vec<f64>,
    ts: Vec<usize>,
}

/// Diffuses each point at its timestep and forms the conditional-score target
/// `-z / sqrt(1 - ab_t)`.
fn draw(sch: &NoiseSchedule, x0: &[f64], d: usize, ts: Vec<usize>, rng: &mut Rng) -> Result<Draws> {
    let mut xs = Vec::with_capacity(x0.len());
    let mut targets = Vec::with_capacity(x0.len());
    for (p, &t) in x0.chunks_exact(d).zip(&ts) {
        let (scale, var) = sch.marginal_params(t)?;
        let sd = var.sqrt();
        for &v in p {
            let z: f64 = rng.sample(StandardNormal);
            xs.push(scale * v + sd * z);
            targets.push(-z / sd);
        }
    }
    Ok(Draws { xs, targets, ts })
}

fn examples<'a>(sch: &NoiseSchedule, dr: &'a Draws, d: usize) -> Vec<Example<'a>> {
    dr.xs
        .chunks_exact(d)
        .zip(dr.targets.chunks_exact(d))
        .zip(&dr.ts)
        .map(|((x, target), &t)| Example {
            x,
            t,
            target,
            weight: sch.betas()[t - 1],
        })
        .collect()
}

fn check_batch(sch: &NoiseSchedule, batch: &SampleSet, fixed_t: Option<usize>) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    if let Some(t) = fixed_t {
        sch.marginal_params(t)?;
    }
    Ok(())
}

fn timesteps(sch: &NoiseSchedule, n: usize, fixed_t: Option<usize>, rng: &mut Rng) -> Vec<usize> {
    (0..n)
        .map(|_| fixed_t.unwrap_or_else(|| rng.random_range(1..=sch.steps())))
        .collect()
}

/// Minibatch DSM loss `mean_i 0.5 beta_t |s(x_t, t) - target|^2` with `t`
/// uniform per example, and its parameter gradient.
pub fn dsm_batch_loss(net: &ScoreNetwork, sch: &NoiseSchedule, batch: &SampleSet, rng: &mut Rng) -> Result<(f64, Params)> {
    dsm_batch_loss_at(net, sch, batch, None, rng)
}

/// As [`dsm_batch_loss`], optionally with every example at timestep `t`.
pub fn dsm_batch_loss_at(
    net: &ScoreNetwork,
    sch: &NoiseSchedule,
    batch: &SampleSet,
    t: Option<usize>,
    rng: &mut Rng,
) -> Result<(f64, Params)> {
    check_batch(sch, batch, t)?;
    let ts = timesteps(sch, batch.len(), t, rng);
    let dr = draw(sch, batch.as_slice(), batch.dim(), ts, rng)?;
    net.backward_grads(&examples(sch, &dr, batch.dim()))
}

/// The same loss for any score model, without gradients.
pub fn dsm_loss(
    model: &dyn ScoreModel,
    sch: &NoiseSchedule,
    batch: &SampleSet,
    t: Option<usize>,
    rng: &mut Rng,
) -> Result<f64> {
    check_batch(sch, batch, t)?;
    let d = batch.dim();
    let ts = timesteps(sch, batch.len(), t, rng);
    let dr = draw(sch, batch.as_slice(), d, ts, rng)?;
    let mut s = vec![0.0; d];
    let total: f64 = examples(sch, &dr, d)
        .iter()
        .map(|ex| {
            model.score_into(ex.x, ex.t, &mut s);
            let sq: f64 = s.iter().zip(ex.target).map(|(a, b)| (a - b) * (a - b)).sum();
            0.5 * ex.weight * sq
        })
        .sum();
    Ok(total / batch.len() as f64)
}

/// `J_DSM = sum_t 0.5 beta_t E|s - target|^2`, estimated with every timestep
/// given an equal share of the data, cycling through the data as needed.
pub fn j_dsm_stratified(model: &dyn ScoreModel, sch: &NoiseSchedule, data: &SampleSet, rng: &mut Rng) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("data"));
    }
    let steps = sch.steps();
    let per = data.len().div_ceil(steps);
    let n = per * steps;
    let mut ts: Vec<usize> = (0..n).map(|i| i % steps + 1).collect();
    ts.shuffle(rng);
    let d = data.dim();
    let x0: Vec<f64> = (0..n).flat_map(|i| data.point(i % data.len()).to_vec()).collect();
    let dr = draw(sch, &x0, d, ts, rng)?;
    let mut sums = vec![0.0; steps];
    let mut s = vec![0.0; d];
    for ex in examples(sch, &dr, d) {
        model.score_into(ex.x, ex.t, &mut s);
        sums[ex.t - 1] += s.iter().zip(ex.target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(sch
        .betas()
        .iter()
        .zip(&sums)
        .map(|(b, s)| 0.5 * b * s / per as f64)
        .sum())
}

/// Decrease of the mean J_DSM over the last `w` epochs relative to the `w`
/// epochs before them; `None` until `2w` values exist.
pub fn window_improvement(j: &[f64], w: usize) -> Option<f64> {
    let k = j.len();
    if w == 0 || k < 2 * w {
        return None;
    }
    let prev = j[k - 2 * w..k - w].iter().sum::<f64>() / w as f64;
    let cur = j[k - w..].iter().sum::<f64>() / w as f64;
    Some(prev - cur)
}

/// A finished run and the data needed to assess it.
#[derive(Clone, Debug)]
pub struct TrainedRun {
    pub config: TrainConfig,
    pub schedule: NoiseSchedule,
    pub net: ScoreNetwork,
    pub history: TrainHistory,
    pub eval_set: SampleSet,
}

/// Metrics for one network snapshot.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub w2: f64,
    pub w2_terminal: f64,
    pub kl: Option<f64>,
    pub jsm: Option<JsmEstimate>,
    pub ls: Option<Vec<f64>>,
}

/// Generates from the held-out set and measures the result.
pub fn evaluate(cfg: &TrainConfig, sch: &NoiseSchedule, net: &ScoreNetwork, eval_set: &SampleSet, epoch: usize) -> Result<Evaluation> {
    let mut r = rng::stream(cfg.seed, &[tag::EVAL, epoch as u64]);
    let gen = sampler::generate(net, sch, cfg.mode, eval_set, &mut r)?;
    let w2 = ot::w2(eval_set, &gen.q0)?;
    let kl = match cfg.kl_bandwidth {
        Some(h) => Some(estimators::kl_estimate(eval_set, &gen.q0, h)?),
        None => None,
    };
    let jsm = match &cfg.jsm {
        Some(j) => {
            let mut r = rng::stream(cfg.seed, &[tag::JSM, epoch as u64]);
            Some(estimators::estimate_jsm(net, sch, eval_set, j.n_per_t, j.bandwidth, j.fd_step, &mut r)?)
        }
        None => None,
    };
    let ls = if cfg.track_ls {
        Some(estimators::ls_series(net, sch, eval_set, &cfg.ls_grid)?)
    } else {
        None
    };
    Ok(Evaluation {
        w2,
        w2_terminal: gen.w2_terminal,
        kl,
        jsm,
        ls,
    })
}

fn regularize(net: &mut ScoreNetwork, cfg: &TrainConfig) -> Result<()> {
    match cfg.regularizer {
        Regularizer::Spectral => spectral_normalize(net, cfg.spectral_iters),
        Regularizer::Clip(c) => weight_clip(net, c),
        Regularizer::None | Regularizer::WeightDecay(_) => Ok(()),
    }
}

/// Runs `ascent_epochs` of gradient ascent, then descent until the mean
/// J_DSM over the last `window` epochs improves on the preceding `window`
/// epochs by less than `tolerance`, or `descent_epochs` is reached.
pub fn run_training(cfg: &TrainConfig) -> Result<TrainedRun> {
    cfg.validate()?;
    let data = synthdata::generate(&cfg.data_spec())?;
    let eval_set = synthdata::generate(&cfg.eval_spec())?;
    run_training_on(cfg, &data, eval_set)
}

/// As [`run_training`] but on supplied training and evaluation sets.
pub fn run_training_on(cfg: &TrainConfig, data: &SampleSet, eval_set: SampleSet) -> Result<TrainedRun> {
    cfg.validate()?;
    for s in [data, &eval_set] {
        if s.dim() != cfg.dataset.dim() {
            return Err(Error::DimensionMismatch {
                expected: cfg.dataset.dim(),
                got: s.dim(),
            });
        }
    }
    let sch = cfg.schedule()?;
    let mut net = ScoreNetwork::init(cfg.network_config(), &mut rng::stream(cfg.seed, &[tag::INIT]))?;
    let mut opt = OptimizerState::new(&net, cfg.lr, cfg.effective_weight_decay());
    let mut train_rng = rng::stream(cfg.seed, &[tag::TRAIN]);
    let d = data.dim();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = TrainHistory::default();
    let total = cfg.ascent_epochs + cfg.descent_epochs;
    let mut descent_j: Vec<f64> = Vec::new();

    for epoch in 1..=total {
        let start = Instant::now();
        let phase = if epoch <= cfg.ascent_epochs {
            Phase::Ascent
        } else {
            Phase::Descent
        };
        let dir = match phase {
            Phase::Ascent => Direction::Ascend,
            Phase::Descent => Direction::Descend,
        };
        order.shuffle(&mut train_rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.select(chunk)?;
            let ts = timesteps(&sch, batch.len(), None, &mut train_rng);
            let dr = draw(&sch, batch.as_slice(), d, ts, &mut train_rng)?;
            let (loss, grads) = net.backward_grads(&examples(&sch, &dr, d))?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
            adamw_step(&mut net, &grads, &mut opt, dir)?;
            regularize(&mut net, cfg)?;
            loss_sum += loss;
            batches += 1;
        }
        let train_loss = sch.steps() as f64 * loss_sum / batches as f64;
        let j_dsm = j_dsm_stratified(&net, &sch, &data, &mut rng::stream(cfg.seed, &[tag::JDSM]))?;
        if !j_dsm.is_finite() {
            return Err(Error::Divergence { epoch, loss: j_dsm });
        }

        let mut stop = epoch == total;
        if phase == Phase::Descent {
            descent_j.push(j_dsm);
            if let Some(gain) = window_improvement(&descent_j, cfg.window) {
                if gain < cfg.tolerance {
                    history.converged = true;
                    stop = true;
                }
            }
        }

        let mut rec = EpochRecord {
            epoch,
            phase,
            j_dsm,
            train_loss,
            w2: None,
            w2_terminal: None,
            kl: None,
            j_sm_est: None,
            jsm_per_t: None,
            ls: None,
            seconds: 0.0,
        };
        if stop || epoch % cfg.eval_every == 0 {
            let ev = evaluate(cfg, &sch, &net, &eval_set, epoch)?;
            rec.w2 = Some(ev.w2);
            rec.w2_terminal = Some(ev.w2_terminal);
            rec.kl = ev.kl;
            rec.j_sm_est = ev.jsm.as_ref().map(|j| j.total);
            rec.jsm_per_t = ev.jsm.map(|j| j.per_t);
            rec.ls = ev.ls;
        }
        rec.seconds = start.elapsed().as_secs_f64();
        log::info!(
            "epoch {epoch} {:?} j_dsm {:.5} w2 {}",
            phase,
            j_dsm,
            opt_str(rec.w2)
        );
        history.records.push(rec);
        if stop {
            break;
        }
    }

    Ok(TrainedRun {
        config: cfg.clone(),
        schedule: sch,
        net,
        history,
        eval_set,
    })
}
