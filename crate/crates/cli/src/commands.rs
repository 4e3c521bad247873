use std::path::Path;

use serde_json::{json, Value};
use w2lab_core::boundlab::{self, VerifyOptions};
use w2lab_core::estimators::{self, write_ls_csv};
use w2lab_core::rng::{self, tag};
use w2lab_core::scorenet::load_network;
use w2lab_core::synthdata;
use w2lab_core::training::{self, TrainConfig, TrainHistory, TrainedRun};

use crate::config::{self, TrainArgs};
use crate::exit::Failure;
use crate::manifest::Outputs;
use crate::{Global, JsmCmd, PerturbCmd, RegularizeCmd, SweepCmd, TrainCmd, VerifyCmd};

const CONFIG_FILE: &str = "config.json";
const HISTORY_JSON: &str = "history.json";
const NETWORK: &str = "network";

fn resolve(g: &Global, flags: &TrainArgs) -> Result<TrainConfig, Failure> {
    config::resolve(g.config.as_deref(), g.seed, flags)
}

fn write_run(out: &mut Outputs, run: &TrainedRun) -> Result<(), Failure> {
    out.json(CONFIG_FILE, &run.config)?;
    out.csv("history.csv", |w| run.history.write_csv(w))?;
    out.json(HISTORY_JSON, &run.history)?;
    out.network(&run.net, NETWORK)
}

/// Rebuilds a run from the files `train` wrote.
pub fn load_run(dir: &Path) -> Result<TrainedRun, Failure> {
    let cfg_map = config::read_json_object(&dir.join(CONFIG_FILE))?;
    let config: TrainConfig =
        serde_json::from_value(Value::Object(cfg_map)).map_err(|e| Failure::config(e.to_string()))?;
    config.validate()?;
    let history: TrainHistory = serde_json::from_slice(&std::fs::read(dir.join(HISTORY_JSON))?)?;
    let net = load_network(dir, NETWORK)?;
    Ok(TrainedRun {
        schedule: config.schedule()?,
        eval_set: synthdata::generate(&config.eval_spec())?,
        config,
        net,
        history,
    })
}

/// Loads `--run` if given, otherwise trains and writes the run artifacts.
fn obtain_run(g: &Global, flags: &TrainArgs, run_dir: Option<&Path>, out: &mut Outputs) -> Result<TrainedRun, Failure> {
    match run_dir {
        Some(dir) => load_run(dir),
        None => {
            let run = training::run_training(&resolve(g, flags)?)?;
            write_run(out, &run)?;
            Ok(run)
        }
    }
}

pub fn train(g: &Global, c: &TrainCmd) -> Result<(), Failure> {
    let cfg = resolve(g, &c.train)?;
    let run = training::run_training(&cfg)?;
    let mut out = Outputs::create(&g.out_dir)?;
    write_run(&mut out, &run)?;
    out.finish("train", &cfg, Value::Null)?;
    log::info!(
        "trained {} epochs (converged: {}), final J_DSM {:.6}",
        run.history.len(),
        run.history.converged,
        run.history.last().map_or(f64::NAN, |r| r.j_dsm)
    );
    Ok(())
}

pub fn verify_bound(g: &Global, c: &VerifyCmd) -> Result<(), Failure> {
    let mut out = Outputs::create(&g.out_dir)?;
    let run = obtain_run(g, &c.train, c.run.as_deref(), &mut out)?;
    let ls = boundlab::final_ls(&run)?;
    let opts = VerifyOptions {
        zero_i_series: c.zero_i_series,
    };
    let ver = boundlab::verify_run(&run, &ls, &opts)?;
    out.json("bound_report.json", &ver)?;
    out.csv("loglog.csv", |w| ver.write_loglog_csv(w))?;
    out.csv("ls.csv", |w| write_ls_csv(&ls, w))?;
    let options = json!({ "run": c.run, "zero_i_series": c.zero_i_series });
    out.finish("verify-bound", &run.config, options)?;
    log::info!(
        "intercept {:.4}, offset {:.4e}, {} epochs checked",
        ver.report.intercept,
        ver.report.offset,
        ver.epochs.len()
    );
    if ver.holds() {
        Ok(())
    } else {
        Err(Failure::violation(format!("bound violated at epochs {:?}", ver.violations)))
    }
}

pub fn sweep_t(g: &Global, c: &SweepCmd) -> Result<(), Failure> {
    if c.t_list.is_empty() || c.t_list.contains(&0) {
        return Err(Failure::config("--t-list needs positive step counts"));
    }
    let base = resolve(g, &c.train)?;
    let mut out = Outputs::create(&g.out_dir)?;
    let mut result = boundlab::SweepResult::default();
    for &steps in &c.t_list {
        let cfg = TrainConfig { steps, ..base.clone() };
        log::info!("sweep: training with T = {steps}");
        let run = training::run_training(&cfg)?;
        let (row, ls) = boundlab::sweep_row(&run)?;
        out.csv(&format!("ls_T{steps}.csv"), |w| write_ls_csv(&ls, w))?;
        result.rows.push(row);
    }
    out.csv("sweep.csv", |w| result.write_csv(w))?;
    out.json("sweep.json", &result)?;
    out.finish("sweep-t", &base, json!({ "t_list": c.t_list }))?;
    Ok(())
}

pub fn regularize(g: &Global, c: &RegularizeCmd) -> Result<(), Failure> {
    let base = resolve(g, &c.train)?;
    let variants = if c.variants.is_empty() {
        boundlab::default_regularizers()
    } else {
        c.variants.clone()
    };
    let mut out = Outputs::create(&g.out_dir)?;
    let result = boundlab::regularize_sweep(&base, &variants)?;
    out.csv("regularize.csv", |w| result.write_csv(w))?;
    out.json("regularize.json", &result)?;
    let names: Vec<String> = variants.iter().map(ToString::to_string).collect();
    out.finish("regularize", &base, json!({ "variants": names }))?;
    Ok(())
}

pub fn perturb(g: &Global, c: &PerturbCmd) -> Result<(), Failure> {
    if !(c.eps >= 0.0 && c.eps.is_finite()) || c.seeds == 0 {
        return Err(Failure::config("--eps must be finite and non-negative and --seeds positive"));
    }
    let base = resolve(g, &c.train)?;
    let mut out = Outputs::create(&g.out_dir)?;
    let mut checks = Vec::new();
    for k in 0..c.seeds {
        let cfg = TrainConfig {
            seed: base.seed + k,
            ..base.clone()
        };
        log::info!("perturb: seed {}", cfg.seed);
        checks.push(boundlab::perturbation_check(&cfg, c.eps)?);
    }
    let mut csv = String::from("seed,eps,w2_p0_p0tilde,w2_q0_q0tilde,bound\n");
    for k in &checks {
        csv += &format!(
            "{},{},{},{},{}\n",
            k.seed, k.eps, k.w2_p0_p0tilde, k.measured_w2_q0_q0tilde, k.bound
        );
    }
    out.bytes("perturb.csv", csv.as_bytes())?;
    out.json("perturb.json", &checks)?;
    out.finish("perturb", &base, json!({ "eps": c.eps, "seeds": c.seeds }))?;
    let failed: Vec<u64> = checks.iter().filter(|k| !k.holds()).map(|k| k.seed).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::violation(format!("perturbation bound violated for seeds {failed:?}")))
    }
}

pub fn estimate_jsm(g: &Global, c: &JsmCmd) -> Result<(), Failure> {
    let mut out = Outputs::create(&g.out_dir)?;
    let run = obtain_run(g, &c.train, c.run.as_deref(), &mut out)?;
    let mut r = rng::stream(run.config.seed, &[tag::JSM]);
    let est = estimators::estimate_jsm(
        &run.net,
        &run.schedule,
        &run.eval_set,
        c.n_per_t,
        c.bandwidth,
        c.fd_step,
        &mut r,
    )?;
    let mut csv = String::from("t,b\n");
    for (t, b) in est.per_t.iter().enumerate() {
        csv += &format!("{},{}\n", t + 1, b);
    }
    out.bytes("jsm.csv", csv.as_bytes())?;
    let j_dsm = run.history.last().map(|r| r.j_dsm);
    out.json("jsm.json", &json!({ "j_sm": est.total, "per_t": est.per_t, "j_dsm": j_dsm }))?;
    let options = json!({
        "run": c.run,
        "n_per_t": c.n_per_t,
        "bandwidth": c.bandwidth,
        "fd_step": c.fd_step,
    });
    out.finish("estimate-jsm", &run.config, options)?;
    log::info!("J_SM estimate {:.6} (J_DSM {:?})", est.total, j_dsm);
    Ok(())
}
