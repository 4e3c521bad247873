//! Layered configuration: built-in defaults, then a flat JSON file, then flags.
//! Flag names are the config keys with `_` spelled as `-`.

use std::path::Path;

use clap::Args;
use serde_json::{json, Map, Value};
use w2lab_core::training::{JsmConfig, TrainConfig};

use crate::exit::Failure;

#[derive(Args, Debug, Clone, Default)]
pub struct TrainArgs {
    /// gauss1d-1cluster, gauss1d-2cluster, gauss2d-1cluster, gauss2d-4cluster or two-moons.
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub n_train: Option<usize>,
    /// Jitter for two-moons.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Number of diffusion steps.
    #[arg(long, visible_alias = "T")]
    pub steps: Option<usize>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta_t: Option<f64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub ascent_epochs: Option<usize>,
    #[arg(long)]
    pub descent_epochs: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub eval_points: Option<usize>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// shared-terminal or fresh-terminal.
    #[arg(long)]
    pub mode: Option<String>,
    /// none, spectral, clip:<c> or weight-decay:<c>.
    #[arg(long)]
    pub regularizer: Option<String>,
    #[arg(long)]
    pub spectral_iters: Option<usize>,
    #[arg(long)]
    pub kl_bandwidth: Option<f64>,
    /// Skip the per-epoch KL estimate.
    #[arg(long)]
    pub no_kl: bool,
    /// Estimate J_SM by KDE at every evaluated epoch.
    #[arg(long)]
    pub jsm: bool,
    /// Re-estimate the L_s series at every evaluated epoch.
    #[arg(long)]
    pub track_ls: bool,
}

impl TrainArgs {
    fn apply(&self, map: &mut Map<String, Value>) {
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = &self.$field {
                    map.insert(stringify!($field).to_string(), json!(v));
                })*
            };
        }
        set!(
            dataset, n_train, noise, steps, beta1, beta_t, hidden, depth, batch_size, lr, weight_decay,
            ascent_epochs, descent_epochs, window, tolerance, eval_points, eval_every, mode, regularizer,
            spectral_iters, kl_bandwidth
        );
        if self.no_kl {
            map.insert("kl_bandwidth".into(), Value::Null);
        }
        if self.jsm && map.get("jsm").is_none_or(Value::is_null) {
            map.insert("jsm".into(), json!(JsmConfig::default()));
        }
        if self.track_ls {
            map.insert("track_ls".into(), Value::Bool(true));
        }
    }
}

pub fn read_json_object(path: &Path) -> Result<Map<String, Value>, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::config(format!("cannot read {}: {e}", path.display())))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(Failure::config(format!("{} must hold a JSON object", path.display()))),
        Err(e) => Err(Failure::config(format!("{}: {e}", path.display()))),
    }
}

/// Resolves the effective training configuration.
pub fn resolve(file: Option<&Path>, seed: Option<u64>, flags: &TrainArgs) -> Result<TrainConfig, Failure> {
    let Value::Object(mut map) = json!(TrainConfig::default()) else {
        unreachable!("TrainConfig serializes to an object")
    };
    if let Some(path) = file {
        map.extend(read_json_object(path)?);
    }
    flags.apply(&mut map);
    if let Some(s) = seed {
        map.insert("seed".into(), json!(s));
    }
    let cfg: TrainConfig = serde_json::from_value(Value::Object(map)).map_err(|e| Failure::config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use w2lab_core::synthdata::DatasetKind;
    use w2lab_core::training::Regularizer;

    #[test]
    fn defaults_without_overrides() {
        let cfg = resolve(None, None, &TrainArgs::default()).unwrap();
        assert_eq!(cfg, TrainConfig::default());
    }

    #[test]
    fn flags_override_file_and_seed_overrides_both() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"dataset": "two-moons", "lr": 0.5, "seed": 3}"#).unwrap();
        let flags = TrainArgs {
            lr: Some(0.01),
            regularizer: Some("clip:0.1".into()),
            no_kl: true,
            jsm: true,
            ..Default::default()
        };
        let cfg = resolve(Some(&path), Some(9), &flags).unwrap();
        assert_eq!(cfg.dataset, DatasetKind::TwoMoons);
        assert_eq!(cfg.lr, 0.01);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.regularizer, Regularizer::Clip(0.1));
        assert_eq!(cfg.kl_bandwidth, None);
        assert_eq!(cfg.jsm, Some(JsmConfig::default()));
    }

    #[test]
    fn bad_input_is_a_config_failure() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"learning_rate": 0.1}"#).unwrap();
        assert_eq!(resolve(Some(&path), None, &TrainArgs::default()).unwrap_err().code, 2);
        std::fs::write(&path, "[1, 2]").unwrap();
        assert_eq!(resolve(Some(&path), None, &TrainArgs::default()).unwrap_err().code, 2);
        let flags = TrainArgs {
            batch_size: Some(0),
            ..Default::default()
        };
        assert_eq!(resolve(None, None, &flags).unwrap_err().code, 2);
        let flags = TrainArgs {
            dataset: Some("swiss-roll".into()),
            ..Default::default()
        };
        assert_eq!(resolve(None, None, &flags).unwrap_err().code, 2);
    }
}
