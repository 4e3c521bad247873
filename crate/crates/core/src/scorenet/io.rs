//! Network persistence: a flat little-endian `f64` blob plus a JSON sidecar
//! describing the tensor layout.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NetworkConfig, Params, ScoreNetwork};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSidecar {
    pub format: String,
    pub config: NetworkConfig,
    pub tensors: Vec<TensorInfo>,
}

const FORMAT: &str = "f64-le";

impl ScoreNetwork {
    pub fn sidecar(&self) -> NetworkSidecar {
        let mut tensors = Vec::new();
        for (l, layer) in self.params.layers.iter().enumerate() {
            tensors.push(TensorInfo {
                name: format!("layer{l}.weight"),
                shape: vec![layer.out_dim, layer.in_dim],
            });
            tensors.push(TensorInfo {
                name: format!("layer{l}.bias"),
                shape: vec![layer.out_dim],
            });
            tensors.push(TensorInfo {
                name: format!("layer{l}.embed"),
                shape: vec![self.config.steps, layer.out_dim],
            });
        }
        NetworkSidecar {
            format: FORMAT.into(),
            config: self.config.clone(),
            tensors,
        }
    }

    pub fn to_blob(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.params.num_params() * 8);
        for (_, t) in self.params.tensors() {
            for v in t {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_blob(sidecar: &NetworkSidecar, blob: &[u8]) -> Result<Self> {
        if sidecar.format != FORMAT {
            return Err(Error::InvalidArgument(format!(
                "unsupported blob format `{}`",
                sidecar.format
            )));
        }
        let mut net = ScoreNetwork::zeros(sidecar.config.clone())?;
        if net.sidecar() != *sidecar {
            return Err(Error::InvalidArgument(
                "sidecar tensor layout does not match its config".into(),
            ));
        }
        let expected = net.params.num_params() * 8;
        if blob.len() != expected {
            return Err(Error::SizeMismatch {
                left: blob.len(),
                right: expected,
            });
        }
        let mut chunks = blob.chunks_exact(8);
        for (_, t) in net.params.tensors_mut() {
            for v in t.iter_mut() {
                let bytes: [u8; 8] = chunks.next().unwrap().try_into().unwrap();
                *v = f64::from_le_bytes(bytes);
            }
        }
        Ok(net)
    }
}

/// Writes `<stem>.bin` and `<stem>.json`.
pub fn save_network(net: &ScoreNetwork, dir: &Path, stem: &str) -> Result<()> {
    std::fs::write(dir.join(format!("{stem}.bin")), net.to_blob())?;
    let json = serde_json::to_string_pretty(&net.sidecar())?;
    std::fs::write(dir.join(format!("{stem}.json")), json + "\n")?;
    Ok(())
}

pub fn load_network(dir: &Path, stem: &str) -> Result<ScoreNetwork> {
    let sidecar: NetworkSidecar =
        serde_json::from_slice(&std::fs::read(dir.join(format!("{stem}.json")))?)?;
    let blob = std::fs::read(dir.join(format!("{stem}.bin")))?;
    ScoreNetwork::from_blob(&sidecar, &blob)
}

impl Params {
    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn blob_round_trip_is_bit_exact(seed in any::<u64>(), dim in 1usize..3, steps in 1usize..12) {
            let net = ScoreNetwork::init(NetworkConfig::new(dim, steps), &mut rng::from_seed(seed)).unwrap();
            let back = ScoreNetwork::from_blob(&net.sidecar(), &net.to_blob()).unwrap();
            prop_assert_eq!(back.to_blob(), net.to_blob());
        }
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let net = ScoreNetwork::init(NetworkConfig::new(2, 10), &mut rng::from_seed(5)).unwrap();
        save_network(&net, dir.path(), "net").unwrap();
        let back = load_network(dir.path(), "net").unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let net = ScoreNetwork::init(NetworkConfig::new(2, 3), &mut rng::from_seed(5)).unwrap();
        let blob = net.to_blob();
        assert!(ScoreNetwork::from_blob(&net.sidecar(), &blob[..blob.len() - 8]).is_err());
    }
}
