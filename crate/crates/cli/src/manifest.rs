//! Output directory bookkeeping and the run manifest.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use w2lab_core::rng::{self, tag};
use w2lab_core::scorenet::{save_network, ScoreNetwork};
use w2lab_core::training::TrainConfig;

use crate::exit::Failure;

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub master: u64,
    pub data: u64,
    pub eval_data: u64,
    pub init: u64,
    pub train: u64,
}

impl Seeds {
    pub fn of(cfg: &TrainConfig) -> Self {
        Seeds {
            master: cfg.seed,
            data: cfg.data_spec().seed,
            eval_data: cfg.eval_spec().seed,
            init: rng::derive_seed(cfg.seed, &[tag::INIT]),
            train: rng::derive_seed(cfg.seed, &[tag::TRAIN]),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: TrainConfig,
    /// Subcommand options outside the training config.
    pub options: Value,
    pub seeds: Seeds,
    /// SHA-256 over the canonical JSON of command, version, config and options.
    pub input_hash: String,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
    pub files: Vec<FileEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Collects the files a subcommand writes so the manifest can list them.
pub struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
    started: u64,
}

impl Outputs {
    pub fn create(dir: &Path) -> Result<Self, Failure> {
        std::fs::create_dir_all(dir)?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            started: now_ms(),
        })
    }

    fn record(&mut self, name: &str) {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
    }

    pub fn bytes(&mut self, name: &str, data: &[u8]) -> Result<(), Failure> {
        std::fs::write(self.dir.join(name), data)?;
        self.record(name);
        Ok(())
    }

    pub fn csv<F>(&mut self, name: &str, write: F) -> Result<(), Failure>
    where
        F: FnOnce(&mut Vec<u8>) -> w2lab_core::Result<()>,
    {
        let mut buf = Vec::new();
        write(&mut buf)?;
        self.bytes(name, &buf)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), Failure> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.bytes(name, text.as_bytes())
    }

    pub fn network(&mut self, net: &ScoreNetwork, stem: &str) -> Result<(), Failure> {
        save_network(net, &self.dir, stem)?;
        self.record(&format!("{stem}.bin"));
        self.record(&format!("{stem}.json"));
        Ok(())
    }

    /// Writes `manifest.json` listing every recorded file with its hash.
    pub fn finish(self, command: &str, cfg: &TrainConfig, options: Value) -> Result<RunManifest, Failure> {
        let mut files = Vec::with_capacity(self.files.len());
        for name in &self.files {
            let data = std::fs::read(self.dir.join(name))?;
            files.push(FileEntry {
                name: name.clone(),
                bytes: data.len() as u64,
                sha256: sha256_hex(&data),
            });
        }
        let version = env!("CARGO_PKG_VERSION").to_string();
        let inputs = json!({
            "command": command,
            "version": version,
            "config": cfg,
            "options": options,
        });
        let manifest = RunManifest {
            command: command.to_string(),
            version,
            config: cfg.clone(),
            options,
            seeds: Seeds::of(cfg),
            input_hash: sha256_hex(serde_json::to_string(&inputs)?.as_bytes()),
            started_unix_ms: self.started,
            finished_unix_ms: now_ms(),
            files,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        std::fs::write(self.dir.join(MANIFEST), text)?;
        Ok(manifest)
    }
}
