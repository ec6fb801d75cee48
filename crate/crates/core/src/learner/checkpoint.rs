//! Portable JSON checkpoint: shapes, row-major weight blocks and the
//! fingerprint of the configuration that produced them.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{Group, NetShape, QNetworkParams};
use super::train::TrainConfig;
use crate::bridging_env::EnvConfig;
use crate::error::{Error, Result};
use crate::fingerprint::fingerprint;

pub const CHECKPOINT_FORMAT: &str = "bridgesafe-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightBlock {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub shape: NetShape,
    pub env_config: EnvConfig,
    pub train_config: TrainConfig,
    pub config_fingerprint: String,
    pub blocks: Vec<WeightBlock>,
}

#[derive(Serialize)]
struct FingerprintInput<'a> {
    env: &'a EnvConfig,
    train: &'a TrainConfig,
}

pub fn config_fingerprint(env: &EnvConfig, train: &TrainConfig) -> String {
    fingerprint(&FingerprintInput { env, train })
}

impl Checkpoint {
    pub fn new(params: &QNetworkParams, env_config: &EnvConfig, train_config: &TrainConfig) -> Self {
        let shape = params.shape();
        let blocks = Group::ALL
            .into_iter()
            .map(|g| {
                let (rows, cols) = g.dims(shape);
                WeightBlock {
                    name: g.name().to_string(),
                    rows,
                    cols,
                    data: params.group(g).to_vec(),
                }
            })
            .collect();
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            shape,
            env_config: env_config.clone(),
            train_config: train_config.clone(),
            config_fingerprint: config_fingerprint(env_config, train_config),
            blocks,
        }
    }

    /// Rebuilds the parameters, checking every block against the declared shape.
    pub fn params(&self) -> Result<QNetworkParams> {
        let mut p = QNetworkParams::zeros(self.shape);
        if self.blocks.len() != Group::ALL.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} weight blocks, found {}",
                Group::ALL.len(),
                self.blocks.len()
            )));
        }
        for (g, b) in Group::ALL.into_iter().zip(&self.blocks) {
            let (rows, cols) = g.dims(self.shape);
            if b.name != g.name() || b.rows != rows || b.cols != cols || b.data.len() != rows * cols {
                return Err(Error::ShapeMismatch(format!(
                    "block {:?} is {}x{} with {} values; expected {} {rows}x{cols}",
                    b.name,
                    b.rows,
                    b.cols,
                    b.data.len(),
                    g.name()
                )));
            }
            p.group_mut(g).copy_from_slice(&b.data);
        }
        if !p.is_finite() {
            return Err(Error::Parse("checkpoint holds non-finite weights".into()));
        }
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string(self).map_err(|e| Error::Parse(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        if value.get("format").and_then(|f| f.as_str()) != Some(CHECKPOINT_FORMAT) {
            return Err(Error::Parse(format!("{}: not a checkpoint", path.display())));
        }
        let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch {
                expected: CHECKPOINT_VERSION,
                found: version,
            });
        }
        let ck: Checkpoint =
            serde_json::from_value(value).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        if ck.config_fingerprint != config_fingerprint(&ck.env_config, &ck.train_config) {
            return Err(Error::Parse(format!(
                "{}: configuration does not match its fingerprint",
                path.display()
            )));
        }
        let expect = NetShape::for_variant(ck.env_config.n_agents, ck.env_config.variant, ck.shape.hidden);
        if expect != ck.shape {
            return Err(Error::ShapeMismatch(format!(
                "checkpoint shape {:?} does not match its environment's feature dims {:?}",
                ck.shape, expect
            )));
        }
        ck.params()?;
        Ok(ck)
    }
}
