//! Versioned binary checkpoint container.
//!
//! Byte layout, all integers little-endian:
//!
//! | bytes          | content                                   |
//! |----------------|-------------------------------------------|
//! | 8              | magic `RHRNETCK`                          |
//! | 4 (u32)        | format version                            |
//! | 8 (u64)        | header length `H` in bytes                |
//! | H              | UTF-8 JSON header                         |
//! | rest           | f32 arrays, row-major, in header order    |
//!
//! The header holds the model configuration, the seed, the list of arrays
//! (name and shape) and, for training checkpoints, the optimizer settings and
//! loop counters. Optimizer accumulators are stored as arrays named
//! `opt.<parameter name>`.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelConfig, ModelParams, ParamLayoutError};
use crate::tensor::{ParameterSet, Tensor, TensorCollection};
use crate::training::{OptimizerError, RmspropState, TrainState};

pub const MAGIC: &[u8; 8] = b"RHRNETCK";
pub const FORMAT_VERSION: u32 = 1;
const OPT_PREFIX: &str = "opt.";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("checkpoint version {found} not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint arrays do not match the embedded config: {0}")]
    ShapeMismatch(#[from] ParamLayoutError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct OptimizerHeader {
    rho: f64,
    epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    config: ModelConfig,
    seed: u64,
    arrays: Vec<ArrayEntry>,
    #[serde(default)]
    optimizer: Option<OptimizerHeader>,
    #[serde(default)]
    train_state: Option<TrainState>,
}

/// Model parameters plus whatever is needed to resume training.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: ModelParams<f32>,
    pub seed: u64,
    pub optimizer: Option<RmspropState<f32>>,
    pub train_state: Option<TrainState>,
}

impl Checkpoint {
    pub fn new(params: ModelParams<f32>, seed: u64) -> Self {
        Checkpoint {
            params,
            seed,
            optimizer: None,
            train_state: None,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut arrays: Vec<(String, &Tensor<f32>)> = self.params.tensors();
        if let Some(opt) = &self.optimizer {
            arrays.extend(opt.accumulators().iter().map(|(n, t)| (format!("{OPT_PREFIX}{n}"), t)));
        }
        let header = Header {
            format: "rhrnet-checkpoint".into(),
            version: FORMAT_VERSION,
            config: self.params.config().clone(),
            seed: self.seed,
            arrays: arrays
                .iter()
                .map(|(name, t)| ArrayEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
            optimizer: self.optimizer.as_ref().map(|o| OptimizerHeader {
                rho: o.rho,
                epsilon: o.epsilon,
            }),
            train_state: self.train_state.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header is serializable");
        let payload: usize = arrays.iter().map(|(_, t)| t.numel() * 4).sum();
        let mut out = Vec::with_capacity(20 + json.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &arrays {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 8 || &bytes[..8] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        if bytes.len() < 20 {
            return Err(CheckpointError::Corrupt("truncated preamble".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(CheckpointError::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        let header_end = usize::try_from(header_len)
            .ok()
            .and_then(|h| h.checked_add(20))
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| CheckpointError::Corrupt("truncated header".into()))?;
        let header: Header = serde_json::from_slice(&bytes[20..header_end])
            .map_err(|e| CheckpointError::Corrupt(format!("header: {e}")))?;
        if header.version != version {
            return Err(CheckpointError::Corrupt(
                "header version disagrees with preamble".into(),
            ));
        }
        header.config.validate().map_err(ParamLayoutError::from)?;

        let mut params_set = ParameterSet::new();
        let mut opt_set = ParameterSet::new();
        let mut pos = header_end;
        for entry in &header.arrays {
            let n = entry
                .shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| CheckpointError::Corrupt(format!("array {} too large", entry.name)))?;
            let end = n
                .checked_mul(4)
                .and_then(|b| b.checked_add(pos))
                .filter(|&end| end <= bytes.len())
                .ok_or_else(|| CheckpointError::Corrupt(format!("truncated in array {}", entry.name)))?;
            let data: Vec<f32> = bytes[pos..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            pos = end;
            let tensor = Tensor::new(&entry.shape, data)
                .map_err(|e| CheckpointError::Corrupt(format!("array {}: {e}", entry.name)))?;
            let (target, name) = match entry.name.strip_prefix(OPT_PREFIX) {
                Some(rest) => (&mut opt_set, rest.to_string()),
                None => (&mut params_set, entry.name.clone()),
            };
            target
                .insert(name, tensor)
                .map_err(|_| CheckpointError::Corrupt(format!("duplicate array {}", entry.name)))?;
        }
        if pos != bytes.len() {
            return Err(CheckpointError::Corrupt(format!(
                "{} trailing bytes after last array",
                bytes.len() - pos
            )));
        }
        let params = ModelParams::from_parameter_set(&header.config, &params_set)?;
        let optimizer = match header.optimizer {
            Some(o) => {
                ModelParams::<f32>::from_parameter_set(&header.config, &opt_set)?;
                Some(
                    RmspropState::with_accumulators(o.rho, o.epsilon, opt_set).map_err(|e| match e {
                        OptimizerError::Layout(m) => CheckpointError::Corrupt(m),
                        other => CheckpointError::Corrupt(other.to_string()),
                    })?,
                )
            }
            None if !opt_set.is_empty() => {
                return Err(CheckpointError::Corrupt(
                    "optimizer arrays without optimizer settings".into(),
                ))
            }
            None => None,
        };
        Ok(Checkpoint {
            params,
            seed: header.seed,
            optimizer,
            train_state: header.train_state,
        })
    }

    /// Writes via a temporary file and rename so a crash never leaves a
    /// half-written checkpoint at `path`.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let tmp = path.with_extension("ckpt.tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

pub fn save(params: &ModelParams<f32>, seed: u64, path: &Path) -> Result<(), CheckpointError> {
    Checkpoint::new(params.clone(), seed).save(path)
}

pub fn load(path: &Path) -> Result<ModelParams<f32>, CheckpointError> {
    Ok(Checkpoint::load(path)?.params)
}
