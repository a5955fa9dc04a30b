//! Binary checkpoint container.
//!
//! Layout: `u32` little-endian header length, a JSON header, the flat
//! parameter array as little-endian `f64`, then (when the header says so) the
//! optimizer's first and second moment arrays in the same encoding.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::optim::AdamW;
use super::params::{Manifest, ParameterSet};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "pairplan_ckpt_v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format: String,
    role: String,
    manifest: Manifest,
    rng_seed: u64,
    step: u64,
    n_params: usize,
    #[serde(default)]
    config: serde_json::Value,
    #[serde(default)]
    metadata: serde_json::Value,
    #[serde(default)]
    optimizer: Option<AdamW>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// `"il"`, `"rl"` or `"rwm"`.
    pub role: String,
    pub params: ParameterSet,
    pub rng_seed: u64,
    pub step: u64,
    /// Model configuration needed to rebuild the network.
    pub config: serde_json::Value,
    /// Free-form training record (loss curves and the like).
    pub metadata: serde_json::Value,
    pub optimizer: Option<AdamW>,
}

impl Checkpoint {
    pub fn new(role: &str, params: ParameterSet, config: serde_json::Value) -> Self {
        Checkpoint {
            role: role.into(),
            params,
            rng_seed: 0,
            step: 0,
            config,
            metadata: serde_json::Value::Null,
            optimizer: None,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            format: CHECKPOINT_FORMAT.into(),
            role: self.role.clone(),
            manifest: self.params.manifest().clone(),
            rng_seed: self.rng_seed,
            step: self.step,
            n_params: self.params.len(),
            config: self.config.clone(),
            metadata: self.metadata.clone(),
            optimizer: self.optimizer.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let moments = self.optimizer.as_ref().map_or(0, |o| o.m.len() + o.v.len());
        let mut out = Vec::with_capacity(4 + json.len() + 8 * (self.params.len() + moments));
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        let mut put = |xs: &[f64]| {
            for x in xs {
                out.extend_from_slice(&x.to_le_bytes());
            }
        };
        put(self.params.data());
        if let Some(o) = &self.optimizer {
            put(&o.m);
            put(&o.v);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::Format("file shorter than the header length field".into()));
        }
        let hlen = u32::from_le_bytes(bytes[..4].try_into().expect("4 bytes")) as usize;
        let body = &bytes[4..];
        if body.len() < hlen {
            return Err(Error::Format(format!(
                "truncated header: need {hlen} bytes, have {}",
                body.len()
            )));
        }
        let raw: serde_json::Value = serde_json::from_slice(&body[..hlen])
            .map_err(|e| Error::Format(format!("unreadable header: {e}")))?;
        let found = raw.get("format").and_then(|f| f.as_str()).unwrap_or("<missing>");
        if found != CHECKPOINT_FORMAT {
            return Err(Error::Version {
                expected: CHECKPOINT_FORMAT.into(),
                found: found.into(),
            });
        }
        let header: Header =
            serde_json::from_value(raw).map_err(|e| Error::Format(format!("malformed header: {e}")))?;
        if header.manifest.n_params() != header.n_params {
            return Err(Error::Format(format!(
                "manifest describes {} parameters, header says {}",
                header.manifest.n_params(),
                header.n_params
            )));
        }
        let arrays = if header.optimizer.is_some() { 3 } else { 1 };
        let payload = &body[hlen..];
        let want = 8 * header.n_params * arrays;
        if payload.len() != want {
            return Err(Error::Format(format!(
                "payload is {} bytes, expected {want}",
                payload.len()
            )));
        }
        let floats: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let n = header.n_params;
        let params = ParameterSet::from_vec(header.manifest, floats[..n].to_vec())?;
        let optimizer = header.optimizer.map(|mut o| {
            o.m = floats[n..2 * n].to_vec();
            o.v = floats[2 * n..3 * n].to_vec();
            o
        });
        Ok(Checkpoint {
            role: header.role,
            params,
            rng_seed: header.rng_seed,
            step: header.step,
            config: header.config,
            metadata: header.metadata,
            optimizer,
        })
    }

    /// Writes through a temporary sibling and renames, so readers never see
    /// a partial file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }

    /// Loads and checks the role tag.
    pub fn load_role(path: &Path, role: &str) -> Result<Self> {
        let ckpt = Checkpoint::load(path)?;
        if ckpt.role != role {
            return Err(Error::Format(format!(
                "{} holds a '{}' checkpoint, expected '{role}'",
                path.display(),
                ckpt.role
            )));
        }
        Ok(ckpt)
    }
}
