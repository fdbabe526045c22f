//! Model checkpoints at repeat boundaries.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{payload_path, push_f32, read_block, write_atomic};
use crate::error::{Error, Result};
use crate::model::{AmtlModel, Mode, ModelConfig};
use crate::numerics::Matrix;

pub const CHECKPOINT_FORMAT: &str = "amtl-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Where training stood when the checkpoint was taken.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainPosition {
    /// Repeats fully completed; resuming starts at this repeat index.
    pub completed_repeats: usize,
    /// Epochs per phase completed within the last repeat.
    pub epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterEntry {
    pub network: String,
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    pub mode: Mode,
    pub model: ModelConfig,
    pub position: TrainPosition,
    pub alpha_s: f64,
    pub alpha_a: f64,
    pub payload: String,
    pub payload_bytes: u64,
    pub parameters: Vec<ParameterEntry>,
}

/// Parameter values as stored: rounded to `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub position: TrainPosition,
    pub alpha_s: f64,
    pub alpha_a: f64,
    /// `(network tag, parameter name, value)` in model order.
    pub params: Vec<(String, String, Matrix)>,
}

impl Checkpoint {
    pub fn capture(model: &AmtlModel, position: TrainPosition) -> Self {
        let params = model
            .networks()
            .flat_map(|(net, ps)| {
                ps.iter().map(move |p| {
                    let mut v = p.value.clone();
                    v.round_to_f32();
                    (net.tag().to_string(), p.name.clone(), v)
                })
            })
            .collect();
        Checkpoint {
            config: model.config().clone(),
            position,
            alpha_s: model.grl_s.alpha,
            alpha_a: model.grl_a.alpha,
            params,
        }
    }

    /// Rebuilds the model. Every parameter of the configured architecture
    /// must be present with its exact shape.
    pub fn restore(&self) -> Result<AmtlModel> {
        let mut model = AmtlModel::new(self.config.clone(), 0)?;
        let mut filled = 0;
        for (_, name, value) in &self.params {
            let slot = model
                .networks_mut()
                .into_iter()
                .find_map(|(_, ps)| ps.get_mut(name))
                .ok_or_else(|| Error::UnknownParameter(name.clone()))?;
            if slot.value.shape() != value.shape() {
                return Err(Error::Shape {
                    op: "checkpoint parameter",
                    left: slot.value.shape(),
                    right: value.shape(),
                });
            }
            slot.value = value.clone();
            filled += 1;
        }
        let expected: usize = model.networks().map(|(_, ps)| ps.len()).sum();
        if filled != expected {
            return Err(Error::format(
                "checkpoint",
                format!("{filled} parameters stored, model has {expected}"),
            ));
        }
        model.set_alphas(self.alpha_s, self.alpha_a)?;
        Ok(model)
    }

    pub fn encode(&self, payload_name: &str) -> Result<(String, Vec<u8>)> {
        let mut payload = Vec::new();
        let mut parameters = Vec::with_capacity(self.params.len());
        for (net, name, v) in &self.params {
            parameters.push(ParameterEntry {
                network: net.clone(),
                name: name.clone(),
                rows: v.rows(),
                cols: v.cols(),
                offset: payload.len() as u64,
            });
            push_f32(&mut payload, v);
        }
        let manifest = CheckpointManifest {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            mode: self.config.mode,
            model: self.config.clone(),
            position: self.position,
            alpha_s: self.alpha_s,
            alpha_a: self.alpha_a,
            payload: payload_name.into(),
            payload_bytes: payload.len() as u64,
            parameters,
        };
        Ok((serde_json::to_string_pretty(&manifest)? + "\n", payload))
    }

    pub fn decode(manifest: &[u8], payload: &[u8]) -> Result<Self> {
        let m: CheckpointManifest =
            serde_json::from_slice(manifest).map_err(|e| Error::format("checkpoint manifest", e.to_string()))?;
        if m.format != CHECKPOINT_FORMAT || m.version != CHECKPOINT_VERSION {
            return Err(Error::format(
                "checkpoint manifest",
                format!("unsupported format {} v{}", m.format, m.version),
            ));
        }
        if m.mode != m.model.mode {
            return Err(Error::format("checkpoint manifest", "mode disagrees with model config"));
        }
        if m.payload_bytes != payload.len() as u64 {
            return Err(Error::format(
                "checkpoint",
                format!("manifest declares {} payload bytes, found {}", m.payload_bytes, payload.len()),
            ));
        }
        let mut expected = 0u64;
        let mut params = Vec::with_capacity(m.parameters.len());
        for p in m.parameters {
            if p.offset != expected {
                return Err(Error::format(
                    "checkpoint",
                    format!("parameter `{}` starts at byte {}, expected {expected}", p.name, p.offset),
                ));
            }
            let v = read_block("checkpoint", payload, p.offset, p.rows, p.cols)?;
            expected += (v.data().len() * 4) as u64;
            params.push((p.network, p.name, v));
        }
        if expected != payload.len() as u64 {
            return Err(Error::format("checkpoint", "trailing payload bytes"));
        }
        Ok(Checkpoint {
            config: m.model,
            position: m.position,
            alpha_s: m.alpha_s,
            alpha_a: m.alpha_a,
            params,
        })
    }

    /// Writes `<dir>/<stem>.json` and `<dir>/<stem>.f32`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let payload_name = format!("{stem}.f32");
        let (manifest, payload) = self.encode(&payload_name)?;
        write_atomic(&dir.join(&payload_name), &payload)?;
        write_atomic(&dir.join(format!("{stem}.json")), manifest.as_bytes())
    }

    pub fn load(manifest_path: &Path) -> Result<Self> {
        let manifest = std::fs::read(manifest_path)?;
        let m: CheckpointManifest =
            serde_json::from_slice(&manifest).map_err(|e| Error::format("checkpoint manifest", e.to_string()))?;
        let payload = std::fs::read(payload_path(manifest_path, &m.payload)?)?;
        Checkpoint::decode(&manifest, &payload)
    }
}
