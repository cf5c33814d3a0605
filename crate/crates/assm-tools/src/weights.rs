//! Checkpoint <-> model weight binding by tensor name.

use std::collections::HashMap;
use std::path::Path;

use assm_core::model::{ModelConfig, NetworkWeights};

use crate::error::{Result, ToolError};
use crate::format;

pub fn save_weights(path: &Path, weights: &NetworkWeights) -> Result<()> {
    let named = weights.named_tensors();
    format::write_checkpoint_file(path, named.iter().map(|(n, t)| (n.as_str(), *t)))
}

/// Loads a checkpoint into a zero model for `cfg`, requiring exactly the
/// expected record names with matching shapes.
pub fn load_weights(path: &Path, cfg: &ModelConfig) -> Result<NetworkWeights> {
    let records = format::read_checkpoint_file(path)?;
    let mut by_name: HashMap<String, assm_core::Tensor> = HashMap::new();
    for (name, t) in records {
        if by_name.insert(name.clone(), t).is_some() {
            return Err(ToolError::Config(format!(
                "checkpoint has duplicate record {name:?}"
            )));
        }
    }
    let mut weights = NetworkWeights::zeros(cfg)?;
    for (name, slot) in weights.named_tensors_mut() {
        let t = by_name.remove(&name).ok_or_else(|| {
            ToolError::Config(format!("checkpoint is missing tensor {name:?}"))
        })?;
        if t.shape() != slot.shape() {
            return Err(ToolError::Config(format!(
                "tensor {name:?} has shape {:?}, model expects {:?}",
                t.shape(),
                slot.shape()
            )));
        }
        *slot = t;
    }
    if let Some(extra) = by_name.keys().next() {
        return Err(ToolError::Config(format!(
            "checkpoint has unexpected tensor {extra:?}"
        )));
    }
    Ok(weights)
}
