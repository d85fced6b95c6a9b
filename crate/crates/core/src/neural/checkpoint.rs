//! Versioned checkpoint files: named parameter tensors with shapes and a
//! layout hash that loading verifies before touching any weights.

use super::layers::ReadoutKind;
use super::model::{ActorCritic, ModelConfig, ModelError};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ConfigEntry {
    in_dim: usize,
    hidden: usize,
    heads: usize,
    actions: usize,
    readout: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    version: u32,
    layout_hash: String,
    config: ConfigEntry,
    /// Component prefixes whose tensors transfer into an RL agent.
    pub transferable: Vec<String>,
    tensors: BTreeMap<String, TensorEntry>,
}

fn config_entry(c: &ModelConfig) -> ConfigEntry {
    ConfigEntry {
        in_dim: c.in_dim,
        hidden: c.hidden,
        heads: c.heads,
        actions: c.actions,
        readout: match c.readout {
            ReadoutKind::MeanMax => "mean_max".into(),
            ReadoutKind::SumMax => "sum_max".into(),
        },
    }
}

fn parse_config(c: &ConfigEntry) -> Result<ModelConfig, ModelError> {
    Ok(ModelConfig {
        in_dim: c.in_dim,
        hidden: c.hidden,
        heads: c.heads,
        actions: c.actions,
        readout: match c.readout.as_str() {
            "mean_max" => ReadoutKind::MeanMax,
            "sum_max" => ReadoutKind::SumMax,
            other => {
                return Err(ModelError::Checkpoint(format!(
                    "unknown readout kind `{other}`"
                )))
            }
        },
    })
}

/// Hash over the architecture: config plus every tensor name and shape.
pub fn layout_hash(model: &ActorCritic) -> String {
    let mut h = Sha256::new();
    let c = config_entry(&model.config);
    h.update(format!(
        "v{CHECKPOINT_VERSION};in={};hid={};heads={};act={};ro={};",
        c.in_dim, c.hidden, c.heads, c.actions, c.readout
    ));
    for (name, shape, _) in model.named_tensors() {
        h.update(name);
        h.update(format!("{shape:?};"));
    }
    format!("{:x}", h.finalize())
}

pub fn to_checkpoint(model: &ActorCritic, transferable: Vec<String>) -> Checkpoint {
    let tensors = model
        .named_tensors()
        .into_iter()
        .map(|(name, shape, data)| {
            (
                name,
                TensorEntry {
                    shape,
                    data: data.to_vec(),
                },
            )
        })
        .collect();
    Checkpoint {
        version: CHECKPOINT_VERSION,
        layout_hash: layout_hash(model),
        config: config_entry(&model.config),
        transferable,
        tensors,
    }
}

pub fn save(model: &ActorCritic, transferable: Vec<String>, path: &Path) -> std::io::Result<()> {
    let ckpt = to_checkpoint(model, transferable);
    let json = serde_json::to_string(&ckpt)?;
    std::fs::write(path, json)
}

/// Rebuilds a model from a checkpoint, verifying version, layout hash and
/// every tensor shape.
pub fn load(path: &Path) -> Result<(ActorCritic, Vec<String>), ModelError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ModelError::Checkpoint(format!("read {}: {e}", path.display())))?;
    let ckpt: Checkpoint = serde_json::from_str(&text)
        .map_err(|e| ModelError::Checkpoint(format!("parse {}: {e}", path.display())))?;
    from_checkpoint(ckpt)
}

pub fn from_checkpoint(ckpt: Checkpoint) -> Result<(ActorCritic, Vec<String>), ModelError> {
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(ModelError::Checkpoint(format!(
            "version {} unsupported (want {CHECKPOINT_VERSION})",
            ckpt.version
        )));
    }
    let config = parse_config(&ckpt.config)?;
    let mut model = ActorCritic::new(config, 0);
    if layout_hash(&model) != ckpt.layout_hash {
        return Err(ModelError::Checkpoint(
            "layout hash mismatch: checkpoint was written by a different architecture".into(),
        ));
    }
    for (name, dst) in model.named_tensors_mut() {
        let entry = ckpt
            .tensors
            .get(&name)
            .ok_or_else(|| ModelError::Checkpoint(format!("missing tensor `{name}`")))?;
        if entry.data.len() != dst.len() {
            return Err(ModelError::Checkpoint(format!(
                "tensor `{name}` has {} values, expected {}",
                entry.data.len(),
                dst.len()
            )));
        }
        dst.copy_from_slice(&entry.data);
    }
    Ok((model, ckpt.transferable))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::model::ModelConfig;

    fn tiny() -> ActorCritic {
        ActorCritic::new(
            ModelConfig {
                in_dim: 5,
                hidden: 3,
                heads: 2,
                actions: 4,
                readout: ReadoutKind::MeanMax,
            },
            77,
        )
    }

    #[test]
    fn save_load_roundtrip_is_bitwise() {
        let model = tiny();
        let dir = std::env::temp_dir().join("nestrl_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.json");
        save(&model, vec!["gat1".into()], &path).unwrap();
        let (back, transferable) = load(&path).unwrap();
        assert_eq!(transferable, vec!["gat1".to_string()]);
        for ((n1, _, d1), (n2, _, d2)) in model.named_tensors().iter().zip(back.named_tensors().iter()) {
            assert_eq!(n1, n2);
            assert_eq!(d1, d2, "{n1}");
        }
    }

    #[test]
    fn layout_hash_rejects_different_architectures() {
        let model = tiny();
        let ckpt = to_checkpoint(&model, vec![]);
        let mut json = serde_json::to_value(&ckpt).unwrap();
        json["config"]["hidden"] = serde_json::json!(4);
        let tampered: Checkpoint = serde_json::from_value(json).unwrap();
        assert!(matches!(
            from_checkpoint(tampered),
            Err(ModelError::Checkpoint(_))
        ));
    }
}
