//! JSON model files.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DecisionTree, Forest, TrainConfig, TreeNode};
use crate::dataset::BinarizationSpec;
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u64 = 1;

#[derive(Serialize, Deserialize)]
struct TreeRecord {
    nodes: Vec<TreeNode>,
}

// Field order here is the on-disk field order.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u64,
    class_count: usize,
    train_size: usize,
    config: TrainConfig,
    binarization_spec: BinarizationSpec,
    trees: Vec<TreeRecord>,
}

impl Forest {
    /// Serialized model document. Identical forests give identical bytes.
    pub fn to_json_bytes(&self) -> Vec<u8> {
        let file = ModelFile {
            format_version: FORMAT_VERSION,
            class_count: self.class_count,
            train_size: self.train_size,
            config: self.config,
            binarization_spec: self.spec.clone(),
            trees: self
                .trees
                .iter()
                .map(|t| TreeRecord { nodes: t.nodes.clone() })
                .collect(),
        };
        let mut bytes = serde_json::to_vec(&file).expect("model serialization cannot fail");
        bytes.push(b'\n');
        bytes
    }

    pub fn from_json_bytes(bytes: &[u8]) -> Result<Forest> {
        let value: serde_json::Value = serde_json::from_slice(bytes).map_err(|e| Error::CorruptModel(e.to_string()))?;
        let version = value
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::CorruptModel("missing format_version".into()))?;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        let file: ModelFile = serde_json::from_value(value).map_err(|e| Error::CorruptModel(e.to_string()))?;
        file.binarization_spec
            .validate()
            .map_err(|e| Error::CorruptModel(e.to_string()))?;
        if file.trees.is_empty() {
            return Err(Error::CorruptModel("model has no trees".into()));
        }
        let feature_count = file.binarization_spec.derived_count();
        let trees = file
            .trees
            .into_iter()
            .map(|r| {
                let leaf_count = r.nodes.iter().filter(|n| matches!(n, TreeNode::Leaf { .. })).count();
                let tree = DecisionTree {
                    nodes: r.nodes,
                    leaf_count,
                };
                tree.validate(feature_count, file.class_count)?;
                Ok(tree)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Forest {
            trees,
            config: file.config,
            class_count: file.class_count,
            spec: file.binarization_spec,
            train_size: file.train_size,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Forest> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Forest::from_json_bytes(&bytes)
    }

    /// Short content hash of the serialized model.
    pub fn model_id(&self) -> String {
        let digest = Sha256::digest(self.to_json_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
