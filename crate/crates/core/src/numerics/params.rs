use std::collections::BTreeMap;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{NumericsError, Tensor};

pub const CHECKPOINT_FORMAT: &str = "evire-paramset";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub tensor: Tensor,
    pub trainable: bool,
}

/// Named tensors, iterated in name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    entries: BTreeMap<String, Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor, trainable: bool) -> Result<(), NumericsError> {
        if self.entries.contains_key(name) {
            return Err(NumericsError::DuplicateParam(name.to_string()));
        }
        self.entries.insert(name.to_string(), Param { tensor, trainable });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|p| &p.tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name).map(|p| &mut p.tensor)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.entries.values().filter(|p| p.trainable).map(|p| p.tensor.len()).sum()
    }

    /// Name and shape of every tensor, in name order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        self.entries
            .iter()
            .map(|(k, p)| (k.clone(), p.tensor.shape().to_vec()))
            .collect()
    }

    /// Serializes into the checkpoint container. Values are stored as
    /// base64-encoded little-endian `f64`, so a round trip is bit-exact.
    pub fn to_checkpoint(&self, meta: serde_json::Value) -> CheckpointFile {
        let tensors = self
            .entries
            .iter()
            .map(|(name, p)| {
                let mut bytes = Vec::with_capacity(p.tensor.len() * 8);
                for v in p.tensor.data() {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
                StoredTensor {
                    name: name.clone(),
                    shape: p.tensor.shape().to_vec(),
                    trainable: p.trainable,
                    values_f64le: B64.encode(bytes),
                }
            })
            .collect();
        CheckpointFile {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            meta,
            tensors,
        }
    }

    pub fn from_checkpoint(file: &CheckpointFile) -> Result<Self, NumericsError> {
        if file.format != CHECKPOINT_FORMAT {
            return Err(NumericsError::Checkpoint(format!("unknown format `{}`", file.format)));
        }
        if file.version != CHECKPOINT_VERSION {
            return Err(NumericsError::Checkpoint(format!("unsupported version {}", file.version)));
        }
        let mut out = ParamSet::new();
        for t in &file.tensors {
            let bytes = B64
                .decode(&t.values_f64le)
                .map_err(|e| NumericsError::Checkpoint(format!("{}: {e}", t.name)))?;
            if bytes.len() % 8 != 0 {
                return Err(NumericsError::Checkpoint(format!("{}: truncated values", t.name)));
            }
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            let tensor = Tensor::new(t.shape.clone(), data)
                .map_err(|e| NumericsError::Checkpoint(format!("{}: {e}", t.name)))?;
            out.insert(&t.name, tensor, t.trainable)?;
        }
        Ok(out)
    }
}

/// On-disk checkpoint container.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckpointFile {
    pub format: String,
    pub version: u32,
    #[serde(default)]
    pub meta: serde_json::Value,
    pub tensors: Vec<StoredTensor>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StoredTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
    pub values_f64le: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn checkpoint_round_trip_is_bit_exact(vals in proptest::collection::vec(any::<f64>(), 1..40)) {
            let mut p = ParamSet::new();
            let n = vals.len();
            p.insert("encoder.w", Tensor::new(vec![n], vals).unwrap(), true).unwrap();
            p.insert("aux", Tensor::scalar(1.5), false).unwrap();
            let json = serde_json::to_string(&p.to_checkpoint(serde_json::json!({"k": 1}))).unwrap();
            let back: CheckpointFile = serde_json::from_str(&json).unwrap();
            let q = ParamSet::from_checkpoint(&back).unwrap();
            let a: Vec<u64> = p.get("encoder.w").unwrap().data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = q.get("encoder.w").unwrap().data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
            prop_assert_eq!(q.parameter_count(), n);
        }
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut p = ParamSet::new();
        p.insert("a", Tensor::scalar(0.0), true).unwrap();
        assert!(matches!(
            p.insert("a", Tensor::scalar(1.0), true),
            Err(NumericsError::DuplicateParam(_))
        ));
    }

    #[test]
    fn wrong_version_rejected() {
        let mut file = ParamSet::new().to_checkpoint(serde_json::Value::Null);
        file.version = 99;
        assert!(ParamSet::from_checkpoint(&file).is_err());
    }
}
