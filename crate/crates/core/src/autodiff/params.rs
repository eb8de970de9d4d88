//! Named parameter collections and the checkpoint file format.
//!
//! A checkpoint is an 8-byte little-endian header length, a JSON header, and
//! then every tensor's data as little-endian `f64`, in header order.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Tensors keyed by unique name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a tensor. Names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter name {name:?}")));
        }
        self.tensors.insert(name, t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// Puts every tensor on the tape, as trainable leaves or as constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BTreeMap<String, Var> {
        self.tensors
            .iter()
            .map(|(k, t)| {
                let v = if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                };
                (k.clone(), v)
            })
            .collect()
    }

    /// SHA-256 over names, shapes and the exact bit patterns of the data.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in &self.tensors {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            for &d in &t.shape {
                h.update((d as u64).to_le_bytes());
            }
            for v in &t.data {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex(&h.finalize())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub group: String,
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub dtype: String,
    /// SHA-256 of the serialized `config`.
    pub config_hash: String,
    pub config: serde_json::Value,
    /// Free-form extra state, such as the schedule position.
    pub state: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

pub fn config_hash(config: &serde_json::Value) -> String {
    hex(&Sha256::digest(config.to_string().as_bytes()))
}

/// Writes parameter groups plus config and state metadata.
pub fn save_checkpoint(
    path: &Path,
    config: serde_json::Value,
    state: serde_json::Value,
    groups: &[(&str, &ParamSet)],
) -> Result<()> {
    let mut tensors = Vec::new();
    let mut blob = Vec::new();
    for (group, set) in groups {
        for (name, t) in set.iter() {
            tensors.push(TensorEntry {
                group: group.to_string(),
                name: name.clone(),
                shape: t.shape.clone(),
            });
            for v in &t.data {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let header = CheckpointHeader {
        format_version: CHECKPOINT_FORMAT_VERSION,
        dtype: "f64".into(),
        config_hash: config_hash(&config),
        config,
        state,
        tensors,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::json(path, e))?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&(json.len() as u64).to_le_bytes())
        .and_then(|_| f.write_all(&json))
        .and_then(|_| f.write_all(&blob))
        .map_err(|e| Error::io(path, e))
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<(CheckpointHeader, BTreeMap<String, ParamSet>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: String| Error::Bundle {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 8 {
        return Err(bad("file shorter than header length field".into()));
    }
    let hlen = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
    let body = &bytes[8..];
    if hlen > body.len() {
        return Err(bad(format!("header length {hlen} exceeds file size")));
    }
    let header: CheckpointHeader = serde_json::from_slice(&body[..hlen]).map_err(|e| Error::json(path, e))?;
    if header.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {}", header.format_version)));
    }
    if header.dtype != "f64" {
        return Err(bad(format!("unsupported dtype {:?}", header.dtype)));
    }
    if config_hash(&header.config) != header.config_hash {
        return Err(bad("config hash does not match embedded config".into()));
    }
    let mut data = &body[hlen..];
    let mut groups: BTreeMap<String, ParamSet> = BTreeMap::new();
    for entry in &header.tensors {
        let n: usize = entry.shape.iter().product();
        if data.len() < n * 8 {
            return Err(bad(format!("payload truncated at tensor {}/{}", entry.group, entry.name)));
        }
        let values = data[..n * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        data = &data[n * 8..];
        let t = Tensor::new(entry.shape.clone(), values)?;
        groups.entry(entry.group.clone()).or_default().insert(entry.name.clone(), t)?;
    }
    if !data.is_empty() {
        return Err(bad(format!("{} trailing payload bytes", data.len())));
    }
    Ok((header, groups))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::scalar(1.0)).unwrap();
        assert!(p.insert("w", Tensor::scalar(2.0)).is_err());
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut p = ParamSet::new();
        p.insert("a", Tensor::new(vec![2, 2], vec![0.1, -3e-300, f64::MIN_POSITIVE, 7.0]).unwrap())
            .unwrap();
        p.insert("b", Tensor::scalar(std::f64::consts::PI)).unwrap();
        let mut q = ParamSet::new();
        q.insert("c", Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let cfg = serde_json::json!({"dlr_dim": 2});
        save_checkpoint(&path, cfg.clone(), serde_json::json!({"epoch": 4}), &[("enc", &p), ("disc", &q)]).unwrap();
        let (h, groups) = load_checkpoint(&path).unwrap();
        assert_eq!(h.config, cfg);
        assert_eq!(groups["enc"], p);
        assert_eq!(groups["disc"], q);
        assert_eq!(groups["enc"].digest(), p.digest());
    }

    #[test]
    fn truncated_file_is_rejected() {
        let mut p = ParamSet::new();
        p.insert("a", Tensor::new(vec![4], vec![1.0; 4]).unwrap()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, serde_json::json!({}), serde_json::json!(null), &[("g", &p)]).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        let msg = load_checkpoint(&path).unwrap_err().to_string();
        assert!(msg.contains("truncated"), "{msg}");
    }
}
