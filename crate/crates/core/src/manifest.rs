//! Cohort manifest: one record per subject with bundle paths, marker labels
//! and split assignment. Paths are relative to the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MARKERS: [&str; 4] = ["shape", "atrophy", "fat", "senility"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Labels {
    pub shape: Option<u8>,
    pub atrophy: Option<u8>,
    pub fat: Option<u8>,
    pub senility: Option<u8>,
}

impl Labels {
    pub fn get(&self, marker: &str) -> Option<Option<u8>> {
        match marker {
            "shape" => Some(self.shape),
            "atrophy" => Some(self.atrophy),
            "fat" => Some(self.fat),
            "senility" => Some(self.senility),
            _ => None,
        }
    }

    pub fn from_flags(flags: [bool; 4]) -> Self {
        let f = |b: bool| Some(b as u8);
        Self {
            shape: f(flags[0]),
            atrophy: f(flags[1]),
            fat: f(flags[2]),
            senility: f(flags[3]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectRecord {
    pub id: String,
    pub volume: String,
    pub mask: String,
    pub labels: Labels,
    pub split: Split,
    /// Seed the subject was generated from, when synthetic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub dir: PathBuf,
    pub subjects: Vec<SubjectRecord>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let subjects: Vec<SubjectRecord> = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        let mut ids: Vec<&str> = subjects.iter().map(|s| s.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::invalid(format!("{}: duplicate subject id {:?}", path.display(), w[0])));
        }
        Ok(Self {
            dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
            subjects,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.subjects).expect("manifest serializes")
    }

    /// SHA-256 of the serialized records.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_json().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &SubjectRecord> {
        self.subjects.iter().filter(move |s| s.split == split)
    }
}
