//! Volume bundles: a JSON sidecar describing the grid plus a raw
//! little-endian payload stored next to it with the `.raw` extension.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dims, Mask, Spacing, Volume};
use crate::error::{Error, Result};

pub const ORDER_X_FASTEST: &str = "x-fastest";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleHeader {
    pub dims: Dims,
    pub spacing: Spacing,
    pub dtype: String,
    pub order: String,
}

fn payload_path(sidecar: &Path) -> PathBuf {
    sidecar.with_extension("raw")
}

fn bundle_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Bundle {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn read_header(path: &Path, expected_dtype: &str) -> Result<BundleHeader> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header: BundleHeader = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    if header.dtype != expected_dtype {
        return Err(bundle_err(
            path,
            format!("dtype `{}` (expected `{expected_dtype}`)", header.dtype),
        ));
    }
    if header.order != ORDER_X_FASTEST {
        return Err(bundle_err(path, format!("unsupported order `{}`", header.order)));
    }
    Ok(header)
}

fn write_bundle(path: &Path, header: &BundleHeader, payload: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let json = serde_json::to_string_pretty(header).map_err(|e| Error::json(path, e))?;
    fs::write(path, json).map_err(|e| Error::io(path, e))?;
    let raw = payload_path(path);
    fs::write(&raw, payload).map_err(|e| Error::io(&raw, e))
}

/// Loads a `f32` volume bundle from its sidecar path.
pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let header = read_header(path, "f32")?;
    let raw = payload_path(path);
    let bytes = fs::read(&raw).map_err(|e| Error::io(&raw, e))?;
    let n: usize = header.dims.iter().product();
    if bytes.len() != n * 4 {
        return Err(bundle_err(
            path,
            format!(
                "payload holds {} bytes but dims {:?} need {} f32 values ({} bytes)",
                bytes.len(),
                header.dims,
                n,
                n * 4
            ),
        ));
    }
    let voxels = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Volume::new(header.dims, header.spacing, voxels).map_err(|e| bundle_err(path, e.to_string()))
}

pub fn save_volume(path: impl AsRef<Path>, volume: &Volume) -> Result<()> {
    let header = BundleHeader {
        dims: volume.dims(),
        spacing: volume.spacing(),
        dtype: "f32".into(),
        order: ORDER_X_FASTEST.into(),
    };
    let payload: Vec<u8> = volume.voxels().iter().flat_map(|v| v.to_le_bytes()).collect();
    write_bundle(path.as_ref(), &header, &payload)
}

/// Loads a `u8` mask bundle from its sidecar path.
pub fn load_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let path = path.as_ref();
    let header = read_header(path, "u8")?;
    let raw = payload_path(path);
    let bytes = fs::read(&raw).map_err(|e| Error::io(&raw, e))?;
    let n: usize = header.dims.iter().product();
    if bytes.len() != n {
        return Err(bundle_err(
            path,
            format!(
                "payload holds {} bytes but dims {:?} need {n}",
                bytes.len(),
                header.dims
            ),
        ));
    }
    Mask::new(header.dims, header.spacing, bytes).map_err(|e| bundle_err(path, e.to_string()))
}

pub fn save_mask(path: impl AsRef<Path>, mask: &Mask) -> Result<()> {
    let header = BundleHeader {
        dims: mask.dims(),
        spacing: mask.spacing(),
        dtype: "u8".into(),
        order: ORDER_X_FASTEST.into(),
    };
    write_bundle(path.as_ref(), &header, mask.voxels())
}
